"""Experiment runner: the four tagging setups plus the k, window, label-node and
untrained-key sweeps, with a digest-keyed checkpoint cache."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
from collections import Counter
from dataclasses import asdict, dataclass, field, replace
from itertools import product

import numpy as np

from . import gnn as gnn_mod
from .corpus import Dataset, Scheme, Vocab, read_conll
from .datastore import Datastore
from .datastore import build as build_store
from .encoder import Encoder, EncoderConfig, train_vanilla, vanilla_predict
from .evaluation import evaluate
from .graph import WindowConfig
from .knnsl import _kernel_vote, interpolate

log = logging.getLogger(__name__)

SETUPS = ("vanilla", "vanilla+knn", "vanilla+gnn", "vanilla+gnn+knn")
LAMBDA_GRID = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
TEMPERATURE_GRID = (1.0, 10.0, 100.0)
TSV_COLUMNS = (
    "kind", "setup", "seed", "k", "c", "include_labels", "keys", "lambda", "temperature",
    "precision", "recall", "f1", "long_tail_f1", "token_accuracy", "digest", "error",
)


def _digest(obj):
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode("utf-8")).hexdigest()


@dataclass
class ExperimentPlan:
    setups: tuple = SETUPS
    k_values: tuple = (32,)
    c_values: tuple = (3,)
    include_labels: tuple = (True,)
    use_finetuned_keys: tuple = (True,)
    seeds: tuple = (0,)
    out_dir: str = "results"
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    gnn: gnn_mod.GnnConfig = field(default_factory=gnn_mod.GnnConfig)
    lambda_grid: tuple = LAMBDA_GRID
    temperature_grid: tuple = TEMPERATURE_GRID

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("plan needs at least one seed")
        unknown = set(self.setups) - set(SETUPS)
        if unknown:
            raise ValueError(f"unknown setups {sorted(unknown)}")
        if any(k < 1 for k in self.k_values) or not self.k_values:
            raise ValueError("k values must be >= 1")
        if any(c < 0 for c in self.c_values) or not self.c_values:
            raise ValueError("context radii must be >= 0")
        if not self.include_labels or not self.use_finetuned_keys:
            raise ValueError("flag sweeps need at least one value")
        if not self.lambda_grid or not self.temperature_grid:
            raise ValueError("interpolation grids must be nonempty")

    def to_dict(self):
        d = asdict(self)
        d.pop("out_dir")
        return d

    def digest(self):
        return _digest(self.to_dict())

    def cells(self):
        """Distinct cells in a fixed order; fields a setup ignores are None."""
        out = []
        for seed, setup in product(self.seeds, self.setups):
            if setup == "vanilla":
                combos = [(None, None, None, None)]
            elif setup == "vanilla+knn":
                combos = [(k, None, None, f) for k in self.k_values for f in self.use_finetuned_keys]
            else:
                combos = list(product(self.k_values, self.c_values, self.include_labels, self.use_finetuned_keys))
            for k, c, lab, fin in combos:
                out.append({"setup": setup, "seed": seed, "k": k, "c": c, "include_labels": lab, "finetuned": fin})
        return out


def _atomic_write(path, data):
    d = os.path.dirname(path) or "."
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Runner:
    def __init__(self, plan, train, dev, test, labels):
        self.plan = plan
        self.train, self.dev, self.test = list(train), list(dev), list(test)
        self.labels = labels
        self.data_digest = _digest([Dataset(s).digest(labels) for s in (self.train, self.dev, self.test)])
        self.cache_dir = os.path.join(plan.out_dir, "cache")
        self.stages = Counter()
        self._mem = {}

    # ---------------------------------------------------------- components

    def _cached(self, name, key, make, dump, load):
        path = os.path.join(self.cache_dir, f"{name}-{key}.bin")
        if (name, key) in self._mem:
            return self._mem[(name, key)]
        if os.path.exists(path):
            with open(path, "rb") as fh:
                obj = load(fh.read())
        else:
            self.stages[name] += 1
            obj = make()
            _atomic_write(path, dump(obj))
        self._mem[(name, key)] = obj
        return obj

    def encoder(self, seed, trained=True):
        cfg = replace(self.plan.encoder, seed=seed)
        key = _digest({"encoder": asdict(cfg), "data": self.data_digest, "trained": trained})
        if trained:
            make = lambda: train_vanilla(self.train, self.labels, cfg, dev=self.dev)  # noqa: E731
        else:
            make = lambda: Encoder(cfg, Vocab.build(self.train), self.labels)  # noqa: E731
        return self._cached("encoder" if trained else "untrained_encoder", key, make,
                            Encoder.to_bytes, Encoder.from_bytes)

    def store(self, enc):
        key = _digest({"encoder": enc.digest().hex(), "data": self.data_digest})
        return self._cached("datastore", key, lambda: build_store(enc, self.train),
                            Datastore.to_bytes, lambda b: Datastore.from_bytes(b, self.labels.scheme))

    def gnn(self, enc, store, seed, k, c, include_labels):
        cfg = replace(self.plan.gnn, seed=seed, k=k, d=enc.d)
        window = WindowConfig(c=c, include_labels=include_labels)
        key = _digest({"gnn": asdict(cfg), "window": asdict(window),
                       "encoder": enc.digest().hex(), "data": self.data_digest})

        def make():
            return gnn_mod.train_gnn(enc, store, self.train, window, cfg, dev=self.dev)

        return self._cached("gnn", key, make, lambda p: p.to_bytes(enc.digest()),
                            gnn_mod.GnnParameters.from_bytes)

    # --------------------------------------------------------- predictions

    def _memo(self, key, fn):
        if key not in self._mem:
            self._mem[key] = fn()
        return self._mem[key]

    def vanilla_probs(self, enc, split):
        def run():
            sents = getattr(self, split)
            return [vanilla_predict(enc, r) for r in enc.represent(sents)]

        return self._memo(("vanilla", enc.digest(), split), run)

    def retrieval(self, key_enc, store, k, split):
        def run():
            return gnn_mod.neighbor_table(key_enc, store, getattr(self, split), k)

        return self._memo(("retrieval", key_enc.digest(), k, split), run)

    def gnn_probs(self, params, key_enc, store, split, gkey):
        def run():
            return [p for p, _, _ in gnn_mod.predict_sentences(params, key_enc, store, getattr(self, split))]

        return self._memo(("gnn", gkey, split), run)

    # ----------------------------------------------------------------- cells

    def score(self, probs, split):
        pred = [p.argmax(axis=1).tolist() for p in probs]
        return evaluate(pred, getattr(self, split), self.labels, self.train)

    def interpolated(self, base, table, store_labels, lam, temp):
        out = []
        n_y = len(self.labels)
        for p, (_, idx, dist) in zip(base, table):
            labs = np.where(idx >= 0, store_labels[np.maximum(idx, 0)], -1)
            out.append(interpolate(p, _kernel_vote(labs, dist, temp, n_y), lam))
        return out

    def tune(self, base_dev, table_dev, store_labels):
        best = None
        for lam in self.plan.lambda_grid:
            for temp in self.plan.temperature_grid:
                f1 = self.score(self.interpolated(base_dev, table_dev, store_labels, lam, temp), "dev").f1
                if best is None or f1 > best[0]:
                    best = (f1, lam, temp)
        return best[1], best[2]

    def run_cell(self, cell):
        seed, setup = cell["seed"], cell["setup"]
        enc = self.encoder(seed)
        lam = temp = None
        if setup == "vanilla":
            return self.score(self.vanilla_probs(enc, "test"), "test"), lam, temp
        key_enc = enc if cell["finetuned"] else self.encoder(seed, trained=False)
        store = self.store(key_enc)
        k = cell["k"]
        if setup == "vanilla+knn":
            base = {s: self.vanilla_probs(enc, s) for s in ("dev", "test")}
        else:
            params = self.gnn(key_enc, store, seed, k, cell["c"], cell["include_labels"])
            gkey = (key_enc.digest(), seed, k, cell["c"], cell["include_labels"])
            splits = ("dev", "test") if setup.endswith("+knn") else ("test",)
            base = {s: self.gnn_probs(params, key_enc, store, s, gkey) for s in splits}
        if not setup.endswith("+knn"):
            return self.score(base["test"], "test"), lam, temp
        tables = {s: self.retrieval(key_enc, store, k, s) for s in ("dev", "test")}
        lam, temp = self.tune(base["dev"], tables["dev"], store.label_ids)
        return self.score(self.interpolated(base["test"], tables["test"], store.label_ids, lam, temp), "test"), lam, temp


def _row(cell, plan, data_digest, report=None, lam=None, temp=None, error=None):
    ident = dict(cell, plan=plan.to_dict(), data=data_digest)
    row = {
        "kind": "cell",
        "setup": cell["setup"],
        "seed": cell["seed"],
        "k": cell["k"],
        "c": cell["c"],
        "include_labels": cell["include_labels"],
        "keys": None if cell["finetuned"] is None else ("finetuned" if cell["finetuned"] else "untrained-analogue"),
        "lambda": lam,
        "temperature": temp,
        "precision": None, "recall": None, "f1": None, "long_tail_f1": None, "token_accuracy": None,
        "digest": _digest(ident),
        "error": error,
    }
    if report is not None:
        for name in ("precision", "recall", "f1", "long_tail_f1", "token_accuracy"):
            v = getattr(report, name)
            row[name] = None if v is None else round(v, 6)
    return row


def best_k_rows(rows):
    """Per group of cells differing only in k, the row with the highest F1 (smaller k on ties)."""
    groups = {}
    for r in rows:
        if r["kind"] != "cell" or r["k"] is None or r["f1"] is None:
            continue
        key = (r["setup"], r["seed"], r["c"], r["include_labels"], r["keys"])
        groups.setdefault(key, []).append(r)
    out = []
    for members in groups.values():
        if len(members) < 2:
            continue
        best = max(members, key=lambda r: (r["f1"], -r["k"]))
        out.append(dict(best, kind="argmax-k"))
    return out


def label_deltas(rows):
    """F1 with label nodes minus F1 without, for every matched pair of cells."""
    with_l, without = {}, {}
    for r in rows:
        if r["kind"] != "cell" or r["include_labels"] is None or r["f1"] is None:
            continue
        key = (r["setup"], r["seed"], r["k"], r["c"], r["keys"])
        (with_l if r["include_labels"] else without)[key] = r["f1"]
    out = []
    for key in with_l:
        if key in without:
            setup, seed, k, c, keys = key
            out.append({
                "setup": setup, "seed": seed, "k": k, "c": c, "keys": keys,
                "f1_with_labels": with_l[key], "f1_without_labels": without[key],
                "delta": round(with_l[key] - without[key], 6),
            })
    return out


def _fmt(v):
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def summary_tsv(rows):
    lines = ["\t".join(TSV_COLUMNS)]
    for r in rows:
        lines.append("\t".join(_fmt(r[c]) for c in TSV_COLUMNS))
    return "\n".join(lines) + "\n"


@dataclass
class PlanResult:
    rows: list
    deltas: list
    stages: Counter
    json_path: str
    tsv_path: str


def run_cells(plan, train, dev, test, labels):
    """Run every cell of ``plan`` on in-memory splits and write the result files."""
    runner = _Runner(plan, train, dev, test, labels)
    rows = []
    for cell in plan.cells():
        log.info("cell %s", json.dumps(cell, sort_keys=True))
        try:
            report, lam, temp = runner.run_cell(cell)
            rows.append(_row(cell, plan, runner.data_digest, report, lam, temp))
        except Exception as exc:  # one failed cell must not stop the sweep
            log.error("cell failed: %s: %s", type(exc).__name__, exc)
            rows.append(_row(cell, plan, runner.data_digest, error=f"{type(exc).__name__}: {exc}"))
    rows += best_k_rows(rows)
    deltas = label_deltas(rows)
    pd = plan.digest()
    doc = {"plan": plan.to_dict(), "plan_digest": pd, "data_digest": runner.data_digest,
           "rows": rows, "label_node_deltas": deltas}
    json_path = os.path.join(plan.out_dir, f"results-{pd}.json")
    tsv_path = os.path.join(plan.out_dir, f"summary-{pd}.tsv")
    _atomic_write(json_path, (json.dumps(doc, sort_keys=True, indent=2) + "\n").encode("utf-8"))
    _atomic_write(tsv_path, summary_tsv(rows).encode("utf-8"))
    for d in deltas:
        log.info("label-node delta %s k=%s c=%s seed=%s: %+.2f F1", d["setup"], d["k"], d["c"], d["seed"], d["delta"])
    return PlanResult(rows, deltas, runner.stages, json_path, tsv_path)


def run_plan(plan, paths, scheme=Scheme.BIO):
    """Read train/dev/test CoNLL files (a mapping of split name to path) and run the plan."""
    train, labels = read_conll(paths["train"], scheme)
    dev, _ = read_conll(paths["dev"], scheme, labels)
    test, _ = read_conll(paths["test"], scheme, labels)
    return run_cells(plan, train, dev, test, labels)
