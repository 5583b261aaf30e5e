"""Command-line entry point: ``gnnsl <command> [flags]``.

Exit status is 0 on success, 1 on a usage problem and 2 when input data,
a file format or a checkpoint digest is wrong. Logs go to stderr.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import gnn as gnn_mod
from . import harness
from .checkpoint import FormatError
from .corpus import (
    EmptyDatasetError, ParseError, Scheme, TokenSequence, generate_synthetic, read_conll, write_conll,
)
from .datastore import ConsistencyError, Datastore, EmptyStoreError
from .datastore import build as build_store
from .encoder import Encoder, EncoderConfig, train_vanilla, vanilla_predict
from .evaluation import AlignmentError, evaluate
from .graph import WindowConfig, construct
from .knnsl import InterpConfig, _kernel_vote, interpolate, retrieve
from .numcore import DimensionError

log = logging.getLogger("gnnsl")


class UsageError(Exception):
    pass


def _bool(text):
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ints(text):
    return tuple(int(x) for x in str(text).split(",") if x.strip())


def _bools(text):
    return tuple(_bool(x) for x in str(text).split(",") if x.strip())


def _strs(text):
    return tuple(x.strip() for x in str(text).split(",") if x.strip())


_ENC = EncoderConfig()
_GNN = gnn_mod.GnnConfig()

# key -> (parser, default, help)
CONFIG_KEYS = {
    "scheme": (str, "BIO", "label scheme: BIO, BMES or PLAIN"),
    "seed": (int, 0, "random seed for every trained component"),
    "d": (int, _ENC.d, "representation width"),
    "d_emb": (int, _ENC.d_emb, "token embedding width"),
    "lr": (float, _ENC.lr, "vanilla tagger learning rate"),
    "epochs": (int, _ENC.epochs, "vanilla tagger epochs"),
    "dropout": (float, _ENC.dropout, "embedding dropout during vanilla training"),
    "batch_size": (int, _ENC.batch_size, "vanilla training batch size"),
    "heads": (int, _GNN.heads, "attention heads"),
    "layers": (int, _GNN.layers, "message-passing layers"),
    "gnn_lr": (float, _GNN.lr, "GNN learning rate"),
    "gnn_epochs": (int, _GNN.epochs, "GNN epochs"),
    "optimizer": (str, _GNN.optimizer, "GNN optimizer: adam or sgd"),
    "k": (int, _GNN.k, "neighbors retrieved per token"),
    "c": (int, WindowConfig().c, "context radius around each neighbor"),
    "include_labels": (_bool, True, "add label nodes to the graph"),
    "lambda": (float, InterpConfig().lam, "weight of the model distribution when mixing with kNN"),
    "temperature": (float, InterpConfig().temperature, "kNN kernel temperature"),
    "threads": (int, 1, "tagging worker threads"),
    "setups": (_strs, harness.SETUPS, "comma-separated setups for ablate"),
    "k_values": (_ints, (32,), "comma-separated k sweep"),
    "c_values": (_ints, (3,), "comma-separated context radius sweep"),
    "include_labels_values": (_bools, (True,), "comma-separated label-node flags"),
    "finetuned_keys_values": (_bools, (True,), "comma-separated trained-key flags"),
    "seeds": (_ints, (0,), "comma-separated seeds for ablate"),
}

ENCODER_KEYS = ("d", "d_emb", "lr", "epochs", "seed", "dropout", "batch_size", "heads", "scheme")
GNN_KEYS = ("layers", "heads", "gnn_lr", "gnn_epochs", "optimizer", "k", "c", "include_labels", "seed", "scheme")
TAG_KEYS = ("k", "lambda", "temperature", "threads", "scheme")
ABLATE_KEYS = tuple(k for k in dict.fromkeys(ENCODER_KEYS + GNN_KEYS + (
    "setups", "k_values", "c_values", "include_labels_values", "finetuned_keys_values", "seeds",
)) if k not in ("k", "c", "include_labels"))


def read_config_file(path):
    """Parse ``key = value`` lines; ``#`` starts a comment. Unknown keys are rejected."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            key, value = (x.strip() for x in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in CONFIG_KEYS:
                raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
            out[key] = value
    return out


def resolve_config(keys, file_values, flag_values):
    """Defaults, then the config file, then explicit flags."""
    resolved = {}
    for key in keys:
        parse, default, _ = CONFIG_KEYS[key]
        value = default
        for source in (file_values, flag_values):
            if source.get(key) is not None:
                raw = source[key]
                try:
                    value = parse(raw) if isinstance(raw, str) else raw
                except ValueError as exc:
                    raise UsageError(f"bad value for {key}: {exc}") from None
        resolved[key] = value
    return resolved


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_keys(p, keys):
    g = p.add_argument_group("configuration (overrides --config)")
    for key in keys:
        parse, default, text = CONFIG_KEYS[key]
        flag = "--" + key.replace("_", "-")
        g.add_argument(flag, dest=key, default=None, help=f"{text} (default {_show(default)})")
    p.add_argument("--config", help="key=value file; flags take precedence")
    p.set_defaults(_keys=keys)


def build_parser():
    ap = _Parser(prog="gnnsl", description="Retrieval-augmented sequence labeling.")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("gen-data", help="write a synthetic long-tail corpus")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--n", type=int, default=2000, help="number of sentences")
    p.add_argument("--long-tail-fraction", type=float, default=0.2)
    p.add_argument("--out", required=True, help="output directory for train/dev/test.conll")

    p = sub.add_parser("train-vanilla", help="train the vanilla tagger")
    p.add_argument("--train", required=True)
    p.add_argument("--dev")
    p.add_argument("--out", required=True, help="encoder checkpoint path")
    _add_keys(p, ENCODER_KEYS)

    p = sub.add_parser("build-datastore", help="cache one record per training token")
    p.add_argument("--model", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--out", required=True)
    _add_keys(p, ("scheme",))

    p = sub.add_parser("train-gnn", help="train the graph model on a frozen encoder")
    p.add_argument("--model", required=True)
    p.add_argument("--datastore", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--dev", help="keep the epoch with the best dev F1")
    p.add_argument("--out", required=True)
    _add_keys(p, GNN_KEYS)

    p = sub.add_parser("tag", help="label a CoNLL file")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True, help="CoNLL input; only the token column is read")
    p.add_argument("--mode", required=True, choices=("vanilla", "knn", "gnn", "gnn+knn"))
    p.add_argument("--datastore")
    p.add_argument("--gnn", help="GNN checkpoint (gnn modes)")
    p.add_argument("--out", help="output path (default stdout)")
    _add_keys(p, TAG_KEYS)

    p = sub.add_parser("evaluate", help="score a tagged file against gold")
    p.add_argument("--pred", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--train", help="training file for the long-tail breakdown")
    p.add_argument("--json", help="also write the report as JSON here")
    _add_keys(p, ("scheme",))

    p = sub.add_parser("ablate", help="run the setup and ablation sweeps")
    p.add_argument("--train", required=True)
    p.add_argument("--dev", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--out-dir", required=True)
    _add_keys(p, ABLATE_KEYS)
    return ap


# ------------------------------------------------------------------ commands


def read_tokens(path):
    """Sentences as lists of token strings exactly as written in the first column."""
    with open(path, encoding="utf-8", newline="") as fh:
        text = fh.read()
    sentences, cur = [], []
    for line in text.split("\n"):
        line = line.rstrip("\r")
        if not line.strip():
            if cur:
                sentences.append(cur)
                cur = []
            continue
        cur.append(line.split()[0])
    if cur:
        sentences.append(cur)
    if not sentences:
        raise EmptyDatasetError(f"{path} contains no sentences")
    return sentences


def _cmd_gen_data(args, cfg):
    ds, labels = generate_synthetic(args.seed, args.n, args.long_tail_fraction)
    os.makedirs(args.out, exist_ok=True)
    for name in ("train", "dev", "test"):
        write_conll(os.path.join(args.out, f"{name}.conll"), ds.split(name), labels)
    log.info("wrote %d sentences to %s", len(ds), args.out)


def _encoder_config(cfg):
    return EncoderConfig(**{k: cfg[k] for k in ENCODER_KEYS if k != "scheme"})


def _cmd_train_vanilla(args, cfg):
    train, labels = read_conll(args.train, cfg["scheme"])
    dev = read_conll(args.dev, cfg["scheme"], labels)[0] if args.dev else None
    enc = train_vanilla(train, labels, _encoder_config(cfg), dev=dev)
    enc.save(args.out)


def _cmd_build_datastore(args, cfg):
    enc = Encoder.load(args.model)
    train, _ = read_conll(args.train, enc.labels.scheme, enc.labels)
    build_store(enc, train).save(args.out)


def _load_pair(model, store_path):
    enc = Encoder.load(model)
    store = Datastore.load(store_path, enc.labels.scheme)
    store.check_encoder(enc)
    return enc, store


def _cmd_train_gnn(args, cfg):
    enc, store = _load_pair(args.model, args.datastore)
    train, _ = read_conll(args.train, enc.labels.scheme, enc.labels)
    dev = read_conll(args.dev, enc.labels.scheme, enc.labels)[0] if args.dev else None
    gcfg = gnn_mod.GnnConfig(
        layers=cfg["layers"], heads=cfg["heads"], d=enc.d, seed=cfg["seed"], lr=cfg["gnn_lr"],
        epochs=cfg["gnn_epochs"], k=cfg["k"], optimizer=cfg["optimizer"],
    )
    window = WindowConfig(c=cfg["c"], include_labels=cfg["include_labels"])
    params = gnn_mod.train_gnn(enc, store, train, window, gcfg, dev=dev)
    params.save(args.out, enc.digest())


def _tag_one(tokens, enc, store, params, mode, icfg):
    sent = TokenSequence(tokens, [0] * len(tokens), -1)
    reps = enc.represent([sent])[0]
    if mode == "vanilla":
        return vanilla_predict(enc, reps).argmax(axis=1)
    idx, dist = retrieve(store, reps, icfg.k)
    if mode in ("gnn", "gnn+knn"):
        graph = construct(reps, idx, store, cfg=params.window)
        base = gnn_mod.gnn_predict(params, graph)
        if mode == "gnn":
            return base.argmax(axis=1)
    else:
        base = vanilla_predict(enc, reps)
    labs = np.where(idx >= 0, store.label_ids[np.maximum(idx, 0)], -1)
    p_knn = _kernel_vote(labs, dist, icfg.temperature, len(enc.labels))
    return interpolate(base, p_knn, icfg.lam).argmax(axis=1)


def _cmd_tag(args, cfg):
    if args.mode != "vanilla" and not args.datastore:
        raise UsageError(f"--mode {args.mode} requires --datastore")
    if args.mode.startswith("gnn") and not args.gnn:
        raise UsageError(f"--mode {args.mode} requires --gnn")
    if cfg["threads"] < 1:
        raise UsageError("--threads must be >= 1")
    try:
        icfg = InterpConfig(k=cfg["k"], temperature=cfg["temperature"], lam=cfg["lambda"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    enc = Encoder.load(args.model)
    store = params = None
    if args.mode != "vanilla":
        enc, store = _load_pair(args.model, args.datastore)
    if args.gnn and args.mode.startswith("gnn"):
        params = gnn_mod.GnnParameters.load(args.gnn)
        gnn_mod.check_digest(params, enc)
    sentences = read_tokens(args.input)

    def work(tokens):
        return _tag_one(tokens, enc, store, params, args.mode, icfg)

    if cfg["threads"] > 1:
        with ThreadPoolExecutor(cfg["threads"]) as pool:
            preds = list(pool.map(work, sentences))
    else:
        preds = [work(s) for s in sentences]
    names = enc.labels.names
    text = "\n".join(
        "".join(f"{t} {names[int(y)]}\n" for t, y in zip(toks, pred)) for toks, pred in zip(sentences, preds)
    )
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _cmd_evaluate(args, cfg):
    gold, labels = read_conll(args.gold, cfg["scheme"])
    pred, _ = read_conll(args.pred, cfg["scheme"], labels)
    train = read_conll(args.train, cfg["scheme"])[0] if args.train else None
    for i, (p, g) in enumerate(zip(pred, gold)):
        if p.tokens != g.tokens:
            raise AlignmentError(f"sentence {i}: token columns differ")
    report = evaluate([s.labels for s in pred], list(gold), labels, train)
    sys.stdout.write(report.to_text())
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            fh.write(report.to_json() + "\n")


def _cmd_ablate(args, cfg):
    try:
        plan = harness.ExperimentPlan(
            setups=cfg["setups"],
            k_values=cfg["k_values"],
            c_values=cfg["c_values"],
            include_labels=cfg["include_labels_values"],
            use_finetuned_keys=cfg["finetuned_keys_values"],
            seeds=cfg["seeds"],
            out_dir=args.out_dir,
            encoder=_encoder_config(dict(cfg, seed=0)),
            gnn=gnn_mod.GnnConfig(layers=cfg["layers"], heads=cfg["heads"], d=cfg["d"], lr=cfg["gnn_lr"],
                                  epochs=cfg["gnn_epochs"], optimizer=cfg["optimizer"]),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    paths = {"train": args.train, "dev": args.dev, "test": args.test}
    result = harness.run_plan(plan, paths, cfg["scheme"])
    with open(result.tsv_path, encoding="utf-8") as fh:
        sys.stdout.write(fh.read())
    for d in result.deltas:
        sys.stdout.write(
            f"# label-node delta setup={d['setup']} seed={d['seed']} k={d['k']} c={d['c']} "
            f"f1_with={d['f1_with_labels']:.2f} f1_without={d['f1_without_labels']:.2f} delta={d['delta']:+.2f}\n"
        )


COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train-vanilla": _cmd_train_vanilla,
    "build-datastore": _cmd_build_datastore,
    "train-gnn": _cmd_train_gnn,
    "tag": _cmd_tag,
    "evaluate": _cmd_evaluate,
    "ablate": _cmd_ablate,
}

DATA_ERRORS = (
    ParseError, EmptyDatasetError, FormatError, ConsistencyError, EmptyStoreError,
    AlignmentError, DimensionError, OSError, UnicodeDecodeError,
)


def main(argv=None):
    logging.basicConfig(level=logging.INFO, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        keys = getattr(args, "_keys", ())
        file_values = read_config_file(args.config) if getattr(args, "config", None) else {}
        flags = {k: getattr(args, k) for k in keys}
        cfg = resolve_config(keys, file_values, flags)
        if "scheme" in cfg:
            try:
                cfg["scheme"] = Scheme(cfg["scheme"].upper())
            except ValueError:
                raise UsageError(f"unknown scheme {cfg['scheme']!r}") from None
        if "optimizer" in cfg and cfg["optimizer"] not in ("adam", "sgd"):
            raise UsageError(f"unknown optimizer {cfg['optimizer']!r}")
        if cfg:
            log.info("resolved config: %s", " ".join(f"{k}={_show(v)}" for k, v in sorted(cfg.items())))
        COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        sys.stderr.write(f"gnnsl: error: {exc}\n")
        return 1
    except DATA_ERRORS as exc:
        sys.stderr.write(f"gnnsl: {type(exc).__name__}: {exc}\n")
        return 2
    return 0


def _show(v):
    if isinstance(v, Scheme):
        return v.value
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return v


if __name__ == "__main__":
    sys.exit(main())
