"""Heterogeneous multi-head attention message passing over a TagGraph.

Vectors are rows: for a source node s, target n and edge e of type r,

    key      K(s)  = h_s Wk[type(s)]
    query    Q(n)  = h_n Wq[type(n)]
    message  M     = (h_s Wv[type(s)]) Wphi[r]
    logit    P     = (K(s) Wphi[r]) . Q(n) * mu[type(s), r, type(n)] / sqrt(d_h)

all per head on d_h = d / g slices. Weights are a softmax of P over every
incoming edge of n; head outputs are attention-weighted message sums,
concatenated, mapped by W_O and then by Wo[type(n)], and added to h_n.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from . import checkpoint
from . import numcore as nc
from .corpus import LabelSet
from .datastore import ConsistencyError
from .evaluation import evaluate
from .graph import FIXED, EdgeType, NodeType, WindowConfig, construct
from .knnsl import retrieve
from .optim import SGD, Adam

log = logging.getLogger(__name__)

MAGIC = b"GSLG"
N_NODE_TYPES = len(NodeType)
N_EDGE_TYPES = len(EdgeType)


@dataclass
class GnnConfig:
    layers: int = 2
    heads: int = 8
    d: int = 64
    seed: int = 0
    lr: float = 1e-3
    epochs: int = 5
    k: int = 32
    optimizer: str = "adam"

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError(f"layers must be >= 1, got {self.layers}")
        if self.d % self.heads:
            raise ValueError(f"d={self.d} is not divisible by heads={self.heads}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    @property
    def d_head(self):
        return self.d // self.heads


def _layer_names(l):
    return [f"l{l}.{n}" for n in ("wk", "wq", "wv", "wphi", "wO", "wo")]


class GnnParameters:
    def __init__(self, config, labels, tensors=None, window=None):
        self.config = config
        self.labels = labels
        self.window = window or WindowConfig()
        self.params = tensors if tensors is not None else self._init()

    def _init(self):
        cfg = self.config
        rng = np.random.default_rng(cfg.seed)
        g, dh, d = cfg.heads, cfg.d_head, cfg.d
        b = 1.0 / np.sqrt(d)

        def u(*shape, bound=b):
            return nc.Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)

        # per-head maps get Glorot bounds on their own d_h fan, otherwise the
        # three chained projections start every attention row near uniform
        bh = np.sqrt(3.0 / dh)
        p = {}
        for l in range(cfg.layers):
            p[f"l{l}.wk"] = u(N_NODE_TYPES, g, dh, dh, bound=bh)
            p[f"l{l}.wq"] = u(N_NODE_TYPES, g, dh, dh, bound=bh)
            p[f"l{l}.wv"] = u(N_NODE_TYPES, g, dh, dh, bound=bh)
            p[f"l{l}.wphi"] = u(N_EDGE_TYPES, g, dh, dh, bound=bh)
            p[f"l{l}.wO"] = u(d, d)
            p[f"l{l}.wo"] = u(N_NODE_TYPES, d, d)
        p["mu"] = nc.Tensor(np.ones((N_NODE_TYPES, N_EDGE_TYPES, N_NODE_TYPES)), requires_grad=True)
        p["label_emb"] = u(len(self.labels), d)
        p["boundary"] = u(1, d)
        p["head_w"] = u(d, len(self.labels))
        p["head_b"] = nc.Tensor(np.zeros(len(self.labels)), requires_grad=True)
        return p

    def names(self):
        out = []
        for l in range(self.config.layers):
            out += _layer_names(l)
        return out + ["mu", "label_emb", "boundary", "head_w", "head_b"]

    def parameters(self):
        return [self.params[n] for n in self.names()]

    def __getitem__(self, name):
        return self.params[name]

    def layer(self, l):
        return {n.split(".", 1)[1]: self.params[n] for n in _layer_names(l)}

    # ----------------------------------------------------------- persistence

    def to_bytes(self, encoder_digest=b""):
        cfg = {
            "gnn": asdict(self.config),
            "window": asdict(self.window),
            "labels": list(self.labels.names),
            "scheme": self.labels.scheme.value,
            "encoder_digest": encoder_digest.hex(),
        }
        return checkpoint.dump_tensors(MAGIC, cfg, {n: self.params[n].data for n in self.names()})

    @classmethod
    def from_bytes(cls, buf):
        cfg, tensors = checkpoint.load_tensors(buf, MAGIC)
        obj = cls(
            GnnConfig(**cfg["gnn"]),
            LabelSet(tuple(cfg["labels"]), cfg["scheme"]),
            {},
            WindowConfig(**cfg["window"]),
        )
        missing = set(obj.names()) - set(tensors)
        if missing:
            raise checkpoint.FormatError(f"checkpoint lacks tensors {sorted(missing)}")
        obj.params = {n: nc.Tensor(tensors[n], requires_grad=True) for n in obj.names()}
        obj.encoder_digest = bytes.fromhex(cfg["encoder_digest"])
        return obj

    def save(self, path, encoder_digest=b""):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes(encoder_digest))

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


# ------------------------------------------------------------------ forward


def node_features(params, graph):
    """Layer-0 features; boundary and label nodes read the learned tables."""
    fixed = graph.param_index == FIXED
    base = nc.Tensor(graph.features * fixed[:, None])
    if fixed.all():
        return base
    d = params.config.d
    table = nc.concat([nc.Tensor(np.zeros((1, d))), params["boundary"], params["label_emb"]], axis=0)
    return base + nc.embedding_lookup(table, graph.param_index + 1)


def _typed_project(hh, types, w):
    """Per-head projection of (M, g, dh) rows with the weight of each row's type."""
    order = np.argsort(types, kind="stable")
    parts = []
    for t in np.unique(types):
        rows = np.flatnonzero(types == t)
        parts.append(nc.head_matmul(nc.gather(hh, rows), w[int(t)]))
    out = nc.concat(parts, axis=0) if len(parts) > 1 else parts[0]
    if len(parts) == 1:
        return out
    return nc.gather(out, np.argsort(order, kind="stable"))


def layer_forward(params, l, graph, h, targets=None):
    """One message-passing layer; only ``targets`` (default: all nodes) are updated."""
    cfg = params.config
    g, dh, d = cfg.heads, cfg.d_head, cfg.d
    h = nc.as_tensor(h)
    n_nodes = graph.num_nodes
    if h.shape != (n_nodes, d):
        raise nc.DimensionError(f"layer_forward: features {h.shape}, expected {(n_nodes, d)}")
    w = params.layer(l)
    if targets is None:
        sel = np.ones(graph.num_edges, dtype=bool)
    else:
        mask = np.zeros(n_nodes, dtype=bool)
        mask[targets] = True
        sel = mask[graph.dst]
    if not sel.any():
        return h
    order = np.argsort(graph.etype[sel], kind="stable")
    es = graph.src[sel][order]
    ed = graph.dst[sel][order]
    et = graph.etype[sel][order]
    nt = graph.node_type

    involved = np.unique(np.concatenate([es, ed]))
    ls, ld = np.searchsorted(involved, es), np.searchsorted(involved, ed)
    hh = nc.reshape(nc.gather(h, involved), (len(involved), g, dh))
    itypes = nt[involved]
    key = _typed_project(hh, itypes, w["wk"])
    qry = _typed_project(hh, itypes, w["wq"])
    val = _typed_project(hh, itypes, w["wv"])

    kw_parts, msg_parts = [], []
    for r in np.unique(et):
        idx = np.flatnonzero(et == r)
        wphi = w["wphi"][int(r)]
        kw_parts.append(nc.head_matmul(nc.gather(key, ls[idx]), wphi))
        msg_parts.append(nc.head_matmul(nc.gather(val, ls[idx]), wphi))
    kw = nc.concat(kw_parts, axis=0) if len(kw_parts) > 1 else kw_parts[0]
    msg = nc.concat(msg_parts, axis=0) if len(msg_parts) > 1 else msg_parts[0]

    dots = nc.sum(kw * nc.gather(qry, ld), axis=2)  # (E, g)
    mu_idx = (nt[es] * N_EDGE_TYPES + et) * N_NODE_TYPES + nt[ed]
    mu_e = nc.reshape(nc.gather(nc.reshape(params["mu"], (-1,)), mu_idx), (len(es), 1))
    logits = dots * mu_e * (1.0 / np.sqrt(dh))

    tgt = np.unique(ed)
    seg = np.searchsorted(tgt, ed)
    att = nc.segment_softmax(logits, seg, len(tgt))
    weighted = nc.reshape(att, (len(es), g, 1)) * msg
    agg = nc.reshape(nc.segment_sum(weighted, seg, len(tgt)), (len(tgt), d))
    merged = agg @ w["wO"]

    ttypes = nt[tgt]
    torder = np.argsort(ttypes, kind="stable")
    parts = []
    for t in np.unique(ttypes):
        rows = np.flatnonzero(ttypes == t)
        parts.append(nc.gather(merged, rows) @ w["wo"][int(t)])
    out = nc.concat(parts, axis=0) if len(parts) > 1 else parts[0]
    if len(parts) > 1:
        out = nc.gather(out, np.argsort(torder, kind="stable"))
    return h + nc.segment_sum(out, tgt, n_nodes)


def _target_sets(graph, layers):
    """Nodes each layer must update for the input rows of the last layer to be exact."""
    need = np.arange(graph.n_inputs)
    sets = []
    for _ in range(layers):
        sets.append(need)
        mask = np.zeros(graph.num_nodes, dtype=bool)
        mask[need] = True
        need = np.union1d(need, graph.src[mask[graph.dst]])
    return sets[::-1]


def forward(params, graph, prune=True):
    """Final node features (N, d). With ``prune`` only input rows are guaranteed exact."""
    h = node_features(params, graph)
    targets = _target_sets(graph, params.config.layers) if prune else [None] * params.config.layers
    for l in range(params.config.layers):
        h = layer_forward(params, l, graph, h, targets[l])
    return h


def input_logits(params, graph):
    h = forward(params, graph)
    hin = h[: graph.n_inputs]
    return hin @ params["head_w"] + params["head_b"]


def gnn_predict(params, graph):
    """Per input token label distribution (n, |Y|)."""
    with nc.no_grad():
        return nc.softmax(input_logits(params, graph)).data


def graph_loss(params, graph, gold):
    return nc.cross_entropy(input_logits(params, graph), gold)


# --------------------------------------------------------- single-edge views


def _head(v, head, dh):
    return np.asarray(v, dtype=np.float64)[head * dh : (head + 1) * dh]


def message(params, layer, head, s_feat, edge_type, s_type):
    """Per-head message (h_s Wv[type(s)]) Wphi[edge type]; ``s_feat`` has width d."""
    s_type, edge_type = NodeType(s_type), EdgeType(edge_type)
    dh = params.config.d_head
    w = params.layer(layer)
    return _head(s_feat, head, dh) @ w["wv"].data[s_type, head] @ w["wphi"].data[edge_type, head]


def attention(params, layer, head, graph, target, features=None):
    """(incoming edge ids, attention weights) of one head at one target node."""
    edges = graph.incoming(target)
    if len(edges) == 0:
        return edges, np.zeros(0)
    if features is None:
        with nc.no_grad():
            features = node_features(params, graph).data
    dh = params.config.d_head
    w = params.layer(layer)
    mu = params["mu"].data
    tt = graph.node_type[target]
    q = _head(features[target], head, dh) @ w["wq"].data[tt, head]
    logits = np.empty(len(edges))
    for j, e in enumerate(edges):
        s, r = graph.src[e], graph.etype[e]
        st = graph.node_type[s]
        kw = _head(features[s], head, dh) @ w["wk"].data[st, head] @ w["wphi"].data[r, head]
        logits[j] = kw @ q * mu[st, r, tt] / np.sqrt(dh)
    logits -= logits.max()
    a = np.exp(logits)
    return edges, a / a.sum()


# ----------------------------------------------------------------- training


def _self_exclusions(store, sentences):
    out = []
    for s in sentences:
        span = store._sentences.get(int(s.id))
        if span is not None and span[1] == len(s):
            out.append(np.arange(span[0], span[0] + len(s)))
        else:
            out.append(np.full(len(s), -1))
    return np.concatenate(out)


def neighbor_table(encoder, store, sentences, k, exclude_self=False):
    """Per-sentence (reps, neighbor record rows) for a list of sentences."""
    reps = encoder.represent(sentences)
    if not reps:
        return []
    allr = np.concatenate(reps, axis=0)
    exclude = _self_exclusions(store, sentences) if exclude_self else None
    idx, dist = retrieve(store, allr, k, exclude)
    out, o = [], 0
    for r in reps:
        out.append((r, idx[o : o + len(r)], dist[o : o + len(r)]))
        o += len(r)
    return out


def train_gnn(encoder, store, dataset, window, config, dev=None):
    """Train GNN parameters on frozen encoder features.

    Retrieval for a training token skips that token's own datastore record.
    With a ``dev`` dataset the parameters from the epoch with the best dev
    span F1 are returned (earliest on ties); otherwise those after the last epoch.
    """
    store.check_encoder(encoder)
    sentences = list(dataset)
    if not sentences:
        raise ValueError("train_gnn: empty dataset")
    if encoder.d != config.d:
        raise nc.DimensionError(f"encoder width {encoder.d} != GNN width {config.d}")
    table = neighbor_table(encoder, store, sentences, config.k, exclude_self=True)
    params = GnnParameters(config, encoder.labels, window=window)
    opt_cls = Adam if config.optimizer == "adam" else SGD
    opt = opt_cls(params.parameters(), lr=config.lr, clip=5.0)
    rng = np.random.default_rng(config.seed + 1)
    dev = list(dev) if dev is not None else []
    dev_graphs = [construct(r, i, store, cfg=window) for r, i, _ in neighbor_table(encoder, store, dev, config.k)]
    best = None
    for epoch in range(config.epochs):
        total, count = 0.0, 0
        for i in rng.permutation(len(sentences)):
            reps, nbr, _ = table[i]
            graph = construct(reps, nbr, store, cfg=window)
            opt.zero_grad()
            loss = graph_loss(params, graph, sentences[i].labels)
            nc.backward(loss)
            opt.step()
            total += loss.item() * len(reps)
            count += len(reps)
        if not dev:
            log.info("gnn epoch %d/%d train_loss=%.4f", epoch + 1, config.epochs, total / count)
            continue
        pred = [gnn_predict(params, g).argmax(axis=1).tolist() for g in dev_graphs]
        f1 = evaluate(pred, dev, encoder.labels).f1
        log.info("gnn epoch %d/%d train_loss=%.4f dev_f1=%.2f", epoch + 1, config.epochs, total / count, f1)
        if best is None or f1 > best[0]:
            best = (f1, [t.data.copy() for t in params.parameters()])
    if best is not None:
        for t, saved in zip(params.parameters(), best[1]):
            t.data[...] = saved
    return params


def predict_sentences(params, encoder, store, sentences, k=None):
    """GNN distributions plus the raw retrieval for each sentence (no exclusion)."""
    k = k or params.config.k
    out = []
    for reps, nbr, dist in neighbor_table(encoder, store, sentences, k):
        graph = construct(reps, nbr, store, cfg=params.window)
        out.append((gnn_predict(params, graph), nbr, dist))
    return out


def check_digest(params, encoder):
    want = getattr(params, "encoder_digest", b"")
    if want and want != encoder.digest():
        raise ConsistencyError("GNN checkpoint was trained against a different encoder")
