"""Heterogeneous tagging graph over input tokens, retrieved neighbors and labels.

Node ids are laid out as: the n input tokens first (node i is input position
i), then, per input token and per retrieved neighbor, the neighbor's context
window followed by its label node.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from itertools import permutations

import numpy as np

from .datastore import ConsistencyError


class NodeType(IntEnum):
    INPUT = 0
    NEIGHBOR = 1
    LABEL = 2


class EdgeType(IntEnum):
    INPUT_INPUT = 0
    NEIGHBOR_INPUT = 1
    NEIGHBOR_NEIGHBOR = 2
    LABEL_NEIGHBOR = 3


# (source type, target type) pairs each edge type may connect
ALLOWED_ENDPOINTS = {
    EdgeType.INPUT_INPUT: {(NodeType.INPUT, NodeType.INPUT)},
    EdgeType.NEIGHBOR_INPUT: {(NodeType.NEIGHBOR, NodeType.INPUT), (NodeType.INPUT, NodeType.NEIGHBOR)},
    EdgeType.NEIGHBOR_NEIGHBOR: {(NodeType.NEIGHBOR, NodeType.NEIGHBOR)},
    EdgeType.LABEL_NEIGHBOR: {(NodeType.LABEL, NodeType.NEIGHBOR), (NodeType.NEIGHBOR, NodeType.LABEL)},
}

# param_index values for nodes whose feature comes from a learned table
FIXED = -1
BOUNDARY_ROW = 0  # label embedding y is row 1 + y


@dataclass
class WindowConfig:
    c: int = 3
    include_labels: bool = True

    def __post_init__(self):
        if self.c < 0:
            raise ValueError(f"context radius must be >= 0, got {self.c}")


@dataclass
class TagGraph:
    node_type: np.ndarray  # (N,)
    features: np.ndarray  # (N, d); rows of learned-table nodes hold their current values
    param_index: np.ndarray  # (N,) FIXED, BOUNDARY_ROW or 1 + label id
    provenance: np.ndarray  # (N,) input position, record index or label id; -1 for boundary
    src: np.ndarray
    dst: np.ndarray
    etype: np.ndarray
    n_inputs: int

    @property
    def num_nodes(self):
        return len(self.node_type)

    @property
    def num_edges(self):
        return len(self.src)

    @property
    def query_map(self):
        return {i: i for i in range(self.n_inputs)}

    @property
    def nodes(self):
        return [
            (i, NodeType(int(t)), self.features[i], int(p))
            for i, (t, p) in enumerate(zip(self.node_type, self.provenance))
        ]

    @property
    def edges(self):
        return [(int(s), int(d), EdgeType(int(e))) for s, d, e in zip(self.src, self.dst, self.etype)]

    def incoming(self, node):
        return np.flatnonzero(self.dst == node)

    def edge_list_text(self):
        """Debug dump: one ``src dst EDGE_TYPE`` line per directed edge."""
        return "".join(
            f"{s} {d} {EdgeType(int(e)).name}\n" for s, d, e in zip(self.src, self.dst, self.etype)
        )


def _pairs(w):
    if w not in _pairs.cache:
        p = np.array(list(permutations(range(w), 2)), dtype=np.int64).reshape(-1, 2)
        _pairs.cache[w] = p
    return _pairs.cache[w]


_pairs.cache = {}



def construct(sentence_reps, neighbors, store, label_embeddings=None, cfg=None, boundary_embedding=None):
    """Build the graph for one sentence.

    ``neighbors`` holds, per input token, the retrieved record indices: a
    NeighborSet, a sequence of ints, or one row of an (n, k) array where -1
    marks an empty slot.
    """
    cfg = cfg or WindowConfig()
    reps = np.asarray(sentence_reps, dtype=np.float64)
    n = reps.shape[0]
    if len(neighbors) != n:
        raise ValueError(f"{n} representations but {len(neighbors)} neighbor sets")
    d = reps.shape[1] if reps.ndim == 2 else store.d
    c = cfg.c

    owner, recs = [], []
    for i in range(n):
        row = np.asarray(getattr(neighbors[i], "indices", neighbors[i]), dtype=np.int64).reshape(-1)
        row = row[row >= 0]
        owner.append(np.full(len(row), i, dtype=np.int64))
        recs.append(row)
    owner = np.concatenate(owner) if n else np.zeros(0, np.int64)
    recs = np.concatenate(recs) if n else np.zeros(0, np.int64)
    if len(recs) and recs.max() >= len(store):
        raise ConsistencyError(f"neighbor record {int(recs.max())} is outside the datastore")
    m = len(recs)

    starts, lengths = store.sentence_bounds()
    pos = store.token_indices[recs]
    start = starts[recs]
    length = lengths[recs]
    offs = np.arange(-c, c + 1)
    q = pos[:, None] + offs[None, :]  # (m, 2c+1)
    in_sent = (q >= 0) & (q < length[:, None])
    slot_ok = np.concatenate(
        [(pos - c < 0)[:, None], in_sent, (pos + c >= length)[:, None]], axis=1
    )  # (m, 2c+3)
    slot_rec = np.concatenate(
        [np.full((m, 1), -1), np.where(in_sent, start[:, None] + q, -1), np.full((m, 1), -1)], axis=1
    )
    n_slots = slot_ok.shape[1]
    lab_ok = np.full((m, 1), cfg.include_labels)
    full_ok = np.concatenate([slot_ok, lab_ok], axis=1)  # label node is the last slot
    ids = np.full(full_ok.shape, -1, dtype=np.int64)
    ids[full_ok] = n + np.arange(int(full_ok.sum()))
    center = ids[:, 1 + c]

    n_nodes = n + int(full_ok.sum())
    node_type = np.empty(n_nodes, dtype=np.int64)
    param_index = np.full(n_nodes, FIXED, dtype=np.int64)
    provenance = np.empty(n_nodes, dtype=np.int64)
    features = np.zeros((n_nodes, d))
    node_type[:n] = NodeType.INPUT
    provenance[:n] = np.arange(n)
    features[:n] = reps
    win = ids[:, :n_slots][slot_ok]
    win_rec = slot_rec[slot_ok]
    node_type[win] = NodeType.NEIGHBOR
    provenance[win] = win_rec
    boundary = win[win_rec < 0]
    param_index[boundary] = BOUNDARY_ROW
    has_rec = win_rec >= 0
    features[win[has_rec]] = store.keys[win_rec[has_rec]]
    if cfg.include_labels and m:
        lab_nodes = ids[:, -1]
        labs = store.label_ids[recs]
        node_type[lab_nodes] = NodeType.LABEL
        param_index[lab_nodes] = 1 + labs
        provenance[lab_nodes] = labs
        if label_embeddings is not None:
            features[lab_nodes] = np.asarray(label_embeddings)[labs]
    if boundary_embedding is not None:
        features[boundary] = np.asarray(boundary_embedding).reshape(-1)

    # per-neighbor edge blocks: NeighborInput pair, window pairs, LabelNeighbor pair
    pairs = _pairs(2 * c + 3)  # window slots: left boundary, offsets -c..c, right boundary
    pa, pb = ids[:, pairs[:, 0]], ids[:, pairs[:, 1]]
    pair_ok = (pa >= 0) & (pb >= 0)
    blk_src = [center[:, None], owner[:, None], pa]
    blk_dst = [owner[:, None], center[:, None], pb]
    blk_ok = [np.ones((m, 2), dtype=bool), pair_ok]
    blk_type = [np.full((m, 2), EdgeType.NEIGHBOR_INPUT), np.full(pa.shape, EdgeType.NEIGHBOR_NEIGHBOR)]
    if cfg.include_labels:
        lab_nodes = ids[:, -1]
        blk_src.append(np.stack([lab_nodes, center], axis=1))
        blk_dst.append(np.stack([center, lab_nodes], axis=1))
        blk_ok.append(np.ones((m, 2), dtype=bool))
        blk_type.append(np.full((m, 2), EdgeType.LABEL_NEIGHBOR))
    ok = np.concatenate(blk_ok, axis=1)
    nb_src = np.concatenate(blk_src, axis=1)[ok]
    nb_dst = np.concatenate(blk_dst, axis=1)[ok]
    nb_type = np.concatenate(blk_type, axis=1)[ok]

    ii = _pairs(n) if n > 1 else np.zeros((0, 2), dtype=np.int64)
    src = np.concatenate([ii[:, 0], nb_src]).astype(np.int64)
    dst = np.concatenate([ii[:, 1], nb_dst]).astype(np.int64)
    etype = np.concatenate([np.full(len(ii), EdgeType.INPUT_INPUT), nb_type]).astype(np.int64)
    return TagGraph(node_type, features, param_index, provenance, src, dst, etype, n)


def check_graph(graph):
    """Raise ValueError if an edge breaks the endpoint or bidirectionality rules."""
    nt = graph.node_type
    for s, d, e in zip(graph.src, graph.dst, graph.etype):
        if s == d:
            raise ValueError(f"self-loop on node {s}")
        if (NodeType(int(nt[s])), NodeType(int(nt[d]))) not in ALLOWED_ENDPOINTS[EdgeType(int(e))]:
            raise ValueError(f"edge {s}->{d} of type {EdgeType(int(e)).name} joins wrong node types")
    fwd = sorted(zip(graph.src.tolist(), graph.dst.tolist(), graph.etype.tolist()))
    rev = sorted(zip(graph.dst.tolist(), graph.src.tolist(), graph.etype.tolist()))
    if fwd != rev:
        raise ValueError("edge multiset is not closed under reversal")
