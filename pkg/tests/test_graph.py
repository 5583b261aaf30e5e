from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gnnsl.datastore import ConsistencyError, Datastore, knn_query
from gnnsl.graph import (
    BOUNDARY_ROW, FIXED, EdgeType, NodeType, WindowConfig, check_graph, construct,
)

from conftest import bio_labels


def store_from_lengths(lengths, d=4, seed=0):
    rng = np.random.default_rng(seed)
    sids, tids = [], []
    for s, n in enumerate(lengths):
        sids += [s] * n
        tids += list(range(n))
    n = len(sids)
    return Datastore(rng.normal(size=(n, d)).astype(np.float32), rng.integers(0, 7, size=n), sids, tids, bio_labels())


def edge_counts(g):
    return Counter(EdgeType(int(e)) for e in g.etype)


def test_single_token_no_neighbors():
    store = store_from_lengths([3])
    g = construct(np.zeros((1, 4)), [[]], store, cfg=WindowConfig(c=2))
    assert g.num_nodes == 1 and g.num_edges == 0


def test_two_tokens_one_neighbor_no_context():
    store = store_from_lengths([3, 2])
    g = construct(np.ones((2, 4)), [[1], [3]], store, cfg=WindowConfig(c=0))
    types = Counter(NodeType(int(t)) for t in g.node_type)
    assert types == {NodeType.INPUT: 2, NodeType.NEIGHBOR: 2, NodeType.LABEL: 2}
    assert edge_counts(g) == {
        EdgeType.INPUT_INPUT: 2, EdgeType.NEIGHBOR_INPUT: 4, EdgeType.LABEL_NEIGHBOR: 4,
    }
    assert edge_counts(g)[EdgeType.NEIGHBOR_NEIGHBOR] == 0


GOLDEN_N2_K1_C0 = """\
0 1 INPUT_INPUT
1 0 INPUT_INPUT
2 0 NEIGHBOR_INPUT
0 2 NEIGHBOR_INPUT
3 2 LABEL_NEIGHBOR
2 3 LABEL_NEIGHBOR
4 1 NEIGHBOR_INPUT
1 4 NEIGHBOR_INPUT
5 4 LABEL_NEIGHBOR
4 5 LABEL_NEIGHBOR
"""


def test_golden_edge_list():
    store = store_from_lengths([3, 2])
    g = construct(np.ones((2, 4)), [[1], [3]], store, cfg=WindowConfig(c=0))
    assert g.edge_list_text() == GOLDEN_N2_K1_C0
    assert g.provenance.tolist() == [0, 1, 1, int(store.label_ids[1]), 3, int(store.label_ids[3])]


def test_window_at_sentence_start_gets_boundary():
    store = store_from_lengths([2])
    g = construct(np.ones((1, 4)), [[0]], store, cfg=WindowConfig(c=1, include_labels=False))
    nb = np.flatnonzero(g.node_type == NodeType.NEIGHBOR)
    assert len(nb) == 3
    assert g.provenance[nb].tolist() == [-1, 0, 1]
    assert g.param_index[nb].tolist() == [BOUNDARY_ROW, FIXED, FIXED]
    assert edge_counts(g)[EdgeType.NEIGHBOR_NEIGHBOR] == 6


def test_both_boundaries_for_short_sentence():
    store = store_from_lengths([1])
    g = construct(np.ones((1, 4)), [[0]], store, cfg=WindowConfig(c=2, include_labels=False))
    nb = np.flatnonzero(g.node_type == NodeType.NEIGHBOR)
    assert g.provenance[nb].tolist() == [-1, 0, -1]


def test_features():
    store = store_from_lengths([4], d=3)
    reps = np.arange(6.0).reshape(2, 3)
    emb = np.arange(21.0).reshape(7, 3) + 100
    g = construct(reps, [[2], [0]], store, label_embeddings=emb, cfg=WindowConfig(c=1))
    np.testing.assert_array_equal(g.features[:2], reps)
    for i in range(g.num_nodes):
        t, p = NodeType(int(g.node_type[i])), int(g.provenance[i])
        if t is NodeType.NEIGHBOR and p >= 0:
            np.testing.assert_array_equal(g.features[i], store.keys[p])
        if t is NodeType.LABEL:
            np.testing.assert_array_equal(g.features[i], emb[p])


def test_accepts_neighbor_sets():
    store = store_from_lengths([3, 4])
    nbs = [knn_query(store, np.zeros(4), 2), knn_query(store, np.ones(4), 2)]
    a = construct(np.zeros((2, 4)), nbs, store)
    b = construct(np.zeros((2, 4)), [nb.indices for nb in nbs], store)
    assert a.edge_list_text() == b.edge_list_text()


def test_unresolvable_provenance():
    store = store_from_lengths([3])
    with pytest.raises(ConsistencyError):
        construct(np.zeros((1, 4)), [[5]], store)


def test_length_mismatch():
    store = store_from_lengths([3])
    with pytest.raises(ValueError):
        construct(np.zeros((2, 4)), [[0]], store)


def test_check_graph_detects_bad_edges():
    store = store_from_lengths([3])
    g = construct(np.zeros((2, 4)), [[0], [1]], store)
    check_graph(g)
    g.src = g.src[1:]
    g.dst = g.dst[1:]
    g.etype = g.etype[1:]
    with pytest.raises(ValueError):
        check_graph(g)


@given(st.integers(0, 10**6), st.integers(1, 6), st.integers(0, 5), st.integers(0, 3), st.booleans())
def test_invariants(seed, n, k, c, labels):
    rng = np.random.default_rng(seed)
    lengths = rng.integers(1, 7, size=4).tolist()
    store = store_from_lengths(lengths, seed=seed)
    k = min(k, len(store))
    nbrs = [rng.choice(len(store), size=k, replace=False) for _ in range(n)]
    cfg = WindowConfig(c=c, include_labels=labels)
    g = construct(rng.normal(size=(n, 4)), nbrs, store, cfg=cfg)
    check_graph(g)  # endpoint types, no self-loops, closed under reversal
    assert g.num_nodes <= n + n * k * (2 * c + 1) + n * k
    assert edge_counts(g)[EdgeType.INPUT_INPUT] == n * (n - 1)
    assert g.query_map == {i: i for i in range(n)}
    assert (g.node_type[:n] == NodeType.INPUT).all()
    n_label = int((g.node_type == NodeType.LABEL).sum())
    assert n_label == (n * k if labels else 0)
    again = construct(g.features[:n].copy(), nbrs, store, cfg=cfg)
    assert again.edge_list_text() == g.edge_list_text()
    assert again.features.tobytes() == g.features.tobytes()
