import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gnnsl.corpus import Dataset, Vocab, generate_synthetic
from gnnsl.datastore import ConsistencyError, build, knn_query
from gnnsl.encoder import Encoder, EncoderConfig, vanilla_predict
from gnnsl.knnsl import InterpConfig, argmax_labels, interpolate, knn_distribution, tag_knn
from gnnsl.numcore import DimensionError


def test_single_label_gets_all_mass():
    p = knn_distribution([(0, 0.3), (0, 2.0)], 1.0, 3)
    np.testing.assert_array_equal(p, [1.0, 0.0, 0.0])


def test_equal_distances_split_evenly():
    np.testing.assert_array_equal(knn_distribution([(0, 0.0), (1, 0.0)], 1.0, 2), [0.5, 0.5])


def test_log_three_distance():
    p = knn_distribution([(0, 0.0), (1, math.log(3))], 1.0, 2)
    np.testing.assert_allclose(p, [0.75, 0.25], atol=1e-15)


def test_empty_neighbors_and_bad_temperature():
    with pytest.raises(ValueError):
        knn_distribution([], 1.0, 2)
    with pytest.raises(ValueError):
        knn_distribution([(0, 1.0)], 0.0, 2)


def test_config_validation():
    for kw in ({"k": 0}, {"temperature": 0.0}, {"lam": 1.5}):
        with pytest.raises(ValueError):
            InterpConfig(**kw)


def test_interpolate_examples():
    np.testing.assert_allclose(interpolate([0.8, 0.2], [0.2, 0.8], 0.5), [0.5, 0.5], atol=1e-15)
    pv, pk = np.array([0.3, 0.7]), np.array([0.9, 0.1])
    np.testing.assert_array_equal(interpolate(pv, pk, 1.0), pv)
    np.testing.assert_array_equal(interpolate(pv, pk, 0.0), pk)
    with pytest.raises(DimensionError):
        interpolate([0.5, 0.5], [1.0], 0.5)


def test_argmax_ties_lowest_id():
    assert argmax_labels(np.array([[0.4, 0.4, 0.2], [0.1, 0.45, 0.45]])).tolist() == [0, 1]


neighbor_lists = st.lists(st.tuples(st.integers(0, 4), st.floats(0, 20)), min_size=1, max_size=12)


@given(neighbor_lists, st.floats(0, 50), st.sampled_from([0.5, 1.0, 10.0, 100.0]))
def test_shift_invariance(nbrs, c, t):
    a = knn_distribution(nbrs, t, 5)
    b = knn_distribution([(y, d + c) for y, d in nbrs], t, 5)
    np.testing.assert_allclose(a, b, atol=1e-9)


@given(neighbor_lists, st.floats(0.1, 10), st.sampled_from([0.5, 1.0, 10.0]))
def test_scale_with_temperature(nbrs, alpha, t):
    a = knn_distribution(nbrs, t, 5)
    b = knn_distribution([(y, d * alpha) for y, d in nbrs], t * alpha, 5)
    np.testing.assert_allclose(a, b, atol=1e-9)


probs = st.lists(st.floats(0.01, 1), min_size=4, max_size=4).map(lambda v: np.array(v) / np.sum(v))


@given(probs, probs, st.floats(0, 1), st.floats(0, 1))
def test_interpolation_normalized_and_monotone(pv, pk, l1, l2):
    lo, hi = sorted((l1, l2))
    a, b = interpolate(pv, pk, lo), interpolate(pv, pk, hi)
    assert abs(a.sum() - 1) < 1e-9 and abs(b.sum() - 1) < 1e-9
    # moving lambda toward 1 moves every component toward p_vanilla
    assert np.all((b - a) * (pv - pk) >= -1e-12)


# ------------------------------------------------------------- end to end


@pytest.fixture(scope="module")
def toy_setup():
    ds, ls = generate_synthetic(11, 30, 0.2)
    store_data = Dataset(list(ds.sentences[:5]))
    enc = Encoder(EncoderConfig(d=8, d_emb=4, heads=2, seed=3), Vocab.build(ds), ls)
    return enc, build(enc, store_data), store_data, ds[20]


def test_lambda_one_matches_vanilla(toy_setup):
    enc, store, _, query = toy_setup
    out = tag_knn(enc, store, query, InterpConfig(k=4, lam=1.0))
    want = vanilla_predict(enc, enc.represent([query])[0]).argmax(axis=1)
    assert [y for y, _ in out] == want.tolist()


def test_lambda_zero_k_one_copies_stored_label(toy_setup):
    enc, store, data, _ = toy_setup
    s = data[2]
    out = tag_knn(enc, store, s, InterpConfig(k=1, lam=0.0))
    assert [y for y, _ in out] == list(s.labels)


def test_matches_composed_oracle(toy_setup):
    enc, store, data, query = toy_setup
    cfg = InterpConfig(k=6, temperature=2.0, lam=0.35)
    got = tag_knn(enc, store, query, cfg)
    reps = enc.represent([query])[0]
    n_y = len(enc.labels)
    for h, (label, dist) in zip(reps, got):
        # brute-force neighbors: sort every record by (squared distance, sid, tid)
        rows = sorted(
            (sum((float(a) - float(b)) ** 2 for a, b in zip(h, key)), int(s), int(t), int(y))
            for key, s, t, y in zip(store.keys, store.sentence_ids, store.token_indices, store.label_ids)
        )[: cfg.k]
        pk = [0.0] * n_y
        for d2, _, _, y in rows:
            pk[y] += math.exp(-math.sqrt(d2) / cfg.temperature)
        total = sum(pk)
        pk = [v / total for v in pk]
        pv = vanilla_predict(enc, h)
        final = [cfg.lam * a + (1 - cfg.lam) * b for a, b in zip(pv, pk)]
        np.testing.assert_allclose(dist, final, atol=1e-12)
        assert label == int(np.argmax(final))


def test_neighbor_set_feeds_distribution(toy_setup):
    enc, store, _, query = toy_setup
    h = enc.represent([query])[0][0]
    nb = knn_query(store, h, 3)
    pairs = [(int(y), float(np.sqrt(d2))) for y, d2 in zip(nb.label_ids, nb.sq_dists)]
    np.testing.assert_allclose(knn_distribution(nb, 1.0, len(enc.labels)),
                               knn_distribution(pairs, 1.0, len(enc.labels)), atol=1e-15)


def test_digest_mismatch(toy_setup):
    enc, store, _, query = toy_setup
    other = Encoder(EncoderConfig(d=8, d_emb=4, heads=2, seed=99), enc.vocab, enc.labels)
    with pytest.raises(ConsistencyError):
        tag_knn(other, store, query, InterpConfig())
