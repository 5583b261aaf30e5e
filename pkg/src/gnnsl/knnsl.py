"""kNN-SL inference: kernel-weighted neighbor label distribution interpolated
with the model distribution."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datastore import knn_search
from .encoder import vanilla_predict
from .numcore import DimensionError


@dataclass
class InterpConfig:
    k: int = 32
    temperature: float = 1.0
    lam: float = 0.5

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if not self.temperature > 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")


def knn_distribution(neighbors, temperature, label_count):
    """Normalized sum of exp(-distance / T) per neighbor label.

    ``neighbors`` is a NeighborSet (squared distances are converted to L2)
    or a sequence of (label_id, l2_distance) pairs.
    """
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    if hasattr(neighbors, "sq_dists"):
        labels = np.asarray(neighbors.label_ids, dtype=np.int64)
        dists = np.sqrt(np.asarray(neighbors.sq_dists, dtype=np.float64))
    else:
        pairs = list(neighbors)
        labels = np.array([p[0] for p in pairs], dtype=np.int64)
        dists = np.array([p[1] for p in pairs], dtype=np.float64)
    if len(labels) == 0:
        raise ValueError("knn_distribution: empty neighbor set")
    return _kernel_vote(labels[None], dists[None], temperature, label_count)[0]


def _kernel_vote(labels, dists, temperature, label_count):
    """Row-wise version on (m, k) arrays; padded slots carry distance inf."""
    logits = -dists / temperature
    # shifting by the row max cancels in the normalization
    logits = logits - logits.max(axis=1, keepdims=True)
    w = np.exp(logits)
    out = np.zeros((labels.shape[0], label_count))
    rows = np.repeat(np.arange(labels.shape[0]), labels.shape[1])
    valid = labels.reshape(-1) >= 0
    np.add.at(out, (rows[valid], labels.reshape(-1)[valid]), w.reshape(-1)[valid])
    return out / out.sum(axis=1, keepdims=True)


def interpolate(p_model, p_knn, lam):
    p_model = np.asarray(p_model, dtype=np.float64)
    p_knn = np.asarray(p_knn, dtype=np.float64)
    if p_model.shape != p_knn.shape:
        raise DimensionError(f"interpolate: shapes {p_model.shape} and {p_knn.shape} differ")
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    return lam * p_model + (1.0 - lam) * p_knn


def argmax_labels(probs):
    """Row argmax; numpy already returns the lowest index among ties."""
    return np.asarray(probs).argmax(axis=-1)


def retrieve(store, reps, k, exclude=None):
    """Neighbors for a stack of representations: (record indices, L2 distances)."""
    idx, d2 = knn_search(store, reps, k, exclude)
    return idx, np.sqrt(d2)


def tag_knn(encoder, store, sentence, config):
    """Per-token (label id, final distribution) for one sentence."""
    store.check_encoder(encoder)
    reps = encoder.represent([sentence])[0]
    p_vanilla = vanilla_predict(encoder, reps)
    idx, dist = retrieve(store, reps, config.k)
    labels = np.where(idx >= 0, store.label_ids[np.maximum(idx, 0)], -1)
    p_knn = _kernel_vote(labels, dist, config.temperature, len(encoder.labels))
    final = interpolate(p_vanilla, p_knn, config.lam)
    return list(zip(argmax_labels(final).tolist(), final))
