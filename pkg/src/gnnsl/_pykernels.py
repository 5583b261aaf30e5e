"""Pure numpy versions of the hot kernels.

Arithmetic order matches the compiled module exactly (sequential accumulation
over dimensions and over segment members), so both backends give bit-equal
results.
"""

import numpy as np

name = "python"


def sq_l2(queries, keys_t):
    """Squared L2 distances between query rows and key columns.

    ``queries`` is (m, d) float64, ``keys_t`` is (d, N) float64 C-contiguous.
    Returns (m, N) float64. Each distance is accumulated dimension by dimension
    starting from zero.
    """
    m, d = queries.shape
    n = keys_t.shape[1]
    out = np.zeros((m, n), dtype=np.float64)
    tmp = np.empty((m, n), dtype=np.float64)
    for i in range(d):
        np.subtract(queries[:, i : i + 1], keys_t[i][None, :], out=tmp)
        np.multiply(tmp, tmp, out=tmp)
        out += tmp
    return out


def topk_rows(dists, k, exclude):
    """Row-wise k smallest entries, ties broken by lower column index.

    ``exclude`` is an int64 array with one column index per row (-1 for none).
    Returns (indices, values) of shape (m, min(k, N)); slots a row cannot fill
    (only possible when it has an exclusion) hold index -1 and value inf.
    """
    m, n = dists.shape
    kk = max(0, min(k, n))
    idx_out = np.full((m, kk), -1, dtype=np.int64)
    val_out = np.full((m, kk), np.inf, dtype=np.float64)
    if kk == 0:
        return idx_out, val_out
    cols = np.arange(n, dtype=np.int64)
    for r in range(m):
        row = dists[r]
        ex = exclude[r]
        if ex >= 0:
            keep = cols != ex
            cand_cols = cols[keep]
            cand = row[keep]
        else:
            cand_cols = cols
            cand = row
        if kk < cand.shape[0]:
            thresh = np.partition(cand, kk - 1)[kk - 1]
            sel = cand <= thresh
            cand_cols = cand_cols[sel]
            cand = cand[sel]
        order = np.lexsort((cand_cols, cand))[:kk]
        idx_out[r, : order.shape[0]] = cand_cols[order]
        val_out[r, : order.shape[0]] = cand[order]
    return idx_out, val_out


def segment_sum(values, segments, num_segments):
    """Sum rows of ``values`` (E, F) into ``num_segments`` buckets, in row order."""
    out = np.zeros((num_segments, values.shape[1]), dtype=np.float64)
    np.add.at(out, segments, values)
    return out


def segment_max(values, segments, num_segments):
    """Row-bucketed max; empty buckets hold -inf."""
    out = np.full((num_segments, values.shape[1]), -np.inf, dtype=np.float64)
    np.maximum.at(out, segments, values)
    return out
