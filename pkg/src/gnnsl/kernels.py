"""Backend selection for the hot kernels.

The compiled extension is used when it imports; setting ``GNNSL_PURE_PYTHON=1``
forces the numpy fallback. Both expose ``sq_l2``, ``topk_rows``,
``segment_sum`` and ``segment_max`` with identical results.
"""

import os

import numpy as np

from . import _pykernels

if os.environ.get("GNNSL_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
else:
    try:
        from . import _kernels as _impl
    except ImportError:  # extension not built
        _impl = _pykernels

backend = _impl.name


def get_backend(name=None):
    """Return a kernel module by name ("cython" or "python"); None gives the active one."""
    if name is None:
        return _impl
    if name == "python":
        return _pykernels
    if name == "cython":
        from . import _kernels

        return _kernels
    raise ValueError(f"unknown kernel backend {name!r}")


def sq_l2(queries, keys_t):
    return _impl.sq_l2(
        np.ascontiguousarray(queries, dtype=np.float64),
        np.ascontiguousarray(keys_t, dtype=np.float64),
    )


def topk_rows(dists, k, exclude=None):
    dists = np.ascontiguousarray(dists, dtype=np.float64)
    if exclude is None:
        exclude = np.full(dists.shape[0], -1, dtype=np.int64)
    return _impl.topk_rows(dists, int(k), np.ascontiguousarray(exclude, dtype=np.int64))


def segment_sum(values, segments, num_segments):
    return _impl.segment_sum(
        np.ascontiguousarray(values, dtype=np.float64),
        np.ascontiguousarray(segments, dtype=np.int64),
        int(num_segments),
    )


def segment_max(values, segments, num_segments):
    return _impl.segment_max(
        np.ascontiguousarray(values, dtype=np.float64),
        np.ascontiguousarray(segments, dtype=np.int64),
        int(num_segments),
    )
