"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N] [--json out.json]

Each row reports the best wall time over N runs for both backends, the
speedup, and whether the two outputs are bit-identical.
"""

import argparse
import json
import sys
import timeit

import numpy as np

from gnnsl.kernels import get_backend


def cases(rng):
    q = rng.normal(size=(64, 64))
    keys_t = rng.normal(size=(64, 20000))
    dists = rng.random(size=(64, 20000))
    values = rng.normal(size=(200000, 8))
    segments = np.sort(rng.integers(0, 5000, size=200000))
    return {
        "sq_l2 64x64 @ 20000 keys": lambda b: b.sq_l2(q, keys_t),
        "topk_rows k=32 over 20000": lambda b: b.topk_rows(dists, 32, np.full(64, -1, dtype=np.int64)),
        "segment_sum 200000x8 -> 5000": lambda b: b.segment_sum(values, segments, 5000),
        "segment_max 200000x8 -> 5000": lambda b: b.segment_max(values, segments, 5000),
    }


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.asarray(a).tobytes() == np.asarray(b).tobytes()


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="write the rows here as JSON")
    args = ap.parse_args(argv)
    py = get_backend("python")
    try:
        cy = get_backend("cython")
    except ImportError:
        sys.exit("compiled extension not built; run `pip install -e . --no-build-isolation` first")
    rows = []
    print(f"{'kernel':34s} {'python s':>10s} {'cython s':>10s} {'speedup':>8s}  identical")
    for name, fn in cases(np.random.default_rng(0)).items():
        t_py = min(timeit.repeat(lambda: fn(py), number=1, repeat=args.repeat))
        t_cy = min(timeit.repeat(lambda: fn(cy), number=1, repeat=args.repeat))
        same = _same(fn(py), fn(cy))
        rows.append({"kernel": name, "python_s": t_py, "cython_s": t_cy, "speedup": t_py / t_cy, "identical": same})
        print(f"{name:34s} {t_py:10.4f} {t_cy:10.4f} {t_py / t_cy:7.2f}x  {same}")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(rows, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
