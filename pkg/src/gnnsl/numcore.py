"""Dense tensors with tape-based reverse-mode differentiation.

Every primitive computes its forward value with numpy. When gradients are
enabled and any input requires them, the output is appended to the current
thread's tape together with a closure mapping the output gradient to input
gradients. ``backward`` walks the tape in reverse once and clears it.
"""

from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass, field

import numpy as np

from . import kernels


class DimensionError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op", "__weakref__")

    def __init__(self, data, requires_grad=False, dtype=np.float64):
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = ()
        self._backward = None
        self.op = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __len__(self):
        return self.data.shape[0]

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return slice_(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)


class Tape:
    """Ordered record of taped outputs; parents always precede children."""

    def __init__(self):
        self.nodes = []

    def __len__(self):
        return len(self.nodes)

    def clear(self):
        self.nodes.clear()


class _State(threading.local):
    def __init__(self):
        self.tape = Tape()
        self.enabled = True


_state = _State()


def get_tape():
    return _state.tape


@contextlib.contextmanager
def no_grad():
    prev = _state.enabled
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out_data, parents, backward, op):
    out = Tensor(out_data)
    out.op = op
    if _state.enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
        _state.tape.nodes.append(out)
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ----------------------------------------------------------------- elementwise


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return _record(
        a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add"
    )


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape
    return _record(
        a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)), "sub"
    )


def neg(a):
    return _record(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _record(
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
        "mul",
    )


def relu(a):
    mask = a.data > 0
    return _record(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def tanh(a):
    y = np.tanh(a.data)
    return _record(y, (a,), lambda g: (g * (1.0 - y * y),), "tanh")


def exp(a):
    y = np.exp(a.data)
    return _record(y, (a,), lambda g: (g * y,), "exp")


def log(a):
    x = a.data
    return _record(np.log(x), (a,), lambda g: (g / x,), "log")


def identity(a):
    return _record(a.data.copy(), (a,), lambda g: (g,), "identity")


# ------------------------------------------------------------------ reductions


def sum(a, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy naming
    shape = a.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _record(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), back, "sum")


def mean(a, axis=None, keepdims=False):
    n = a.data.size if axis is None else a.shape[axis]
    shape = a.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, shape).copy(),)

    return _record(np.mean(a.data, axis=axis, keepdims=keepdims), (a,), back, "mean")


def softmax(a, axis=-1):
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _record(y, (a,), back, "softmax")


def log_softmax(a, axis=-1):
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse
    p = np.exp(y)

    def back(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return _record(y, (a,), back, "log_softmax")


# ------------------------------------------------------------ linear algebra


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim != 2 or a.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def back(g):
        ga = g @ bd.T
        gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    return _record(ad @ bd, (a, b), back, "matmul")


def einsum(spec, a, b):
    """Two-operand einsum without repeated indices inside one operand."""
    a, b = as_tensor(a), as_tensor(b)
    ins, out = spec.replace(" ", "").split("->")
    sa, sb = ins.split(",")
    if len(sa) != a.ndim or len(sb) != b.ndim:
        raise DimensionError(f"einsum {spec}: operand ranks {a.shape}, {b.shape}")
    sizes = {}
    for letters, shape in ((sa, a.shape), (sb, b.shape)):
        for ch, n in zip(letters, shape):
            if sizes.setdefault(ch, n) != n:
                raise DimensionError(f"einsum {spec}: size clash on {ch!r} for {a.shape}, {b.shape}")
    ad, bd = a.data, b.data

    def back(g):
        ga = np.einsum(f"{out},{sb}->{sa}", g, bd)
        gb = np.einsum(f"{out},{sa}->{sb}", g, ad)
        return ga, gb

    return _record(np.einsum(spec, ad, bd), (a, b), back, "einsum")


def head_matmul(x, w):
    """Per-head projection: x (N, g, i) with w (g, i, j) gives (N, g, j)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 3 or w.ndim != 3 or x.shape[1] != w.shape[0] or x.shape[2] != w.shape[1]:
        raise DimensionError(f"head_matmul: incompatible shapes {x.shape} and {w.shape}")
    xt = x.data.transpose(1, 0, 2)  # (g, N, i)
    wd = w.data

    def back(g):
        gt = g.transpose(1, 0, 2)  # (g, N, j)
        gx = np.matmul(gt, wd.transpose(0, 2, 1)).transpose(1, 0, 2)
        gw = np.matmul(xt.transpose(0, 2, 1), gt)
        return gx, gw

    return _record(np.matmul(xt, wd).transpose(1, 0, 2), (x, w), back, "head_matmul")


# ------------------------------------------------------------------- structure


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.shape for t in tensors]
        raise DimensionError(f"concat: incompatible shapes {shapes} on axis {axis}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def back(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _record(data, tuple(tensors), back, "concat")


def slice_(a, key):
    shape = a.shape
    try:
        data = a.data[key]
    except IndexError as exc:
        raise DimensionError(f"slice: {exc} for shape {shape}") from None

    def back(g):
        full = np.zeros(shape)
        full[key] = g
        return (full,)

    return _record(data, (a,), back, "slice")


def reshape(a, shape):
    old = a.shape
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {old} as {shape}") from None
    return _record(data, (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a, axes=None):
    inv = None if axes is None else np.argsort(axes)
    return _record(
        np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose"
    )


def embedding_lookup(table, ids):
    """Gather rows of ``table`` (V, ...) by integer ``ids`` of any shape."""
    ids = np.asarray(ids, dtype=np.int64)
    n = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        raise IndexError(f"embedding_lookup: id out of range for table of {n} rows")
    tshape = table.shape

    def back(g):
        flat = g.reshape(ids.size, -1)
        out = kernels.segment_sum(flat, ids.reshape(-1), n)
        return (out.reshape(tshape),)

    return _record(table.data[ids], (table,), back, "embedding_lookup")


gather = embedding_lookup


def segment_sum(values, segments, num_segments):
    """Sum rows of ``values`` into buckets; inverse of a row gather."""
    segments = np.asarray(segments, dtype=np.int64)
    vshape = values.shape
    flat = values.data.reshape(vshape[0], -1)
    out = kernels.segment_sum(flat, segments, num_segments).reshape((num_segments,) + vshape[1:])

    def back(g):
        return (g[segments],)

    return _record(out, (values,), back, "segment_sum")


def segment_softmax(logits, segments, num_segments):
    """Softmax of ``logits`` rows (E, H) within each segment, per column."""
    segments = np.asarray(segments, dtype=np.int64)
    x = logits.data
    if x.ndim != 2:
        raise DimensionError(f"segment_softmax: expected (E, H) logits, got {x.shape}")
    mx = kernels.segment_max(x, segments, num_segments)
    e = np.exp(x - mx[segments])
    den = kernels.segment_sum(e, segments, num_segments)
    y = e / den[segments]

    def back(g):
        s = kernels.segment_sum(g * y, segments, num_segments)
        return (y * (g - s[segments]),)

    return _record(y, (logits,), back, "segment_softmax")


def cross_entropy(logits, targets):
    """Mean token cross-entropy of (N, C) logits against integer targets."""
    targets = np.asarray(targets, dtype=np.int64)
    n, c = logits.shape
    onehot = np.zeros((n, c))
    onehot[np.arange(n), targets] = 1.0
    return neg(mean(sum(mul(log_softmax(logits), onehot), axis=1)))


def dropout(a, rate, rng):
    if rate <= 0.0:
        return a
    mask = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return mul(a, mask)


# -------------------------------------------------------------------- backward


def backward(loss):
    """Accumulate d(loss)/d(leaf) into every requires_grad leaf, then clear the tape."""
    if loss.data.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    tape = _state.tape
    if not loss.requires_grad:
        tape.clear()
        return
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            if parent._backward is None:
                pg = np.asarray(pg, dtype=np.float64).reshape(parent.shape)
                parent.grad = pg.copy() if parent.grad is None else parent.grad + pg
            else:
                key = id(parent)
                prev = grads.get(key)
                grads[key] = pg if prev is None else prev + pg
    for node in tape.nodes:
        node._parents = ()
        node._backward = None
    tape.clear()


# ------------------------------------------------------------------ grad check


@dataclass
class GradCheckReport:
    max_rel_error: float
    rel_errors: np.ndarray
    analytic: np.ndarray
    numeric: np.ndarray
    tol: float
    passed: bool = field(init=False)

    def __post_init__(self):
        self.passed = bool(self.max_rel_error < self.tol)


def grad_check(f, x, step=1e-5, tol=1e-4, floor=1e-6, max_coords=None, seed=0):
    """Compare analytic gradients against central finite differences.

    ``x`` is one leaf tensor or a sequence of them; ``f`` is called with the
    leaves (perturbed in place) and must return a scalar tensor. The relative
    error per coordinate is ``|a - n| / max(|a|, |n|, floor)``.
    """
    if not step > 0:
        raise ValueError(f"grad_check: step must be positive, got {step}")
    xs = [x] if isinstance(x, Tensor) else list(x)
    for t in xs:
        t.requires_grad = True
        t.grad = None
    _state.tape.clear()
    loss = f(*xs)
    if not np.isfinite(loss.data).all():
        raise NumericError("grad_check: non-finite loss")
    backward(loss)
    analytic, numeric = [], []
    rng = np.random.default_rng(seed)
    for t in xs:
        g = np.zeros(t.shape) if t.grad is None else t.grad
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        with no_grad():
            for i in coords:
                orig = flat[i]
                flat[i] = orig + step
                fp = float(f(*xs).data)
                flat[i] = orig - step
                fm = float(f(*xs).data)
                flat[i] = orig
                if not (np.isfinite(fp) and np.isfinite(fm)):
                    raise NumericError("grad_check: non-finite value under perturbation")
                numeric.append((fp - fm) / (2 * step))
                analytic.append(g.reshape(-1)[i])
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    if not np.isfinite(analytic).all():
        raise NumericError("grad_check: non-finite analytic gradient")
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    rel = np.abs(analytic - numeric) / denom
    return GradCheckReport(float(rel.max(initial=0.0)), rel, analytic, numeric, tol)
