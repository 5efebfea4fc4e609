"""Dense 2-D tensors with tape-based reverse-mode differentiation.

Every value is a float64 matrix. Operations whose inputs require gradients
append a record to a thread-local tape; :func:`backward` replays the tape in
reverse and then clears it, so each forward pass can be differentiated once.

Broadcasting is limited to a row vector (1 x c), a column vector (r x 1) or a
scalar (1 x 1) against a full matrix.
"""
from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np

from .errors import ConfigError, ContractError, DimensionError, DomainError

__all__ = [
    "Tensor", "Tape", "tensor", "parameter", "no_grad", "is_grad_enabled",
    "record_op", "active_tape", "backward",
    "matmul", "transpose", "add", "sub", "mul", "scale", "neg",
    "relu", "tanh", "sigmoid", "elementwise", "hardsigmoid", "hardsigmoid_ste",
    "softmax_rows", "concat_cols", "concat_rows", "row_slice", "col_slice",
    "repeat_rows", "graph_mix", "node_linear", "reduce", "sum_all", "mean_all",
    "l1_mean_abs_diff", "masked_l1", "sum_squares",
]


class Tensor:
    """A float64 matrix that may participate in gradient recording."""

    __slots__ = ("data", "requires_grad", "grad", "name", "__weakref__")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise DimensionError(f"tensors are 2-D, got array of shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if self.requires_grad else None
        self.name = name

    @classmethod
    def _wrap(cls, arr, requires_grad=False):
        # internal constructor: trusts arr to be a 2-D float64 array
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = requires_grad
        t.grad = None
        t.name = None
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        if self.data.size != 1:
            raise ContractError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def numpy(self):
        return self.data

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def detach(self):
        return Tensor._wrap(self.data)

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    @property
    def T(self):
        return transpose(self)


def tensor(data, requires_grad=False, name=None):
    return data if isinstance(data, Tensor) else Tensor(data, requires_grad, name)


def parameter(data, name=None):
    return Tensor(data, requires_grad=True, name=name)


class _Record:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out, inputs, backward):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered list of recorded primitive operations."""

    def __init__(self):
        self.records = []
        self._index = {}

    def append(self, record):
        self._index[id(record.out)] = len(self.records)
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    def __contains__(self, t):
        return id(t) in self._index and self.records[self._index[id(t)]].out is t

    def clear(self):
        self.records.clear()
        self._index.clear()


_state = threading.local()


def active_tape():
    tape = getattr(_state, "tape", None)
    if tape is None:
        tape = _state.tape = Tape()
    return tape


def is_grad_enabled():
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad():
    prev = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


def record_op(data, inputs, backward_fn):
    """Wrap ``data`` as the output of an operation on ``inputs``.

    ``backward_fn(g)`` receives the output gradient and returns one gradient
    (or None) per input. Nothing is recorded unless some input requires grad.
    """
    req = is_grad_enabled() and any(t is not None and t.requires_grad for t in inputs)
    out = Tensor._wrap(data, req)
    if req:
        active_tape().append(_Record(out, tuple(inputs), backward_fn))
    return out


def backward(loss):
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``."""
    if loss.shape != (1, 1):
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    tape = active_tape()
    if loss not in tape:
        raise ContractError("loss was not produced on the active tape "
                            "(backward already ran for this forward pass?)")
    produced = {id(r.out) for r in tape.records}
    grads = {id(loss): np.ones((1, 1))}
    stop = tape._index[id(loss)]
    try:
        for rec in reversed(tape.records[:stop + 1]):
            g = grads.pop(id(rec.out), None)
            if g is None:
                continue
            rec.out.grad = g
            for inp, gi in zip(rec.inputs, rec.backward(g)):
                if gi is None or inp is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in produced:
                    prev = grads.get(key)
                    grads[key] = gi if prev is None else prev + gi
                else:
                    if inp.grad is None:
                        inp.grad = np.zeros_like(inp.data)
                    inp.grad += gi
    finally:
        tape.clear()


def _t(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


def _check_broadcast(a, b, op):
    sa, sb = a.shape, b.shape
    if sa == sb:
        return
    for small, big in ((sa, sb), (sb, sa)):
        if small in ((1, 1), (1, big[1]), (big[0], 1)):
            return
    raise DimensionError(f"{op}: cannot broadcast shapes {sa} and {sb}")


def matmul(a, b):
    a, b = _t(a), _t(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: inner dimensions differ for {a.shape} @ {b.shape}")
    A, B = a.data, b.data

    def bw(g):
        return (g @ B.T if a.requires_grad else None,
                A.T @ g if b.requires_grad else None)

    return record_op(A @ B, (a, b), bw)


def transpose(a):
    a = _t(a)
    return record_op(a.data.T.copy(), (a,), lambda g: (g.T,))


def add(a, b):
    a, b = _t(a), _t(b)
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape
    return record_op(a.data + b.data, (a, b),
                     lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    a, b = _t(a), _t(b)
    _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape
    return record_op(a.data - b.data, (a, b),
                     lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b):
    a, b = _t(a), _t(b)
    _check_broadcast(a, b, "mul")
    A, B = a.data, b.data

    def bw(g):
        return (_unbroadcast(g * B, A.shape) if a.requires_grad else None,
                _unbroadcast(g * A, B.shape) if b.requires_grad else None)

    return record_op(A * B, (a, b), bw)


def scale(a, c):
    a = _t(a)
    c = float(c)
    return record_op(a.data * c, (a,), lambda g: (g * c,))


def neg(a):
    return scale(a, -1.0)


def relu(a):
    a = _t(a)
    mask = a.data > 0
    return record_op(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def tanh(a):
    a = _t(a)
    y = np.tanh(a.data)
    return record_op(y, (a,), lambda g: (g * (1.0 - y * y),))


def _sigmoid(x):
    # split by sign so neither branch overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a):
    a = _t(a)
    y = _sigmoid(a.data)
    return record_op(y, (a,), lambda g: (g * y * (1.0 - y),))


_UNARY = {"relu": relu, "tanh": tanh, "sigmoid": sigmoid}
_BINARY = {"add": add, "sub": sub, "mul": mul}


def elementwise(op_tag, *operands):
    """Dispatch by tag: relu/tanh/sigmoid (x), add/sub/mul (x, y), scale (x, c)."""
    if op_tag in _UNARY:
        return _UNARY[op_tag](*operands)
    if op_tag in _BINARY:
        return _BINARY[op_tag](*operands)
    if op_tag == "scale":
        return scale(*operands)
    raise ConfigError(f"unknown elementwise op {op_tag!r}")


def hardsigmoid(x):
    return np.clip(x / 6.0 + 0.5, 0.0, 1.0)


def hardsigmoid_ste(x, alpha=1.0):
    """round(hardsigmoid(alpha*x)) forward, d/dx hardsigmoid(alpha*x) backward.

    Ties at 0.5 round up to 1.
    """
    if not alpha >= 1.0:
        raise ConfigError(f"hardsigmoid_ste temperature must be >= 1.0, got {alpha}")
    x = _t(x)
    z = alpha * x.data
    y = np.floor(hardsigmoid(z) + 0.5)
    slope = np.where(np.abs(z) < 3.0, alpha / 6.0, 0.0)
    return record_op(y, (x,), lambda g: (g * slope,))


def softmax_rows(a):
    a = _t(a)
    z = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return record_op(y, (a,), bw)


def concat_cols(*ts):
    ts = [_t(t) for t in ts]
    rows = {t.shape[0] for t in ts}
    if len(rows) != 1:
        raise DimensionError(f"concat_cols: row counts differ: {[t.shape for t in ts]}")
    bounds = np.cumsum([0] + [t.shape[1] for t in ts])

    def bw(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(ts)))

    return record_op(np.concatenate([t.data for t in ts], axis=1), tuple(ts), bw)


def concat_rows(*ts):
    ts = [_t(t) for t in ts]
    cols = {t.shape[1] for t in ts}
    if len(cols) != 1:
        raise DimensionError(f"concat_rows: column counts differ: {[t.shape for t in ts]}")
    bounds = np.cumsum([0] + [t.shape[0] for t in ts])

    def bw(g):
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(ts)))

    return record_op(np.concatenate([t.data for t in ts], axis=0), tuple(ts), bw)


def row_slice(a, start, stop):
    a = _t(a)
    shape = a.shape

    def bw(g):
        full = np.zeros(shape)
        full[start:stop] = g
        return (full,)

    return record_op(a.data[start:stop].copy(), (a,), bw)


def col_slice(a, start, stop):
    a = _t(a)
    shape = a.shape

    def bw(g):
        full = np.zeros(shape)
        full[:, start:stop] = g
        return (full,)

    return record_op(a.data[:, start:stop].copy(), (a,), bw)


def repeat_rows(a, times):
    """Repeat every row ``times`` times consecutively (node-major batching)."""
    a = _t(a)
    r, c = a.shape
    if times == 1:
        return a
    return record_op(np.repeat(a.data, times, axis=0), (a,),
                     lambda g: (g.reshape(r, times, c).sum(axis=1),))


def graph_mix(k, y, batch=1):
    """Apply an n x n matrix across nodes of a node-major (n*batch) x h block.

    Row ``i*batch + b`` holds node ``i`` of batch element ``b``; the result is
    ``K @ Y_b`` for every batch element.
    """
    k, y = _t(k), _t(y)
    n = k.shape[0]
    if k.shape[1] != n or y.shape[0] != n * batch:
        raise DimensionError(f"graph_mix: K {k.shape} incompatible with Y {y.shape} "
                             f"at batch {batch}")
    h = y.shape[1]
    K = k.data
    Y2 = y.data.reshape(n, batch * h)

    def bw(g):
        G2 = g.reshape(n, batch * h)
        return (G2 @ Y2.T if k.requires_grad else None,
                (K.T @ G2).reshape(n * batch, h) if y.requires_grad else None)

    return record_op((K @ Y2).reshape(n * batch, h), (k, y), bw)


def node_linear(h, wflat):
    """Per-row linear map: out_i = h_i @ wflat_i.reshape(c, c_out)."""
    h, wflat = _t(h), _t(wflat)
    n, c = h.shape
    if wflat.shape[0] != n or wflat.shape[1] % c:
        raise DimensionError(f"node_linear: H {h.shape} incompatible with weights {wflat.shape}")
    c_out = wflat.shape[1] // c
    H = h.data
    W = wflat.data.reshape(n, c, c_out)

    def bw(g):
        gh = np.einsum("no,nco->nc", g, W) if h.requires_grad else None
        gw = np.einsum("nc,no->nco", H, g).reshape(n, c * c_out) if wflat.requires_grad else None
        return gh, gw

    return record_op(np.einsum("nc,nco->no", H, W), (h, wflat), bw)


def _nonempty(x, op):
    if x.size == 0:
        raise DomainError(f"{op} of an empty tensor")


def sum_all(x):
    x = _t(x)
    _nonempty(x, "sum")
    shape = x.shape
    return record_op(np.array([[x.data.sum()]]), (x,), lambda g: (np.full(shape, g[0, 0]),))


def mean_all(x):
    x = _t(x)
    _nonempty(x, "mean")
    shape, n = x.shape, x.size
    return record_op(np.array([[x.data.mean()]]), (x,),
                     lambda g: (np.full(shape, g[0, 0] / n),))


def l1_mean_abs_diff(x, y):
    return masked_l1(x, y, None)


def masked_l1(x, y, mask=None):
    """Mean of |x - y| over entries where ``mask`` is nonzero (all if None)."""
    x, y = _t(x), _t(y)
    if x.shape != y.shape:
        raise DimensionError(f"l1: shapes differ {x.shape} vs {y.shape}")
    _nonempty(x, "l1")
    d = x.data - y.data
    if mask is None:
        w = None
        count = d.size
    else:
        w = np.asarray(mask, dtype=np.float64).reshape(d.shape)
        count = w.sum()
        if count == 0:
            raise DomainError("l1: mask selects no entries")
    absd = np.abs(d) if w is None else np.abs(d) * w
    sgn = np.sign(d) / count if w is None else np.sign(d) * w / count

    def bw(g):
        gg = g[0, 0] * sgn
        return (gg if x.requires_grad else None, -gg if y.requires_grad else None)

    return record_op(np.array([[absd.sum() / count]]), (x, y), bw)


def sum_squares(x):
    x = _t(x)
    X = x.data
    return record_op(np.array([[np.sum(X * X)]]), (x,), lambda g: (2.0 * g[0, 0] * X,))


def reduce(x, mode="sum", y=None):
    if mode == "sum":
        return sum_all(x)
    if mode == "mean":
        return mean_all(x)
    if mode == "l1_mean_abs_diff":
        if y is None:
            raise ContractError("l1_mean_abs_diff needs a second operand")
        return l1_mean_abs_diff(x, y)
    raise ConfigError(f"unknown reduce mode {mode!r}")
