"""Dense float64 tensors with reverse-mode automatic differentiation.

The operation set is exactly what the dual-view encoder and its losses
need: matrix multiply, broadcasting add/multiply, concatenation, gather
and segment reductions, pointwise nonlinearities, softmax/logsumexp,
and a GRU cell composed from the primitives.

All arithmetic is 64-bit. Segment reductions accumulate in input row
order, so identical inputs give bit-identical outputs and gradients.
"""

import numpy as np

from . import kernels


class ShapeError(ValueError):
    """Operand shapes incompatible for an op; message names the op."""


def _shape_error(op, *shapes):
    return ShapeError(f"{op}: incompatible shapes {' vs '.join(str(s) for s in shapes)}")


class Tensor:
    """Node in the computation tape wrapping a float64 ndarray."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar
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

    def reshape(self, shape):
        return reshape(self, shape)

    def backward(self):
        """Reverse accumulation from a scalar output."""
        if self.data.shape != ():
            raise ShapeError(
                f"backward: differentiation target must be scalar, got shape {self.data.shape}"
            )
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
        self.grad = np.ones((), dtype=np.float64)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, backward):
    out = Tensor(data)
    parents = tuple(p for p in parents if isinstance(p, Tensor))
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._backward = backward
    return out


def _accum(t, g):
    if not t.requires_grad:
        return
    t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# arithmetic


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise _shape_error("add", a.shape, b.shape) from None

    def backward(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _result(data, (a, b), backward)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data - b.data
    except ValueError:
        raise _shape_error("sub", a.shape, b.shape) from None

    def backward(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    return _result(data, (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise _shape_error("mul", a.shape, b.shape) from None

    def backward(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _result(data, (a, b), backward)


def neg(a):
    a = as_tensor(a)

    def backward(g):
        _accum(a, -g)

    return _result(-a.data, (a,), backward)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise _shape_error("matmul", a.shape, b.shape)
    data = a.data @ b.data

    def backward(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _result(data, (a, b), backward)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: empty tensor list")
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise _shape_error("concat", *[t.shape for t in tensors]) from None
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accum(t, g[tuple(idx)])

    return _result(data, tuple(tensors), backward)


def reshape(a, shape):
    a = as_tensor(a)
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise _shape_error("reshape", a.shape, shape) from None

    def backward(g):
        _accum(a, g.reshape(a.data.shape))

    return _result(data, (a,), backward)


def transpose(a):
    a = as_tensor(a)
    if a.ndim != 2:
        raise _shape_error("transpose", a.shape)

    def backward(g):
        _accum(a, g.T)

    return _result(a.data.T.copy(), (a,), backward)


def diag_part(a):
    a = as_tensor(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise _shape_error("diag_part", a.shape)
    n = a.shape[0]

    def backward(g):
        ga = np.zeros_like(a.data)
        ga[np.arange(n), np.arange(n)] = g
        _accum(a, ga)

    return _result(np.diag(a.data).copy(), (a,), backward)


def tile_rows(a, n):
    """Repeat a (1, D) row n times; gradient sums back over rows."""
    a = as_tensor(a)
    if a.ndim != 2 or a.shape[0] != 1:
        raise _shape_error("tile_rows", a.shape)
    data = np.repeat(a.data, n, axis=0)

    def backward(g):
        _accum(a, g.sum(axis=0, keepdims=True))

    return _result(data, (a,), backward)


# ---------------------------------------------------------------------------
# gather / segment ops


def gather_rows(a, index):
    a = as_tensor(a)
    if a.ndim != 2:
        raise _shape_error("gather_rows", a.shape)
    index = np.ascontiguousarray(index, dtype=np.int64)
    data = a.data[index]

    def backward(g):
        _accum(a, kernels.segment_sum(np.ascontiguousarray(g), index, a.shape[0]))

    return _result(data, (a,), backward)


def segment_sum(a, seg, n_seg):
    """Row sums per segment id; empty segments yield zero rows."""
    a = as_tensor(a)
    if a.ndim != 2:
        raise _shape_error("segment_sum", a.shape)
    seg = np.ascontiguousarray(seg, dtype=np.int64)
    data = kernels.segment_sum(np.ascontiguousarray(a.data), seg, n_seg)

    def backward(g):
        _accum(a, g[seg])

    return _result(data, (a,), backward)


def segment_max(a, seg, n_seg):
    """Columnwise max per segment id; empty segments yield zero rows."""
    a = as_tensor(a)
    if a.ndim != 2:
        raise _shape_error("segment_max", a.shape)
    seg = np.ascontiguousarray(seg, dtype=np.int64)
    data, arg = kernels.segment_max(np.ascontiguousarray(a.data), seg, n_seg)

    def backward(g):
        ga = np.zeros_like(a.data)
        mask = arg >= 0
        if mask.any():
            rows = arg[mask]
            cols = np.nonzero(mask)[1]
            np.add.at(ga, (rows, cols), g[mask])
        _accum(a, ga)

    return _result(data, (a,), backward)


def maximum(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise _shape_error("maximum", a.shape, b.shape)
    take_a = a.data >= b.data

    def backward(g):
        _accum(a, np.where(take_a, g, 0.0))
        _accum(b, np.where(take_a, 0.0, g))

    return _result(np.maximum(a.data, b.data), (a, b), backward)


# ---------------------------------------------------------------------------
# pointwise


def leaky_relu(a, slope=0.01):
    a = as_tensor(a)
    positive = a.data > 0
    data = np.where(positive, a.data, slope * a.data)

    def backward(g):
        _accum(a, g * np.where(positive, 1.0, slope))

    return _result(data, (a,), backward)


def sigmoid(a):
    a = as_tensor(a)
    x = a.data
    data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def backward(g):
        _accum(a, g * data * (1.0 - data))

    return _result(data, (a,), backward)


def tanh(a):
    a = as_tensor(a)
    data = np.tanh(a.data)

    def backward(g):
        _accum(a, g * (1.0 - data * data))

    return _result(data, (a,), backward)


def exp(a):
    a = as_tensor(a)
    data = np.exp(a.data)

    def backward(g):
        _accum(a, g * data)

    return _result(data, (a,), backward)


def log(a):
    a = as_tensor(a)

    def backward(g):
        _accum(a, g / a.data)

    return _result(np.log(a.data), (a,), backward)


def absolute(a):
    a = as_tensor(a)

    def backward(g):
        _accum(a, g * np.sign(a.data))

    return _result(np.abs(a.data), (a,), backward)


def softplus(a):
    """log(1 + exp(x)), overflow-safe."""
    a = as_tensor(a)
    x = a.data
    data = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))

    def backward(g):
        s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
        _accum(a, g * s)

    return _result(data, (a,), backward)


# ---------------------------------------------------------------------------
# reductions


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.data.shape).copy())
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.data.shape).copy())

    return _result(data, (a,), backward)


def mean(a):
    a = as_tensor(a)
    size = a.data.size

    def backward(g):
        _accum(a, np.full(a.data.shape, float(g) / size))

    return _result(a.data.mean(), (a,), backward)


def softmax(a, axis):
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * data).sum(axis=axis, keepdims=True)
        _accum(a, (g - inner) * data)

    return _result(data, (a,), backward)


def segment_softmax(a, seg, n_seg):
    """Columnwise softmax within each segment of rows."""
    a = as_tensor(a)
    if a.ndim != 2:
        raise _shape_error("segment_softmax", a.shape)
    seg = np.ascontiguousarray(seg, dtype=np.int64)
    x = np.ascontiguousarray(a.data)
    seg_m, _ = kernels.segment_max(x, seg, n_seg)
    e = np.exp(x - seg_m[seg])
    denom = kernels.segment_sum(e, seg, n_seg)
    data = e / denom[seg]

    def backward(g):
        inner = kernels.segment_sum(np.ascontiguousarray(g * data), seg, n_seg)
        _accum(a, (g - inner[seg]) * data)

    return _result(data, (a,), backward)


def logsumexp(a, axis, keepdims=False):
    a = as_tensor(a)
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    s = e.sum(axis=axis, keepdims=True)
    data = np.log(s) + m
    if not keepdims:
        data = np.squeeze(data, axis=axis)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, g * (e / s))

    return _result(data, (a,), backward)


# ---------------------------------------------------------------------------
# GRU cell


def gru_cell(x, h, w_xz, w_hz, b_z, w_xr, w_hr, b_r, w_xn, w_hn, b_n):
    """Standard gated recurrent unit update: returns the new hidden state.

    x and h are (1, D) rows; weight matrices are (D, D), biases (D,).
    """
    z = sigmoid(add(add(matmul(x, w_xz), matmul(h, w_hz)), b_z))
    r = sigmoid(add(add(matmul(x, w_xr), matmul(h, w_hr)), b_r))
    n = tanh(add(add(matmul(x, w_xn), mul(r, matmul(h, w_hn))), b_n))
    one_minus_z = sub(1.0, z)
    return add(mul(one_minus_z, n), mul(z, h))


# ---------------------------------------------------------------------------
# parameter store and gradient driver


class ParameterStore:
    """Named trainable tensors with lexicographic iteration order."""

    def __init__(self):
        self._params = {}

    def add(self, name, values):
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        t = Tensor(np.array(values, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name):
        try:
            return self._params[name]
        except KeyError:
            raise KeyError(f"missing parameter: {name}") from None

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self):
        return sorted(self._params)

    def items(self):
        return [(name, self._params[name]) for name in self.names()]

    def zero_grads(self):
        for t in self._params.values():
            t.grad = None

    def grads(self):
        """Gradient arrays by name; untouched parameters give zeros."""
        out = {}
        for name, t in self.items():
            out[name] = np.zeros_like(t.data) if t.grad is None else t.grad.copy()
        return out

    def values(self):
        return {name: t.data.copy() for name, t in self.items()}

    def load_values(self, mapping, strict=True):
        """Overwrite parameter data in place from a name -> array mapping."""
        for name, value in mapping.items():
            if name not in self._params:
                if strict:
                    raise KeyError(f"missing parameter: {name}")
                continue
            t = self._params[name]
            value = np.asarray(value, dtype=np.float64)
            if value.shape != t.data.shape:
                raise _shape_error(f"load_values[{name}]", t.data.shape, value.shape)
            t.data = value.copy()

    def clone(self):
        out = ParameterStore()
        for name, t in self.items():
            out.add(name, t.data)
        return out


def evaluate_with_gradients(fn, params, *inputs):
    """Run fn(params, *inputs) to a scalar and return (value, grads by name)."""
    params.zero_grads()
    out = fn(params, *inputs)
    if not isinstance(out, Tensor):
        raise TypeError("fn must return a Tensor")
    if out.data.shape != ():
        raise ShapeError(f"evaluate_with_gradients: output must be scalar, got {out.data.shape}")
    out.backward()
    return float(out.data), params.grads()
