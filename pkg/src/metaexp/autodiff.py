"""Reverse-mode automatic differentiation on dense float64 arrays.

Every vector-Jacobian product is written in terms of the same primitives it
differentiates, so a backward pass run with ``create_graph=True`` is itself
recorded on the tape and can be differentiated again.  That is what lets a
meta-gradient flow through an inner SGD step ``theta - alpha * grad``.

Usage::

    tape = Tape()
    x = tape.watch(np.array([3.0]))
    y = (x * x).sum()
    (dx,) = backward(y, [x])          # dx.data == [6.0]
"""
import contextlib
import contextvars

import numpy as np

from .errors import ContractViolation, NumericFault, OracleInvalid

_recording = contextvars.ContextVar("metaexp_recording", default=True)


@contextlib.contextmanager
def no_record():
    """Evaluate ops without appending them to any tape."""
    token = _recording.set(False)
    try:
        yield
    finally:
        _recording.reset(token)


@contextlib.contextmanager
def recording():
    token = _recording.set(True)
    try:
        yield
    finally:
        _recording.reset(token)


def is_recording():
    return _recording.get()


class _Node:
    __slots__ = ("kind", "inputs", "attrs", "out")

    def __init__(self, kind, inputs, attrs, out):
        self.kind = kind
        self.inputs = inputs
        self.attrs = attrs
        self.out = out


class Tape:
    """Append-only record of operations; insertion order is topological."""

    def __init__(self):
        self.nodes = []

    def __len__(self):
        return len(self.nodes)

    def watch(self, value):
        """Register ``value`` as a differentiable leaf on this tape."""
        data = value.data if isinstance(value, Tensor) else value
        out = Tensor(data, self, len(self.nodes))
        self.nodes.append(_Node("leaf", (), None, out))
        return out

    def kinds(self):
        return [n.kind for n in self.nodes]

    def node(self, node_id):
        return self.nodes[node_id]


class Tensor:
    """A float64 array, optionally attached to a tape node."""

    __slots__ = ("data", "tape", "node_id")
    __array_priority__ = 100

    def __init__(self, data, tape=None, node_id=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.tape = tape
        self.node_id = node_id

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def requires_grad(self):
        return self.tape is not None

    @property
    def T(self):
        return transpose(self)

    def item(self):
        return float(self.data.reshape(()))

    def numpy(self):
        return self.data

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __repr__(self):
        tag = f", node={self.node_id}" if self.tape is not None else ""
        return f"Tensor({self.data!r}{tag})"


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def detach(t):
    """Copy of ``t``'s value with no backward edge."""
    return Tensor(np.array(as_tensor(t).data, copy=True))


def _tape_of(inputs):
    tape = None
    for t in inputs:
        if t.tape is not None:
            if tape is None:
                tape = t.tape
            elif t.tape is not tape:
                raise ContractViolation("inputs belong to different tapes")
    return tape


def _make(kind, inputs, data, attrs=None):
    tape = _tape_of(inputs)
    if not np.isfinite(data).all():
        raise NumericFault(kind, len(tape.nodes) if tape is not None else None)
    if tape is None or not _recording.get():
        return Tensor(data)
    out = Tensor(data, tape, len(tape.nodes))
    tape.nodes.append(_Node(kind, inputs, attrs, out))
    return out


def _broadcast_shape(kind, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ContractViolation(f"{kind}: shapes {a.shape} and {b.shape} do not conform") from None


# ---------------------------------------------------------------- primitives

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    return _make("add", (a, b), a.data + b.data)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    return _make("sub", (a, b), a.data - b.data)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    return _make("mul", (a, b), a.data * b.data)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data
    return _make("div", (a, b), out)


def neg(a):
    a = as_tensor(a)
    return _make("neg", (a,), -a.data)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ContractViolation(f"matmul: shapes {a.shape} @ {b.shape}")
    return _make("matmul", (a, b), a.data @ b.data)


def tanh(a):
    a = as_tensor(a)
    return _make("tanh", (a,), np.tanh(a.data))


def relu(a):
    a = as_tensor(a)
    return _make("relu", (a,), np.maximum(a.data, 0.0))


def exp(a):
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _make("exp", (a,), out)


def log(a):
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return _make("log", (a,), out)


def _norm_axis(axis, ndim):
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum_(a, axis=None, keepdims=False):
    a = as_tensor(a)
    axis = _norm_axis(axis, a.ndim)
    return _make("sum", (a,), np.sum(a.data, axis=axis, keepdims=keepdims),
                 {"axis": axis, "keepdims": keepdims})


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    axis = _norm_axis(axis, a.ndim)
    n = a.size if axis is None else int(np.prod([a.shape[ax] for ax in axis]))
    if n == 0:
        raise ContractViolation("mean of an empty tensor")
    return mul(sum_(a, axis, keepdims), 1.0 / n)


def concat(tensors, axis=0):
    tensors = tuple(as_tensor(t) for t in tensors)
    if not tensors:
        raise ContractViolation("concat of nothing")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ContractViolation(f"concat: {exc}") from None
    axis = axis % tensors[0].ndim
    return _make("concat", tensors, out, {"axis": axis})


def index_select(a, indices, axis=0):
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.intp)
    axis = axis % a.ndim
    if idx.ndim != 1:
        raise ContractViolation("index_select: indices must be 1-D")
    if idx.size and (idx.min() < -a.shape[axis] or idx.max() >= a.shape[axis]):
        raise ContractViolation("index_select: index out of range")
    return _make("index_select", (a,), np.take(a.data, idx, axis=axis),
                 {"indices": idx, "axis": axis})


def _index_add(g, indices, axis, shape):
    g = as_tensor(g)
    out = np.zeros(shape)
    moved = np.moveaxis(out, axis, 0)
    np.add.at(moved, indices, np.moveaxis(g.data, axis, 0))
    return _make("index_add", (g,), out, {"indices": indices, "axis": axis})


def log_softmax(a):
    """Log-probabilities along the last axis."""
    a = as_tensor(a)
    m = np.max(a.data, axis=-1, keepdims=True)
    shifted = a.data - m
    lse = np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))
    return _make("log_softmax", (a,), shifted - lse)


def clip(a, lo, hi):
    a = as_tensor(a)
    if lo > hi:
        raise ContractViolation(f"clip: lo={lo} > hi={hi}")
    return _make("clip", (a,), np.clip(a.data, lo, hi), {"lo": lo, "hi": hi})


def reshape(a, shape):
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ContractViolation(f"reshape: {exc}") from None
    return _make("reshape", (a,), out)


def transpose(a):
    a = as_tensor(a)
    if a.ndim != 2:
        raise ContractViolation("transpose expects a matrix")
    return _make("transpose", (a,), a.data.T.copy())


def broadcast_to(a, shape):
    a = as_tensor(a)
    try:
        out = np.array(np.broadcast_to(a.data, shape))
    except ValueError as exc:
        raise ContractViolation(f"broadcast_to: {exc}") from None
    return _make("broadcast_to", (a,), out)


def sum_to(a, shape):
    """Sum ``a`` down to a broadcast-compatible ``shape`` (adjoint of broadcast_to)."""
    a = as_tensor(a)
    shape = tuple(shape)
    if a.shape == shape:
        return a
    lead = a.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        lead + i for i, n in enumerate(shape) if n == 1 and a.shape[lead + i] != 1)
    out = np.sum(a.data, axis=axes, keepdims=True)
    out = out.reshape(shape)
    return _make("sum_to", (a,), out)


# composite helpers built from primitives

def sigmoid(a):
    return 0.5 * tanh(0.5 * as_tensor(a)) + 0.5


def minimum(a, b):
    """Elementwise min; at ties the gradient goes to ``a``."""
    a = as_tensor(a)
    return a - relu(a - b)


def sqrt(a):
    return exp(0.5 * log(a))


def pick(logp, actions):
    """Row-wise gather ``logp[i, actions[i]]`` from an (N, A) tensor."""
    logp = as_tensor(logp)
    actions = np.asarray(actions, dtype=np.intp)
    n, k = logp.shape
    if actions.shape != (n,):
        raise ContractViolation(f"pick: {actions.shape} actions for {n} rows")
    flat = reshape(logp, (n * k,))
    return index_select(flat, np.arange(n) * k + actions)


# ---------------------------------------------------------------- VJP rules
# Each rule maps (upstream grad, node) -> one grad (or None) per input and is
# expressed with primitives, so it is differentiable when recorded.

def _unbroadcast(g, shape):
    return g if g.shape == tuple(shape) else sum_to(g, shape)


def _vjp_add(g, node):
    a, b = node.inputs
    return (_unbroadcast(g, a.shape) if a.tape else None,
            _unbroadcast(g, b.shape) if b.tape else None)


def _vjp_sub(g, node):
    a, b = node.inputs
    return (_unbroadcast(g, a.shape) if a.tape else None,
            _unbroadcast(neg(g), b.shape) if b.tape else None)


def _vjp_mul(g, node):
    a, b = node.inputs
    return (_unbroadcast(mul(g, b), a.shape) if a.tape else None,
            _unbroadcast(mul(g, a), b.shape) if b.tape else None)


def _vjp_div(g, node):
    a, b = node.inputs
    ga = _unbroadcast(div(g, b), a.shape) if a.tape else None
    gb = _unbroadcast(neg(div(mul(g, node.out), b)), b.shape) if b.tape else None
    return ga, gb


def _vjp_neg(g, node):
    return (neg(g),)


def _vjp_matmul(g, node):
    a, b = node.inputs
    return (matmul(g, transpose(b)) if a.tape else None,
            matmul(transpose(a), g) if b.tape else None)


def _vjp_tanh(g, node):
    y = node.out
    return (mul(g, sub(1.0, mul(y, y))),)


def _vjp_relu(g, node):
    (a,) = node.inputs
    return (mul(g, (a.data > 0).astype(np.float64)),)


def _vjp_exp(g, node):
    return (mul(g, node.out),)


def _vjp_log(g, node):
    (a,) = node.inputs
    return (div(g, a),)


def _vjp_sum(g, node):
    (a,) = node.inputs
    axis, keepdims = node.attrs["axis"], node.attrs["keepdims"]
    if axis is not None and not keepdims:
        kept = tuple(1 if i in axis else n for i, n in enumerate(a.shape))
        g = reshape(g, kept)
    return (broadcast_to(g, a.shape),)


def _vjp_concat(g, node):
    axis = node.attrs["axis"]
    grads, off = [], 0
    for t in node.inputs:
        n = t.shape[axis]
        grads.append(index_select(g, np.arange(off, off + n), axis) if t.tape else None)
        off += n
    return tuple(grads)


def _vjp_index_select(g, node):
    (a,) = node.inputs
    return (_index_add(g, node.attrs["indices"], node.attrs["axis"], a.shape),)


def _vjp_index_add(g, node):
    return (index_select(g, node.attrs["indices"], node.attrs["axis"]),)


def _vjp_log_softmax(g, node):
    p = exp(node.out)
    return (sub(g, mul(p, sum_(g, -1, keepdims=True))),)


def _vjp_clip(g, node):
    (a,) = node.inputs
    lo, hi = node.attrs["lo"], node.attrs["hi"]
    inside = ((a.data > lo) & (a.data < hi)).astype(np.float64)
    return (mul(g, inside),)


def _vjp_reshape(g, node):
    (a,) = node.inputs
    return (reshape(g, a.shape),)


def _vjp_transpose(g, node):
    return (transpose(g),)


def _vjp_broadcast_to(g, node):
    (a,) = node.inputs
    return (sum_to(g, a.shape),)


def _vjp_sum_to(g, node):
    (a,) = node.inputs
    return (broadcast_to(g, a.shape),)


VJP_RULES = {
    "add": _vjp_add,
    "sub": _vjp_sub,
    "mul": _vjp_mul,
    "div": _vjp_div,
    "neg": _vjp_neg,
    "matmul": _vjp_matmul,
    "tanh": _vjp_tanh,
    "relu": _vjp_relu,
    "exp": _vjp_exp,
    "log": _vjp_log,
    "sum": _vjp_sum,
    "concat": _vjp_concat,
    "index_select": _vjp_index_select,
    "index_add": _vjp_index_add,
    "log_softmax": _vjp_log_softmax,
    "clip": _vjp_clip,
    "reshape": _vjp_reshape,
    "transpose": _vjp_transpose,
    "broadcast_to": _vjp_broadcast_to,
    "sum_to": _vjp_sum_to,
}

PRIMITIVES = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "matmul": matmul,
    "tanh": tanh,
    "relu": relu,
    "exp": exp,
    "log": log,
    "sum": sum_,
    "mean": mean,
    "concat": lambda *ts, axis=0: concat(ts, axis),
    "index_select": index_select,
    "log_softmax": log_softmax,
    "clip": clip,
}


def apply(kind, *inputs, **params):
    """Dispatch a primitive by name."""
    try:
        fn = PRIMITIVES[kind]
    except KeyError:
        raise ContractViolation(f"unknown primitive {kind!r}") from None
    return fn(*inputs, **params)


# ---------------------------------------------------------------- backward

def _flatten_wrt(wrt):
    if isinstance(wrt, Tensor):
        return [wrt], lambda gs: gs[0]
    if hasattr(wrt, "segments"):
        names = list(wrt.segments)
        return [wrt.segments[n] for n in names], lambda gs: type(wrt)(dict(zip(names, gs)))
    items = list(wrt)
    return items, lambda gs: type(wrt)(gs) if isinstance(wrt, tuple) else list(gs)


def backward(root, wrt, create_graph=False):
    """Gradient of scalar ``root`` with respect to each tensor in ``wrt``.

    ``wrt`` may be a Tensor, a ParamVector or a sequence of Tensors; the
    result has the same structure.  Tensors that ``root`` does not depend on
    get explicit zeros.  With ``create_graph`` the returned gradients are tape
    nodes themselves and can be differentiated again.
    """
    root = as_tensor(root)
    if root.size != 1:
        raise ContractViolation(f"backward needs a scalar root, got shape {root.shape}")
    leaves, rebuild = _flatten_wrt(wrt)
    tape = root.tape
    found = {}
    if tape is not None:
        wanted = {t.node_id for t in leaves if t.tape is tape}
        grads = {root.node_id: Tensor(np.ones(root.shape))}
        ctx = contextlib.nullcontext() if create_graph else no_record()
        with ctx:
            for nid in range(root.node_id, -1, -1):
                g = grads.pop(nid, None)
                if g is None:
                    continue
                if nid in wanted:
                    found[nid] = g
                node = tape.nodes[nid]
                if node.kind == "leaf":
                    continue
                in_grads = VJP_RULES[node.kind](g, node)
                for inp, ig in zip(node.inputs, in_grads):
                    if ig is None or inp.tape is None:
                        continue
                    prev = grads.get(inp.node_id)
                    grads[inp.node_id] = ig if prev is None else add(prev, ig)
    out = []
    for t in leaves:
        g = found.get(t.node_id) if (tape is not None and t.tape is tape) else None
        out.append(g if g is not None else Tensor(np.zeros(t.shape)))
    return rebuild(out)


def gradient(fn, params, create_graph=True):
    """Gradient of ``fn(params)`` for a ParamVector.

    When ``params`` live on a tape the result is recorded there (so it can
    be differentiated again); otherwise a private tape is used and constant
    gradients are returned.
    """
    connected = any(t.tape is not None for t in params.values())
    if connected and _recording.get():
        return backward(fn(params), params, create_graph=create_graph)
    tape = Tape()
    with recording():
        local = params.watch(tape)
        return backward(fn(local), local)


def grad_value(f, x):
    """Convenience: value and gradient of scalar ``f`` at array ``x``."""
    tape = Tape()
    xt = tape.watch(np.asarray(x, dtype=np.float64))
    y = f(xt)
    (g,) = backward(y, [xt])
    return as_tensor(y).item(), g.data


def finite_difference_check(f, theta, h=1e-5, analytic=None):
    """Max relative error between autodiff and central differences.

    ``f`` maps a ParamVector (or array) to a scalar; it must be deterministic.
    Relative error per coordinate is ``|a - fd| / max(1, |fd|)``.
    """
    from .params import ParamVector

    if not isinstance(theta, ParamVector):
        theta = ParamVector({"x": np.asarray(theta, dtype=np.float64)})
        f_user = f
        f = lambda p: f_user(p["x"])  # noqa: E731

    def value(flat):
        return as_tensor(f(ParamVector.unflatten(flat, theta.schema))).item()

    flat0 = theta.flatten()
    v1, v2 = value(flat0), value(flat0)
    if v1 != v2 and not (np.isnan(v1) and np.isnan(v2)):
        raise OracleInvalid(f"objective is not deterministic: {v1!r} != {v2!r}")

    if analytic is None:
        tape = Tape()
        p = theta.watch(tape)
        analytic = backward(f(p), p).flatten()
    analytic = np.asarray(analytic, dtype=np.float64)

    worst = 0.0
    for i in range(flat0.size):
        up, dn = flat0.copy(), flat0.copy()
        up[i] += h
        dn[i] -= h
        fd = (value(up) - value(dn)) / (2.0 * h)
        worst = max(worst, abs(analytic[i] - fd) / max(1.0, abs(fd)))
    return worst
