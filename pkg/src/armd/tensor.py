"""Dense float64 tensors with reverse-mode autodiff on a recorded tape.

The graph is define-by-run: each operation returns a new ``Tensor`` that
remembers its parent tensors and a closure mapping the node's upstream
gradient to per-parent gradients.  ``backward`` walks the recorded nodes in
exact reverse execution order and accumulates gradients additively, so a
tensor used several times receives the sum of all its contributions.

Everything is double precision.  Values are expected to stay finite after
every operation; set ``CHECK_FINITE = True`` to assert this on every node
(kept off by default for speed — the training loop still checks losses and
parameters each step).
"""

from __future__ import annotations

import itertools
import math
from contextlib import contextmanager

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import NonFiniteError, ShapeError, UsageError

_seq = itertools.count()
_grad_enabled = True
CHECK_FINITE = False

# Open-interval codomain bounds for the squashing activations.  In float64
# sigmoid(40) would round to exactly 1.0; the contract is a strictly open
# interval, so results are nudged to the nearest interior double instead.
_TINY = np.nextafter(0.0, 1.0)
_ONE_BELOW = np.nextafter(1.0, 0.0)


class Tensor:
    """A dense float64 array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_back", "_track", "_seq")

    def __init__(self, data, requires_grad: bool = False):
        # asarray rather than ascontiguousarray: the latter promotes 0-d
        # arrays to shape (1,), which would break scalar losses.
        self.data = np.asarray(data, dtype=np.float64, order="C")
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._back = None
        self._track = self.requires_grad
        self._seq = next(_seq)

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # -- arithmetic sugar ---------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return add(self, mul(other, -1.0))
        return add(self, -float(other))

    def __rsub__(self, other):
        # float - Tensor, used for the coupled carry gate 1 - T
        out = float(other) - self.data
        return _node(out, (self,), lambda g: (-g,))

    def __neg__(self):
        return mul(self, -1.0)


@contextmanager
def no_grad():
    """Disable tape recording; values are computed exactly as with it on."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _node(data, parents, back):
    out = Tensor(data)
    if CHECK_FINITE and not np.all(np.isfinite(out.data)):
        raise NonFiniteError("non-finite value produced by an operation")
    if _grad_enabled and any(p._track for p in parents):
        out._parents = tuple(parents)
        out._back = back
        out._track = True
    return out


def _accumulate(t: Tensor, g: np.ndarray):
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad += g


def backward(loss: Tensor, params=()):
    """Backpropagate from a scalar loss.

    Visits recorded nodes in exact reverse execution order.  Afterwards every
    reachable ``requires_grad`` tensor holds dLoss/dTensor; tensors listed in
    ``params`` that did not participate in the graph get exact-zero gradients
    so an optimizer can treat all parameters uniformly.
    """
    if loss.data.size != 1:
        raise UsageError("backward requires a scalar loss")
    nodes = []
    seen = set()
    stack = [loss]
    while stack:
        t = stack.pop()
        if id(t) in seen or not t._track:
            continue
        seen.add(id(t))
        nodes.append(t)
        stack.extend(t._parents)
    nodes.sort(key=lambda t: t._seq, reverse=True)
    _accumulate(loss, np.ones_like(loss.data))
    for t in nodes:
        if t._back is None or t.grad is None:
            continue
        for parent, g in zip(t._parents, t._back(t.grad)):
            if parent._track and g is not None:
                _accumulate(parent, g)
    for t in nodes:
        if not t.requires_grad:
            t.grad = None  # intermediates do not keep gradient state
    for p in params:
        if p.requires_grad and p.grad is None:
            p.grad = np.zeros_like(p.data)


# -- elementwise arithmetic -------------------------------------------------


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a: Tensor, b):
    if isinstance(b, Tensor):
        out = a.data + b.data
        return _node(
            out,
            (a, b),
            lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)),
        )
    b = float(b)
    return _node(a.data + b, (a,), lambda g: (g,))


def mul(a: Tensor, b):
    if isinstance(b, Tensor):
        out = a.data * b.data
        return _node(
            out,
            (a, b),
            lambda g: (
                _unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape),
            ),
        )
    b = float(b)
    return _node(a.data * b, (a,), lambda g: (g * b,))


def concat_rows(a: Tensor, b: Tensor) -> Tensor:
    """Stack two matrices along axis 0; gradient splits back row-wise."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[1]:
        raise ShapeError(
            f"concat_rows needs matrices with equal column counts, got "
            f"{a.data.shape} and {b.data.shape}"
        )
    na = a.data.shape[0]
    out = np.concatenate([a.data, b.data], axis=0)
    return _node(out, (a, b), lambda g: (g[:na], g[na:]))


def reshape(x: Tensor, shape) -> Tensor:
    orig = x.data.shape
    out = x.data.reshape(shape)
    return _node(out, (x,), lambda g: (g.reshape(orig),))


def sum_all(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum())
    return _node(out, (x,), lambda g: (np.broadcast_to(g, x.data.shape),))


def tensor_sum(tensors) -> Tensor:
    """Sum of same-shape tensors; each parent receives the upstream gradient."""
    tensors = list(tensors)
    if not tensors:
        raise UsageError("tensor_sum of an empty sequence")
    out = tensors[0].data.copy()
    for t in tensors[1:]:
        if t.data.shape != out.shape:
            raise ShapeError("tensor_sum requires identical shapes")
        out += t.data
    return _node(out, tuple(tensors), lambda g: (g,) * len(tensors))


# -- layers -----------------------------------------------------------------


def embedding(tokens, table: Tensor) -> Tensor:
    """Row-gather: output row i is ``table`` row ``tokens[i]``."""
    idx = np.asarray(tokens, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError(f"token sequence must be 1-D, got shape {idx.shape}")
    if table.data.ndim != 2:
        raise ShapeError(f"embedding table must be 2-D, got shape {table.data.shape}")
    vocab = table.data.shape[0]
    bad = (idx < 0) | (idx >= vocab)
    if bad.any():
        pos = int(np.flatnonzero(bad)[0])
        raise IndexError(
            f"token {int(idx[pos])} at position {pos} is outside the vocabulary "
            f"of size {vocab}"
        )
    out = table.data[idx]

    def back(g):
        dt = np.zeros_like(table.data)
        np.add.at(dt, idx, g)
        return (dt,)

    return _node(out, (table,), back)


def conv1d(x: Tensor, kernels: Tensor, bias: Tensor, stride: int = 1) -> Tensor:
    """Valid cross-correlation over axis 0.

    ``x`` is [L, C_in], ``kernels`` is [C_out, K, C_in], ``bias`` is [C_out];
    output position t covers input rows [t*stride, t*stride + K).
    """
    if x.data.ndim != 2 or kernels.data.ndim != 3:
        raise ShapeError(
            f"conv1d expects x [L, C_in] and kernels [C_out, K, C_in], got "
            f"{x.data.shape} and {kernels.data.shape}"
        )
    L, cin = x.data.shape
    cout, K, cin2 = kernels.data.shape
    if cin != cin2:
        raise ShapeError(f"channel mismatch: input has {cin}, kernels expect {cin2}")
    if bias.data.shape != (cout,):
        raise ShapeError(f"bias must have shape ({cout},), got {bias.data.shape}")
    if stride < 1:
        raise ShapeError(f"stride must be positive, got {stride}")
    if L < K:
        raise ShapeError(f"input length {L} is shorter than the kernel; need at least {K} rows")
    win = sliding_window_view(x.data, K, axis=0)[::stride]  # [T, C_in, K]
    T = win.shape[0]
    w2 = win.reshape(T, cin * K)
    k2 = kernels.data.transpose(0, 2, 1).reshape(cout, cin * K)
    out = w2 @ k2.T + bias.data

    def back(g):
        dk = (g.T @ w2).reshape(cout, cin, K).transpose(0, 2, 1)
        db = g.sum(axis=0)
        dx = np.zeros_like(x.data)
        for k in range(K):
            dx[k : k + stride * T : stride] += g @ kernels.data[:, k, :]
        return dx, dk, db

    return _node(out, (x, kernels, bias), back)


def temporal_max_pool(x: Tensor, out_len: int) -> Tensor:
    """Adaptive max pooling along axis 0 to exactly ``out_len`` rows.

    Window j covers rows [floor(j*L/out_len), floor((j+1)*L/out_len)); the
    windows partition the input, so ``out_len == 1`` is a global max pool.
    """
    if x.data.ndim != 2:
        raise ShapeError(f"temporal_max_pool expects [L, C], got {x.data.shape}")
    L, C = x.data.shape
    if out_len < 1 or out_len > L:
        raise ShapeError(f"out_len must be in [1, {L}], got {out_len}")
    out = np.empty((out_len, C))
    rows = np.empty((out_len, C), dtype=np.int64)
    cols = np.arange(C)
    for j in range(out_len):
        a = (j * L) // out_len
        b = ((j + 1) * L) // out_len
        seg = x.data[a:b]
        am = np.argmax(seg, axis=0)
        rows[j] = a + am
        out[j] = seg[am, cols]

    def back(g):
        dx = np.zeros_like(x.data)
        np.add.at(dx, (rows.ravel(), np.tile(cols, out_len)), g.ravel())
        return (dx,)

    return _node(out, (x,), back)


def channel_avg_max_pool(x: Tensor) -> Tensor:
    """Per-position channel statistics: output row t is [mean_c x[t], max_c x[t]]."""
    if x.data.ndim != 2 or x.data.shape[1] < 1:
        raise ShapeError(f"channel_avg_max_pool expects [L, C] with C >= 1, got {x.data.shape}")
    L, C = x.data.shape
    am = np.argmax(x.data, axis=1)
    out = np.stack([x.data.mean(axis=1), x.data[np.arange(L), am]], axis=1)

    def back(g):
        dx = np.tile((g[:, 0] / C)[:, None], (1, C))
        dx[np.arange(L), am] += g[:, 1]
        return (dx,)

    return _node(out, (x,), back)


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Fully connected map w @ x + b for a vector ``x``."""
    if x.data.ndim != 1 or w.data.ndim != 2:
        raise ShapeError(f"affine expects x [n_in] and w [n_out, n_in], got {x.data.shape} and {w.data.shape}")
    n_out, n_in = w.data.shape
    if x.data.shape != (n_in,):
        raise ShapeError(f"x must have shape ({n_in},), got {x.data.shape}")
    if b.data.shape != (n_out,):
        raise ShapeError(f"b must have shape ({n_out},), got {b.data.shape}")
    out = w.data @ x.data + b.data

    def back(g):
        return w.data.T @ g, np.outer(g, x.data), g

    return _node(out, (x, w, b), back)


# -- activations ------------------------------------------------------------


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    pos = x >= 0
    ex = np.exp(np.where(pos, -x, x))  # argument is never positive: no overflow
    out = np.where(pos, 1.0 / (1.0 + ex), ex / (1.0 + ex))
    return np.clip(out, _TINY, _ONE_BELOW)


def sigmoid(x: Tensor) -> Tensor:
    """Logistic function with an open-interval (0, 1) codomain."""
    s = _stable_sigmoid(x.data)
    return _node(s, (x,), lambda g: (g * s * (1.0 - s),))


def tanh(x: Tensor) -> Tensor:
    t = np.clip(np.tanh(x.data), -_ONE_BELOW, _ONE_BELOW)
    return _node(t, (x,), lambda g: (g * (1.0 - t * t),))


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0.0)
    return _node(out, (x,), lambda g: (g * (x.data > 0),))


def stable_softmax(z: np.ndarray) -> np.ndarray:
    """Shift-invariant softmax used by both the loss and prediction paths."""
    e = np.exp(z - z.max())
    return e / e.sum()


def softmax_cross_entropy(logits: Tensor, label: int):
    """Fused softmax + negative log likelihood.

    Returns ``(loss, probs)`` where ``loss`` is a scalar graph node and
    ``probs`` is a plain probability array (it does not carry gradients).
    """
    z = logits.data
    if z.ndim != 1:
        raise ShapeError(f"logits must be a vector, got shape {z.shape}")
    n = z.shape[0]
    label = int(label)
    if not 0 <= label < n:
        raise IndexError(f"label {label} outside [0, {n})")
    m = z.max()
    e = np.exp(z - m)
    s = e.sum()
    p = e / s
    loss = np.asarray(np.log(s) - (z[label] - m))

    def back(g):
        dz = p.copy()
        dz[label] -= 1.0
        return (dz * g,)

    return _node(loss, (logits,), back), p


# -- optimizer --------------------------------------------------------------


class Adam:
    """Adam with bias correction.  ``step`` zeroes gradients afterwards."""

    def __init__(self, params, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        for p in self.params:
            if p.grad is None:
                raise UsageError("adam step with a missing gradient; call backward first")
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            if not np.all(np.isfinite(p.data)):
                raise NonFiniteError("parameter became non-finite during an adam step")
            p.grad = np.zeros_like(g)


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> Tensor:
    lim = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-lim, lim, size=shape), requires_grad=True)
