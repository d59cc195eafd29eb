"""Minimal reverse-mode differentiation engine.

A ``Value`` wraps a float64 numpy buffer of rank <= 3 (batch, time, channel
as applicable) together with a gradient buffer of the same shape, parent
references and a backward rule, forming an acyclic computation graph.
``backward`` walks the graph in reverse topological order; gradients
accumulate across calls, so callers must ``zero_grads`` between optimizer
steps.

The operator set is exactly what the attention and temporal-convolution
heads need.  Reductions over the time axis in the attention path
(``softmax_sharp`` denominator, ``weighted_row_sum``) sum their addends in
sorted order, which makes the forward pass bit-identical under any
permutation of the input frames.

Everything is computed in 64-bit so central finite differences at step 1e-3
are a meaningful oracle; ``fd_check`` is the verification harness.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, DataError, NumericError, ShapeError, UsageError

EPS_NORM = 1e-12  # l2_normalize denominator clamp
EPS_BN = 1e-5  # batch-norm variance epsilon
BN_MOMENTUM = 0.9  # retention factor for batch-norm running statistics

GradFn = Callable[[np.ndarray], tuple]


def rng(*seeds: int) -> np.random.Generator:
    """Deterministic generator (PCG64): identical seeds, identical stream.

    Extra integers select independent substreams, e.g. ``rng(seed, epoch)``.
    """
    return np.random.default_rng([int(s) for s in seeds])


class Value:
    """Node in the differentiation graph: data, grad, backward rule."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_grad_fn", "_op", "_kink_margin")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 3:
            raise ShapeError(f"rank {arr.ndim} exceeds the supported maximum of 3")
        if arr.size == 0:
            raise ShapeError("all extents must be >= 1")
        self.data = arr
        self.grad = np.zeros_like(arr)
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Value, ...] = ()
        self._grad_fn: GradFn | None = None
        self._op = "leaf"
        self._kink_margin = np.inf

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Value(op={self._op}, shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(_lift(other), -1.0))


def _lift(x) -> Value:
    return x if isinstance(x, Value) else Value(x)


def _node(data, parents: Sequence[Value], grad_fn: GradFn, op: str, kink_margin=np.inf) -> Value:
    out = Value(data)
    out.requires_grad = any(p.requires_grad for p in parents)
    out._parents = tuple(parents)
    out._grad_fn = grad_fn if out.requires_grad else None
    out._op = op
    # kinks in constant subtrees cannot be crossed by perturbing parameters
    out._kink_margin = float(kink_margin) if out.requires_grad else np.inf
    return out


def zero_grads(params) -> None:
    """Zero the grad buffers of Values or (name, Value) pairs."""
    for p in params:
        v = p[1] if isinstance(p, tuple) else p
        v.zero_grad()


def _topo_order(root: Value) -> list[Value]:
    order: list[Value] = []
    visited: set[int] = set()
    stack: list[tuple[Value, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(root: Value) -> None:
    """Accumulate d(root)/d(node) into .grad of every reachable node.

    Repeated calls without zero_grads add up (multi-loss semantics).  The
    per-call flow is kept in a scratch map so stale .grad contents never
    contaminate the propagation itself.
    """
    if root.data.ndim != 0:
        raise UsageError("backward requires a scalar root")
    if not root.requires_grad:
        return
    order = _topo_order(root)
    flows: dict[int, np.ndarray] = {id(root): np.ones(())}
    for node in reversed(order):
        g = flows.pop(id(node), None)
        if g is None:
            continue
        node.grad += g
        if node._grad_fn is None:
            continue
        for parent, pg in zip(node._parents, node._grad_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            acc = flows.get(id(parent))
            flows[id(parent)] = pg if acc is None else acc + pg


def min_kink_margin(root: Value) -> float:
    """Smallest distance to a ReLU/max kink recorded anywhere in the graph."""
    margin = np.inf
    visited: set[int] = set()
    stack = [root]
    while stack:
        node = stack.pop()
        if id(node) in visited:
            continue
        visited.add(id(node))
        margin = min(margin, node._kink_margin)
        stack.extend(node._parents)
    return margin


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def _ordersum(a: np.ndarray, axis: int) -> np.ndarray:
    # Addends sorted by value before summing: the result depends only on the
    # multiset of addends, never on their original order along `axis`.
    return np.sum(np.sort(a, axis=axis), axis=axis)


# ---------------------------------------------------------------------------
# elementwise / structural ops
# ---------------------------------------------------------------------------


def add(a, b) -> Value:
    a, b = _lift(a), _lift(b)
    out = a.data + b.data

    def grad_fn(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _node(out, (a, b), grad_fn, "add")


def mul(a, b) -> Value:
    a, b = _lift(a), _lift(b)
    out = a.data * b.data

    def grad_fn(g):
        return _unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)

    return _node(out, (a, b), grad_fn, "mul")


def sum_all(x) -> Value:
    x = _lift(x)

    def grad_fn(g):
        return (np.full_like(x.data, float(g)),)

    return _node(x.data.sum(), (x,), grad_fn, "sum_all")


def relu(x) -> Value:
    x = _lift(x)
    mask = x.data > 0.0

    def grad_fn(g):
        return (g * mask,)

    return _node(np.where(mask, x.data, 0.0), (x,), grad_fn, "relu",
                 kink_margin=np.abs(x.data).min())


def transpose(x) -> Value:
    x = _lift(x)
    if x.data.ndim != 2:
        raise ShapeError("transpose expects a rank-2 value")

    def grad_fn(g):
        return (g.T.copy(),)

    return _node(x.data.T.copy(), (x,), grad_fn, "transpose")


def reshape(x, shape: tuple[int, ...]) -> Value:
    x = _lift(x)
    if int(np.prod(shape)) != x.data.size:
        raise ShapeError(f"cannot reshape {x.data.shape} to {shape}")

    def grad_fn(g):
        return (g.reshape(x.data.shape),)

    return _node(x.data.reshape(shape), (x,), grad_fn, "reshape")


def concat(values: Sequence, axis: int = 0) -> Value:
    vals = [_lift(v) for v in values]
    if not vals:
        raise ConfigError("concat requires at least one value")
    ref = vals[0].data.shape
    for v in vals[1:]:
        got = v.data.shape
        if len(got) != len(ref) or any(g != r for i, (g, r) in enumerate(zip(got, ref)) if i != axis):
            raise ShapeError(f"concat extents mismatch off axis {axis}: {ref} vs {got}")
    out = np.concatenate([v.data for v in vals], axis=axis)
    splits = np.cumsum([v.data.shape[axis] for v in vals])[:-1]

    def grad_fn(g):
        return tuple(piece.copy() for piece in np.split(g, splits, axis=axis))

    return _node(out, vals, grad_fn, "concat")


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a, b) -> Value:
    a, b = _lift(a), _lift(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError("matmul expects rank-2 operands")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul inner dims disagree: {a.data.shape} x {b.data.shape}")

    def grad_fn(g):
        return g @ b.data.T, a.data.T @ g

    return _node(a.data @ b.data, (a, b), grad_fn, "matmul")


def affine(x, w, b) -> Value:
    """x @ w + b for a single vector (rank 1) or a batch of rows (rank 2)."""
    x = _lift(x)
    if x.data.ndim == 1:
        w = _lift(w)
        row = reshape(x, (1, x.data.shape[0]))
        return add(reshape(matmul(row, w), (w.data.shape[1],)), b)
    return add(matmul(x, w), b)


def row_dot(x, w) -> Value:
    """Dot product of every row of x [T x D] with w [D], giving [T]."""
    x, w = _lift(x), _lift(w)
    if x.data.ndim != 2 or w.data.ndim != 1 or x.data.shape[1] != w.data.shape[0]:
        raise ShapeError(f"row_dot shapes disagree: {x.data.shape} x {w.data.shape}")
    out = np.sum(x.data * w.data, axis=1)

    def grad_fn(g):
        return g[:, None] * w.data[None, :], x.data.T @ g

    return _node(out, (x, w), grad_fn, "row_dot")


def weighted_row_sum(weights, x) -> Value:
    """sum_t weights[t] * x[t, :] with order-canonical summation over t."""
    weights, x = _lift(weights), _lift(x)
    if weights.data.ndim != 1 or x.data.ndim != 2 or weights.data.shape[0] != x.data.shape[0]:
        raise ShapeError(f"weighted_row_sum shapes disagree: {weights.data.shape} x {x.data.shape}")
    out = _ordersum(x.data * weights.data[:, None], axis=0)

    def grad_fn(g):
        return x.data @ g, weights.data[:, None] * g[None, :]

    return _node(out, (weights, x), grad_fn, "weighted_row_sum")


def stack_rows(values: Sequence[Value]) -> Value:
    """Stack rank-1 values of equal length into a rank-2 batch."""
    return concat([reshape(v, (1, v.data.shape[0])) for v in values], axis=0)


def stack_mats(values: Sequence[Value]) -> Value:
    """Stack rank-2 values of equal shape into a rank-3 batch."""
    return concat([reshape(v, (1,) + v.data.shape) for v in values], axis=0)


# ---------------------------------------------------------------------------
# attention primitives
# ---------------------------------------------------------------------------


def softmax_sharp(logits, alpha: float) -> Value:
    """softmax(alpha * logits) for a rank-1 input, with max-subtraction.

    alpha scales how peaked the distribution is.  The normalizer sums its
    exponentials in sorted order, so permuting the logits permutes the
    output bit-exactly.
    """
    logits = _lift(logits)
    if logits.data.ndim != 1:
        raise ShapeError("softmax_sharp expects a rank-1 value")
    if not alpha > 0.0:
        raise ConfigError(f"alpha must be positive, got {alpha}")
    if not np.all(np.isfinite(logits.data)):
        raise NumericError("softmax_sharp input contains non-finite entries")
    z = alpha * (logits.data - logits.data.max())
    e = np.exp(z)
    y = e / _ordersum(e, axis=0)

    def grad_fn(g):
        return (alpha * y * (g - float(np.dot(g, y))),)

    return _node(y, (logits,), grad_fn, "softmax_sharp")


def l2_normalize(v) -> Value:
    """v / max(||v||_2, 1e-12); the clamp is treated as constant in backward."""
    v = _lift(v)
    if v.data.ndim != 1:
        raise ShapeError("l2_normalize expects a rank-1 value")
    norm = float(np.sqrt(np.sum(v.data * v.data)))
    denom = max(norm, EPS_NORM)
    y = v.data / denom

    def grad_fn(g):
        if norm < EPS_NORM:
            return (g / denom,)
        return ((g - y * float(np.dot(g, y))) / denom,)

    return _node(y, (v,), grad_fn, "l2_normalize", kink_margin=abs(norm - EPS_NORM))


# ---------------------------------------------------------------------------
# temporal ops
# ---------------------------------------------------------------------------


def zero_pad_time(x, length: int) -> Value:
    """Fix the time extent to `length`: truncate the tail or pad zero frames.

    Time is the second-to-last axis; input may be [T x C] or [B x T x C].
    """
    x = _lift(x)
    if x.data.ndim < 2:
        raise ShapeError("zero_pad_time expects a rank-2 or rank-3 value")
    if length < 1:
        raise ConfigError(f"pad length must be >= 1, got {length}")
    t = x.data.shape[-2]
    keep = min(t, length)
    out = np.zeros(x.data.shape[:-2] + (length,) + x.data.shape[-1:])
    out[..., :keep, :] = x.data[..., :keep, :]

    def grad_fn(g):
        gx = np.zeros_like(x.data)
        gx[..., :keep, :] = g[..., :keep, :]
        return (gx,)

    return _node(out, (x,), grad_fn, "zero_pad_time")


def _segment_bounds(t: int, n: int) -> list[tuple[int, int]]:
    return [(i * t // n, (i + 1) * t // n) for i in range(n)]


def adaptive_max_pool1d(x, n: int) -> Value:
    """Per-channel max over n contiguous segments [floor(iT/n), floor((i+1)T/n)).

    Time is the second-to-last axis.  Backward routes each segment's
    gradient to the earliest argmax frame.
    """
    x = _lift(x)
    if x.data.ndim < 2:
        raise ShapeError("adaptive_max_pool1d expects a rank-2 or rank-3 value")
    t = x.data.shape[-2]
    if not 1 <= n <= t:
        raise ConfigError(f"segment count {n} must lie in [1, {t}]")
    bounds = _segment_bounds(t, n)
    pieces = []
    argmax = []
    margin = np.inf
    for lo, hi in bounds:
        seg = x.data[..., lo:hi, :]
        idx = np.argmax(seg, axis=-2)
        argmax.append(idx)
        pieces.append(np.take_along_axis(seg, idx[..., None, :], axis=-2))
        if hi - lo >= 2:
            top2 = np.partition(seg, hi - lo - 2, axis=-2)[..., -2:, :]
            margin = min(margin, float((top2[..., 1, :] - top2[..., 0, :]).min()))
    out = np.concatenate(pieces, axis=-2)

    def grad_fn(g):
        gx = np.zeros_like(x.data)
        for i, (lo, hi) in enumerate(bounds):
            # one argmax per (batch, channel), so a plain scatter is exact
            np.put_along_axis(gx[..., lo:hi, :], argmax[i][..., None, :],
                              g[..., i:i + 1, :], axis=-2)
        return (gx,)

    return _node(out, (x,), grad_fn, "adaptive_max_pool1d", kink_margin=margin)


def global_max_pool_time(x) -> Value:
    """Per-channel max over the whole time axis (earliest argmax wins ties).

    [T x C] -> [C]; [B x T x C] -> [B x C].
    """
    x = _lift(x)
    if x.data.ndim < 2:
        raise ShapeError("global_max_pool_time expects a rank-2 or rank-3 value")
    t = x.data.shape[-2]
    idx = np.argmax(x.data, axis=-2)
    out = np.take_along_axis(x.data, idx[..., None, :], axis=-2)[..., 0, :]
    margin = np.inf
    if t >= 2:
        top2 = np.partition(x.data, t - 2, axis=-2)[..., -2:, :]
        margin = float((top2[..., 1, :] - top2[..., 0, :]).min())

    def grad_fn(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, idx[..., None, :], g[..., None, :], axis=-2)
        return (gx,)

    return _node(out, (x,), grad_fn, "global_max_pool_time", kink_margin=margin)


# ---------------------------------------------------------------------------
# convolutions
# ---------------------------------------------------------------------------


def depthwise_conv1d(x, kernels) -> Value:
    """Per-channel temporal cross-correlation with same-length zero padding.

    y[.., t, c] = sum_j kernels[j, c] * x[.., t + j - (k-1)/2, c], with
    out-of-range x = 0.  Channels never mix; kernel length must be odd.
    Input may be [T x C] or [B x T x C].
    """
    x, kernels = _lift(x), _lift(kernels)
    if x.data.ndim < 2 or kernels.data.ndim != 2:
        raise ShapeError("depthwise_conv1d expects x[..xTxC] and kernels[kxC]")
    k, ck = kernels.data.shape
    t, c = x.data.shape[-2], x.data.shape[-1]
    if ck != c:
        raise ShapeError(f"kernel channels {ck} do not match input channels {c}")
    if k % 2 == 0:
        raise ConfigError(f"kernel length must be odd, got {k}")
    p = (k - 1) // 2
    xpad = np.zeros(x.data.shape[:-2] + (t + 2 * p, c))
    xpad[..., p:p + t, :] = x.data
    out = np.zeros_like(x.data)
    for j in range(k):
        out += kernels.data[j] * xpad[..., j:j + t, :]

    def grad_fn(g):
        gpad = np.zeros(x.data.shape[:-2] + (t + 2 * p, c))
        gpad[..., p:p + t, :] = g
        gx = np.zeros_like(x.data)
        gk = np.empty_like(kernels.data)
        for j in range(k):
            gx += kernels.data[j] * gpad[..., 2 * p - j:2 * p - j + t, :]
            gk[j] = (g * xpad[..., j:j + t, :]).reshape(-1, c).sum(axis=0)
        return gx, gk

    return _node(out, (x, kernels), grad_fn, "depthwise_conv1d")


def pointwise_conv1d(x, w, bias) -> Value:
    """Per-timestep affine channel map: y[.., t, :] = x[.., t, :] @ w + bias.

    Input may be [T x C_in] or [B x T x C_in].
    """
    x, w, bias = _lift(x), _lift(w), _lift(bias)
    if x.data.ndim < 2 or w.data.ndim != 2 or bias.data.ndim != 1:
        raise ShapeError("pointwise_conv1d expects x[..xTxC_in], w[C_inxC_out], bias[C_out]")
    if x.data.shape[-1] != w.data.shape[0] or w.data.shape[1] != bias.data.shape[0]:
        raise ShapeError(
            f"pointwise_conv1d shapes disagree: {x.data.shape} x {w.data.shape} + {bias.data.shape}")
    out = x.data @ w.data + bias.data
    cin = x.data.shape[-1]

    def grad_fn(g):
        gw = x.data.reshape(-1, cin).T @ g.reshape(-1, w.data.shape[1])
        return g @ w.data.T, gw, g.reshape(-1, bias.data.shape[0]).sum(axis=0)

    return _node(out, (x, w, bias), grad_fn, "pointwise_conv1d")


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------


@dataclass
class BnState:
    """Running per-channel statistics, updated only by train-mode forward."""

    mean: np.ndarray
    var: np.ndarray

    @classmethod
    def fresh(cls, channels: int) -> "BnState":
        return cls(mean=np.zeros(channels), var=np.ones(channels))

    def copy(self) -> "BnState":
        return BnState(self.mean.copy(), self.var.copy())


def batch_norm(x, gamma, beta, state: BnState, mode: str = "train",
               momentum: float = BN_MOMENTUM, eps: float = EPS_BN) -> Value:
    """Per-channel normalization over every batch/time position.

    Train mode normalizes with the batch statistics (biased variance) and
    folds them into `state`; infer mode normalizes with `state` and leaves
    it untouched.  Accepts rank-2 [T x C] (treated as batch 1) or rank-3
    [B x T x C] input.
    """
    x, gamma, beta = _lift(x), _lift(gamma), _lift(beta)
    if x.data.ndim not in (2, 3):
        raise ShapeError("batch_norm expects rank-2 or rank-3 input")
    c = x.data.shape[-1]
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ShapeError(f"gamma/beta must have shape ({c},)")
    if mode not in ("train", "infer"):
        raise ConfigError(f"unknown batch_norm mode {mode!r}")
    flat = x.data.reshape(-1, c)
    n = flat.shape[0]
    if mode == "train":
        if n < 2:
            raise ConfigError("train-mode batch_norm needs at least 2 positions per channel")
        mean = flat.mean(axis=0)
        var = flat.var(axis=0)
        state.mean[:] = momentum * state.mean + (1.0 - momentum) * mean
        state.var[:] = momentum * state.var + (1.0 - momentum) * var
    else:
        mean = state.mean.copy()
        var = state.var.copy()
    ivar = 1.0 / np.sqrt(var + eps)
    xhat = (flat - mean) * ivar
    out = (gamma.data * xhat + beta.data).reshape(x.data.shape)

    def grad_fn(g):
        gf = g.reshape(-1, c)
        gbeta = gf.sum(axis=0)
        ggamma = (gf * xhat).sum(axis=0)
        gxhat = gf * gamma.data
        if mode == "train":
            gx = (ivar / n) * (n * gxhat - gxhat.sum(axis=0)
                               - xhat * (gxhat * xhat).sum(axis=0))
        else:
            gx = gxhat * ivar
        return gx.reshape(x.data.shape), ggamma, gbeta

    return _node(out, (x, gamma, beta), grad_fn, "batch_norm")


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------


def cross_entropy(logits, labels) -> Value:
    """Mean over the batch of -log softmax(logits)[label], in the log domain."""
    logits = _lift(logits)
    if logits.data.ndim != 2:
        raise ShapeError("cross_entropy expects rank-2 logits [B x K]")
    b, k = logits.data.shape
    labels = np.asarray(labels, dtype=np.intp)
    if labels.shape != (b,):
        raise ShapeError(f"labels must have shape ({b},)")
    if labels.min() < 0 or labels.max() >= k:
        raise DataError(f"labels must lie in [0, {k})")
    z = logits.data
    m = z.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(z - m).sum(axis=1))
    loss = float(np.mean(lse - z[np.arange(b), labels]))

    def grad_fn(g):
        p = np.exp(z - lse[:, None])
        p[np.arange(b), labels] -= 1.0
        return (p * (float(g) / b),)

    return _node(loss, (logits,), grad_fn, "cross_entropy")


# ---------------------------------------------------------------------------
# finite-difference verification
# ---------------------------------------------------------------------------


@dataclass
class FdReport:
    """Outcome of comparing analytic gradients against central differences."""

    max_rel_error: float
    tol: float
    passed: bool
    coords_checked: int
    worst_param: str

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} max_rel_error={self.max_rel_error:.3e} tol={self.tol:.1e} "
                f"coords={self.coords_checked} worst={self.worst_param}")


def fd_check(f: Callable[[], Value], params, step: float = 1e-3, tol: float = 1e-4) -> FdReport:
    """Compare analytic gradients of the scalar f() against central differences.

    `params` is a list of Values or (name, Value) pairs; their .data buffers
    are perturbed in place, one coordinate at a time, and restored.  Errors
    are normalized by the largest gradient magnitude seen (floored at 1e-6)
    so near-zero coordinates do not divide by noise.
    """
    if not step > 0.0:
        raise ConfigError("finite-difference step must be positive")
    named = [p if isinstance(p, tuple) else (f"param{i}", p) for i, p in enumerate(params)]
    zero_grads(v for _, v in named)
    backward(f())
    analytic = [v.grad.copy() for _, v in named]

    numeric = []
    for _, v in named:
        flat = v.data.reshape(-1)
        num = np.empty_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = float(f().data)
            flat[i] = orig - step
            fm = float(f().data)
            flat[i] = orig
            num[i] = (fp - fm) / (2.0 * step)
        numeric.append(num.reshape(v.data.shape))

    scale = max(max((np.abs(a).max() for a in analytic), default=0.0),
                max((np.abs(n).max() for n in numeric), default=0.0), 1e-6)
    max_rel = 0.0
    worst = named[0][0] if named else ""
    coords = 0
    for (name, _), a, n in zip(named, analytic, numeric):
        coords += a.size
        rel = float(np.abs(a - n).max()) / scale
        if rel >= max_rel:
            max_rel = rel
            worst = name
    return FdReport(max_rel_error=max_rel, tol=tol, passed=max_rel <= tol,
                    coords_checked=coords, worst_param=worst)
