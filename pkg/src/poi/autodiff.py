"""Reverse-mode automatic differentiation on dense float64 arrays.

Every operation builds a node in an implicit tape: the output tensor keeps
references to its inputs and a vector-Jacobian rule. ``backward`` replays the
tape in reverse topological order, visiting each node exactly once and
accumulating (never overwriting) adjoints, so a tensor feeding two consumers
receives the sum of both contributions. Leaf tensors created with
``requires_grad=True`` collect their gradient in ``.grad``; repeated backward
calls without ``zero_grads`` keep accumulating there.

No general broadcasting: each op declares exactly which shapes it accepts,
which keeps the backward rules auditable. ``grad_check`` provides the
central-finite-difference oracle used throughout the test suite.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64

LOG_CLAMP_LO = 1e-12
LOG_CLAMP_HI = 1.0 - 1e-12

_CHECK_FINITE = False


class ShapeError(ValueError):
    """Operand shapes do not conform to the operation's contract."""


def set_finite_checks(enabled: bool) -> None:
    """Toggle per-op NaN/Inf validation (slow; meant for tests and debugging)."""
    global _CHECK_FINITE
    _CHECK_FINITE = enabled


class Tensor:
    """Dense n-d float64 value, optionally a differentiable graph node.

    ``requires_grad`` marks leaves (parameters); their ``.grad`` buffer exists
    from construction and accumulates across backward calls. Interior nodes
    carry parents and a vjp rule instead of a grad buffer.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp", "_needs_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[np.ndarray], tuple[np.ndarray, ...]] | None = None
        self._needs_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        """Copy of the value cut off from the graph (no gradient flows through)."""
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # Minimal operator sugar used when assembling losses.
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, s: float) -> "Tensor":
        return smul(self, s)

    __rmul__ = __mul__


def _node(data: np.ndarray, parents: Sequence[Tensor], vjp) -> Tensor:
    """Wrap an op result; records parents/vjp only if gradients can flow."""
    if _CHECK_FINITE and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite value produced by a forward operation")
    out = Tensor(data)
    if any(p._needs_grad for p in parents):
        out._parents = tuple(parents)
        out._vjp = vjp
        out._needs_grad = True
    return out


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
            if id(parent) not in visited and parent._needs_grad:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every requires_grad leaf below ``loss``."""
    if loss.data.shape != ():
        raise ValueError("backward expects a scalar loss tensor")
    adjoint: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=DTYPE)}
    for node in reversed(_toposort(loss)):
        grad = adjoint.pop(id(node), None)
        if grad is None:
            continue
        if node.requires_grad:
            node.grad += grad
        if node._vjp is None:
            continue
        for parent, pgrad in zip(node._parents, node._vjp(grad)):
            if pgrad is None or not parent._needs_grad:
                continue
            key = id(parent)
            if key in adjoint:
                # never +=: vjps may hand the same array (or views of one
                # buffer) to several parents, so in-place accumulation would
                # corrupt sibling adjoints
                adjoint[key] = adjoint[key] + pgrad
            else:
                adjoint[key] = pgrad


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()


# ---------------------------------------------------------------------------
# elementwise and scalar ops
# ---------------------------------------------------------------------------


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ShapeError(msg)


def add(a: Tensor, b: Tensor) -> Tensor:
    _require(a.shape == b.shape, f"add: {a.shape} vs {b.shape}")
    return _node(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require(a.shape == b.shape, f"sub: {a.shape} vs {b.shape}")
    return _node(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _require(a.shape == b.shape, f"mul: {a.shape} vs {b.shape}")
    return _node(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def smul(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return _node(a.data * s, (a,), lambda g: (g * s,))


def affine(a: Tensor, scale: float, shift: float) -> Tensor:
    """scale * a + shift with scalar constants."""
    scale, shift = float(scale), float(shift)
    return _node(a.data * scale + shift, (a,), lambda g: (g * scale,))


def square(a: Tensor) -> Tensor:
    return _node(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,))


def log_clamped(a: Tensor) -> Tensor:
    """log after clamping the argument into [1e-12, 1-1e-12].

    Intended for probabilities; the gradient is masked to zero where the
    clamp is active so backward matches the implemented forward exactly.
    """
    clipped = np.clip(a.data, LOG_CLAMP_LO, LOG_CLAMP_HI)
    inside = (a.data >= LOG_CLAMP_LO) & (a.data <= LOG_CLAMP_HI)
    return _node(np.log(clipped), (a,), lambda g: (g * inside / clipped,))


_RELU_GAPS: list[float] | None = None


class relu_gap_probe:
    """Context manager recording the smallest |pre-activation| seen by relu.

    Central differences are only valid where the objective is differentiable;
    the probe lets a caller confirm an evaluation point is clear of kinks.
    """

    def __enter__(self):
        global _RELU_GAPS
        self._saved = _RELU_GAPS
        _RELU_GAPS = []
        return self

    def __exit__(self, *exc):
        global _RELU_GAPS
        self._gaps = _RELU_GAPS
        _RELU_GAPS = self._saved
        return False

    def min_gap(self) -> float:
        return min(self._gaps) if self._gaps else np.inf


def relu(a: Tensor) -> Tensor:
    if _RELU_GAPS is not None and a.data.size:
        _RELU_GAPS.append(float(np.abs(a.data).min()))
    mask = a.data > 0
    return _node(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ez = np.exp(x[~pos])
    out[~pos] = ez / (1.0 + ez)
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),))


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul_wt(x: Tensor, w: Tensor) -> Tensor:
    """x[B,I] times w[O,I] transposed -> [B,O]."""
    _require(x.data.ndim == 2 and w.data.ndim == 2, "matmul_wt: rank-2 operands required")
    _require(x.shape[1] == w.shape[1], f"matmul_wt: inner dims {x.shape} vs {w.shape}")
    return _node(
        x.data @ w.data.T,
        (x, w),
        lambda g: (g @ w.data, g.T @ x.data),
    )


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Broadcast b over the leading (batch) axis; b.shape == x.shape[1:]."""
    _require(b.shape == x.shape[1:], f"add_bias: {x.shape} vs {b.shape}")
    return _node(x.data + b.data, (x, b), lambda g: (g, g.sum(axis=0)))


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Fully connected layer: x[B,I] @ w[O,I]^T + b[O]."""
    _require(b.data.ndim == 1 and b.shape[0] == w.shape[0], f"linear: bias {b.shape} vs weight {w.shape}")
    return add_bias(matmul_wt(x, w), b)


def batched_linear_in(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Fan one feature vector out to M parallel linear maps.

    x[B,F], w[M,D,F], b[M,D] -> [B,M,D]. Equivalent to M independent
    ``linear`` layers sharing the input; stored stacked so a bank of small
    heads costs one einsum instead of M matmuls.
    """
    _require(x.data.ndim == 2 and w.data.ndim == 3, "batched_linear_in: bad ranks")
    _require(x.shape[1] == w.shape[2], f"batched_linear_in: {x.shape} vs {w.shape}")
    _require(b.shape == w.shape[:2], f"batched_linear_in: bias {b.shape} vs {w.shape}")
    out = np.einsum("bf,mdf->bmd", x.data, w.data, optimize=True) + b.data
    return _node(
        out,
        (x, w, b),
        lambda g: (
            np.einsum("bmd,mdf->bf", g, w.data, optimize=True),
            np.einsum("bmd,bf->mdf", g, x.data, optimize=True),
            g.sum(axis=0),
        ),
    )


def batched_linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """M parallel linear maps over M parallel inputs.

    x[B,M,F], w[M,D,F], b[M,D] -> [B,M,D].
    """
    _require(x.data.ndim == 3 and w.data.ndim == 3, "batched_linear: bad ranks")
    _require(x.shape[1] == w.shape[0] and x.shape[2] == w.shape[2], f"batched_linear: {x.shape} vs {w.shape}")
    _require(b.shape == w.shape[:2], f"batched_linear: bias {b.shape} vs {w.shape}")
    out = np.einsum("bmf,mdf->bmd", x.data, w.data, optimize=True) + b.data
    return _node(
        out,
        (x, w, b),
        lambda g: (
            np.einsum("bmd,mdf->bmf", g, w.data, optimize=True),
            np.einsum("bmd,bmf->mdf", g, x.data, optimize=True),
            g.sum(axis=0),
        ),
    )


def batched_dot(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """M parallel 1-d heads: x[B,M,F], w[M,F], b[M] -> [B,M]."""
    _require(x.data.ndim == 3 and w.data.ndim == 2, "batched_dot: bad ranks")
    _require(x.shape[1:] == w.shape, f"batched_dot: {x.shape} vs {w.shape}")
    _require(b.shape == (w.shape[0],), f"batched_dot: bias {b.shape}")
    out = np.einsum("bmf,mf->bm", x.data, w.data, optimize=True) + b.data
    return _node(
        out,
        (x, w, b),
        lambda g: (
            g[:, :, None] * w.data[None, :, :],
            np.einsum("bm,bmf->mf", g, x.data, optimize=True),
            g.sum(axis=0),
        ),
    )


def scale_lastdim(x: Tensor, s: Tensor) -> Tensor:
    """Multiply x[B,M,F] by per-(batch, head) scalars s[B,M]."""
    _require(x.data.ndim == 3 and s.shape == x.shape[:2], f"scale_lastdim: {x.shape} vs {s.shape}")
    return _node(
        x.data * s.data[:, :, None],
        (x, s),
        lambda g: (g * s.data[:, :, None], (g * x.data).sum(axis=2)),
    )


def mul_colvec(x: Tensor, s: Tensor) -> Tensor:
    """Multiply x[B,N] rows by per-sample scalars s[B]."""
    _require(x.data.ndim == 2 and s.shape == (x.shape[0],), f"mul_colvec: {x.shape} vs {s.shape}")
    return _node(
        x.data * s.data[:, None],
        (x, s),
        lambda g: (g * s.data[:, None], (g * x.data).sum(axis=1)),
    )


def convex_combine(w: Tensor, p: Tensor) -> Tensor:
    """Weighted sum of N stacked rows: w[B,N], p[B,N,C] -> [B,C]."""
    _require(p.data.ndim == 3 and w.shape == p.shape[:2], f"convex_combine: {w.shape} vs {p.shape}")
    return _node(
        np.einsum("bn,bnc->bc", w.data, p.data, optimize=True),
        (w, p),
        lambda g: (
            np.einsum("bc,bnc->bn", g, p.data, optimize=True),
            w.data[:, :, None] * g[:, None, :],
        ),
    )


# ---------------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------------


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    _require(int(np.prod(shape)) == x.data.size, f"reshape: {x.shape} -> {shape}")
    old = x.shape
    return _node(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def concat_cols(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenate rank-2 tensors along axis 1."""
    _require(all(t.data.ndim == 2 for t in tensors), "concat_cols: rank-2 inputs required")
    rows = tensors[0].shape[0]
    _require(all(t.shape[0] == rows for t in tensors), "concat_cols: row mismatch")
    widths = [t.shape[1] for t in tensors]
    edges = np.cumsum([0] + widths)

    def vjp(g):
        return tuple(g[:, edges[i]:edges[i + 1]] for i in range(len(widths)))

    return _node(np.concatenate([t.data for t in tensors], axis=1), tuple(tensors), vjp)


def stack_axis1(tensors: Sequence[Tensor]) -> Tensor:
    """Stack N tensors of shape [B,C] into [B,N,C]."""
    shape = tensors[0].shape
    _require(all(t.shape == shape for t in tensors), "stack_axis1: shape mismatch")

    def vjp(g):
        return tuple(g[:, i, :] for i in range(len(tensors)))

    return _node(np.stack([t.data for t in tensors], axis=1), tuple(tensors), vjp)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    _require(0 <= start < stop <= x.shape[0], f"slice_rows: [{start}:{stop}] of {x.shape}")

    def vjp(g):
        full = np.zeros_like(x.data)
        full[start:stop] = g
        return (full,)

    return _node(x.data[start:stop].copy(), (x,), vjp)


def gather_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    """out[i] = x[i, idx[i]] for x[B,C] and integer idx[B]."""
    _require(x.data.ndim == 2 and idx.shape == (x.shape[0],), f"gather_rows: {x.shape} vs {idx.shape}")
    rows = np.arange(x.shape[0])

    def vjp(g):
        full = np.zeros_like(x.data)
        np.add.at(full, (rows, idx), g)
        return (full,)

    return _node(x.data[rows, idx], (x,), vjp)


def sum_all(x: Tensor) -> Tensor:
    return _node(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size
    return _node(np.asarray(x.data.mean()), (x,), lambda g: (np.broadcast_to(g / n, x.shape).copy(),))


def sum_lastdim(x: Tensor) -> Tensor:
    return _node(x.data.sum(axis=-1), (x,), lambda g: (np.repeat(g[..., None], x.shape[-1], axis=-1),))


def mean_lastdim(x: Tensor) -> Tensor:
    n = x.shape[-1]
    return _node(x.data.mean(axis=-1), (x,), lambda g: (np.repeat(g[..., None] / n, n, axis=-1),))


# ---------------------------------------------------------------------------
# spatial ops
# ---------------------------------------------------------------------------

CORNERS = ("UL", "UR", "LL", "LR")


def conv2d_3x3(x: Tensor, k: Tensor, b: Tensor) -> Tensor:
    """3x3 cross-correlation, stride 1, zero padding 1 (spatial shape kept).

    x[B,Cin,H,W], k[Cout,Cin,3,3], b[Cout] -> [B,Cout,H,W].
    """
    _require(x.data.ndim == 4 and k.data.ndim == 4, "conv2d_3x3: bad ranks")
    _require(k.shape[2:] == (3, 3), f"conv2d_3x3: kernel {k.shape}")
    _require(x.shape[1] == k.shape[1], f"conv2d_3x3: channels {x.shape} vs {k.shape}")
    _require(b.shape == (k.shape[0],), f"conv2d_3x3: bias {b.shape}")
    bsz, cin, h, w = x.shape
    cout = k.shape[0]

    # patch tensor filled by plain slice copies; for multi-channel inputs a
    # channel-major layout turns the convolution into one large GEMM,
    # k[cout, cin*9] @ cols[cin*9, b*h*w]. Single-channel maps keep the
    # batch-major layout (the transposes would dominate the tiny GEMM).
    kmat = k.data.reshape(cout, cin * 9)
    if cin == 1:
        xp = np.pad(x.data, ((0, 0), (0, 0), (1, 1), (1, 1)))
        cols = np.empty((bsz, cin, 9, h, w))
        for u in range(3):
            for v in range(3):
                cols[:, :, u * 3 + v] = xp[:, :, u:u + h, v:v + w]
        cols2 = cols.reshape(bsz, cin * 9, h * w)
        out = np.matmul(kmat, cols2).reshape(bsz, cout, h, w) + b.data[None, :, None, None]

        def vjp(g):
            g2 = g.reshape(bsz, cout, h * w)
            dk = np.einsum("bop,bkp->ok", g2, cols2, optimize=True).reshape(cout, cin, 3, 3)
            db = g.sum(axis=(0, 2, 3))
            dcols = np.matmul(kmat.T, g2).reshape(bsz, cin, 9, h, w)
            dxp = np.zeros_like(xp)
            for u in range(3):
                for v in range(3):
                    dxp[:, :, u:u + h, v:v + w] += dcols[:, :, u * 3 + v]
            return dxp[:, :, 1:-1, 1:-1], dk, db

        return _node(out, (x, k, b), vjp)

    xp = np.pad(x.data.transpose(1, 0, 2, 3), ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = np.empty((cin, 9, bsz, h, w))
    for u in range(3):
        for v in range(3):
            cols[:, u * 3 + v] = xp[:, :, u:u + h, v:v + w]
    cols2 = cols.reshape(cin * 9, bsz * h * w)
    out = (kmat @ cols2).reshape(cout, bsz, h * w)
    out = np.ascontiguousarray(out.transpose(1, 0, 2)).reshape(bsz, cout, h, w)
    out += b.data[None, :, None, None]

    def vjp(g):
        gt = np.ascontiguousarray(g.reshape(bsz, cout, h * w).transpose(1, 0, 2)).reshape(cout, -1)
        dk = (gt @ cols2.T).reshape(cout, cin, 3, 3)
        db = g.sum(axis=(0, 2, 3))
        dcols = (kmat.T @ gt).reshape(cin, 9, bsz, h, w)
        dxp = np.zeros_like(xp)
        for u in range(3):
            for v in range(3):
                dxp[:, :, u:u + h, v:v + w] += dcols[:, u * 3 + v]
        return dxp[:, :, 1:-1, 1:-1].transpose(1, 0, 2, 3), dk, db

    return _node(out, (x, k, b), vjp)


def avg_pool2x2(x: Tensor) -> Tensor:
    """2x2 mean pooling, stride 2; spatial dims must be even."""
    _require(x.data.ndim == 4, "avg_pool2x2: rank-4 input required")
    bsz, c, h, w = x.shape
    _require(h % 2 == 0 and w % 2 == 0, f"avg_pool2x2: odd spatial dims {x.shape}")
    out = x.data.reshape(bsz, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def vjp(g):
        return (np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * 0.25,)

    return _node(out, (x,), vjp)


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over spatial positions: [B,C,H,W] -> [B,C]."""
    _require(x.data.ndim == 4, "global_avg_pool: rank-4 input required")
    bsz, c, h, w = x.shape
    n = h * w

    def vjp(g):
        return (np.broadcast_to(g[:, :, None, None] / n, x.shape).copy(),)

    return _node(x.data.mean(axis=(2, 3)), (x,), vjp)


def crop2d(x: Tensor, corner: str, size: int) -> Tensor:
    """Copy one size x size corner window of x[B,C,H,W].

    Gradient scatters back into the window and is zero elsewhere.
    """
    _require(x.data.ndim == 4, "crop2d: rank-4 input required")
    h, w = x.shape[2], x.shape[3]
    if corner not in CORNERS:
        raise ValueError(f"crop2d: corner must be one of {CORNERS}, got {corner!r}")
    _require(0 < size <= min(h, w), f"crop2d: window {size} exceeds map {h}x{w}")
    r0 = 0 if corner in ("UL", "UR") else h - size
    c0 = 0 if corner in ("UL", "LL") else w - size

    def vjp(g):
        full = np.zeros_like(x.data)
        full[:, :, r0:r0 + size, c0:c0 + size] = g
        return (full,)

    return _node(x.data[:, :, r0:r0 + size, c0:c0 + size].copy(), (x,), vjp)


def hflip2d(x: Tensor) -> Tensor:
    """Reverse the last (width) axis; an involution."""
    return _node(x.data[..., ::-1].copy(), (x,), lambda g: (g[..., ::-1].copy(),))


def softmax_rows(x: Tensor, temperature: float = 1.0) -> Tensor:
    """Row softmax of logits[B,C] divided by a positive temperature.

    Max-subtraction keeps the exponentials bounded; rows sum to 1.
    """
    if temperature <= 0:
        raise ValueError(f"softmax temperature must be positive, got {temperature}")
    _require(x.data.ndim == 2, "softmax_rows: rank-2 logits required")
    t = float(temperature)
    z = (x.data - x.data.max(axis=1, keepdims=True)) / t
    e = np.exp(z)
    out = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        inner = (g * out).sum(axis=1, keepdims=True)
        return ((g - inner) * out / t,)

    return _node(out, (x,), vjp)


# ---------------------------------------------------------------------------
# optimization and verification
# ---------------------------------------------------------------------------


def sgd_momentum_step(
    params: Sequence[Tensor],
    velocities: Sequence[np.ndarray],
    lr: float,
    momentum: float,
    weight_decay: float,
) -> None:
    """In-place SGD update: v <- momentum*v + grad + wd*theta; theta <- theta - lr*v."""
    _require(len(params) == len(velocities), "sgd: params/velocities length mismatch")
    for p, v in zip(params, velocities):
        _require(v.shape == p.data.shape, f"sgd: velocity {v.shape} vs param {p.shape}")
        if p.grad is None:
            raise ValueError("sgd: parameter has no gradient buffer")
        v *= momentum
        v += p.grad
        if weight_decay:
            v += weight_decay * p.data
        p.data -= lr * v


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-5) -> float:
    """Max relative error between analytic gradients of f() and central differences.

    f rebuilds its graph on every call; params are perturbed coordinate by
    coordinate. Relative error per coordinate is |a-n| / max(1, |a|, |n|).
    """
    zero_grads(params)
    out = f()
    if not np.isfinite(out.data):
        raise FloatingPointError("grad_check: objective is not finite")
    backward(out)
    analytic = [np.array([] if p.grad is None else p.grad, dtype=DTYPE).reshape(-1).copy() for p in params]

    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = float(f().data)
            flat[i] = orig - h
            lo = float(f().data)
            flat[i] = orig
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise FloatingPointError("grad_check: objective is not finite near base point")
            numeric = (hi - lo) / (2.0 * h)
            err = abs(a[i] - numeric) / max(1.0, abs(a[i]), abs(numeric))
            if err > worst:
                worst = err
    return worst


def glorot_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(DTYPE)
