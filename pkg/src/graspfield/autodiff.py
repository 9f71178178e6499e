"""Minimal reverse-mode automatic differentiation over numpy arrays.

Each op records its parents and a backward closure on a tape; `backward`
topologically sorts the graph and accumulates gradients into leaf tensors.
Everything runs in float64 so gradients can be validated against central
finite differences at tight tolerances.
"""

from __future__ import annotations

import numpy as np

from .errors import require

BCE_EPS = 1e-7


class Tensor:
    """Array node in the autodiff graph."""

    __slots__ = ("values", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, values, requires_grad: bool = False, parents=(), backward=None):
        self.values = np.asarray(values, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = tuple(parents)
        self._backward = backward

    @property
    def shape(self):
        return self.values.shape

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        self.grad += g


def constant(values) -> Tensor:
    """Data node: participates in forward math, receives no gradient."""
    return Tensor(values, requires_grad=False)


def parameter(values) -> Tensor:
    """Trainable leaf."""
    return Tensor(values, requires_grad=True)


def _node(values, parents, backward) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    return Tensor(values, requires_grad=needs, parents=parents,
                  backward=backward if needs else None)


def backward(loss: Tensor) -> None:
    """Propagate d(loss)/d(node) through the graph; loss must be scalar."""
    require(loss.values.size == 1, "backward expects a scalar loss")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    loss._accumulate(np.ones_like(loss.values))
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# ----------------------------------------------------------------- primitives

def add(a: Tensor, b: Tensor) -> Tensor:
    require(a.shape == b.shape, f"add shape mismatch {a.shape} vs {b.shape}")

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(g)

    return _node(a.values + b.values, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    require(a.shape == b.shape, f"mul shape mismatch {a.shape} vs {b.shape}")

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * b.values)
        if b.requires_grad:
            b._accumulate(g * a.values)

    return _node(a.values * b.values, (a, b), bwd)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * s)

    return _node(a.values * s, (a,), bwd)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x (n, i) @ w (i, o) + b (o,)."""
    require(x.values.ndim == 2 and w.values.ndim == 2, "linear expects 2d x and w")
    require(x.shape[1] == w.shape[0], f"linear inner dims {x.shape} vs {w.shape}")
    require(b.shape == (w.shape[1],), f"bias shape {b.shape} vs {(w.shape[1],)}")

    def bwd(g):
        if x.requires_grad:
            x._accumulate(g @ w.values.T)
        if w.requires_grad:
            w._accumulate(x.values.T @ g)
        if b.requires_grad:
            b._accumulate(g.sum(axis=0))

    return _node(x.values @ w.values + b.values, (x, w, b), bwd)


def relu(x: Tensor) -> Tensor:
    mask = x.values > 0.0

    def bwd(g):
        if x.requires_grad:
            x._accumulate(g * mask)

    return _node(np.where(mask, x.values, 0.0), (x,), bwd)


def sigmoid(x: Tensor) -> Tensor:
    v = x.values
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)

    def bwd(g):
        if x.requires_grad:
            x._accumulate(g * out * (1.0 - out))

    return _node(out, (x,), bwd)


def concat(parts: list[Tensor], axis: int = 1) -> Tensor:
    require(axis in (0, 1), "concat supports axis 0 or 1")
    require(len(parts) >= 1, "concat needs at least one part")
    sizes = [p.shape[axis] for p in parts]
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    def bwd(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                p._accumulate(g[lo:hi] if axis == 0 else g[:, lo:hi])

    return _node(np.concatenate([p.values for p in parts], axis=axis), tuple(parts), bwd)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = x.values.shape

    def bwd(g):
        if x.requires_grad:
            x._accumulate(g.reshape(old))

    return _node(x.values.reshape(shape), (x,), bwd)


def gather_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)

    def bwd(g):
        if x.requires_grad:
            dx = np.zeros_like(x.values)
            np.add.at(dx, idx, g)
            x._accumulate(dx)

    return _node(x.values[idx], (x,), bwd)


def max_pool_over_points(x: Tensor) -> Tensor:
    """Column-wise max over the point axis: (n, d) -> (1, d).

    The gradient flows to the first maximizing row per column.
    """
    require(x.values.ndim == 2 and x.shape[0] >= 1, "max pool expects nonempty (n, d)")
    arg = np.argmax(x.values, axis=0)  # first max on ties
    cols = np.arange(x.shape[1])

    def bwd(g):
        if x.requires_grad:
            dx = np.zeros_like(x.values)
            dx[arg, cols] = g[0]
            x._accumulate(dx)

    return _node(x.values[arg, cols][None, :], (x,), bwd)


def bilinear_interp(plane: Tensor, uv: np.ndarray) -> Tensor:
    """Sample a (r, r, c) feature plane at (n, 2) normalized coords in [0, 1].

    Cell centers sit at (i + 0.5) / r; queries outside the plane clamp to the
    boundary. Coordinates are data (no gradient), the plane receives one.
    """
    r = plane.shape[0]
    require(plane.values.ndim == 3 and plane.shape[1] == r, "plane must be (r, r, c)")
    uv = np.asarray(uv, dtype=np.float64)
    require(uv.ndim == 2 and uv.shape[1] == 2, "uv must be (n, 2)")
    g = np.clip(uv * r - 0.5, 0.0, r - 1.0)
    i0 = np.minimum(g.astype(np.int64), r - 2)
    f = g - i0
    (x0, y0), (fx, fy) = i0.T, f.T
    w00 = (1 - fx) * (1 - fy)
    w01 = (1 - fx) * fy
    w10 = fx * (1 - fy)
    w11 = fx * fy
    v = plane.values
    out = (w00[:, None] * v[x0, y0] + w01[:, None] * v[x0, y0 + 1]
           + w10[:, None] * v[x0 + 1, y0] + w11[:, None] * v[x0 + 1, y0 + 1])

    def bwd(gout):
        if plane.requires_grad:
            dp = np.zeros_like(v).reshape(r * r, -1)
            flat = x0 * r + y0
            np.add.at(dp, flat, w00[:, None] * gout)
            np.add.at(dp, flat + 1, w01[:, None] * gout)
            np.add.at(dp, flat + r, w10[:, None] * gout)
            np.add.at(dp, flat + r + 1, w11[:, None] * gout)
            plane._accumulate(dp.reshape(v.shape))

    return _node(out, (plane,), bwd)


def conv3x3(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """3x3 same-padding convolution on one (r, r, c_in) plane -> (r, r, c_out)."""
    require(x.values.ndim == 3, "conv input must be (r, r, c)")
    require(w.values.ndim == 4 and w.shape[0] == 3 and w.shape[1] == 3,
            "weights must be (3, 3, c_in, c_out)")
    require(w.shape[2] == x.shape[2], f"channel mismatch {x.shape} vs {w.shape}")
    r0, r1, cin = x.shape
    cout = w.shape[3]
    require(b.shape == (cout,), "bias shape mismatch")
    pad = np.zeros((r0 + 2, r1 + 2, cin))
    pad[1:-1, 1:-1] = x.values
    cols = np.empty((r0 * r1, 9 * cin))
    for di in range(3):
        for dj in range(3):
            patch = pad[di:di + r0, dj:dj + r1]
            cols[:, (di * 3 + dj) * cin:(di * 3 + dj + 1) * cin] = patch.reshape(r0 * r1, cin)
    w2 = w.values.reshape(9 * cin, cout)
    out = (cols @ w2 + b.values).reshape(r0, r1, cout)

    def bwd(g):
        g2 = g.reshape(r0 * r1, cout)
        if w.requires_grad:
            w._accumulate((cols.T @ g2).reshape(3, 3, cin, cout))
        if b.requires_grad:
            b._accumulate(g2.sum(axis=0))
        if x.requires_grad:
            dcols = g2 @ w2.T
            dpad = np.zeros_like(pad)
            for di in range(3):
                for dj in range(3):
                    sl = dcols[:, (di * 3 + dj) * cin:(di * 3 + dj + 1) * cin]
                    dpad[di:di + r0, dj:dj + r1] += sl.reshape(r0, r1, cin)
            x._accumulate(dpad[1:-1, 1:-1])

    return _node(out, (x, w, b), bwd)


def scatter_mean(feats: Tensor, cells: np.ndarray, n_cells: int) -> Tensor:
    """Mean of rows sharing a cell id: (n, c) -> (n_cells, c); empty cells 0."""
    cells = np.asarray(cells, dtype=np.int64)
    require(cells.ndim == 1 and len(cells) == feats.shape[0], "cells must be (n,)")
    require(cells.min(initial=0) >= 0 and cells.max(initial=-1) < n_cells,
            "cell ids out of range")
    counts = np.bincount(cells, minlength=n_cells).astype(np.float64)
    out = np.zeros((n_cells, feats.shape[1]))
    np.add.at(out, cells, feats.values)
    safe = np.maximum(counts, 1.0)
    out /= safe[:, None]

    def bwd(g):
        if feats.requires_grad:
            feats._accumulate(g[cells] / safe[cells, None])

    return _node(out, (feats,), bwd)


def mean_all(x: Tensor) -> Tensor:
    n = x.values.size
    require(n > 0, "mean of empty tensor")

    def bwd(g):
        if x.requires_grad:
            x._accumulate(np.full_like(x.values, float(g) / n))

    return _node(np.array(x.values.mean()), (x,), bwd)


def bce(pred: Tensor, target: np.ndarray) -> Tensor:
    """Elementwise binary cross-entropy with predictions clamped away from
    {0, 1} by BCE_EPS. Targets are data."""
    y = np.asarray(target, dtype=np.float64)
    require(y.shape == pred.shape, f"target shape {y.shape} vs pred {pred.shape}")
    p = np.clip(pred.values, BCE_EPS, 1.0 - BCE_EPS)
    out = -(y * np.log(p) + (1.0 - y) * np.log1p(-p))
    inside = (pred.values > BCE_EPS) & (pred.values < 1.0 - BCE_EPS)

    def bwd(g):
        if pred.requires_grad:
            pred._accumulate(g * inside * (p - y) / (p * (1.0 - p)))

    return _node(out, (pred,), bwd)


class Adam:
    """Adaptive-moment optimizer over a list of parameter tensors."""

    def __init__(self, params: list[Tensor], lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        require(all(p.requires_grad for p in params), "Adam needs trainable tensors")
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.values) for p in params]
        self.v = [np.zeros_like(p.values) for p in params]
        self.t = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad if p.grad is not None else np.zeros_like(p.values)
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.values -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)
