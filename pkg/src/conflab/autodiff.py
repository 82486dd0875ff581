"""Reverse-mode automatic differentiation over an explicit graph.

A ``Graph`` owns a list of nodes; ops are invoked through graph methods
rather than operator overloading, so each forward pass is an explicit,
replayable sequence. ``backward`` walks nodes in reverse creation order
(which is a topological order by construction) and visits each node once.

float32 is the training dtype; construct ``Graph(dtype=np.float64)`` for
gradient checking. Every ``log`` clamps its argument at ``LOG_FLOOR``, and
attention masks use the finite ``MASK_FILL`` so backward stays NaN-free.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, NumericError, StateError
from .rng import as_generator

LOG_FLOOR = 1e-12
MASK_FILL = -1e9


# ---------------------------------------------------------------------------
# Array-level helpers (shared by graph ops, metrics, and tests)
# ---------------------------------------------------------------------------


def softmax_values(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax via max subtraction."""
    x = np.asarray(x)
    if not np.all(np.isfinite(x)):
        raise NumericError("softmax input must be finite")
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def sigmoid_values(x: np.ndarray) -> np.ndarray:
    """Numerically stable sigmoid."""
    x = np.asarray(x)
    if not np.all(np.isfinite(x)):
        raise NumericError("sigmoid input must be finite")
    out = np.empty_like(x, dtype=x.dtype if x.dtype.kind == "f" else np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def log_floored(x: np.ndarray) -> np.ndarray:
    """log with the argument clamped at LOG_FLOOR."""
    return np.log(np.maximum(x, LOG_FLOOR))


def cross_entropy(probs: np.ndarray, target_id: int) -> float:
    """-log p[target] for a single probability vector, log-floored."""
    probs = np.asarray(probs)
    if not (0 <= target_id < probs.shape[-1]):
        raise IndexError(f"target id {target_id} out of range for V={probs.shape[-1]}")
    return float(-log_floored(probs[..., target_id]))


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to `shape` by summing expanded axes."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# Graph
# ---------------------------------------------------------------------------


class Node:
    """One graph node: the op output plus what backward needs."""

    __slots__ = ("uid", "value", "parents", "vjp", "requires_grad", "name")

    def __init__(self, uid, value, parents=(), vjp=None, requires_grad=False, name=None):
        self.uid = uid
        self.value = value
        self.parents = parents
        self.vjp = vjp
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def __repr__(self):
        tag = self.name or "node"
        return f"<{tag}#{self.uid} {self.value.shape}>"


class Graph:
    """Explicit computation graph for one forward pass."""

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.nodes: list[Node] = []
        self.params: dict[str, Node] = {}
        self.relu_margin = np.inf  # min |pre-activation| seen; kink diagnostics

    # -- node construction ---------------------------------------------

    def _emit(self, value, parents=(), vjp=None, requires_grad=None, name=None) -> Node:
        if not isinstance(value, np.ndarray):
            value = np.asarray(value)
        if requires_grad is None:
            requires_grad = False
            for p in parents:
                if p.requires_grad:
                    requires_grad = True
                    break
        node = Node(len(self.nodes), value, parents, vjp, requires_grad, name)
        self.nodes.append(node)
        return node

    def param(self, name: str, value: np.ndarray) -> Node:
        """Register a trainable leaf. Values are viewed, not copied, when the
        dtype already matches, so training updates arrays in place between
        graphs."""
        if name in self.params:
            raise StateError(f"duplicate parameter name {name!r}")
        arr = np.asarray(value)
        if arr.dtype != self.dtype:
            arr = arr.astype(self.dtype)
        node = self._emit(arr, requires_grad=True, name=name)
        self.params[name] = node
        return node

    def const(self, value) -> Node:
        arr = np.asarray(value)
        if arr.dtype.kind == "f" and arr.dtype != self.dtype:
            arr = arr.astype(self.dtype)
        return self._emit(arr, requires_grad=False)

    # -- elementwise ------------------------------------------------------

    def add(self, a: Node, b: Node) -> Node:
        val = a.value + b.value

        def vjp(g):
            return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

        return self._emit(val, (a, b), vjp)

    def sub(self, a: Node, b: Node) -> Node:
        val = a.value - b.value

        def vjp(g):
            return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

        return self._emit(val, (a, b), vjp)

    def mul(self, a: Node, b: Node) -> Node:
        val = a.value * b.value

        def vjp(g):
            return _unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)

        return self._emit(val, (a, b), vjp)

    def scale(self, x: Node, k: float) -> Node:
        k = float(k)
        return self._emit(x.value * k, (x,), lambda g: (g * k,))

    def neg(self, x: Node) -> Node:
        return self._emit(-x.value, (x,), lambda g: (-g,))

    def relu(self, x: Node) -> Node:
        mask = x.value > 0
        margin = float(np.abs(x.value).min()) if x.value.size else np.inf
        if margin < self.relu_margin:
            self.relu_margin = margin
        return self._emit(x.value * mask, (x,), lambda g: (g * mask,))

    def sigmoid(self, x: Node) -> Node:
        s = sigmoid_values(x.value)
        return self._emit(s, (x,), lambda g: (g * s * (1.0 - s),))

    def log(self, x: Node) -> Node:
        """log with argument floored at LOG_FLOOR; zero gradient below floor."""
        val = log_floored(x.value)
        inside = x.value > LOG_FLOOR

        def vjp(g):
            return (np.where(inside, g / np.maximum(x.value, LOG_FLOOR), 0.0),)

        return self._emit(val, (x,), vjp)

    def clip(self, x: Node, lo: float, hi: float) -> Node:
        val = np.clip(x.value, lo, hi)
        inside = (x.value > lo) & (x.value < hi)
        return self._emit(val, (x,), lambda g: (g * inside,))

    def softmax(self, x: Node, axis: int = -1) -> Node:
        p = softmax_values(x.value, axis=axis)

        def vjp(g):
            dot = (g * p).sum(axis=axis, keepdims=True)
            return (p * (g - dot),)

        return self._emit(p, (x,), vjp)

    def dropout(self, x: Node, rate: float, rng, enabled: bool = True) -> Node:
        """Inverted dropout: zero with probability `rate`, scale by 1/(1-rate)."""
        if not (0.0 <= rate < 1.0):
            raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
        if not enabled or rate == 0.0:
            return self._emit(x.value, (x,), lambda g: (g,))
        gen = as_generator(rng)
        draw_dtype = np.float32 if self.dtype == np.float32 else np.float64
        keep = (gen.random(x.shape, dtype=draw_dtype) >= rate).astype(x.value.dtype)
        keep /= 1.0 - rate
        return self._emit(x.value * keep, (x,), lambda g: (g * keep,))

    # -- shape ------------------------------------------------------------

    def reshape(self, x: Node, shape: Sequence[int]) -> Node:
        shape = tuple(shape)
        orig = x.shape
        return self._emit(x.value.reshape(shape), (x,), lambda g: (g.reshape(orig),))

    def transpose(self, x: Node, axes: Sequence[int]) -> Node:
        axes = tuple(axes)
        inverse = tuple(np.argsort(axes))
        return self._emit(
            np.transpose(x.value, axes), (x,), lambda g: (np.transpose(g, inverse),)
        )

    # -- contraction -------------------------------------------------------

    def matmul(self, a: Node, b: Node) -> Node:
        """np.matmul semantics for operands with ndim >= 2."""
        if a.value.ndim < 2 or b.value.ndim < 2:
            raise ConfigError("matmul operands must have ndim >= 2")
        if b.value.ndim == 2 and a.value.ndim > 2:
            # one flat GEMM instead of a stack of small ones
            lead = a.value.shape[:-1]
            a2 = a.value.reshape(-1, a.value.shape[-1])
            val = (a2 @ b.value).reshape(lead + (b.value.shape[-1],))

            def vjp(g):
                g2 = g.reshape(-1, g.shape[-1])
                return (g2 @ b.value.T).reshape(a.shape), a2.T @ g2

            return self._emit(val, (a, b), vjp)
        val = np.matmul(a.value, b.value)

        def vjp(g):
            if b.value.ndim == 2:
                ga = np.matmul(g, b.value.T)
                a2 = a.value.reshape(-1, a.value.shape[-1])
                g2 = g.reshape(-1, g.shape[-1])
                gb = a2.T @ g2
            else:
                ga = np.matmul(g, np.swapaxes(b.value, -1, -2))
                gb = _unbroadcast(np.matmul(np.swapaxes(a.value, -1, -2), g), b.shape)
            return _unbroadcast(ga, a.shape), gb

        return self._emit(val, (a, b), vjp)

    def sum(self, x: Node, axis=None, keepdims: bool = False) -> Node:
        val = x.value.sum(axis=axis, keepdims=keepdims)
        shape = x.shape

        def vjp(g):
            g = np.asarray(g)
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return self._emit(val, (x,), vjp)

    def mean(self, x: Node, axis=None, keepdims: bool = False) -> Node:
        count = x.value.size if axis is None else x.value.shape[axis]
        return self.scale(self.sum(x, axis=axis, keepdims=keepdims), 1.0 / count)

    def mean_stack(self, xs: Sequence[Node]) -> Node:
        """Elementwise mean over a set of same-shaped tensors."""
        if not xs:
            raise ConfigError("mean_stack needs at least one tensor")
        shape = xs[0].shape
        if any(x.shape != shape for x in xs):
            raise ConfigError("mean_stack tensors must share a shape")
        n = len(xs)
        val = xs[0].value.copy()
        for x in xs[1:]:
            val += x.value
        val /= n
        return self._emit(val, tuple(xs), lambda g: tuple(g / n for _ in xs))

    # -- normalization ------------------------------------------------------

    def layer_norm(self, x: Node, gain: Node, bias: Node, eps: float = 1e-5) -> Node:
        """Layer normalization over the last axis."""
        mu = x.value.mean(axis=-1, keepdims=True)
        var = x.value.var(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (x.value - mu) * inv
        val = xhat * gain.value + bias.value

        def vjp(g):
            dgain = _unbroadcast(g * xhat, gain.shape)
            dbias = _unbroadcast(g, bias.shape)
            dxhat = g * gain.value
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            dx = inv * (dxhat - m1 - xhat * m2)
            return dx, dgain, dbias

        return self._emit(val, (x, gain, bias), vjp)

    # -- indexing -----------------------------------------------------------

    def embedding(self, table: Node, ids: np.ndarray) -> Node:
        ids = np.asarray(ids)
        if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
            raise IndexError("embedding id out of range")
        val = table.value[ids]
        vocab = table.shape[0]

        def vjp(g):
            # scatter-add via one-hot matmul; much faster than np.add.at
            flat_ids = ids.reshape(-1)
            flat_g = g.reshape(len(flat_ids), -1)
            onehot = np.zeros((len(flat_ids), vocab), dtype=g.dtype)
            onehot[np.arange(len(flat_ids)), flat_ids] = 1.0
            return (onehot.T @ flat_g,)

        return self._emit(val, (table,), vjp)

    def gather_last(self, x: Node, ids: np.ndarray) -> Node:
        """out[..., t] = x[..., t, ids[..., t]] along the last axis."""
        ids = np.asarray(ids)
        if ids.shape != x.shape[:-1]:
            raise ConfigError("gather ids must match the leading shape")
        val = np.take_along_axis(x.value, ids[..., None], axis=-1)[..., 0]

        def vjp(g):
            gx = np.zeros_like(x.value)
            np.put_along_axis(gx, ids[..., None], g[..., None], axis=-1)
            return (gx,)

        return self._emit(val, (x,), vjp)

    # -- composite ops --------------------------------------------------------

    def attention(
        self,
        q: Node,
        k: Node,
        v: Node,
        heads: int,
        mask: np.ndarray | None = None,
    ) -> Node:
        """Scaled dot-product attention with additive masking, one fused node.

        q/k/v: (B, T, d). `mask` broadcasts to (B, heads, Tq, Tk); masked-out
        positions carry MASK_FILL so their post-softmax weight underflows to 0.
        """
        B, Tq, d = q.shape
        Tk = k.shape[1]
        if d % heads:
            raise ConfigError("width must divide evenly into heads")
        dh = d // heads
        scale = 1.0 / np.sqrt(dh)

        def split(arr, t):
            return arr.reshape(B, t, heads, dh).transpose(0, 2, 1, 3)

        def merge(arr, t):
            return arr.transpose(0, 2, 1, 3).reshape(B, t, d)

        qh = split(q.value, Tq)
        kh = split(k.value, Tk)
        vh = split(v.value, Tk)
        scores = np.matmul(qh, kh.swapaxes(-1, -2)) * scale
        if mask is not None:
            scores = scores + mask
        scores -= scores.max(axis=-1, keepdims=True)
        w = np.exp(scores)
        w /= w.sum(axis=-1, keepdims=True)
        out = merge(np.matmul(w, vh), Tq)

        def vjp(g):
            gh = split(g, Tq)
            g_w = np.matmul(gh, vh.swapaxes(-1, -2))
            g_v = np.matmul(w.swapaxes(-1, -2), gh)
            g_s = w * (g_w - (g_w * w).sum(axis=-1, keepdims=True))
            g_q = np.matmul(g_s, kh) * scale
            g_k = np.matmul(g_s.swapaxes(-1, -2), qh) * scale
            return merge(g_q, Tq), merge(g_k, Tk), merge(g_v, Tk)

        return self._emit(out, (q, k, v), vjp)

    # -- backward ---------------------------------------------------------------

    def backward(self, loss: Node) -> dict[str, np.ndarray]:
        """Gradients of a scalar loss for every registered parameter.

        Parameters the loss does not depend on get explicit zeros.
        """
        if not self.nodes:
            raise StateError("backward called before any forward computation")
        if loss.uid >= len(self.nodes) or self.nodes[loss.uid] is not loss:
            raise StateError("loss node does not belong to this graph")
        if loss.value.size != 1:
            raise StateError("loss must be scalar")

        grads: dict[int, np.ndarray] = {loss.uid: np.ones_like(loss.value)}
        for node in reversed(self.nodes[: loss.uid + 1]):
            if node.vjp is None or not node.requires_grad:
                continue  # leaves keep their accumulated entry
            g = grads.pop(node.uid, None)
            if g is None:
                continue
            parent_grads = node.vjp(g)
            for parent, pg in zip(node.parents, parent_grads):
                if not parent.requires_grad:
                    continue
                if parent.uid in grads:
                    grads[parent.uid] = grads[parent.uid] + pg
                else:
                    grads[parent.uid] = pg

        out = {}
        for name, node in self.params.items():
            out[name] = grads.get(node.uid, np.zeros_like(node.value))
        return out
