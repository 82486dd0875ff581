"""Finite-difference verification of backward gradients.

`grad_check` compares a graph-built scalar function's backward gradient to
central differences, elementwise, in float64. The relative error uses
max(|analytic|, |numeric|, 1e-8) as the denominator. Builder functions must
be pure: every invocation constructs a fresh graph from the same inputs
(fixed RngState → identical dropout masks).
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .autodiff import Graph, Node
from .errors import NumericError

REL_DENOM_FLOOR = 1e-8


def _rel_err(a: np.ndarray, b: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), REL_DENOM_FLOOR)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def grad_check_params(
    build: Callable[[Graph, dict[str, Node]], Node],
    params: dict[str, np.ndarray],
    epsilon: float = 1e-5,
) -> float:
    """Max relative error between backward and central-difference gradients.

    `build(graph, param_nodes)` returns the scalar loss node. Every parameter
    coordinate is perturbed by ±epsilon.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    base = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}

    def forward(values: dict[str, np.ndarray]):
        g = Graph(dtype=np.float64)
        nodes = {k: g.param(k, v) for k, v in values.items()}
        loss = build(g, nodes)
        if loss.value.size != 1 or not np.isfinite(loss.value).all():
            raise NumericError("grad_check function must return a finite scalar")
        return loss, g

    loss0, g0 = forward(base)
    analytic = g0.backward(loss0)
    worst = 0.0
    for name, arr in base.items():
        numeric = np.zeros_like(arr)
        flat = arr.reshape(-1)
        num_flat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            up = forward(base)[0].value.item()
            flat[i] = orig - epsilon
            down = forward(base)[0].value.item()
            flat[i] = orig
            num_flat[i] = (up - down) / (2.0 * epsilon)
        if not np.isfinite(numeric).all() or not np.isfinite(analytic[name]).all():
            raise NumericError(f"non-finite gradient while checking {name!r}")
        worst = max(worst, _rel_err(analytic[name], numeric))
    return worst


def grad_check(
    build: Callable[[Graph, Node], Node],
    point: np.ndarray,
    epsilon: float = 1e-5,
) -> float:
    """Single-input form: `build(graph, x_node)` returns the scalar loss."""
    return grad_check_params(
        lambda g, nodes: build(g, nodes["x"]), {"x": np.asarray(point)}, epsilon
    )
