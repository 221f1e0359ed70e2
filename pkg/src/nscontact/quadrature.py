"""Tensor-product Gauss-Legendre quadrature on the biunit square."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray   # (nq, 2)
    weights: np.ndarray  # (nq,)
    orders: tuple[int, int]

    def __len__(self):
        return len(self.weights)


@lru_cache(maxsize=None)
def gauss_1d(n):
    """n-point Gauss-Legendre rule on [-1, 1]; exact for degree 2n-1."""
    x, w = np.polynomial.legendre.leggauss(n)
    return x, w


@lru_cache(maxsize=None)
def gauss_rule(orders):
    """Product Gauss rule with per-axis point counts ``orders = (n1, n2)``."""
    n1, n2 = orders
    if not (1 <= n1 <= 5 and 1 <= n2 <= 5):
        raise ValueError(f"per-axis orders must lie in 1..5, got {orders}")
    x1, w1 = gauss_1d(n1)
    x2, w2 = gauss_1d(n2)
    P1, P2 = np.meshgrid(x1, x2, indexing="ij")
    W1, W2 = np.meshgrid(w1, w2, indexing="ij")
    pts = np.column_stack([P1.ravel(), P2.ravel()])
    wts = (W1 * W2).ravel()
    return QuadratureRule(pts, wts, (n1, n2))


def default_rule(topo):
    """Full integration: 2x2 for Q4, 3x3 for Q8; each enrichment on a face
    raises the order along that face's parameter axis by one point."""
    base = 2 if topo.base == "Q4" else 3
    orders = [base, base]
    for enr in topo.enrichments:
        orders[1 - enr.axis] += 1
    orders = [min(o, 5) for o in orders]
    return gauss_rule((orders[0], orders[1]))
