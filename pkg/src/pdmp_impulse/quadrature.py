"""Gauss-Legendre panel quadrature on time grids along the flow."""

from __future__ import annotations

import numpy as np

GL_ORDER = 8
_GL_X, _GL_W = np.polynomial.legendre.leggauss(GL_ORDER)


def panel_nodes(tgrid: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Flattened GL nodes and weights for the panels of an increasing grid.

    With ``s, w = panel_nodes(tgrid)``, the integral of f over
    ``[tgrid[0], tgrid[k]]`` is ``(w * f(s))[: k * GL_ORDER].sum()``.
    """
    a = tgrid[:-1]
    b = tgrid[1:]
    half = 0.5 * (b - a)
    mid = 0.5 * (a + b)
    s = (mid[:, None] + half[:, None] * _GL_X[None, :]).ravel()
    w = (half[:, None] * _GL_W[None, :]).ravel()
    return s, w


def panel_cumulative(values: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Cumulative integrals at panel boundaries; index 0 holds 0."""
    contrib = (values * weights).reshape(-1, GL_ORDER).sum(axis=1)
    out = np.empty(contrib.size + 1)
    out[0] = 0.0
    np.cumsum(contrib, out=out[1:])
    return out


def interval_nodes(a: float, b: float) -> tuple[np.ndarray, np.ndarray]:
    """GL nodes and weights for a single interval [a, b]."""
    half = 0.5 * (b - a)
    mid = 0.5 * (a + b)
    return mid + half * _GL_X, half * _GL_W
