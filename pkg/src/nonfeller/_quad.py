"""Gauss-Legendre panels used by every spatial and temporal pairing."""

from __future__ import annotations

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=None)
def leggauss01(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights mapped to [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def panel_rule(breaks: np.ndarray, order: int = 16) -> tuple[np.ndarray, np.ndarray]:
    """Composite rule with ``order`` nodes on each panel ``[breaks[i], breaks[i+1]]``."""
    breaks = np.asarray(breaks, dtype=float)
    a = breaks[:-1, None]
    h = np.diff(breaks)[:, None]
    x, w = leggauss01(order)
    return (a + h * x).ravel(), (h * w).ravel()


def graded_breaks(scale: float, n_uniform: int = 8) -> np.ndarray:
    """Breakpoints on [0, 1] refined geometrically toward both ends.

    Panels near each endpoint have widths ``scale * 2**j`` so that boundary
    layers of width ``scale`` are resolved; the middle is split uniformly.
    """
    scale = float(scale)
    uniform = np.linspace(0.0, 1.0, n_uniform + 1)
    if scale >= 0.5 / n_uniform:
        return uniform
    left = [0.0]
    b = 0.25 * scale
    while b < 1.0 / n_uniform:
        left.append(b)
        b *= 2.0
    left = np.array(left)
    inner = uniform[1:-1]
    return np.unique(np.concatenate([left, inner, 1.0 - left]))


def graded_rule(scale: float, order: int = 16, n_uniform: int = 8) -> tuple[np.ndarray, np.ndarray]:
    return panel_rule(graded_breaks(scale, n_uniform), order)


def uniform_rule(n_panels: int, order: int = 8) -> tuple[np.ndarray, np.ndarray]:
    return panel_rule(np.linspace(0.0, 1.0, n_panels + 1), order)
