"""Defect operator, explicit growth modes and the nonnegativity criterion.

For ``f`` in ``F`` the defect ``D f = (f(0) - <f, J0>, f(1) - <f, J1>)`` is
expanded on the eigenvectors of ``B``: ``D f = a0 V0 + a1 V1``. The
coefficient ``a1`` selects the dominant ``e^{-t lambda1}`` mode, ``a0`` the
slower one, and ``u_f >= 0`` exactly when ``f >= 0``, ``a1 = 0`` and ``a0 >= 0``.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DomainError, NumericalError
from .riccati import Regime, RiccatiSolution, eval_J
from .semigroup import BoundaryFunction, SpaceTimeField, interior_rule


# --- defect ----------------------------------------------------------------------

def pair_with_J(f: BoundaryFunction, sol: RiccatiSolution) -> np.ndarray:
    """``(<f, J0>, <f, J1>)`` over the open interval."""
    x, w = interior_rule(f, n_panels=64, order=12)
    return (w * f(x)) @ eval_J(sol, x)


def defect(f: BoundaryFunction, sol: RiccatiSolution) -> np.ndarray:
    return f.boundary - pair_with_J(f, sol)


@dataclass(frozen=True)
class DefectDecomposition:
    d: np.ndarray
    a0: float
    a1: float

    def to_dict(self) -> dict:
        return {"d": self.d.tolist(), "a0": self.a0, "a1": self.a1}


def decompose(d, sol: RiccatiSolution) -> DefectDecomposition:
    """Solve ``d = a0 V0 + a1 V1``."""
    d = np.asarray(d, dtype=float)
    a0, a1 = np.linalg.solve(sol.V, d)
    return DefectDecomposition(d=d, a0=float(a0), a1=float(a1))


def f_in_kernel(phi: Callable[[np.ndarray], np.ndarray], sol: RiccatiSolution,
                breakpoints: tuple[float, ...] = ()) -> BoundaryFunction:
    """Extend an interior profile by ``f(k) = <phi, J_k>`` so that ``D f = 0``."""
    f = BoundaryFunction(phi, 0.0, 0.0, breakpoints)
    m = pair_with_J(f, sol)
    return f.with_boundary(m[0], m[1])


# --- explicit modes --------------------------------------------------------------

def c_coefficient(mu: float, omega: float, k: int) -> float:
    """``((-1)^k sqrt(mu^2 cosh^2 w + w^2 - mu^2) - mu cosh w) / (w + mu)``."""
    ch = math.cosh(omega)
    root = math.sqrt(mu * mu * ch * ch + omega * omega - mu * mu)
    return ((-1) ** k * root - mu * ch) / (omega + mu)


def _exp_mode(x, mu, omega, c, d):
    """``(e^{x w} + c e^{(1-x) w}) e^{-x mu}`` and its first two derivatives."""
    a = np.exp(x * omega)
    b = c * np.exp((1.0 - x) * omega)
    phi = a + b
    dphi = omega * (a - b)
    damp = np.exp(-mu * x)
    if d == 0:
        return damp * phi
    if d == 1:
        return damp * (dphi - mu * phi)
    return damp * (omega * omega * phi - 2.0 * mu * dphi + mu * mu * phi)


@dataclass(frozen=True)
class ClosedForms:
    """Explicit eigen-profiles ``h0, h1`` with normalizers ``K0, K1``.

    ``u_{h1}(t) = e^{-t lambda1} h1``; ``u_{h0}(t)`` is ``e^{-t lambda0} h0``,
    ``t + h0`` or ``1`` according to the regime.
    """

    sol: RiccatiSolution
    c0: float
    c1: float
    K0: float
    K1: float

    def h(self, k: int, x, derivative: int = 0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        sol = self.sol
        mu = sol.mu
        if k == 1:
            return _exp_mode(x, mu, sol.omega1, self.c1, derivative)
        if k != 0:
            raise DomainError("mode index must be 0 or 1")
        regime = sol.regime
        if regime is Regime.SUPERCRITICAL:
            return _exp_mode(x, mu, sol.omega0, self.c0, derivative)
        if regime is Regime.SUBCRITICAL:
            return np.full(x.shape, 1.0 if derivative == 0 else 0.0)
        if mu == 0.0:
            return [1.0 - x * (1.0 - x), 2.0 * x - 1.0, np.full(x.shape, 2.0)][derivative]
        e = (1.0 + math.tanh(mu)) * np.exp(-2.0 * mu * x)
        if derivative == 0:
            return 1.0 / abs(mu) + x / mu + e / (2.0 * mu * mu)
        if derivative == 1:
            return 1.0 / mu - e / mu
        return 2.0 * e

    def g(self, k: int, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if k == 1:
            return self.K1 * self.h(1, x)
        if self.sol.regime is Regime.SUPERCRITICAL:
            return self.K0 * self.h(0, x)
        return np.full(x.shape, self.K0)

    def h_function(self, k: int) -> BoundaryFunction:
        return BoundaryFunction(lambda x: self.h(k, x), float(self.h(k, 0.0)), float(self.h(k, 1.0)))

    def g_function(self, k: int) -> BoundaryFunction:
        return BoundaryFunction(lambda x: self.g(k, x), float(self.g(k, 0.0)), float(self.g(k, 1.0)))

    def to_dict(self) -> dict:
        return {"c0": self.c0, "c1": self.c1, "K0": self.K0, "K1": self.K1}

    def profiles_to_csv(self, path, n: int = 1001) -> None:
        x = np.linspace(0.0, 1.0, n)
        cols = [self.h(0, x), self.h(1, x), self.g(0, x), self.g(1, x)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "h0", "h1", "g0", "g1"])
            for row in zip(x, *cols):
                w.writerow([repr(float(v)) for v in row])


def _normalizer(V: np.ndarray, Dh: np.ndarray, name: str) -> float:
    big = np.abs(Dh) > 1e-9 * np.abs(Dh).max()
    ratios = V[big] / Dh[big]
    if ratios.size == 2 and abs(ratios[0] - ratios[1]) > 1e-5 * max(abs(ratios[0]), abs(ratios[1])):
        raise NumericalError(f"{name} ratio inconsistent across components", ratios=ratios.tolist())
    return float(ratios.mean())


def closed_forms(sol: RiccatiSolution) -> ClosedForms:
    if sol.sigma <= 0:
        raise DomainError("closed forms need sigma > 0")
    mu = sol.mu
    c0 = c_coefficient(mu, sol.omega0, 0) if sol.omega0 + mu != 0 else math.nan
    c1 = c_coefficient(mu, sol.omega1, 1)
    proto = ClosedForms(sol, c0, c1, 1.0, 1.0)
    K0 = _normalizer(sol.V0, defect(proto.h_function(0), sol), "K0")
    K1 = _normalizer(sol.V1, defect(proto.h_function(1), sol), "K1")
    return ClosedForms(sol, c0, c1, K0, K1)


# --- nonnegativity ------------------------------------------------------------------

class Verdict(str, enum.Enum):
    NONNEGATIVE = "Nonnegative"
    INDEFINITE = "Indefinite"


@dataclass(frozen=True)
class Classification:
    verdict: Verdict
    decomposition: DefectDecomposition
    min_f: float

    def to_dict(self) -> dict:
        return {"verdict": self.verdict.value, "min_f": self.min_f, **self.decomposition.to_dict()}


def classify_nonneg(f: BoundaryFunction, sol: RiccatiSolution, tol: float = 1e-8,
                    n_grid: int = 2001) -> Classification:
    """``u_f >= 0`` iff ``f >= 0`` and ``D f = a0 V0`` with ``a0 >= 0``."""
    x = np.linspace(0.0, 1.0, n_grid)[1:-1]
    min_f = float(min(f(x).min(), f.f0, f.f1))
    dec = decompose(defect(f, sol), sol)
    ok = min_f >= -tol and abs(dec.a1) <= tol * (1.0 + abs(dec.a0)) and dec.a0 >= -tol
    return Classification(Verdict.NONNEGATIVE if ok else Verdict.INDEFINITE, dec, min_f)


# --- growth rates -----------------------------------------------------------------------

@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    mode: str

    def to_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "mode": self.mode}


def rate_fit(field: SpaceTimeField, window: tuple[float, float], mode: str = "log") -> RateFit:
    """Least-squares line through the sup-norm on ``window``.

    ``mode="log"`` fits ``log ||u(t)||`` (exponential rate); ``mode="linear"``
    fits ``||u(t)||`` itself, whose slope is ``lim ||u(t)||/t`` for the linear
    growth mode.
    """
    t1, t2 = window
    if not t1 < t2:
        raise DomainError("window must be increasing")
    if field.times[-1] < t2 * (1 - 1e-12):
        raise DomainError("field does not reach the end of the window")
    sel = (field.times >= t1 - 1e-12) & (field.times <= t2 + 1e-12)
    norms = field.sup_norms()[sel]
    if np.any(norms <= 0):
        raise DomainError("sup-norm vanishes inside the window")
    if mode == "log":
        y = np.log(norms)
    elif mode == "linear":
        y = norms
    else:
        raise ValueError("mode must be 'log' or 'linear'")
    slope, intercept = np.polyfit(field.times[sel], y, 1)
    return RateFit(float(slope), float(intercept), mode)
