"""Characteristic roots, the boundary density ``J`` and the matrix ``B(J)``.

For ``sigma > 0`` the two-point problem ``J''/2 - mu J' + B(J) J = 0`` with
``J(0) = (2 sigma, 0)``, ``J(1) = (0, 2 sigma)`` is solved through the
eigen-data of ``Omega = sqrt(mu^2 - 2B)``: its eigenvalues ``omega0 < omega1``
are roots of two transcendental equations and its left eigenrows fix ``B``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from ._quad import panel_rule
from .errors import DomainError, NumericalError

SMALL = 1e-6
CRITICAL_TOL = 1e-12


class Regime(str, enum.Enum):
    SUPERCRITICAL = "Supercritical"
    CRITICAL = "Critical"
    SUBCRITICAL = "Subcritical"


def mu_coth_mu(mu: float) -> float:
    """``mu * coth(mu)``, equal to 1 at ``mu = 0``."""
    a = abs(mu)
    if a < 1e-4:
        return 1.0 + a * a / 3.0 - a**4 / 45.0
    return a / math.tanh(a)


def classify_regime(mu: float, sigma: float) -> Regime:
    ref = mu_coth_mu(mu)
    gap = sigma - ref
    if abs(gap) <= CRITICAL_TOL * max(1.0, ref):
        return Regime.CRITICAL
    return Regime.SUPERCRITICAL if gap > 0 else Regime.SUBCRITICAL


@dataclass(frozen=True)
class ModelParams:
    """Drift ``mu`` and boundary rate ``sigma``; ``regime`` is derived unless forced."""

    mu: float
    sigma: float
    regime: Regime = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "mu", float(self.mu))
        object.__setattr__(self, "sigma", float(self.sigma))
        if not (math.isfinite(self.mu) and math.isfinite(self.sigma)):
            raise DomainError("mu and sigma must be finite")
        if self.regime is None:
            object.__setattr__(self, "regime", classify_regime(self.mu, self.sigma))
        else:
            object.__setattr__(self, "regime", Regime(self.regime))


# --- stable elementary pieces ------------------------------------------------

def _omega_coth(w: float) -> float:
    if w < SMALL:
        return 1.0 + w * w / 3.0
    return w / math.tanh(w)


def _omega_over_sinh(w: float) -> float:
    if w < SMALL:
        return 1.0 - w * w / 6.0
    return 2.0 * w * math.exp(-w) / -math.expm1(-2.0 * w)


def _sinh_ratio(y, w: float, d: int = 0):
    """``d``-th derivative in ``y`` of ``sinh(y w) / sinh(w)`` (limit ``y`` at ``w = 0``)."""
    y = np.asarray(y, dtype=float)
    if w < SMALL:
        w2 = w * w
        if d == 0:
            return y * (1.0 + (y * y - 1.0) * w2 / 6.0)
        if d == 1:
            return 1.0 + w2 * (0.5 * y * y - 1.0 / 6.0)
        return w2 * y
    denom = -math.expm1(-2.0 * w)
    e = np.exp((y - 1.0) * w)
    if d == 1:
        return w * e * (1.0 + np.exp(-2.0 * y * w)) / denom
    val = e * (-np.expm1(-2.0 * y * w)) / denom
    return val if d == 0 else w * w * val


def _radical(mu: float, w: float) -> float:
    s = _omega_over_sinh(w)
    return math.sqrt(mu * mu + s * s)


def char_g1(omega: float, params: ModelParams) -> float:
    """Residual of the ``-`` characteristic equation, multiplied by ``2 sigma``."""
    mu, sigma = params.mu, params.sigma
    return omega * omega - 2.0 * sigma * _omega_coth(omega) - 2.0 * sigma * _radical(mu, omega) - mu * mu


def char_g0(omega: float, params: ModelParams) -> float:
    """Residual of the ``+`` characteristic equation, multiplied by ``2 sigma``.

    The radical carries the factor ``2 sigma`` so that ``|mu|`` is a root.
    """
    mu, sigma = params.mu, params.sigma
    return omega * omega - 2.0 * sigma * _omega_coth(omega) + 2.0 * sigma * _radical(mu, omega) - mu * mu


def _bisect(fn, lo, hi, params):
    return optimize.bisect(fn, lo, hi, args=(params,), xtol=1e-15, rtol=1e-13, maxiter=500)


def solve_omegas(params: ModelParams) -> tuple[float, float]:
    """Roots ``(omega0, omega1)`` of the characteristic equations."""
    if params.sigma <= 0:
        raise DomainError("the characteristic roots need sigma > 0")
    mu, sigma = params.mu, params.sigma
    a = abs(mu)
    trace = []
    lo = a
    hi = max(a, 2.0 * sigma) + 1.0
    for _ in range(200):
        val = char_g1(hi, params)
        trace.append((hi, val))
        if val > 0:
            break
        lo, hi = hi, 2.0 * hi
    else:
        raise NumericalError("no sign change of g1 found", scan=trace)
    if char_g1(lo, params) >= 0:
        raise NumericalError("g1 is not negative at the left bracket", scan=trace)
    omega1 = _bisect(char_g1, lo, hi, params)

    if params.regime is not Regime.SUPERCRITICAL:
        return a, omega1

    noise = 1e-13 * (1.0 + omega1 * omega1 + 2.0 * sigma * omega1 + mu * mu)
    offset = 1e-8 * (1.0 + a)
    trace = []
    while True:
        lo = a + offset
        if lo >= omega1:
            raise NumericalError("no sign change of g0 below omega1", scan=trace)
        val = char_g0(lo, params)
        trace.append((lo, val))
        if val < -noise:
            break
        if val > noise:
            raise NumericalError("g0 positive just above |mu|; regime too close to critical", scan=trace)
        offset *= 10.0
    omega0 = _bisect(char_g0, lo, omega1, params)
    return omega0, omega1


def _signed_radical_plus_mu(mu: float, w: float, sign: int) -> float:
    """``sign * sqrt(mu^2 + (w/sinh w)^2) + mu`` without cancellation."""
    s = _omega_over_sinh(w)
    rad = math.sqrt(mu * mu + s * s)
    if sign > 0:
        return rad + mu if mu >= 0 else s * s / (rad - mu)
    return mu - rad if mu <= 0 else -s * s / (rad + mu)


def _signed_radical_minus_mu(mu: float, w: float, sign: int) -> float:
    return -_signed_radical_plus_mu(mu, w, -sign)


def eigenrow_ratio(mu: float, omega: float, sign: int) -> float:
    """``w1/w0`` for a left eigenrow of ``Omega`` with eigenvalue ``omega``."""
    return _signed_radical_plus_mu(mu, omega, sign) * math.exp(mu) / _omega_over_sinh(omega)


def eigenrow_inverse_ratio(mu: float, omega: float, sign: int) -> float:
    """``w0/w1`` from the reciprocal form of the same relation."""
    return _signed_radical_minus_mu(mu, omega, sign) * math.exp(-mu) / _omega_over_sinh(omega)


def left_eigenrows(params: ModelParams, omega0: float, omega1: float) -> np.ndarray:
    """Rows ``(1, w1/w0)`` of the left eigenvectors for ``omega0`` (+) and ``omega1`` (-)."""
    mu = params.mu
    W = np.array([[1.0, eigenrow_ratio(mu, omega0, +1)], [1.0, eigenrow_ratio(mu, omega1, -1)]])
    det = W[0, 0] * W[1, 1] - W[0, 1] * W[1, 0]
    if not abs(det) > 1e-10 * float(np.sum(W * W)):
        raise NumericalError("left eigenrows are nearly dependent", det=det, W=W.tolist())
    return W


@dataclass(frozen=True)
class RiccatiSolution:
    params: ModelParams
    omega0: float
    omega1: float
    W: np.ndarray
    B: np.ndarray
    lambda0: float
    lambda1: float
    V0: np.ndarray
    V1: np.ndarray
    masses: np.ndarray
    mJ: float

    @property
    def mu(self) -> float:
        return self.params.mu

    @property
    def sigma(self) -> float:
        return self.params.sigma

    @property
    def regime(self) -> Regime:
        return self.params.regime

    @property
    def V(self) -> np.ndarray:
        """Eigenvectors as columns ``(V0 | V1)``."""
        return np.column_stack([self.V0, self.V1])

    def expm_B(self, t: float) -> np.ndarray:
        """``exp(t B)`` through the eigen-decomposition."""
        V = self.V
        return V @ np.diag(np.exp(t * np.array([self.lambda0, self.lambda1]))) @ np.linalg.inv(V)

    def to_dict(self) -> dict:
        return {
            "mu": self.mu,
            "sigma": self.sigma,
            "regime": self.regime.value,
            "omega0": self.omega0,
            "omega1": self.omega1,
            "W": self.W.tolist(),
            "B": self.B.tolist(),
            "lambda0": self.lambda0,
            "lambda1": self.lambda1,
            "V0": self.V0.tolist(),
            "V1": self.V1.tolist(),
            "masses": self.masses.tolist(),
            "mJ": self.mJ,
        }


def _spectrum(params, omega0, omega1, W):
    mu = params.mu
    lam = 0.5 * (mu * mu - np.array([omega0, omega1]) ** 2)
    if omega0 == abs(mu):
        lam[0] = 0.0
    Winv = np.linalg.inv(W)
    B = Winv @ np.diag(lam) @ W
    r0, r1 = W[0, 1], W[1, 1]
    V0 = np.array([-r1, 1.0]) / (1.0 - r1)
    V1 = np.array([r0, -1.0]) / (r0 + 1.0)
    return B, lam, V0, V1


def _j_derivatives(mu, sigma, omega0, omega1, W, x, d):
    """``d``-th derivative of the closed-form ``J`` at ``x``; shape ``x.shape + (2,)``."""
    (w00, w01), (w10, w11) = W
    det = w00 * w11 - w01 * w10
    em = math.exp(-mu)

    def P(j):
        s = (-1.0) ** j
        a0, a1 = _sinh_ratio(x, omega0, j), _sinh_ratio(x, omega1, j)
        b0, b1 = s * _sinh_ratio(1.0 - x, omega0, j), s * _sinh_ratio(1.0 - x, omega1, j)
        p0 = em * w01 * w11 * (a0 - a1) + w00 * w11 * b0 - w01 * w10 * b1
        p1 = -w00 * w10 * (b0 - b1) - em * w01 * w10 * a0 + em * w00 * w11 * a1
        return np.stack([p0, p1], axis=-1) / det

    ex = np.exp(mu * x)[..., None]
    out = 0.0
    for j in range(d + 1):
        out = out + math.comb(d, j) * mu ** (d - j) * P(j)
    return 2.0 * sigma * ex * out


def eval_J(sol: RiccatiSolution, x, derivative: int = 0) -> np.ndarray:
    """Both components of ``J`` (or its first or second derivative) at ``x``.

    Returns an array of shape ``np.shape(x) + (2,)``.
    """
    if derivative not in (0, 1, 2):
        raise ValueError("derivative must be 0, 1 or 2")
    x = np.asarray(x, dtype=float)
    return _j_derivatives(sol.mu, sol.sigma, sol.omega0, sol.omega1, sol.W, x, derivative)


def b_of_j(params: ModelParams, Jprime0, Jprime1) -> np.ndarray:
    """The boundary functional ``B(J)`` from ``J'(0)`` and ``J'(1)``."""
    mu, sigma = params.mu, params.sigma
    a, b = np.asarray(Jprime0, dtype=float), np.asarray(Jprime1, dtype=float)
    return np.array([
        [-2.0 * mu * sigma + 0.5 * a[0], -0.5 * b[0]],
        [0.5 * a[1], 2.0 * mu * sigma - 0.5 * b[1]],
    ])


def _masses(mu, sigma, omega0, omega1, W):
    x, w = panel_rule(np.linspace(0.0, 1.0, 5), 32)
    return w @ _j_derivatives(mu, sigma, omega0, omega1, W, x, 0)


def solve_riccati(params: ModelParams) -> RiccatiSolution:
    """Assemble the full solution for ``sigma > 0``."""
    if params.sigma <= 0:
        raise DomainError("the Riccati system is solved only for sigma > 0")
    omega0, omega1 = solve_omegas(params)
    W = left_eigenrows(params, omega0, omega1)
    B, lam, V0, V1 = _spectrum(params, omega0, omega1, W)
    m = _masses(params.mu, params.sigma, omega0, omega1, W)
    return RiccatiSolution(
        params=params, omega0=omega0, omega1=omega1, W=W, B=B,
        lambda0=float(lam[0]), lambda1=float(lam[1]), V0=V0, V1=V1,
        masses=m, mJ=float(np.max(m)),
    )


def b_matrix(sol: RiccatiSolution) -> tuple[np.ndarray, tuple[float, float], tuple[np.ndarray, np.ndarray]]:
    """``B`` with its eigenvalues ``(lambda0, lambda1)`` and eigenvectors ``(V0, V1)``."""
    return sol.B, (sol.lambda0, sol.lambda1), (sol.V0, sol.V1)


def masses(sol: RiccatiSolution) -> np.ndarray:
    """``(<1, J0>, <1, J1>)``."""
    return sol.masses.copy()
