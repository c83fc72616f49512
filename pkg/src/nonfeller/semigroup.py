"""Solution operator ``Q_t`` of the boundary problem through its Volterra system.

Given ``f`` (interior profile plus free boundary values) the boundary pairings
``v(t) = (<u(t), w0>, <u(t), w1>)`` solve a 2x2 Volterra equation of the
second kind with a kernel of size ``t**-1/2``. The march below integrates that
kernel exactly against piecewise-linear ``v``: every panel moment reduces to
differences of closed-form exit-time integrals at grid times. Boundary traces
follow from ``v`` by an exact exponential integral, and interior values from
the absorbed kernel plus the exit densities convolved with the traces.

A Crank-Nicolson discretization of the PDE serves as an independent oracle.
"""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy import linalg, signal, sparse, special
from scipy.sparse import linalg as splinalg

from ._quad import graded_breaks, panel_rule
from .errors import DomainError, NumericalError
from .kernel import hitting_integral, q_fundamental
from .riccati import ModelParams, mu_coth_mu


# --- initial data --------------------------------------------------------------

@dataclass(frozen=True)
class BoundaryFunction:
    """An element of ``F``: interior profile on (0, 1) and independent ``f(0)``, ``f(1)``.

    Parameters
    ----------
    interior : callable
        Vectorized profile, evaluated only at points of the open interval.
    f0, f1 : float
        Boundary values; they need not match the interior limits.
    breakpoints : tuple of float
        Interior points where the profile may jump. Quadrature panels are
        aligned with them.
    """

    interior: Callable[[np.ndarray], np.ndarray]
    f0: float
    f1: float
    breakpoints: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "f0", float(self.f0))
        object.__setattr__(self, "f1", float(self.f1))
        bp = tuple(sorted(float(b) for b in self.breakpoints))
        if any(not 0.0 < b < 1.0 for b in bp):
            raise DomainError("breakpoints must lie in (0, 1)")
        object.__setattr__(self, "breakpoints", bp)
        probe = self(np.linspace(0.0, 1.0, 257)[1:-1])
        if not (np.all(np.isfinite(probe)) and math.isfinite(self.f0) and math.isfinite(self.f1)):
            raise DomainError("initial data must be bounded")

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(self.interior(x), dtype=float), x.shape)

    @property
    def boundary(self) -> np.ndarray:
        return np.array([self.f0, self.f1])

    def on_nodes(self, nodes: np.ndarray) -> np.ndarray:
        """Values on a closed grid: interior profile inside, ``f0``/``f1`` at the ends."""
        out = np.array(self(np.clip(nodes, 1e-300, 1.0 - 1e-16)), dtype=float)
        out[nodes <= 0.0] = self.f0
        out[nodes >= 1.0] = self.f1
        return out

    def sup_norm(self, n: int = 4001) -> float:
        x = np.linspace(0.0, 1.0, n)[1:-1]
        return float(max(np.abs(self(x)).max(), abs(self.f0), abs(self.f1)))

    # linear structure
    def __add__(self, other: BoundaryFunction) -> BoundaryFunction:
        a, b = self.interior, other.interior
        return BoundaryFunction(lambda x: a(x) + b(x), self.f0 + other.f0, self.f1 + other.f1,
                                tuple(set(self.breakpoints) | set(other.breakpoints)))

    def scale(self, c: float) -> BoundaryFunction:
        a = self.interior
        return BoundaryFunction(lambda x: c * a(x), c * self.f0, c * self.f1, self.breakpoints)

    def with_boundary(self, f0: float, f1: float) -> BoundaryFunction:
        return BoundaryFunction(self.interior, f0, f1, self.breakpoints)

    @classmethod
    def constant(cls, c: float, f0: float | None = None, f1: float | None = None) -> BoundaryFunction:
        return cls(lambda x: np.full(np.shape(x), float(c)), c if f0 is None else f0, c if f1 is None else f1)

    @classmethod
    def zero(cls) -> BoundaryFunction:
        return cls.constant(0.0)

    @classmethod
    def from_grid(cls, values, f0: float, f1: float, modulus: float | None = None) -> BoundaryFunction:
        """Interior samples at ``i/n``, ``i = 1..n-1``, linearly interpolated.

        ``modulus`` bounds the jump between adjacent samples.
        """
        values = np.asarray(values, dtype=float)
        if values.ndim != 1 or values.size < 2:
            raise DomainError("need at least two interior samples")
        if modulus is not None and np.abs(np.diff(values)).max() > modulus:
            raise DomainError("grid function jumps exceed the supplied modulus")
        nodes = np.arange(1, values.size + 1) / (values.size + 1)
        return cls(lambda x: np.interp(x, nodes, values), f0, f1, tuple(nodes))

    @classmethod
    def from_polynomial(cls, coeffs: Sequence[float], f0: float | None = None,
                        f1: float | None = None) -> BoundaryFunction:
        """``sum c_i x**i``; boundary values default to the end limits."""
        p = np.polynomial.Polynomial(coeffs)
        return cls(lambda x: p(x), p(0.0) if f0 is None else f0, p(1.0) if f1 is None else f1)


def interior_rule(f: BoundaryFunction, n_panels: int = 64, order: int = 10,
                  extra: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre rule on (0, 1) aligned with the jumps of ``f``."""
    parts = [np.linspace(0.0, 1.0, n_panels + 1), np.asarray(f.breakpoints)]
    if extra is not None:
        parts.append(np.asarray(extra))
    return panel_rule(np.unique(np.concatenate(parts)), order)


# --- weights, transforms and the boundary matrix --------------------------------

def _w1(x, mu):
    if abs(mu) < 1e-6:
        return x * (1.0 + mu * x) / (1.0 + mu)
    return np.expm1(2.0 * mu * x) / math.expm1(2.0 * mu)


def hat_weights(mu: float, x) -> np.ndarray:
    """``(w0(x), w1(x))`` stacked on the first axis.

    ``w1 = (e^{2 mu x} - 1)/(e^{2 mu} - 1)`` and ``w0(x) = w1(1 - x)`` with
    ``mu -> -mu``; both reduce to ``1 - x`` and ``x`` at ``mu = 0``.
    """
    x = np.asarray(x, dtype=float)
    return np.stack([_w1(1.0 - x, -mu), _w1(x, mu)])


def hat_transform(f: BoundaryFunction, mu: float, n_panels: int = 64) -> np.ndarray:
    """``(<f, w0>, <f, w1>)`` over the open interval."""
    x, w = interior_rule(f, n_panels)
    return hat_weights(mu, x) @ (w * f(x))


def _coth_factor(mu: float) -> float:
    """``2 mu / (e^{2 mu} - 1)``."""
    if abs(mu) < 1e-8:
        return 1.0 - mu
    return 2.0 * mu / math.expm1(2.0 * mu)


def boundary_matrix_A(params: ModelParams) -> np.ndarray:
    """``A = 2 sigma mu/(e^{2mu}-1) [[e^{2mu}, -e^{2mu}], [-1, 1]]``; rows sum to 0."""
    mu, sigma = params.mu, params.sigma
    c = sigma * _coth_factor(mu)
    e = math.exp(2.0 * mu)
    return c * np.array([[e, -e], [-1.0, 1.0]])


def trace_A(params: ModelParams) -> float:
    """``tr A = 2 sigma mu coth mu``; ``A @ A = tr(A) A``."""
    return 2.0 * params.sigma * mu_coth_mu(params.mu)


def expm_A(params: ModelParams, t: float) -> np.ndarray:
    """``exp(tA) = I + (e^{at} - 1)/a A`` from the rank-one structure of ``A``."""
    a = trace_A(params)
    A = boundary_matrix_A(params)
    if abs(a) < 1e-300:
        return np.eye(2) + t * A
    return np.eye(2) + math.expm1(a * t) / a * A


# --- hatted exit quantities ---------------------------------------------------

def _graded(s: float, order: int = 16) -> tuple[np.ndarray, np.ndarray]:
    return graded_rule_cached(float(s), order)


@lru_cache(maxsize=4096)
def graded_rule_cached(s: float, order: int):
    x, w = panel_rule(graded_breaks(math.sqrt(s)), order)
    return x, w


def hitting_hat(s: float, mu: float, rate: float = 0.0, moment: int = 0) -> np.ndarray:
    """Matrix ``[j, k] = <int_0^s r^m q_k(r, .) e^{-rate r} dr, w_j>``."""
    if s <= 0:
        return np.zeros((2, 2))
    x, w = _graded(s)
    W = hat_weights(mu, x) * w
    cols = [W @ hitting_integral(k, s, x, mu, rate=rate, moment=moment) for k in (0, 1)]
    return np.column_stack(cols)


def q_hat(s: float, mu: float) -> np.ndarray:
    """Matrix ``[j, k] = <q_k(s, .), w_j>``."""
    x, w = _graded(s)
    W = hat_weights(mu, x) * w
    return np.column_stack([W @ q_fundamental(k, s, x, mu) for k in (0, 1)])


def _z_hat(s: float, params: ModelParams) -> np.ndarray:
    """``Z(s) = int_0^s q_hat(r) e^{a (s - r)} dr``."""
    a = trace_A(params)
    return math.exp(a * s) * hitting_hat(s, params.mu, rate=a)


def assemble_Khat(params: ModelParams, t: float) -> np.ndarray:
    """Hatted Volterra kernel ``K(t) = 2 sigma [q_hat(t) + Z(t) A]``."""
    if t <= 0:
        raise DomainError("t must be positive")
    A = boundary_matrix_A(params)
    return 2.0 * params.sigma * (q_hat(t, params.mu) + _z_hat(t, params) @ A)


def _boundary_excess(f: BoundaryFunction, params: ModelParams, fhat: np.ndarray | None = None) -> np.ndarray:
    if fhat is None:
        fhat = hat_transform(f, params.mu)
    return f.boundary - 2.0 * params.sigma * fhat


def hat_h(f: BoundaryFunction, mu: float, t: float) -> np.ndarray:
    """Pairings of the absorbed evolution ``h_f(t) = int Q0(t, ., y) f(y) dy`` with ``w_j``.

    Uses ``int Q0(t, x, y) w_j(x) dx = w_j(y) - e^{2mu(y-j)} P_j(t, y)`` where
    ``P_j`` is the probability of having exited through ``j`` by time ``t``.
    """
    if t <= 0:
        return hat_transform(f, mu)
    x, w = interior_rule(f, extra=graded_breaks(math.sqrt(t)))
    fx = w * f(x)
    out = hat_weights(mu, x) @ fx
    for j in (0, 1):
        out[j] -= (np.exp(2.0 * mu * (x - j)) * hitting_integral(j, t, x, mu)) @ fx
    return out


def hat_h_rate(f: BoundaryFunction, mu: float, t: float) -> np.ndarray:
    """Time derivative of :func:`hat_h` from the kernel ``e^{mu y - mu^2 t/2} G'(t, y)``."""
    from .kernel import periodized_G

    x, w = interior_rule(f, extra=graded_breaks(math.sqrt(t)))
    fx = w * f(x)
    damp = math.exp(-0.5 * mu * mu * t)
    d0 = np.exp(mu * x) * periodized_G(t, x, "d_dx")
    d1 = np.exp(mu * (x - 1.0)) * periodized_G(t, 1.0 - x, "d_dx")
    return damp * np.array([d0 @ fx, d1 @ fx])


def assemble_rhat(f: BoundaryFunction, params: ModelParams, t: float) -> np.ndarray:
    """``<r_f(t), w_j>``: absorbed part plus boundary excess carried by ``e^{tA}``."""
    fhat = hat_transform(f, params.mu)
    if t <= 0:
        return fhat
    c = _boundary_excess(f, params, fhat)
    a = trace_A(params)
    A = boundary_matrix_A(params)
    P = hitting_hat(t, params.mu)
    Z = _z_hat(t, params)
    return hat_h(f, params.mu, t) + (P + (Z - P) @ A / a) @ c


# --- configuration and results ------------------------------------------------

class SolveMode(str, enum.Enum):
    MARCH = "march"
    PICARD = "picard"


@dataclass(frozen=True)
class VolterraConfig:
    dt: float = 1e-3
    T: float = 1.0
    n_space: int = 200
    mode: SolveMode = SolveMode.MARCH
    picard_iters: int = 400
    quad_tol: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "mode", SolveMode(self.mode))
        if not (self.dt > 0 and self.T > 0 and self.quad_tol > 0):
            raise DomainError("dt, T and quad_tol must be positive")
        if self.dt > self.T * (1 + 1e-12):
            raise DomainError("dt must not exceed T")
        if self.n_space < 16:
            raise DomainError("n_space must be at least 16")
        if self.picard_iters < 1:
            raise DomainError("picard_iters must be positive")
        n = self.T / self.dt
        if abs(n - round(n)) > 1e-9 * n:
            raise DomainError("T must be an integer multiple of dt")

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n_space + 1)


@dataclass
class VolterraResult:
    """Boundary pairings ``v`` and traces ``b = (u(t,0), u(t,1))`` on the time grid."""

    times: np.ndarray
    v: np.ndarray
    traces: np.ndarray
    increments: list[float] = field(default_factory=list)
    envelope: list[float] = field(default_factory=list)
    L: float | None = None
    certified_iterations: int | None = None


@dataclass(frozen=True)
class SpaceTimeField:
    times: np.ndarray
    nodes: np.ndarray
    values: np.ndarray
    boundary_traces: np.ndarray
    meta: dict = field(default_factory=dict)

    def sup_norms(self) -> np.ndarray:
        return np.abs(self.values).max(axis=1)

    def row(self, t: float) -> np.ndarray:
        i = int(np.argmin(np.abs(self.times - t)))
        return self.values[i]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [repr(float(x)) for x in self.nodes])
            for t, row in zip(self.times, self.values):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in row])

    def traces_to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "u_t_0", "u_t_1"])
            for t, (b0, b1) in zip(self.times, self.boundary_traces):
                w.writerow([repr(float(t)), repr(float(b0)), repr(float(b1))])

    def summary(self) -> dict:
        return {
            "times": self.times.tolist(),
            "sup_norm": self.sup_norms().tolist(),
            "u_t_0": self.boundary_traces[:, 0].tolist(),
            "u_t_1": self.boundary_traces[:, 1].tolist(),
            **self.meta,
        }

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.summary(), fh, indent=2)


# --- kernel tables --------------------------------------------------------------

@dataclass(frozen=True)
class _Tables:
    """Hatted exit quantities at ``s_m = m dt`` and the panel moments of ``K``.

    ``D[m]`` weights ``v`` at the near end of lag panel ``m`` and ``M1[m]`` the
    far end, so ``int_0^{t_n} K(t_n - s) v(s) ds = sum_m D[m] v[n-m] + M1[m] v[n-m-1]``.
    ``C[n]`` adds ``(v[1] - v[0]) psi`` on the first panel (see :func:`_start_profile`).
    """

    P: np.ndarray
    Z: np.ndarray
    D: np.ndarray
    M1: np.ndarray
    C: np.ndarray


_EXACT_START_LAGS = 8


def _start_profile(tau: np.ndarray, dt: float) -> np.ndarray:
    """``psi = sqrt(tau/dt) - tau/dt``: first-panel shape beyond linear.

    Data whose boundary values differ from the interior limits make ``v`` and
    the traces grow like ``sqrt(t)`` at first; the first panel therefore uses
    ``v[0] + (v[1] - v[0]) sqrt(tau/dt)``, i.e. the linear interpolant plus
    ``(v[1] - v[0]) psi``.
    """
    r = tau / dt
    return np.sqrt(r) - r


def _start_correction(kernel: Callable[[float], np.ndarray], M0: np.ndarray, N: np.ndarray,
                      dt: float) -> np.ndarray:
    """``int_0^dt kernel(t_n - tau) psi(tau) dtau`` for ``n = 1..len(M0)``.

    ``M0[m]`` and ``N[m]`` are ``int kernel`` and ``int (s - s_m) kernel`` over lag
    panel ``m``. The first lags use quadrature with ``tau = dt u^2`` (and
    ``s = dt u^2`` near a singular end); later lags integrate ``psi`` against
    the linear profile matching those two moments.
    """
    n = M0.shape[0]
    out = np.empty_like(M0)
    # linear kernel alpha + beta (s - s_m) over the panel, tau = dt - (s - s_m)
    beta = (N - 0.5 * dt * M0) * 12.0 / dt**3
    alpha = M0 / dt - 0.5 * dt * beta
    out[:] = alpha * (dt / 6.0) + beta * (dt * dt / 10.0)
    u, wu = _gl(16)
    for m in range(min(n, _EXACT_START_LAGS)):
        t_n = (m + 1) * dt
        acc = 0.0
        # tau in [0, dt/2] with tau = (dt/2) u^2
        tau = 0.5 * dt * u * u
        for t, w in zip(tau, wu * dt * u):
            acc = acc + w * kernel(t_n - t) * _start_profile(t, dt)
        # s = t_n - tau in the remaining half; graded toward s = 0 on the first lag
        if m == 0:
            sv = 0.5 * dt * u * u
            ws = wu * dt * u
        else:
            sv = t_n - 0.5 * dt - 0.5 * dt * u
            ws = 0.5 * dt * wu
        for sj, w in zip(sv, ws):
            acc = acc + w * kernel(sj) * _start_profile(t_n - sj, dt)
        out[m] = acc
    return out


@lru_cache(maxsize=4)
def _gl(order: int) -> tuple[np.ndarray, np.ndarray]:
    from ._quad import leggauss01

    return leggauss01(order)


@lru_cache(maxsize=16)
def _kernel_tables(mu: float, sigma: float, dt: float, n: int) -> _Tables:
    params = ModelParams(mu, sigma)
    a = trace_A(params)
    A = boundary_matrix_A(params)
    s = dt * np.arange(n + 1)
    P = np.zeros((n + 1, 2, 2))
    P1 = np.zeros((n + 1, 2, 2))
    Z = np.zeros((n + 1, 2, 2))
    for m in range(1, n + 1):
        P[m] = hitting_hat(s[m], mu)
        P1[m] = hitting_hat(s[m], mu, moment=1)
        Z[m] = _z_hat(s[m], params)
    dP = np.diff(P, axis=0)
    dP1 = np.diff(P1, axis=0)
    # Z' = a Z + q_hat gives both panel moments of Z exactly
    intZ = (np.diff(Z, axis=0) - dP) / a
    sZ = s[:, None, None] * Z
    int_sZ = (np.diff(sZ, axis=0) - intZ - dP1) / a
    M0 = 2.0 * sigma * (dP + intZ @ A)
    S1 = 2.0 * sigma * (dP1 + int_sZ @ A)
    M1 = (S1 - s[:-1, None, None] * M0) / dt
    C = np.zeros((n + 1, 2, 2))
    C[1:] = _start_correction(lambda r: assemble_Khat(params, r), M0, S1 - s[:-1, None, None] * M0, dt)
    return _Tables(P=P, Z=Z, D=M0 - M1, M1=M1, C=C)


def tables_for(params: ModelParams, config: VolterraConfig) -> _Tables:
    if params.sigma <= 0:
        raise DomainError("the Volterra engine requires sigma > 0")
    return _kernel_tables(params.mu, params.sigma, float(config.dt), config.n_steps)


def _rhat_series(f: BoundaryFunction, params: ModelParams, config: VolterraConfig, tab: _Tables) -> np.ndarray:
    mu = params.mu
    fhat = hat_transform(f, mu)
    c = _boundary_excess(f, params, fhat)
    a = trace_A(params)
    A = boundary_matrix_A(params)
    hh = absorbed_hat_series(f, mu, config.times)
    carry = tab.P + np.einsum("nij,jk->nik", tab.Z - tab.P, A) / a
    out = hh + carry @ c
    out[0] = fhat
    return out


def volterra_march(f: BoundaryFunction, params: ModelParams, config: VolterraConfig = VolterraConfig()) -> VolterraResult:
    """Product-integration march for ``v = r_hat + K * v``."""
    tab = tables_for(params, config)
    rhat = _rhat_series(f, params, config, tab)
    n = config.n_steps
    v = np.empty((n + 1, 2))
    v[0] = rhat[0]
    D, M1, C = tab.D, tab.M1, tab.C
    # the first step carries the sqrt-shaped start on both sides
    first = np.eye(2) - D[0] - C[1]
    lhs = np.eye(2) - D[0]
    for mat in (first, lhs):
        cond = np.linalg.cond(mat)
        if not cond < 1e12:
            raise NumericalError("step system is ill-conditioned", condition=float(cond))
    v[1] = np.linalg.solve(first, rhat[1] + (M1[0] - C[1]) @ v[0])
    lu = linalg.lu_factor(lhs)
    for i in range(2, n + 1):
        rhs = rhat[i] + M1[0] @ v[i - 1] + C[i] @ (v[1] - v[0])
        if i > 1:
            # lag panels m = 1..i-1
            rhs += np.einsum("mjk,mk->j", D[1:i], v[i - 1:0:-1])
            rhs += np.einsum("mjk,mk->j", M1[1:i], v[i - 2::-1])
        v[i] = linalg.lu_solve(lu, rhs)
    return VolterraResult(times=config.times, v=v, traces=boundary_traces(f, params, config, v))


def _lagged_sum(D: np.ndarray, M1: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``out[i] = sum_{m<i} D[m] b[i-m] + M1[m] b[i-m-1]`` along axis 0.

    ``D`` and ``M1`` hold one row per lag panel (``len(b) - 1`` rows) and
    broadcast against ``b`` in the trailing axes.
    """
    n = b.shape[0]
    if n < 2:
        return np.zeros(np.broadcast_shapes(D.shape, b.shape))
    near = signal.fftconvolve(D, b, axes=0)[:n]
    far = signal.fftconvolve(M1, b, axes=0)[: n - 1]
    out = np.zeros((n,) + near.shape[1:])
    # the full convolution also carries the m = i term D[i] b[0]
    out[1:] = near[1:] - np.concatenate([D[1:], np.zeros((1,) + D.shape[1:])])[: n - 1] * b[0]
    out[1:] += far
    return out


def _convolve_kernel(tab: _Tables, v: np.ndarray) -> np.ndarray:
    """``(K * v)(t_n)`` on the grid for piecewise-linear ``v``."""
    out = np.zeros_like(v)
    for j in range(2):
        for k in range(2):
            out[:, j] += _lagged_sum(tab.D[:, j, k], tab.M1[:, j, k], v[:, k])
    if v.shape[0] > 1:
        out[1:] += tab.C[1 : v.shape[0]] @ (v[1] - v[0])
    return out


def measure_L(params: ModelParams, T: float, n: int = 200) -> float:
    """``sup_{t <= T} t^{1/2} ||K(t)||_op`` on ``n`` log-spaced times."""
    ts = np.geomspace(T * 1e-6, T, n)
    return float(max(math.sqrt(t) * np.linalg.norm(assemble_Khat(params, t), 2) for t in ts))


def log_picard_envelope(L: float, v0_norm: float, T: float, n: int) -> float:
    """Log of the a-priori bound ``(L sqrt(pi))^n ||v0|| T^{n/2} / Gamma(n/2 + 1)``."""
    if v0_norm == 0.0:
        return -math.inf
    return (n * math.log(L * math.sqrt(math.pi)) + math.log(v0_norm) + 0.5 * n * math.log(T)
            - float(special.gammaln(0.5 * n + 1)))


def picard_envelope(L: float, v0_norm: float, T: float, n: int) -> float:
    log = log_picard_envelope(L, v0_norm, T, n)
    return math.inf if log > 709.0 else math.exp(log)


def certified_iterations(L: float, v0_norm: float, T: float, tol: float) -> int:
    """Smallest ``n`` past the envelope's peak with envelope below ``tol``."""
    if v0_norm == 0.0:
        return 1
    log_tol = math.log(tol)
    lo = max(1, int(2.0 * math.pi * L * L * T))  # the envelope decreases beyond here
    if log_picard_envelope(L, v0_norm, T, lo) < log_tol:
        while lo > 1 and log_picard_envelope(L, v0_norm, T, lo - 1) < log_tol:
            lo -= 1
        return lo
    hi = 2 * lo
    while log_picard_envelope(L, v0_norm, T, hi) >= log_tol:
        hi *= 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if log_picard_envelope(L, v0_norm, T, mid) < log_tol:
            hi = mid
        else:
            lo = mid
    return hi


def picard_solve(f: BoundaryFunction, params: ModelParams, config: VolterraConfig = VolterraConfig(mode="picard"),
                 min_iters: int = 0) -> VolterraResult:
    """Fixed-point iteration from ``v0 = r_hat``, checked against the a-priori envelope.

    Iteration stops once the increment falls below ``quad_tol * max(1, |v|)``
    and at least ``min_iters`` iterates were taken. The iteration count the
    envelope itself certifies is reported as ``certified_iterations``.
    """
    if config.mode is not SolveMode.PICARD:
        raise DomainError("picard_solve needs mode='picard'")
    tab = tables_for(params, config)
    v0 = _rhat_series(f, params, config, tab)
    L = measure_L(params, config.T)
    v0_norm = float(np.abs(v0).max())
    v = v0.copy()
    incs, env = [], []
    for it in range(1, config.picard_iters + 1):
        new = v0 + _convolve_kernel(tab, v)
        inc = float(np.abs(new - v).max())
        log_bound = log_picard_envelope(L, v0_norm, config.T, it)
        incs.append(inc)
        env.append(math.inf if log_bound > 709.0 else math.exp(log_bound))
        v = new
        if inc > 0 and math.log(inc) > log_bound + 1e-6:
            raise NumericalError("Picard increment above the a-priori envelope", iteration=it, increment=inc,
                                 bound=env[-1])
        if inc < config.quad_tol * max(1.0, float(np.abs(v).max())) and it >= min_iters:
            break
    else:
        raise NumericalError("Picard iteration did not converge", increments=incs[-3:])
    res = VolterraResult(times=config.times, v=v, traces=boundary_traces(f, params, config, v),
                         increments=incs, envelope=env, L=L)
    res.certified_iterations = certified_iterations(L, v0_norm, config.T, config.quad_tol)
    return res


def boundary_traces(f: BoundaryFunction, params: ModelParams, config: VolterraConfig, v: np.ndarray) -> np.ndarray:
    """``b(t) = e^{tA} c + 2 sigma v(t) + 2 sigma A int_0^t e^{a(t-s)} v(s) ds`` with linear ``v``."""
    a = trace_A(params)
    A = boundary_matrix_A(params)
    sigma = params.sigma
    c = _boundary_excess(f, params)
    h = config.dt
    ah = a * h
    decay = math.exp(ah)
    alpha = math.expm1(ah) / a
    beta = (math.expm1(ah) - ah) / (a * a * h)
    n = v.shape[0]
    b = np.empty((n, 2))
    acc = np.zeros(2)
    u, wu = _gl(16)
    tau = h * u * u
    gamma = float(np.sum(wu * 2.0 * h * u * np.exp(a * (h - tau)) * _start_profile(tau, h)))
    for i in range(n):
        if i > 0:
            acc = decay * acc + alpha * v[i - 1] + beta * (v[i] - v[i - 1])
        if i == 1:
            acc = acc + gamma * (v[1] - v[0])
        b[i] = expm_A(params, i * h) @ c + 2.0 * sigma * v[i] + 2.0 * sigma * (A @ acc)
    return b


# --- interior reconstruction ------------------------------------------------------

def _sine_modes(dt: float) -> int:
    return int(math.sqrt(80.0 / (math.pi**2 * dt))) + 10


def _sine_coefficients(f: BoundaryFunction, mu: float, M: int) -> np.ndarray:
    """``int_0^1 e^{mu y} sin(n pi y) f(y) dy`` for ``n = 1..M``."""
    k = np.pi * np.arange(1, M + 1)
    y, w = interior_rule(f, n_panels=max(64, M), order=10)
    return np.sin(np.outer(k, y)) @ (w * np.exp(mu * y) * f(y))


@lru_cache(maxsize=32)
def _sine_weight_pairings(mu: float, M: int) -> np.ndarray:
    """``2 int_0^1 e^{-mu x} sin(n pi x) w_j(x) dx`` as an ``(M, 2)`` array."""
    k = np.pi * np.arange(1, M + 1)
    x, w = panel_rule(np.linspace(0.0, 1.0, max(64, M) + 1), 10)
    out = 2.0 * np.sin(np.outer(k, x)) @ (w * np.exp(-mu * x) * hat_weights(mu, x)).T
    out.setflags(write=False)
    return out


def _positive_min(times: np.ndarray) -> float:
    pos = times[times > 0]
    return float(pos.min()) if pos.size else 1.0


def absorbed_hat_series(f: BoundaryFunction, mu: float, times) -> np.ndarray:
    """:func:`hat_h` at many times at once, from the sine expansion of ``Q0``."""
    times = np.asarray(times, dtype=float)
    M = _sine_modes(_positive_min(times))
    k = np.pi * np.arange(1, M + 1)
    coef = _sine_coefficients(f, mu, M)
    damp = np.exp(-0.5 * (k[None, :] ** 2 + mu * mu) * times[:, None])
    out = (damp * coef) @ _sine_weight_pairings(mu, M)
    out[times <= 0] = hat_transform(f, mu)
    return out


def absorbed_evolution(f: BoundaryFunction, mu: float, times: np.ndarray, x: np.ndarray) -> np.ndarray:
    """``h_f(t, x) = int Q0(t, x, y) f(y) dy`` from the sine expansion of ``Q0``; row ``t = 0`` is ``f``."""
    times = np.asarray(times, dtype=float)
    x = np.asarray(x, dtype=float)
    M = _sine_modes(_positive_min(times))
    k = np.pi * np.arange(1, M + 1)
    coef = _sine_coefficients(f, mu, M)
    out = np.empty((times.size, x.size))
    pos = times > 0
    tp = times[pos][:, None]
    damp = np.exp(-0.5 * (k[None, :] ** 2 + mu * mu) * tp)
    out[pos] = 2.0 * np.exp(-mu * x)[None, :] * ((damp * coef) @ np.sin(np.outer(k, x)))
    out[~pos] = f(x)
    return out


@lru_cache(maxsize=8)
def _exit_panel_tables(mu: float, dt: float, n: int, x_bytes: bytes) -> tuple[np.ndarray, ...]:
    """Per boundary ``k``: weights ``(D_k, M1_k, C_k)`` of ``q_k(., x)`` against the traces."""
    x = np.frombuffer(x_bytes, dtype=float)
    s = dt * np.arange(n)[:, None]
    out = []
    for k in (0, 1):
        P = np.zeros((n, x.size))
        P1 = np.zeros((n, x.size))
        P[1:] = hitting_integral(k, s[1:], x[None, :], mu)
        P1[1:] = hitting_integral(k, s[1:], x[None, :], mu, moment=1)
        dP = np.diff(P, axis=0)
        N = np.diff(P1, axis=0) - s[:-1] * dP
        M1 = N / dt
        D = dP - M1
        C = np.zeros((n, x.size))
        C[1:] = _start_correction(lambda r, k=k: q_fundamental(k, r, x, mu) if r > 0 else np.zeros(x.size),
                                  dP, N, dt)
        for arr in (D, M1, C):
            arr.setflags(write=False)
        out += [D, M1, C]
    return tuple(out)


def interior_values(f: BoundaryFunction, params: ModelParams, config: VolterraConfig,
                    traces: np.ndarray, x) -> np.ndarray:
    """``u(t_n, x) = h_f(t_n, x) + sum_k int_0^{t_n} q_k(s, x) b_k(t_n - s) ds`` with linear ``b``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    times = config.times
    n = times.size
    h = config.dt
    mu = params.mu
    u = absorbed_evolution(f, mu, times, x)
    tables = _exit_panel_tables(float(mu), float(h), n, np.ascontiguousarray(x, dtype=float).tobytes())
    for k in (0, 1):
        D, M1, C = tables[3 * k : 3 * k + 3]
        u += _lagged_sum(D, M1, traces[:, k][:, None])
        if n > 1:
            u += C * (traces[1, k] - traces[0, k])
    return u


def reconstruct_field(f: BoundaryFunction, params: ModelParams, result: VolterraResult,
                      config: VolterraConfig) -> SpaceTimeField:
    """Interior from the exit-density representation, endpoints from the trace formula."""
    nodes = config.nodes
    values = np.empty((config.times.size, nodes.size))
    values[:, 1:-1] = interior_values(f, params, config, result.traces, nodes[1:-1])
    values[:, 0] = result.traces[:, 0]
    values[:, -1] = result.traces[:, 1]
    values[0] = f.on_nodes(nodes)
    traces = values[:, [0, -1]].copy()
    return SpaceTimeField(times=config.times, nodes=nodes, values=values, boundary_traces=traces,
                          meta={"mu": params.mu, "sigma": params.sigma, "dt": config.dt, "solver": "volterra"})


def solve(f: BoundaryFunction, params: ModelParams, config: VolterraConfig = VolterraConfig()) -> SpaceTimeField:
    """``u_f`` on the configured grid, by march or Picard per ``config.mode``."""
    if config.mode is SolveMode.PICARD:
        res = picard_solve(f, params, config)
    else:
        res = volterra_march(f, params, config)
    return reconstruct_field(f, params, res, config)


# --- finite-difference oracle ------------------------------------------------------

def _fd_operator(params: ModelParams, n: int) -> sparse.csr_matrix:
    h = 1.0 / n
    mu, sigma = params.mu, params.sigma
    rows, cols, vals = [], [], []
    lo = 0.5 / h**2 - 0.5 * mu / h
    mid = -1.0 / h**2
    hi = 0.5 / h**2 + 0.5 * mu / h
    for i in range(1, n):
        rows += [i, i, i]
        cols += [i - 1, i, i + 1]
        vals += [lo, mid, hi]
    # second-order one-sided first derivatives at the ends
    rows += [0, 0, 0, n, n, n]
    cols += [0, 1, 2, n, n - 1, n - 2]
    c = sigma / (2.0 * h)
    vals += [3.0 * c, -4.0 * c, c, 3.0 * c, -4.0 * c, c]
    return sparse.csr_matrix((vals, (rows, cols)), shape=(n + 1, n + 1))


def _cell_averages(f: BoundaryFunction, n: int) -> np.ndarray:
    """Averages of the interior profile over the cells ``[x_i - h/2, x_i + h/2]``."""
    h = 1.0 / n
    edges = (np.arange(1, n + 1) - 0.5) * h
    brk = np.union1d(edges, [b for b in f.breakpoints if edges[0] < b < edges[-1]])
    x, w = panel_rule(brk, 4)
    vals = (w * f(x)).reshape(brk.size - 1, 4).sum(axis=1)
    cell = np.searchsorted(edges, brk[:-1], side="right") - 1
    return np.bincount(cell, vals, minlength=n - 1) / h


def fd_solve(f: BoundaryFunction, params: ModelParams, T: float, n_space: int = 200, dt: float = 1e-3,
             startup_steps: int = 4) -> SpaceTimeField:
    """Crank-Nicolson for the PDE with its dynamic boundary rows, any real ``sigma``.

    The first step is replaced by ``startup_steps`` backward-Euler substeps to
    damp the high modes excited by discontinuous data. Interior nodes start
    from cell averages so that jumps in the profile are second-order consistent.
    """
    if not (dt > 0 and T > 0):
        raise DomainError("dt and T must be positive")
    if n_space < 4:
        raise DomainError("n_space must be at least 4")
    n_t = int(round(T / dt))
    if abs(n_t * dt - T) > 1e-9 * T:
        raise DomainError("T must be an integer multiple of dt")
    nodes = np.linspace(0.0, 1.0, n_space + 1)
    L = _fd_operator(params, n_space).tocsc()
    I = sparse.identity(n_space + 1, format="csc")
    try:
        cn_lhs = splinalg.splu((I - 0.5 * dt * L).tocsc())
        be_lhs = splinalg.splu((I - (dt / startup_steps) * L).tocsc())
    except RuntimeError as exc:
        raise NumericalError("finite-difference system is singular") from exc
    cn_rhs = (I + 0.5 * dt * L).tocsr()
    u = np.empty((n_t + 1, n_space + 1))
    u[0] = f.on_nodes(nodes)
    cur = u[0].copy()
    cur[1:-1] = _cell_averages(f, n_space)
    for i in range(1, n_t + 1):
        if i == 1:
            for _ in range(startup_steps):
                cur = be_lhs.solve(cur)
        else:
            cur = cn_lhs.solve(cn_rhs @ cur)
        if not np.all(np.isfinite(cur)):
            raise NumericalError("finite-difference solution overflowed", step=i)
        u[i] = cur
    return SpaceTimeField(times=dt * np.arange(n_t + 1), nodes=nodes, values=u,
                          boundary_traces=u[:, [0, -1]].copy(),
                          meta={"mu": params.mu, "sigma": params.sigma, "dt": dt, "solver": "crank-nicolson"})
