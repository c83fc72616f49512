"""Monte Carlo for reflected Brownian motion with drift and its time change.

``X`` is reflected on ``[0, 1]`` with regulators ``L0, L1`` (the Skorohod
pushes), ``Phi_t = t - (L0 + L1)/sigma`` and ``Y_t = X(zeta_t)`` where
``zeta_t = inf{tau : Phi_tau > t}``.

Each step draws the free endpoint ``x + mu h + sqrt(h) xi`` and, near a wall,
the extremum of the Brownian bridge between the two endpoints. The regulator
increment ``max(0, -min)`` (resp. ``max(0, max - 1)``) is then the exact
one-sided Skorohod push over the step, so the step size is limited only by
the chance of touching both walls in one step and by how precisely the
crossing ``Phi > target`` is located. Steps are therefore ``max(dt, gap)``
capped at ``h_max``, with ``gap`` the distance of ``Phi`` to its target:
``Phi`` rises at most at unit rate, so no crossing is missed. The plain
folding scheme is kept as ``scheme="fold"`` for comparison.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from numba import njit

from .errors import DomainError
from .riccati import ModelParams, Regime, RiccatiSolution, eval_J, solve_riccati
from ._quad import panel_rule

EXIT, DEAD, CENSORED = 0, 1, 2
_NEAR = 6.0  # bridge extremum drawn when an endpoint is within _NEAR*sqrt(h) of a wall


@dataclass(frozen=True)
class SimConfig:
    """Discretization and sampling controls.

    ``dt`` is the smallest step (used when ``Phi`` is within ``dt`` of its
    target); ``h_max`` caps steps elsewhere.
    """

    dt: float = 1e-5
    t_max: float = 200.0
    phi_floor: float = -25.0
    n_paths: int = 100_000
    seed: int = 0
    n_bins: int = 20
    h_max: float = 1e-2
    scheme: str = "bridge"

    def __post_init__(self):
        if not (0.0 < self.dt <= 1e-3):
            raise DomainError("dt must lie in (0, 1e-3]")
        if not self.h_max >= self.dt:
            raise DomainError("h_max must be at least dt")
        if not self.t_max > 0:
            raise DomainError("t_max must be positive")
        if not self.phi_floor <= -5.0:
            raise DomainError("phi_floor must be <= -5")
        if self.n_paths < 1 or self.n_bins < 1:
            raise DomainError("n_paths and n_bins must be positive")
        if self.scheme not in ("bridge", "fold"):
            raise DomainError("scheme must be 'bridge' or 'fold'")

    @property
    def bin_edges(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n_bins + 1)

    def path_seeds(self, n: int | None = None, stream: int = 0) -> np.ndarray:
        ss = np.random.SeedSequence([self.seed & (2**63 - 1), stream])
        return ss.generate_state(self.n_paths if n is None else n, dtype=np.uint32).astype(np.int64)


@dataclass
class PathState:
    """Single path bookkeeping; ``phi`` always equals ``clock - (l0 + l1)/sigma``."""

    x: float
    sigma: float
    l0: float = 0.0
    l1: float = 0.0
    clock: float = 0.0
    phi: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.x <= 1.0:
            raise DomainError("x must lie in [0, 1]")
        if self.sigma <= 0:
            raise DomainError("sigma must be positive")
        self.phi = self.clock - (self.l0 + self.l1) / self.sigma


# --- kernels ---------------------------------------------------------------------

@njit(cache=True)
def _fold(x):
    p0 = 0.0
    p1 = 0.0
    while x < 0.0 or x > 1.0:
        if x < 0.0:
            p0 -= 2.0 * x
            x = -x
        else:
            p1 += 2.0 * (x - 1.0)
            x = 2.0 - x
    return x, p0, p1


def fold(x_raw: float) -> tuple[float, float, float]:
    """Reflect into ``[0, 1]``; pushes satisfy ``x = x_raw + push0 - push1``."""
    return _fold(float(x_raw))


@njit(cache=True)
def _advance(x, mu, h, z, bridge):
    """One step: new position and regulator increments (draws uniforms when needed)."""
    sh = math.sqrt(h)
    xr = x + mu * h + sh * z
    p0 = 0.0
    p1 = 0.0
    if bridge:
        d2 = (xr - x) * (xr - x)
        if min(x, xr) < _NEAR * sh:
            lo = 0.5 * (x + xr - math.sqrt(d2 - 2.0 * h * math.log(1.0 - np.random.random())))
            if lo < 0.0:
                p0 = -lo
        if max(x, xr) > 1.0 - _NEAR * sh:
            hi = 0.5 * (x + xr + math.sqrt(d2 - 2.0 * h * math.log(1.0 - np.random.random())))
            if hi > 1.0:
                p1 = hi - 1.0
        xr = xr + p0 - p1
    if xr < 0.0 or xr > 1.0:
        xr, q0, q1 = _fold(xr)
        p0 += q0
        p1 += q1
    return xr, p0, p1


@njit(cache=True)
def _run_paths(x0, seeds, mu, sigma, target, floor, dt, h_max, t_max, bridge, checkpoints):
    """Run paths until ``phi > target`` (exit), ``phi < floor`` (dead) or ``t_max``.

    Returns status, final (x, phi, clock, l0, l1) and (x, phi) stopped at each
    checkpoint clock time.
    """
    n = seeds.shape[0]
    m = checkpoints.shape[0]
    status = np.full(n, CENSORED, dtype=np.int8)
    out = np.empty((n, 5))
    snap_x = np.empty((n, m))
    snap_phi = np.empty((n, m))
    inv_s = 1.0 / sigma
    for i in range(n):
        np.random.seed(seeds[i])
        x = x0[i]
        l0 = 0.0
        l1 = 0.0
        clock = 0.0
        phi = 0.0
        c = 0
        while c < m and checkpoints[c] <= 0.0:
            snap_x[i, c] = x
            snap_phi[i, c] = phi
            c += 1
        while clock < t_max:
            h = min(h_max, max(dt, target - phi), t_max - clock)
            if c < m:
                h = min(h, checkpoints[c] - clock)
            if h <= 0.0:
                h = dt
            z = np.random.standard_normal()
            if bridge:
                x, p0, p1 = _advance(x, mu, h, z, True)
            else:
                x, p0, p1 = _advance(x, mu, h, z, False)
            l0 += p0
            l1 += p1
            clock += h
            phi = clock - (l0 + l1) * inv_s
            while c < m and checkpoints[c] <= clock + 1e-12:
                snap_x[i, c] = x
                snap_phi[i, c] = phi
                c += 1
            if phi > target:
                status[i] = EXIT
                break
            if phi < floor:
                status[i] = DEAD
                break
        while c < m:
            snap_x[i, c] = x
            snap_phi[i, c] = phi
            c += 1
        out[i, 0] = x
        out[i, 1] = phi
        out[i, 2] = clock
        out[i, 3] = l0
        out[i, 4] = l1
    return status, out, snap_x, snap_phi


@njit(cache=True)
def _occupation(x0, seeds, mu, h, t_max, burn_in, n_bins, bridge):
    hist = np.zeros(n_bins)
    for i in range(seeds.shape[0]):
        np.random.seed(seeds[i])
        x = x0[i]
        clock = 0.0
        while clock < t_max:
            if clock >= burn_in:
                b = min(int(x * n_bins), n_bins - 1)
                hist[b] += h
            z = np.random.standard_normal()
            x, p0, p1 = _advance(x, mu, h, z, bridge)
            clock += h
    return hist


@njit(cache=True)
def _one_step_pushes(x0, mu, dt, n, seed, bridge):
    np.random.seed(seed)
    out = np.empty((n, 3))
    for i in range(n):
        z = np.random.standard_normal()
        out[i, 0], out[i, 1], out[i, 2] = _advance(x0, mu, dt, z, bridge)
    return out


def one_step_pushes(x0: float, mu: float, dt: float, n: int, seed: int = 0,
                    scheme: str = "bridge") -> np.ndarray:
    """``n`` independent single steps from ``x0``: columns ``(x, push0, push1)``."""
    return _one_step_pushes(float(x0), float(mu), float(dt), int(n), int(seed) & 0xFFFFFFFF,
                            scheme == "bridge")


def step(state: PathState, mu: float, dt: float, normal_draw: float,
         scheme: str = "bridge") -> PathState:
    """Advance a single path by ``dt`` (in place) and return it."""
    x, p0, p1 = _advance(state.x, mu, dt, float(normal_draw), scheme == "bridge")
    state.x = x
    state.l0 += p0
    state.l1 += p1
    state.clock += dt
    state.phi = state.clock - (state.l0 + state.l1) / state.sigma
    return state


# --- results --------------------------------------------------------------------------

@dataclass
class ExitStats:
    k: int
    mu: float
    sigma: float
    n_paths: int
    p_finite: float
    p_finite_se: float
    exit_hist: list[int]
    bin_edges: list[float]
    model_density: list[float]
    hist_l1: float
    n_censored: int
    inconclusive: bool
    mass: float
    phi_slope: float | None = None
    phi_slope_se: float | None = None
    note: str = ""
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, path=None, **extra) -> str:
        text = json.dumps({**self.to_dict(), **extra}, indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
        return text

    def hist_to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_left", "bin_right", "count", "model_density"])
            e = self.bin_edges
            for i, c in enumerate(self.exit_hist):
                w.writerow([repr(e[i]), repr(e[i + 1]), c, repr(self.model_density[i])])


def binned_exit_density(sol: RiccatiSolution, k: int, edges: np.ndarray) -> np.ndarray:
    """Probability of each bin under ``J_k / <1, J_k>``."""
    x, w = panel_rule(edges, 16)
    vals = w * eval_J(sol, x)[:, k]
    per_bin = vals.reshape(len(edges) - 1, -1).sum(axis=1)
    return per_bin / per_bin.sum()


def _check_sigma(params: ModelParams) -> None:
    if params.sigma <= 0:
        raise DomainError("simulation requires sigma > 0")


def run_exit(k: int, params: ModelParams, config: SimConfig = SimConfig(),
             sol: RiccatiSolution | None = None) -> ExitStats:
    """Estimate the law of ``X(zeta_0)`` on ``{zeta_0 < inf}`` from ``X_0 = k``."""
    _check_sigma(params)
    if k not in (0, 1):
        raise DomainError("k must be 0 or 1")
    sol = sol or solve_riccati(params)
    seeds = config.path_seeds(stream=1 + k)
    x0 = np.full(config.n_paths, float(k))
    status, out, _, _ = _run_paths(x0, seeds, params.mu, params.sigma, 0.0, config.phi_floor,
                                   config.dt, config.h_max, config.t_max,
                                   config.scheme == "bridge", np.empty(0))
    n_exit = int(np.sum(status == EXIT))
    n_cens = int(np.sum(status == CENSORED))
    n_class = config.n_paths - n_cens
    p = n_exit / max(n_class, 1)
    se = math.sqrt(p * (1 - p) / max(n_class, 1))
    edges = config.bin_edges
    hist, _ = np.histogram(out[status == EXIT, 0], bins=edges)
    model = binned_exit_density(sol, k, edges)
    l1 = float(np.abs(hist / max(n_exit, 1) - model).sum())
    note = ""
    if sol.regime is Regime.CRITICAL:
        note = "critical regime: Phi oscillates, exit law not classifiable"
    return ExitStats(k=k, mu=params.mu, sigma=params.sigma, n_paths=config.n_paths, p_finite=p,
                     p_finite_se=se, exit_hist=hist.tolist(), bin_edges=edges.tolist(),
                     model_density=model.tolist(), hist_l1=l1, n_censored=n_cens,
                     inconclusive=(n_cens / config.n_paths >= 0.01) or sol.regime is Regime.CRITICAL,
                     mass=float(sol.masses[k]), note=note, config=asdict(config))


def sample_stationary(mu: float, u: np.ndarray) -> np.ndarray:
    """Inverse CDF of ``nu(dy) = 2 mu e^{2 mu y}/(e^{2 mu} - 1) dy``."""
    if abs(mu) < 1e-12:
        return u
    return np.log1p(u * np.expm1(2 * mu)) / (2 * mu)


def stationary_density(mu: float, y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if abs(mu) < 1e-12:
        return np.ones_like(y)
    return 2 * mu * np.exp(2 * mu * y) / np.expm1(2 * mu)


@dataclass(frozen=True)
class SlopeEstimate:
    slope: float
    se: float
    T: float
    n_paths: int

    def to_dict(self) -> dict:
        return asdict(self)


def phi_slope(params: ModelParams, config: SimConfig, x0: float | None = None) -> SlopeEstimate:
    """Average of ``Phi_T / T`` at ``T = t_max``; ``x0=None`` starts from stationarity."""
    _check_sigma(params)
    n = config.n_paths
    if x0 is None:
        rng = np.random.default_rng(np.random.SeedSequence([config.seed & (2**63 - 1), 7]))
        starts = sample_stationary(params.mu, rng.random(n))
    else:
        starts = np.full(n, float(x0))
    seeds = config.path_seeds(stream=3)
    _, out, _, _ = _run_paths(starts, seeds, params.mu, params.sigma, math.inf, -math.inf,
                              config.dt, config.h_max, config.t_max,
                              config.scheme == "bridge", np.empty(0))
    r = out[:, 1] / config.t_max
    se = float(r.std(ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    return SlopeEstimate(float(r.mean()), se, config.t_max, n)


@dataclass(frozen=True)
class YSample:
    """Positions of ``Y_T`` (NaN in the graveyard) and per-path status."""

    positions: np.ndarray
    status: np.ndarray

    @property
    def alive(self) -> np.ndarray:
        return self.status == EXIT

    @property
    def censored_fraction(self) -> float:
        return float(np.mean(self.status == CENSORED))

    @property
    def inconclusive(self) -> bool:
        return self.censored_fraction >= 0.01

    def mean_of(self, f) -> tuple[float, float]:
        """Mean and standard error of ``f(Y_T) 1{alive}``."""
        vals = np.zeros(self.positions.shape)
        a = self.alive
        vals[a] = f(self.positions[a])
        n = vals.size
        return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n)) if n > 1 else math.inf


def sample_Y(x0: float, T: float, params: ModelParams, config: SimConfig) -> YSample:
    """Draw ``Y_T = X(zeta_T)`` from ``X_0 = x0``; dead paths are ``Phi < T + phi_floor``."""
    _check_sigma(params)
    if not 0.0 <= x0 <= 1.0 or T < 0:
        raise DomainError("need x0 in [0, 1] and T >= 0")
    n = config.n_paths
    if T == 0.0 and 0.0 < x0 < 1.0:
        return YSample(np.full(n, x0), np.full(n, EXIT, dtype=np.int8))
    status, out, _, _ = _run_paths(np.full(n, float(x0)), config.path_seeds(stream=4),
                                   params.mu, params.sigma, T, T + config.phi_floor,
                                   config.dt, config.h_max, config.t_max,
                                   config.scheme == "bridge", np.empty(0))
    pos = np.where(status == EXIT, out[:, 0], np.nan)
    return YSample(pos, status)


def stopped_states(x0: float, T: float, params: ModelParams, config: SimConfig,
                   checkpoints) -> tuple[np.ndarray, np.ndarray]:
    """``(X, Phi)`` at clock times ``t ^ zeta_T`` for each checkpoint ``t``."""
    _check_sigma(params)
    cps = np.sort(np.asarray(checkpoints, dtype=float))
    n = config.n_paths
    _, _, sx, sp = _run_paths(np.full(n, float(x0)), config.path_seeds(stream=5),
                              params.mu, params.sigma, T, T + config.phi_floor,
                              config.dt, config.h_max, min(config.t_max, cps[-1] + config.dt),
                              config.scheme == "bridge", cps)
    return sx, sp


@dataclass(frozen=True)
class OccupationCheck:
    edges: np.ndarray
    density: np.ndarray
    model: np.ndarray
    l1: float

    def to_dict(self) -> dict:
        return {"edges": self.edges.tolist(), "density": self.density.tolist(),
                "model": self.model.tolist(), "l1": self.l1}


def occupation_check(params: ModelParams, config: SimConfig, burn_in: float = 1.0) -> OccupationCheck:
    """Time-averaged occupation of ``X`` on ``[burn_in, t_max]`` against ``nu``.

    ``l1`` is the L1 distance between the two bin-probability vectors.
    """
    edges = config.bin_edges
    h = config.h_max
    seeds = config.path_seeds(stream=6)
    x0 = np.full(config.n_paths, 0.5)
    hist = _occupation(x0, seeds, params.mu, h, config.t_max, burn_in, config.n_bins,
                       config.scheme == "bridge")
    prob = hist / hist.sum()
    mu = params.mu
    if abs(mu) < 1e-12:
        model = np.diff(edges)
    else:
        model = np.diff(np.expm1(2 * mu * edges) / np.expm1(2 * mu))
    return OccupationCheck(edges, prob / np.diff(edges), model / np.diff(edges),
                           float(np.abs(prob - model).sum()))
