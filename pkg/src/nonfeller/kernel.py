"""Periodized Gauss kernel and the absorbed drifted Brownian motion on [0, 1].

All functions are vectorized over their array arguments and pure; the only
shared state is the immutable :class:`KernelConfig`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy import integrate, special

from .errors import DomainError, NumericalError

SQRT2PI = math.sqrt(2.0 * math.pi)

Order = Literal["value", "d_dx", "d_dt"]


@dataclass(frozen=True)
class KernelConfig:
    """Truncation of the two series representing ``G``.

    ``spatial_terms`` is the image-sum half width ``K`` (images ``|k| <= K``),
    ``spectral_terms`` the number of cosine modes; the image sum is used for
    ``t <= t_switch`` and the cosine series above it.
    """

    spatial_terms: int = 8
    spectral_terms: int = 64
    t_switch: float = 0.25
    tol: float = 1e-12

    def __post_init__(self):
        if self.spatial_terms < 1 or self.spectral_terms < 1:
            raise DomainError("series truncations must be positive")
        if not (self.t_switch > 0 and self.tol > 0):
            raise DomainError("t_switch and tol must be positive")
        image_bound, spectral_bound = self.truncation_bounds()
        if image_bound > self.tol or spectral_bound > self.tol:
            raise DomainError(
                f"truncation at t_switch={self.t_switch} exceeds tol={self.tol}: "
                f"image term {image_bound:.3e}, spectral term {spectral_bound:.3e}"
            )

    def truncation_bounds(self) -> tuple[float, float]:
        """Size of the first omitted term of each series at ``t_switch``.

        The largest of the value, space- and time-derivative terms is reported.
        """
        t = self.t_switch
        z = 2.0 * self.spatial_terms + 1.0  # nearest omitted image for |x| <= 1
        g = math.exp(-z * z / (2.0 * t)) / math.sqrt(2.0 * math.pi * t)
        image = g * max(1.0, z / t, abs(z * z / t - 1.0) / (2.0 * t))
        n = self.spectral_terms + 1
        e = math.exp(-0.5 * (n * math.pi) ** 2 * t)
        spectral = e * max(1.0, n * math.pi, 0.5 * (n * math.pi) ** 2)
        return image, spectral


DEFAULT_KERNEL = KernelConfig()


def _check_time(t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if np.any(~(t > 0)):
        raise DomainError("time argument must be strictly positive")
    return t


def gauss(t, x):
    """Centered Gaussian density with variance ``t``."""
    t = _check_time(t)
    x = np.asarray(x, dtype=float)
    return (np.exp(-x * x / (2.0 * t)) / np.sqrt(2.0 * np.pi * t))[()]


def _image_series(t, x, order, K):
    xr = x - 2.0 * np.round(0.5 * x)
    k = np.arange(-K, K + 1)
    z = xr[..., None] + 2.0 * k
    tt = t[..., None]
    g = np.exp(-z * z / (2.0 * tt)) / np.sqrt(2.0 * np.pi * tt)
    if order == "value":
        terms = g
    elif order == "d_dx":
        terms = -z / tt * g
    else:
        terms = 0.5 * g * (z * z / (tt * tt) - 1.0 / tt)
    return terms.sum(axis=-1)


def _cosine_series(t, x, order, N):
    n = np.arange(1, N + 1) * np.pi
    tt = t[..., None]
    e = np.exp(-0.5 * n * n * tt)
    phase = n * x[..., None]
    if order == "value":
        return 0.5 + (e * np.cos(phase)).sum(axis=-1)
    if order == "d_dx":
        return -(n * e * np.sin(phase)).sum(axis=-1)
    return -(0.5 * n * n * e * np.cos(phase)).sum(axis=-1)


def periodized_G(t, x, order: Order = "value", config: KernelConfig = DEFAULT_KERNEL):
    """``G(t, x) = sum_k g(t, x + 2k)`` or one of its first derivatives.

    Parameters
    ----------
    t, x : array_like
        Broadcast together; ``t`` must be positive.
    order : {"value", "d_dx", "d_dt"}
        Which quantity to return. Derivatives are summed term by term in the
        active series.
    config : KernelConfig
        Truncation and representation crossover.
    """
    if order not in ("value", "d_dx", "d_dt"):
        raise ValueError(f"unknown order {order!r}")
    t = _check_time(t)
    t, x = np.broadcast_arrays(t, np.asarray(x, dtype=float))
    out = np.empty(t.shape)
    small = t <= config.t_switch
    if small.any():
        out[small] = _image_series(t[small], x[small], order, config.spatial_terms)
    if (~small).any():
        out[~small] = _cosine_series(t[~small], x[~small], order, config.spectral_terms)
    return out[()]


def q0_fundamental(t, x, mu: float, config: KernelConfig = DEFAULT_KERNEL):
    """Density in ``t`` of exiting (0, 1) through 0 before 1, started at ``x``."""
    t = _check_time(t)
    x = np.asarray(x, dtype=float)
    dG = periodized_G(t, x, "d_dx", config)
    return (-np.exp(-mu * x - 0.5 * mu * mu * t) * dG)[()]


def q1_fundamental(t, x, mu: float, config: KernelConfig = DEFAULT_KERNEL):
    """Density in ``t`` of exiting (0, 1) through 1 before 0, started at ``x``."""
    t = _check_time(t)
    x = np.asarray(x, dtype=float)
    dG = periodized_G(t, 1.0 - x, "d_dx", config)
    return (-np.exp(mu * (1.0 - x) - 0.5 * mu * mu * t) * dG)[()]


def q_fundamental(k: int, t, x, mu: float, config: KernelConfig = DEFAULT_KERNEL):
    if k == 0:
        return q0_fundamental(t, x, mu, config)
    if k == 1:
        return q1_fundamental(t, x, mu, config)
    raise DomainError("boundary index must be 0 or 1")


def q0_absorbed_kernel(t, x, y, mu: float, config: KernelConfig = DEFAULT_KERNEL):
    """Transition density of drifted Brownian motion killed on leaving (0, 1)."""
    t = _check_time(t)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    images = periodized_G(t, y - x, "value", config) - periodized_G(t, y + x, "value", config)
    return (np.exp(mu * (y - x) - 0.5 * mu * mu * t) * images)[()]


# --- closed-form time integrals of the exit densities -----------------------

def _first_passage_cdf(t, z, nu):
    """int_0^t (z/s) g(s, z) exp(-nu^2 s / 2) ds, odd in z."""
    a = np.abs(z)
    rt = np.sqrt(t)
    with np.errstate(divide="ignore"):
        val = np.exp(-nu * a + special.log_ndtr((nu * t - a) / rt)) + np.exp(
            nu * a + special.log_ndtr((-nu * t - a) / rt)
        )
    return np.sign(z) * val


def _gauss_time_integral(t, z, nu):
    """int_0^t g(s, z) exp(-nu^2 s / 2) ds, even in z."""
    a = np.abs(z)
    rt = np.sqrt(t)
    if nu < 1e-6:
        return 2.0 * rt * np.exp(-a * a / (2.0 * t)) / SQRT2PI - a * special.erfc(a / (math.sqrt(2.0) * rt))
    with np.errstate(divide="ignore"):
        first = np.exp(-nu * a + special.log_ndtr((nu * t - a) / rt))
        second = np.exp(nu * a + special.log_ndtr((-nu * t - a) / rt))
    return (first - second) / nu


def _n_images(t_max: float, K: int) -> int:
    return max(K, int(math.ceil(5.0 * math.sqrt(t_max))) + 2)


def hitting_integral(
    k: int,
    t,
    x,
    mu: float,
    rate: float = 0.0,
    moment: int = 0,
    config: KernelConfig = DEFAULT_KERNEL,
):
    """``int_0^t s**moment * q_k(s, x) * exp(-rate * s) ds`` in closed form.

    The image expansion of ``G'`` is integrated term by term against the
    drifted first-passage law, so the result is exact up to image truncation
    (the number of images grows with ``sqrt(t)``). ``moment`` is 0 or 1 and
    ``mu**2 + 2*rate`` must be nonnegative.
    """
    if k not in (0, 1):
        raise DomainError("boundary index must be 0 or 1")
    if moment not in (0, 1):
        raise ValueError("moment must be 0 or 1")
    t = _check_time(t)
    x = np.asarray(x, dtype=float)
    t, x = np.broadcast_arrays(t, x)
    if k == 1:
        x = 1.0 - x
        mu = -mu
    nu2 = mu * mu + 2.0 * rate
    if nu2 < 0:
        raise DomainError("mu**2 + 2*rate must be nonnegative")
    nu = math.sqrt(nu2)
    K = _n_images(float(t.max()) if t.size else 1.0, config.spatial_terms)
    z = x[..., None] + 2.0 * np.arange(-K, K + 1)
    tt = t[..., None]
    if moment == 0:
        terms = _first_passage_cdf(tt, z, nu)
    else:
        terms = z * _gauss_time_integral(tt, z, nu)
    return (np.exp(-mu * x) * terms.sum(axis=-1))[()]


def mass_identity_residual(t: float, x: float, mu: float, config: KernelConfig = DEFAULT_KERNEL) -> float:
    """``|int Q0(t,x,y) dy + int_0^t q0 + int_0^t q1 - 1|`` by adaptive quadrature.

    The exit-density integrals use ``tau = s**2`` to remove the boundary
    layer at ``tau = 0``.
    """
    t = float(_check_time(t))
    tol = 1e-13
    inner = [p for p in (x,) if 0.0 < p < 1.0]
    interior, e1 = integrate.quad(
        lambda y: float(q0_absorbed_kernel(t, x, y, mu, config)),
        0.0, 1.0, points=inner or None, epsabs=tol, epsrel=tol, limit=400,
    )
    exits = 0.0
    err = e1
    for k in (0, 1):
        val, e = integrate.quad(
            lambda s: 2.0 * s * float(q_fundamental(k, s * s, x, mu, config)) if s > 0 else 0.0,
            0.0, math.sqrt(t), epsabs=tol, epsrel=tol, limit=400,
        )
        exits += val
        err += e
    if err > 1e-10:
        raise NumericalError("mass identity quadrature did not converge", estimate=err)
    return abs(interior + exits - 1.0)


def q_envelope_constant(mu: float, k: int = 0, n_t: int = 200, n_x: int = 200,
                        t_range: tuple[float, float] = (1e-4, 20.0),
                        config: KernelConfig = DEFAULT_KERNEL) -> float:
    """Smallest ``C`` with ``q_k(t,x) <= C d/t g(t ^ 1, d)`` on a scan grid.

    Here ``d`` is the distance from ``x`` to boundary ``k``.
    """
    t = np.geomspace(*t_range, n_t)[:, None]
    x = np.linspace(0.0, 1.0, n_x + 2)[1:-1][None, :]
    d = x if k == 0 else 1.0 - x
    q = q_fundamental(k, t, x, mu, config)
    env = d / t * gauss(np.minimum(t, 1.0), d)
    # both sides underflow together deep in the Gaussian tail
    ok = env > 1e-250
    return float(np.max(q[ok] / env[ok]))
