from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from nonfeller.errors import DomainError
from nonfeller.kernel import (
    KernelConfig,
    gauss,
    hitting_integral,
    mass_identity_residual,
    periodized_G,
    q0_absorbed_kernel,
    q0_fundamental,
    q1_fundamental,
    q_envelope_constant,
)


def test_gauss_values():
    assert gauss(1.0, 0.0) == pytest.approx(0.3989423, abs=1e-7)
    assert gauss(0.25, 0.5) == pytest.approx(0.4839414, abs=1e-7)
    with pytest.raises(DomainError):
        gauss(0.0, 0.1)


@given(st.floats(1e-3, 5.0), st.floats(-3.0, 3.0))
def test_gauss_even(t, x):
    assert gauss(t, x) == gauss(t, -x)


def test_config_checks_truncation():
    with pytest.raises(DomainError):
        KernelConfig(spectral_terms=2)
    with pytest.raises(DomainError):
        KernelConfig(t_switch=-1.0)
    a, b = KernelConfig().truncation_bounds()
    assert a <= 1e-12 and b <= 1e-12


def test_G_nearest_image_dominates():
    assert abs(periodized_G(0.001, 0.5) - gauss(0.001, 0.5)) < 1e-30


@given(st.floats(1e-3, 3.0), st.floats(-1.0, 1.0))
@settings(max_examples=60)
def test_G_even_periodic(t, x):
    g = periodized_G(t, x)
    assert periodized_G(t, x + 2.0) == pytest.approx(g, rel=1e-10, abs=1e-14)
    assert periodized_G(t, -x) == pytest.approx(g, rel=1e-12, abs=1e-14)
    assert g > 0


def test_G_derivative_at_zero_and_sign():
    t = np.geomspace(1e-3, 3, 30)
    assert np.all(np.abs(periodized_G(t, 0.0, "d_dx")) < 1e-12)
    x = np.linspace(0, 1, 41)
    assert np.all(periodized_G(t[:, None], x[None, :], "d_dx") <= 1e-14)


@pytest.mark.parametrize("t", [0.01, 0.2, 0.25, 0.3, 1.0])
@pytest.mark.parametrize("x", [0.1, 0.5, 0.9])
def test_G_heat_equation(t, x):
    h = 0.005 * math.sqrt(t)
    G = lambda z: periodized_G(t, z)
    second = (-G(x + 2 * h) + 16 * G(x + h) - 30 * G(x) + 16 * G(x - h) - G(x - 2 * h)) / (12 * h * h)
    assert periodized_G(t, x, "d_dt") == pytest.approx(0.5 * second, abs=1e-6 * max(1, abs(second)))


def test_G_unit_mass_and_representation_consistency():
    for t in (0.05, 0.5, 2.0):
        m, _ = integrate.quad(lambda x: periodized_G(t, x), 0, 2, epsabs=1e-13, limit=200)
        assert m == pytest.approx(1.0, abs=1e-10)
    small = KernelConfig(t_switch=0.2)
    large = KernelConfig(t_switch=0.3)
    x = np.linspace(-1, 1, 21)
    for t in (0.22, 0.25, 0.28):
        for order in ("value", "d_dx", "d_dt"):
            assert np.allclose(periodized_G(t, x, order, large), periodized_G(t, x, order, small), atol=2e-12)


def test_q_nonnegative_and_envelope():
    t = np.geomspace(1e-3, 5, 20)[:, None]
    x = np.linspace(0.025, 0.975, 20)[None, :]
    for mu in (0.0, 1.0, -1.0):
        C = q_envelope_constant(mu)
        assert np.isfinite(C)
        q0 = q0_fundamental(t, x, mu)
        q1 = q1_fundamental(t, x, mu)
        assert q0.min() >= 0 and q1.min() >= 0
        assert np.all(q0 <= C * 1.001 * x / t * gauss(np.minimum(t, 1), x) + 1e-300)
        C1 = q_envelope_constant(mu, k=1)
        assert np.all(q1 <= C1 * 1.001 * (1 - x) / t * gauss(np.minimum(t, 1), 1 - x) + 1e-300)


@pytest.mark.parametrize("x", [0.2, 0.5, 0.8])
def test_gamblers_ruin(x):
    quad = lambda f: integrate.quad(lambda s: 2 * s * f(s * s), 0, math.sqrt(50), epsabs=1e-12, limit=400)[0]
    assert quad(lambda s: q0_fundamental(s, x, 0.0)) == pytest.approx(1 - x, abs=1e-6)
    ruin = (math.exp(-2 * x) - math.exp(-2)) / (1 - math.exp(-2))
    assert quad(lambda s: q0_fundamental(s, x, 1.0)) == pytest.approx(ruin, abs=1e-6)


def test_absorbed_kernel_vanishes_on_boundary_and_bounded():
    for t in (0.01, 0.3, 2.0):
        for x in (0.1, 0.6):
            assert abs(q0_absorbed_kernel(t, x, 0.0, 1.0)) < 1e-12
            assert abs(q0_absorbed_kernel(t, x, 1.0, 1.0)) < 1e-12
    assert 0 <= q0_absorbed_kernel(0.5, 0.3, 0.6, 0.0) <= gauss(0.5, 0.3)


def test_chapman_kolmogorov_random_triples():
    rng = np.random.default_rng(7)
    for _ in range(10):
        s, t = rng.uniform(0.05, 0.6, 2)
        x, y = rng.uniform(0.05, 0.95, 2)
        mu = rng.choice([0.0, 1.0, -1.0])
        lhs, _ = integrate.quad(
            lambda z: q0_absorbed_kernel(s, x, z, mu) * q0_absorbed_kernel(t, z, y, mu),
            0, 1, epsabs=1e-12, limit=200,
        )
        assert lhs == pytest.approx(q0_absorbed_kernel(s + t, x, y, mu), abs=1e-6)
    lhs, _ = integrate.quad(lambda z: q0_absorbed_kernel(0.2, 0.4, z, 0.0) * q0_absorbed_kernel(0.3, z, 0.7, 0.0), 0, 1)
    assert lhs == pytest.approx(q0_absorbed_kernel(0.5, 0.4, 0.7, 0.0), abs=1e-6)


@pytest.mark.parametrize("mu", [0.0, 1.0, -1.0])
def test_mass_identity_grid(mu):
    for t in (1e-4, 0.01, 0.5, 1.0, 2.0):
        for x in (0.1, 0.3, 0.5, 0.7, 0.9):
            assert mass_identity_residual(t, x, mu) < 1e-8


@pytest.mark.parametrize("k", [0, 1])
@pytest.mark.parametrize("mu", [0.0, 1.3, -0.7])
@pytest.mark.parametrize("rate", [0.0, 2.0])
def test_hitting_integral_against_quadrature(k, mu, rate):
    q = q0_fundamental if k == 0 else q1_fundamental
    for t in (1e-3, 0.05, 0.7, 3.0):
        for x in (0.05, 0.5, 0.93):
            for m in (0, 1):
                ref, _ = integrate.quad(
                    lambda s: 2 * s * (s * s) ** m * q(s * s, x, mu) * math.exp(-rate * s * s),
                    0, math.sqrt(t), epsabs=1e-14, epsrel=1e-12, limit=400,
                )
                got = hitting_integral(k, t, x, mu, rate=rate, moment=m)
                assert got == pytest.approx(ref, abs=1e-11, rel=1e-9)
