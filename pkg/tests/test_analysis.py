from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nonfeller.analysis import (
    Verdict,
    classify_nonneg,
    closed_forms,
    decompose,
    defect,
    f_in_kernel,
    rate_fit,
    pair_with_J,
)
from nonfeller.errors import DomainError
from nonfeller.riccati import ModelParams, Regime, solve_riccati
from nonfeller.semigroup import BoundaryFunction, SpaceTimeField, VolterraConfig, solve

COTH1 = 1.0 / math.tanh(1.0)
SWEEP = [(mu, s) for mu in (0.0, 1.0, -1.0) for s in (0.5, 1.0, 2.0, COTH1)]


def _sol(mu, sigma):
    return solve_riccati(ModelParams(mu, sigma))


# --- defect and decomposition --------------------------------------------------------

def test_defect_of_zero():
    sol = _sol(1.0, 2.0)
    d = defect(BoundaryFunction.zero(), sol)
    dec = decompose(d, sol)
    assert np.all(d == 0.0) and dec.a0 == 0.0 and dec.a1 == 0.0


@pytest.mark.parametrize("mu,sigma", [(0.0, 2.0), (1.0, 0.5), (-1.0, COTH1)])
def test_kernel_construction_has_zero_defect(mu, sigma):
    sol = _sol(mu, sigma)
    f = f_in_kernel(lambda x: np.exp(-x) * np.sin(5 * x) + 1.0, sol)
    assert np.abs(defect(f, sol)).max() < 1e-12


def test_subcritical_constant_defect_is_V0_aligned():
    sol = _sol(1.0, 0.5)
    d = defect(BoundaryFunction.constant(1.0), sol)
    np.testing.assert_allclose(d, 1.0 - sol.masses, atol=1e-12)
    dec = decompose(d, sol)
    assert abs(dec.a1) < 1e-10 and dec.a0 > 0


@settings(max_examples=50, deadline=None)
@given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3))
def test_decomposition_reconstructs(d0, d1):
    sol = _sol(1.0, 2.0)
    dec = decompose([d0, d1], sol)
    np.testing.assert_allclose(dec.a0 * sol.V0 + dec.a1 * sol.V1, [d0, d1], atol=1e-10 * (1 + abs(d0) + abs(d1)))


def test_pairing_respects_breakpoints():
    sol = _sol(0.0, 1.0)
    f = BoundaryFunction(lambda x: np.where(x < 0.3, 1.0, 0.0), 0.0, 0.0, (0.3,))
    x = np.linspace(0, 0.3, 20001)
    J = np.array([np.trapezoid(sol_J, x) for sol_J in _J_cols(sol, x)])
    np.testing.assert_allclose(pair_with_J(f, sol), J, rtol=1e-7)


def _J_cols(sol, x):
    from nonfeller.riccati import eval_J

    return eval_J(sol, x).T


# --- closed forms -----------------------------------------------------------------------

def test_h0_critical_zero_drift_value():
    cf = closed_forms(_sol(0.0, 1.0))
    assert abs(cf.h(0, 0.5) - 0.75) < 1e-15


@pytest.mark.parametrize("mu,sigma", SWEEP)
def test_h1_eigen_residuals(mu, sigma):
    sol = _sol(mu, sigma)
    cf = closed_forms(sol)
    x = np.linspace(0, 1, 1001)
    h, d1, d2 = cf.h(1, x), cf.h(1, x, 1), cf.h(1, x, 2)
    scale = max(1.0, np.abs(h).max())
    assert np.abs(0.5 * d2 + mu * d1 + sol.lambda1 * h).max() < 1e-8 * scale
    assert abs(-sol.lambda1 * h[0] + sigma * d1[0]) < 1e-8 * scale
    assert abs(-sol.lambda1 * h[-1] - sigma * d1[-1]) < 1e-8 * scale


@pytest.mark.parametrize("mu,sigma", SWEEP)
def test_h0_solves_its_growth_mode(mu, sigma):
    sol = _sol(mu, sigma)
    cf = closed_forms(sol)
    x = np.linspace(0, 1, 1001)
    h, d1, d2 = cf.h(0, x), cf.h(0, x, 1), cf.h(0, x, 2)
    # u0 = e^{-t lam0} h0, t + h0 or 1: the time derivative at t = 0 is -lam0 h0, 1 or 0
    rate = {Regime.SUPERCRITICAL: -sol.lambda0 * h, Regime.CRITICAL: np.ones_like(h),
            Regime.SUBCRITICAL: np.zeros_like(h)}[sol.regime]
    scale = max(1.0, np.abs(h).max())
    assert np.abs(0.5 * d2 + mu * d1 - rate).max() < 1e-8 * scale
    assert abs(rate[0] + sigma * d1[0]) < 1e-8 * scale
    assert abs(rate[-1] - sigma * d1[-1]) < 1e-8 * scale


@pytest.mark.parametrize("mu", [1.0, -1.0])
def test_critical_branch_boundary_identity(mu):
    sigma = mu / math.tanh(mu)
    cf = closed_forms(_sol(mu, sigma))
    assert abs(sigma * math.tanh(mu) / mu - 1.0) < 1e-15
    assert abs(-sigma * cf.h(0, 0.0, 1) - 1.0) < 1e-10
    assert abs(sigma * cf.h(0, 1.0, 1) - 1.0) < 1e-10


@pytest.mark.parametrize("mu,sigma", SWEEP)
def test_normalizers_and_profiles(mu, sigma):
    sol = _sol(mu, sigma)
    cf = closed_forms(sol)
    assert cf.K0 > 0 and cf.K1 != 0
    for k, V in ((0, sol.V0), (1, sol.V1)):
        np.testing.assert_allclose(
            (cf.K0 if k == 0 else cf.K1) * defect(cf.h_function(k), sol), V, atol=1e-6)
    x = np.linspace(0, 1, 2001)
    h1 = cf.h(1, x)
    g1 = cf.g(1, x)
    assert h1.min() < 0 < h1.max() and g1.min() < 0 < g1.max()
    g0 = cf.g(0, x)
    assert g0.min() > 0
    if sol.regime is not Regime.SUPERCRITICAL:
        assert np.ptp(g0) == 0.0


def test_closed_forms_csv_and_json(tmp_path):
    cf = closed_forms(_sol(1.0, 2.0))
    cf.profiles_to_csv(tmp_path / "p.csv", n=11)
    data = np.loadtxt(tmp_path / "p.csv", delimiter=",", skiprows=1)
    assert data.shape == (11, 5)
    np.testing.assert_allclose(data[:, 2], cf.h(1, data[:, 0]))
    assert set(json.loads(json.dumps(cf.to_dict()))) == {"c0", "c1", "K0", "K1"}


def test_closed_forms_reject_bad_index():
    with pytest.raises(DomainError):
        closed_forms(_sol(0.0, 2.0)).h(2, 0.5)


# --- nonnegativity classifier --------------------------------------------------------------

def test_classify_kernel_construction_nonnegative():
    sol = _sol(1.0, 0.5)
    f = f_in_kernel(lambda x: 1.0 + np.cos(6 * x), sol)
    res = classify_nonneg(f, sol)
    assert res.verdict is Verdict.NONNEGATIVE


def test_classify_inflated_boundary_indefinite_and_goes_negative():
    p = ModelParams(0.0, 2.0)
    sol = solve_riccati(p)
    base = f_in_kernel(lambda x: 1.0 + np.cos(6 * x), sol)
    f = base.with_boundary(base.f0 + 1.0, base.f1)
    res = classify_nonneg(f, sol)
    assert res.verdict is Verdict.INDEFINITE and abs(res.decomposition.a1) > 1e-3
    fl = solve(f, p, VolterraConfig(dt=1e-3, T=1.0))
    assert fl.values.min() < -1e-4


def test_classify_negative_constant():
    sol = _sol(1.0, 2.0)
    assert classify_nonneg(BoundaryFunction.constant(-1.0), sol).verdict is Verdict.INDEFINITE


def test_classify_positive_V0_excess():
    sol = _sol(0.0, 2.0)
    base = f_in_kernel(lambda x: 2.0 + x, sol)
    f = base.with_boundary(*(base.boundary + 0.5 * sol.V0))
    assert min(f.boundary) > 0
    res = classify_nonneg(f, sol)
    assert res.verdict is Verdict.NONNEGATIVE and abs(res.decomposition.a0 - 0.5) < 1e-10
    assert json.loads(json.dumps(res.to_dict()))["verdict"] == "Nonnegative"


# --- growth rates ------------------------------------------------------------------------

def test_rate_of_dominant_eigen_solution():
    p = ModelParams(0.0, 2.0)
    sol = solve_riccati(p)
    fl = solve(closed_forms(sol).h_function(1), p, VolterraConfig(dt=1e-3, T=1.5))
    fit = rate_fit(fl, (0.5, 1.5))
    assert abs(fit.slope + sol.lambda1) <= 0.02 * abs(sol.lambda1)


def test_rate_with_vanishing_a1_supercritical():
    p = ModelParams(0.0, 2.0)
    sol = solve_riccati(p)
    base = f_in_kernel(lambda x: np.cos(2 * x), sol)
    f = base.with_boundary(*(base.boundary + sol.V0))
    dec = decompose(defect(f, sol), sol)
    assert abs(dec.a1) < 1e-10
    fl = solve(f, p, VolterraConfig(dt=1e-3, T=1.5))
    fit = rate_fit(fl, (0.5, 1.5))
    assert abs(fit.slope + sol.lambda0) <= 0.02 * abs(sol.lambda0)


def test_rate_with_vanishing_a1_subcritical_flattens():
    p = ModelParams(1.0, 0.5)
    sol = solve_riccati(p)
    base = f_in_kernel(lambda x: np.cos(2 * x), sol)
    f = base.with_boundary(*(base.boundary + sol.V0))
    fl = solve(f, p, VolterraConfig(dt=1e-3, T=4.0))
    assert abs(rate_fit(fl, (2.0, 4.0)).slope) <= 0.02
    cf = closed_forms(sol)
    np.testing.assert_allclose(fl.values[-1], cf.g(0, fl.nodes), rtol=5e-3)


def test_linear_rate_critical():
    p = ModelParams(0.0, 1.0)
    sol = solve_riccati(p)
    cf = closed_forms(sol)
    base = f_in_kernel(lambda x: 1.0 + x, sol)
    f = base.with_boundary(*(base.boundary + sol.V0))
    fl = solve(f, p, VolterraConfig(dt=1e-3, T=3.0))
    fit = rate_fit(fl, (2.0, 3.0), mode="linear")
    assert abs(fit.slope - cf.K0) <= 0.02 * cf.K0


def test_limit_shape_dominant_mode():
    p = ModelParams(1.0, 0.5)
    sol = solve_riccati(p)
    cf = closed_forms(sol)
    f = BoundaryFunction(lambda x: 0.4 + np.cos(np.pi * x) - x, 1.0, -0.5)
    dec = decompose(defect(f, sol), sol)
    T = math.ceil(8.0 / abs(sol.lambda1 - sol.lambda0) / 1e-3) * 1e-3
    fl = solve(f, p, VolterraConfig(dt=1e-3, T=round(T, 3)))
    lim = dec.a1 * cf.g(1, fl.nodes)
    err = np.abs(np.exp(fl.times[-1] * sol.lambda1) * fl.values[-1] - lim).max()
    assert err <= 0.01 * abs(dec.a1) * np.abs(cf.g(1, fl.nodes)).max()


def test_rate_fit_errors():
    times = np.linspace(0, 1, 11)
    nodes = np.linspace(0, 1, 5)
    fl = SpaceTimeField(times, nodes, np.zeros((11, 5)), np.zeros((11, 2)))
    with pytest.raises(DomainError):
        rate_fit(fl, (0.2, 0.8))
    with pytest.raises(DomainError):
        rate_fit(fl, (0.8, 0.2))
    with pytest.raises(DomainError):
        rate_fit(fl, (0.5, 2.0))


def test_defect_invariance_under_evolution():
    p = ModelParams(1.0, 0.5)
    sol = solve_riccati(p)
    f = f_in_kernel(lambda x: np.where(x < 0.6, 1.0, 3.0), sol, (0.6,))
    cfg = VolterraConfig(dt=1e-3, T=1.0)
    from nonfeller.semigroup import interior_values, volterra_march
    from nonfeller._quad import panel_rule
    from nonfeller.riccati import eval_J

    res = volterra_march(f, p, cfg)
    x, w = panel_rule(np.union1d(np.linspace(0, 1, 33), [0.6]), 12)
    u = interior_values(f, p, cfg, res.traces, x)
    d = res.traces - (u * w) @ eval_J(sol, x)
    assert np.abs(d).max() < 1e-4
