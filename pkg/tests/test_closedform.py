import csv
import math
import warnings

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from scipy.integrate import quad, solve_ivp

from cointliq.closedform import (
    ClosedFormPolicy,
    G2Surface,
    G3Curve,
    QuadratureError,
    candidate_value,
    check_condition_51,
    check_solvability,
    closed_form_policy,
    g1_estimate,
    g2_eval,
    g2_monte_carlo,
    g3_eval,
    g3_integral,
    pde_residual_g2,
    write_g2_csv,
    write_g3_csv,
)
from cointliq.models import MarketState

from conftest import ONE_STOCK, SETTINGS1, SETTINGS2
from cointliq.bench import BENCH_PARAMS


def riccati_oracle(p, ts):
    """g3 by high-accuracy Runge-Kutta, integrating backwards from T."""
    sol = solve_ivp(lambda t, y: [p.phi1 - y[0] ** 2 / p.eta], (p.T, 0.0), [-p.chi],
                    method="DOP853", rtol=1e-13, atol=1e-15, dense_output=True)
    return sol.sol(ts)[0]


def simpson(f, a, b, n=2000):
    x = np.linspace(a, b, n + 1)
    w = np.ones(n + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return float((b - a) / (3 * n) * np.dot(w, f(x)))


# ---------------------------------------------------------------- condition

@pytest.mark.parametrize("p", [SETTINGS1, SETTINGS2, BENCH_PARAMS])
def test_condition_holds_for_reference_sets(p):
    c = check_solvability(p)
    assert c.holds and c.lhs >= c.rhs
    lhs = p.phi3 * math.exp(1 + p.phi2 / p.k)
    rhs = p.k * math.exp(p.sigma2**2 / (2 * p.k) + p.mu1 / p.k + p.rho * p.sigma1 * p.sigma2 / p.k)
    assert c.lhs == pytest.approx(lhs, rel=1e-14) and c.rhs == pytest.approx(rhs, rel=1e-14)


def test_condition_fails_without_phi3():
    c = check_condition_51(SETTINGS1.replace(phi3=0.0))
    assert not c.holds and c.lhs == 0.0


def test_condition_limits_at_zero_k():
    assert check_solvability(ONE_STOCK).holds
    assert not check_solvability(ONE_STOCK.replace(mu1=0.1)).holds
    # overflowing exponentials are compared in log space
    assert check_solvability(SETTINGS1.replace(k=1e-4)).holds


# ---------------------------------------------------------------- g3

@pytest.mark.parametrize("p", [SETTINGS1, SETTINGS2, BENCH_PARAMS,
                               SETTINGS1.replace(chi=math.sqrt(0.003 * 0.003)),
                               SETTINGS1.replace(chi=0.0), SETTINGS1.replace(phi1=0.0)])
def test_g3_matches_runge_kutta(p):
    ts = np.linspace(0.0, p.T, 11)
    assert np.allclose(g3_eval(p, ts), riccati_oracle(p, ts), rtol=1e-9, atol=1e-12)


def test_g3_reference_values():
    assert g3_eval(SETTINGS1, SETTINGS1.T) == -0.5
    assert g3_eval(SETTINGS1, 0.0) == pytest.approx(-0.00643, abs=5e-6)
    p0 = SETTINGS1.replace(phi1=0.0)
    expected = -0.5 * 0.003 / (0.003 + 0.5 * 0.5)
    assert g3_eval(p0, 0.0) == pytest.approx(expected, rel=1e-14)
    assert expected == pytest.approx(-0.005929, abs=1e-6)


def _monotone_direction(p):
    """g3 rises when chi < sqrt(phi1 eta) and falls when chi > sqrt(phi1 eta)."""
    return np.sign(math.sqrt(p.phi1 * p.eta) - p.chi)


def test_g3_shape_on_fine_grid():
    for p in (SETTINGS1, SETTINGS2, BENCH_PARAMS):
        ts = np.linspace(0.0, p.T, 1000)
        g = G3Curve(p)(ts)
        assert np.all(g < 0)
        assert np.all(_monotone_direction(p) * np.diff(g) >= -1e-12)
        assert G3Curve(p)(p.T) == -p.chi
    # the benchmark set is in the rising regime, the two settings in the falling one
    assert _monotone_direction(BENCH_PARAMS) > 0 and _monotone_direction(SETTINGS1) < 0


def test_g3_constant_at_riccati_fixed_point():
    p = SETTINGS1.replace(chi=math.sqrt(SETTINGS1.phi1 * SETTINGS1.eta))
    assert np.allclose(G3Curve(p)(np.linspace(0, p.T, 50)), -p.chi, rtol=1e-14)


def test_g3_integral_matches_simpson(rng):
    for p in (SETTINGS1, SETTINGS2, BENCH_PARAMS, SETTINGS1.replace(phi1=0.0)):
        curve = G3Curve(p)
        assert g3_integral(p, 0.2 * p.T, 0.2 * p.T) == 0.0
        for _ in range(10):
            t, r = np.sort(rng.uniform(0, p.T, 2))
            ref = simpson(curve, t, r)
            val = g3_integral(p, t, r)
            assert val < 0
            assert abs(val - ref) < 1e-9


@settings(max_examples=60, deadline=None)
@given(phi1=st.floats(0.0, 1.0), eta=st.floats(1e-3, 1.0), chi=st.floats(0.0, 2.0),
       T=st.floats(0.05, 3.0))
def test_g3_properties_random_params(phi1, eta, chi, T):
    p = SETTINGS1.replace(phi1=phi1, eta=eta, chi=chi, T=T)
    assume(chi > 0 or phi1 > 0)
    curve = G3Curve(p)
    ts = np.linspace(0.0, T, 201)
    g = curve(ts)
    assert curve(T) == -chi
    assert np.all(g <= 0)
    assert np.all(_monotone_direction(p) * np.diff(g) >= -1e-12 * (1 + abs(g[:-1])))
    # adaptive quadrature copes with the boundary layer of width ~eta/chi near T
    ref = quad(curve, 0.0, T, epsabs=1e-14, epsrel=1e-13, limit=500, points=[max(0.0, T - 50 * eta / max(chi, 1e-9))])[0]
    assert abs(curve.integral(0.0, T) - ref) < 1e-9 * max(1.0, abs(ref))


# ---------------------------------------------------------------- g2

def test_g2_terminal_and_one_stock():
    eps = np.linspace(-3, 3, 13)
    assert np.all(G2Surface(SETTINGS1)(SETTINGS1.T, eps) == 1.0)
    surf = G2Surface(ONE_STOCK)
    for t in (0.0, 0.4, 0.9):
        assert np.allclose(surf(t, eps), 1.0, atol=1e-14)


@pytest.mark.parametrize("p", [SETTINGS1, SETTINGS2, BENCH_PARAMS])
def test_g2_bounded_and_converged(p):
    surf = G2Surface(p)
    eps = np.linspace(-3, 3, 61)
    for t in np.linspace(0, p.T, 21):
        assert np.all(surf(t, eps) <= 1 + 1e-8)
        assert surf.check(t, eps, 1e-8) < 1e-8


def test_g2_scalar_and_array_forms_agree():
    surf = G2Surface(SETTINGS1)
    ts = np.array([0.0, 0.1, 0.25, 0.5])
    eps = np.array([-1.0, 0.0, 0.5, 2.0])
    grid = surf(ts, eps)
    for i in range(4):
        assert grid[i] == surf(float(ts[i]), float(eps[i]))
    assert g2_eval(SETTINGS1, 0.1, 0.0) == surf(0.1, 0.0)


def test_g2_nonconvergence_reports_point():
    p = SETTINGS2.replace(k=5.0, sigma2=3.0, phi3=5.0)
    with pytest.raises(QuadratureError) as exc:
        g2_eval(p, 0.0, np.array([0.0, 3.0]), quad_order=2)
    assert exc.value.t == 0.0 and exc.value.eps in (0.0, 3.0)


def test_g2_against_scipy_quadrature():
    """Direct adaptive quadrature of the integral representation."""
    p = SETTINGS2
    curve = G3Curve(p)
    c = p.rho * p.sigma1 * p.sigma2
    for t, eps in [(0.0, 0.0), (0.3, -1.2), (0.8, 2.0)]:
        def integrand(r):
            s = r - t
            ghat = math.exp(curve.integral(t, r) / p.eta + p.mu1 * s)
            mb = math.exp(-p.k * s)
            var = p.sigma2**2 * (1 - math.exp(-2 * p.k * s)) / (2 * p.k)
            mean = eps * mb + c * (1 - mb) / p.k
            ex = math.exp(mean + 0.5 * var)
            inner = ex * (p.k * (mean + var) - 0.5 * p.sigma2**2 - c - p.mu1 + p.phi2) + p.phi3
            return ghat * inner

        val = 1 - math.exp(-eps) * quad(integrand, t, p.T, epsabs=1e-13, epsrel=1e-13)[0]
        assert G2Surface(p)(t, eps) == pytest.approx(val, abs=1e-10)


def test_g2_matches_feynman_kac_monte_carlo():
    est = g2_monte_carlo(SETTINGS1, 0.0, 0.0, n_paths=1_000_000, seed=4)
    val = G2Surface(SETTINGS1)(0.0, 0.0)
    assert abs(est.value - val) < 1e-3
    assert abs(est.value - val) < 3 * est.std_error


def test_g2_monte_carlo_k_zero_limit():
    p = SETTINGS1.replace(k=0.0, phi2=0.2)
    est = g2_monte_carlo(p, 0.1, 0.3, n_paths=400_000, seed=1)
    assert abs(est.value - G2Surface(p)(0.1, 0.3)) < 3 * est.std_error + 1e-9


# ---------------------------------------------------------------- PDE residual

def test_pde_residual_second_order():
    p = SETTINGS1
    surf = G2Surface(p)
    rng = np.random.default_rng(0)
    pts = np.column_stack([rng.uniform(0.05, 0.9 * p.T, 20), rng.uniform(-2, 2, 20)])
    hs = [0.02, 0.01, 0.005]
    res = np.array([[abs(pde_residual_g2(p, surf, t, e, h, h)) for h in hs] for t, e in pts])
    orders = np.log2(res[:, :-1] / res[:, 1:])
    assert np.median(orders) >= 1.8
    assert np.all(res[:, -1] < 1e-5)


def test_pde_residual_vanishes_for_one_stock():
    surf = G2Surface(ONE_STOCK)
    for t, e in [(0.2, 0.0), (0.5, 1.0)]:
        assert abs(pde_residual_g2(ONE_STOCK, surf, t, e, 0.01, 0.01)) < 1e-10


# ---------------------------------------------------------------- g1

def test_g1_zero_for_one_stock():
    est = g1_estimate(ONE_STOCK, 0.0, 6.0, 0.0, G2Surface(ONE_STOCK), n_paths=200, seed=0)
    assert abs(est.value) < 1e-20 and est.std_error < 1e-20


def test_g1_positive_and_shrinking_error():
    surf = G2Surface(SETTINGS1)
    small = g1_estimate(SETTINGS1, 0.0, 1.0, 0.0, surf, n_paths=400, seed=1, n_steps=40)
    big = g1_estimate(SETTINGS1, 0.0, 1.0, 0.0, surf, n_paths=6400, seed=1, n_steps=40)
    again = g1_estimate(SETTINGS1, 0.0, 1.0, 0.0, surf, n_paths=400, seed=1, n_steps=40)
    assert small == again
    assert small.value > 0 and big.value > 0
    assert big.std_error / small.std_error == pytest.approx(0.25, rel=0.15)
    assert abs(big.value - small.value) < 3 * math.hypot(big.std_error, small.std_error)
    with pytest.raises(ValueError):
        g1_estimate(SETTINGS1, 0.0, 1.0, 0.0, surf, n_paths=50, seed=1)


def test_g1_with_large_phi3_positive():
    p = SETTINGS1.replace(phi3=5.0)
    est = g1_estimate(p, 0.0, 1.0, 0.0, G2Surface(p), n_paths=100, seed=0, n_steps=20)
    assert est.value > 0


# ---------------------------------------------------------------- value and policy

def test_candidate_value_boundaries():
    g3 = G3Curve(SETTINGS1)
    g2 = G2Surface(SETTINGS1, g3=g3)
    assert candidate_value(SETTINGS1, MarketState(0.1, 1.2, 0.3, 0.0), g2, g3, g1=5.0) == 0.0
    st_T = MarketState(SETTINGS1.T, 1.2, 0.3, 4.0)
    want = 4.0 * (st_T.s - SETTINGS1.chi * 4.0)
    assert candidate_value(SETTINGS1, st_T, g2, g3) == pytest.approx(want, rel=1e-14)
    g3o = G3Curve(ONE_STOCK)
    s = MarketState(0.3, 6.0, 0.0, 50.0)
    v = candidate_value(ONE_STOCK, s, G2Surface(ONE_STOCK, g3=g3o), g3o)
    assert v == pytest.approx(50 * 6.0 + 2500 * g3o(0.3), rel=1e-13)


def test_policy_one_stock_reduction():
    pol = closed_form_policy(ONE_STOCK)
    g3 = G3Curve(ONE_STOCK)
    for t, q in [(0.0, 120.0), (0.5, 30.0), (0.99, 1.0)]:
        assert pol(t, MarketState(t, 6.0, 0.0, q)) == pytest.approx(-q * g3(t) / ONE_STOCK.eta, rel=1e-12)
    assert pol(0.1, MarketState(0.1, 6.0, 0.0, 0.0)) == 0.0


def test_policy_refinement_oracle():
    g3 = G3Curve(SETTINGS1)
    base = closed_form_policy(SETTINGS1, G2Surface(SETTINGS1, 64, g3), g3)
    fine = closed_form_policy(SETTINGS1, G2Surface(SETTINGS1, 256, g3), g3)
    s = MarketState(0.0, 1.0, 0.0, 20.0)
    r = base(0.0, s)
    assert r > 0
    assert abs(r - fine(0.0, s)) < 1e-6


def test_policy_nonnegative_on_random_states(rng):
    pol = closed_form_policy(SETTINGS2)
    t = rng.uniform(0, SETTINGS2.T, 500)
    a = rng.uniform(0.2, 5, 500)
    eps = rng.uniform(-3, 3, 500)
    q = rng.uniform(0, 30, 500)
    q[:50] = 0
    rates = np.array([pol.rate(ti, np.array([ai]), np.array([ei]), np.array([qi]))[0]
                      for ti, ai, ei, qi in zip(t, a, eps, q)])
    assert np.all(rates >= 0) and np.all(rates[:50] == 0)


def test_policy_warns_when_condition_fails():
    with pytest.warns(RuntimeWarning):
        closed_form_policy(SETTINGS1.replace(phi3=0.0))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert isinstance(closed_form_policy(SETTINGS1), ClosedFormPolicy)


# ---------------------------------------------------------------- exports

def test_csv_exports(tmp_path):
    g3 = G3Curve(SETTINGS1)
    write_g3_csv(g3, tmp_path / "g3.csv")
    rows = list(csv.reader(open(tmp_path / "g3.csv")))
    assert rows[0] == ["t", "g3"] and float(rows[-1][1]) == -SETTINGS1.chi
    surf = G2Surface(SETTINGS1, g3=g3)
    write_g2_csv(surf, tmp_path / "g2.csv", np.linspace(0, SETTINGS1.T, 5), np.linspace(-3, 3, 7))
    rows = list(csv.reader(open(tmp_path / "g2.csv")))
    assert rows[0] == ["t", "eps", "g2"] and len(rows) == 36
    assert all(float(r[2]) == 1.0 for r in rows[-7:])
