"""Single-stock benchmark strategies and the common-random-number harness."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .closedform import ClosedFormPolicy, G2Surface, G3Curve, check_solvability, closed_form_policy
from .models import MarketState, ModelParams, PathBatch, Policy, World, run_policy, simulate_world

__all__ = [
    "GbmApproxParams",
    "GbmPolicy",
    "WealthStats",
    "gbm_approx_params",
    "simulate_gbm_approx",
    "gbm_policy",
    "a_only_policy",
    "standard_policies",
    "final_wealth",
    "final_wealth_batch",
    "penalty_batch",
    "wealth_stats",
    "compare_strategies",
    "robustness_test",
    "write_stats_csv",
    "write_stats_json",
    "BENCH_PARAMS",
    "BENCH_INITIAL",
]

# Parameters of the three-strategy comparison (T = 1, 100 trades).
BENCH_PARAMS = ModelParams(mu1=0.0, sigma1=0.3, sigma2=0.05, rho=0.5, k=0.1, eta=0.01, chi=0.007,
                          phi1=0.07, phi2=0.07, phi3=0.07, T=1.0)
BENCH_INITIAL = MarketState(t=0.0, a=6.0, eps=0.0, q=120.0, m=0.0)


def _ratio(k: float, x):
    x = np.asarray(x, dtype=float)
    return x.copy() if k == 0 else -np.expm1(-k * x) / k


@dataclass(frozen=True)
class GbmApproxParams:
    """Time-dependent drift and volatility of the moment-matched GBM."""

    params: ModelParams
    eps0: float

    def mu(self, r):
        p = self.params
        r = np.asarray(r, dtype=float)
        e1 = np.exp(-p.k * r)
        return -p.k * self.eps0 * e1 + p.mu1 + 0.5 * p.sigma2**2 * e1**2 + p.rho * p.sigma1 * p.sigma2 * e1

    def var(self, r):
        p = self.params
        r = np.asarray(r, dtype=float)
        e1 = np.exp(-p.k * r)
        return p.sigma1**2 + p.sigma2**2 * e1**2 + 2.0 * p.rho * p.sigma1 * p.sigma2 * e1

    def mu_integral(self, t, r):
        """``int_t^r mu(s) ds`` in closed form."""
        p = self.params
        t = np.asarray(t, dtype=float)
        r = np.asarray(r, dtype=float)
        d1 = np.exp(-p.k * t) * _ratio(p.k, r - t)
        d2 = np.exp(-2.0 * p.k * t) * _ratio(2.0 * p.k, r - t)
        return (p.rho * p.sigma1 * p.sigma2 - p.k * self.eps0) * d1 + p.mu1 * (r - t) + 0.5 * p.sigma2**2 * d2

    def var_integral(self, t, r):
        p = self.params
        t = np.asarray(t, dtype=float)
        r = np.asarray(r, dtype=float)
        d1 = np.exp(-p.k * t) * _ratio(p.k, r - t)
        d2 = np.exp(-2.0 * p.k * t) * _ratio(2.0 * p.k, r - t)
        return p.sigma1**2 * (r - t) + p.sigma2**2 * d2 + 2.0 * p.rho * p.sigma1 * p.sigma2 * d1


def gbm_approx_params(params: ModelParams, eps0: float) -> GbmApproxParams:
    return GbmApproxParams(params, float(eps0))



def simulate_gbm_approx(approx: GbmApproxParams, s0: float, times, n_paths: int, seed: int) -> np.ndarray:
    """Exact samples of the moment-matched GBM at ``times`` (shape ``(n_paths, len(times))``)."""
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) <= 0) or times[0] <= 0:
        raise ValueError("times must be positive and strictly increasing")
    left = np.concatenate([[0.0], times[:-1]])
    drift = approx.mu_integral(left, times) - 0.5 * approx.var_integral(left, times)
    sd = np.sqrt(approx.var_integral(left, times))
    z = np.random.default_rng([int(seed), 3]).standard_normal((n_paths, times.size))
    return s0 * np.exp(np.cumsum(drift + sd * z, axis=1))

class GbmPolicy(Policy):
    """Optimal rule when the price is modelled as the moment-matched GBM.

    With ``w = q s g2(t) + q^2 g3(t)`` the linear coefficient obeys
    ``g2' + (mu(t) + g3/eta) g2 - g3/eta - 2 phi2 = 0``, ``g2(T) = 1``; its
    solution ``1 - int_t^T exp(int_t^r (mu + g3/eta)) (2 phi2 - mu(r)) dr`` is
    evaluated by Gauss-Legendre quadrature. The live price ``S`` is used for
    ``s``.
    """

    def __init__(self, params: ModelParams, approx: GbmApproxParams, g3curve: G3Curve | None = None,
                 quad_order: int = 64, tol: float = 1e-8, label: str = "gbm_approx"):
        self.params = params
        self.approx = approx
        self.g3 = g3curve or G3Curve(params)
        self.quad_order = quad_order
        self.tol = tol
        self.label = label
        self._cache: dict[float, float] = {}

    def _g2_order(self, t: float, order: int) -> float:
        p = self.params
        if t >= p.T:
            return 1.0
        x, w = np.polynomial.legendre.leggauss(order)
        half = 0.5 * (p.T - t)
        r = t + half * (x + 1.0)
        disc = np.exp(self.approx.mu_integral(t, r) + self.g3.integral(t, r) / p.eta)
        return 1.0 - half * float(np.sum(w * disc * (2.0 * p.phi2 - self.approx.mu(r))))

    def g2(self, t: float) -> float:
        t = float(t)
        hit = self._cache.get(t)
        if hit is None:
            hit = self._g2_order(t, self.quad_order)
            if abs(self._g2_order(t, 2 * self.quad_order) - hit) > self.tol:
                raise ArithmeticError(f"GBM g2 quadrature not converged at t={t!r}")
            self._cache[t] = hit
        return hit

    def rate(self, t, a, eps, q):
        q = np.asarray(q, dtype=float)
        s = np.asarray(a, dtype=float) * np.exp(np.asarray(eps, dtype=float))
        bracket = s * (1.0 - self.g2(t)) - 2.0 * q * self.g3(t)
        r = np.maximum(bracket, 0.0) / (2.0 * self.params.eta)
        return np.where(q > 0, r, 0.0)


def gbm_policy(params: ModelParams, approx: GbmApproxParams, g3curve: G3Curve | None = None,
               quad_order: int = 64) -> GbmPolicy:
    return GbmPolicy(params, approx, g3curve, quad_order)


def a_only_policy(params: ModelParams, g2surface: G2Surface | None = None,
                  g3curve: G3Curve | None = None) -> ClosedFormPolicy:
    """Closed-form rule with the cointegration factor pinned at zero."""
    check_solvability(params)
    g3curve = g3curve or G3Curve(params)
    g2surface = g2surface or G2Surface(params, g3=g3curve)
    return ClosedFormPolicy(params, g2surface, g3curve, label="a_only", freeze_eps=0.0)


def standard_policies(params: ModelParams, eps0: float, quad_order: int = 64) -> list[Policy]:
    """The three compared strategies: price S, GBM approximation, stock A."""
    g3 = G3Curve(params)
    g2 = G2Surface(params, quad_order, g3=g3)
    s_pol = closed_form_policy(params, g2, g3)
    s_pol.label = "price_S"
    gbm = gbm_policy(params, gbm_approx_params(params, eps0), g3, quad_order)
    gbm.label = "gbm_approx"
    a_pol = a_only_policy(params, g2, g3)
    a_pol.label = "stock_A"
    return [s_pol, gbm, a_pol]


def final_wealth_batch(batch: PathBatch, params: ModelParams) -> np.ndarray:
    """Cash value ``M_tau + Q_tau (S_tau - chi Q_tau)`` per path."""
    idx = np.arange(batch.q.shape[0])
    tau = batch.tau_index
    q = batch.q[idx, tau]
    s = batch.a[idx, tau] * np.exp(batch.eps[idx, tau])
    return batch.m[idx, tau] + q * (s - params.chi * q)


def penalty_batch(batch: PathBatch, params: ModelParams) -> np.ndarray:
    """Left-point running penalties up to ``tau`` per path."""
    dt = batch.grid[1] - batch.grid[0]
    q = batch.q[:, :-1]
    a = batch.a[:, :-1]
    s = a * np.exp(batch.eps[:, :-1])
    live = np.arange(q.shape[1])[None, :] < batch.tau_index[:, None]
    dens = params.phi1 * q**2 + params.phi2 * s * q + params.phi3 * a * q
    return dt * np.where(live, dens, 0.0).sum(axis=1)


def final_wealth(path, params: ModelParams) -> float:
    """Cash value of a single :class:`~cointliq.models.SimPath` at its stopping index."""
    i = path.tau_index
    q = float(path.q[i])
    s = float(path.a[i] * math.exp(path.eps[i]))
    return float(path.m[i]) + q * (s - params.chi * q)


@dataclass(frozen=True)
class WealthStats:
    policy: str
    mean: float
    std: float
    p5: float
    p95: float
    n_paths: int
    objective_mean: float = float("nan")

    @property
    def std_error(self) -> float:
        return self.std / math.sqrt(self.n_paths)


def wealth_stats(label: str, wealth: np.ndarray, penalties: np.ndarray | None = None) -> WealthStats:
    wealth = np.asarray(wealth, dtype=float)
    p5, p95 = np.percentile(wealth, [5.0, 95.0])
    obj = float("nan") if penalties is None else float(np.mean(wealth - penalties))
    return WealthStats(
        policy=label,
        mean=float(wealth.mean()),
        std=float(wealth.std(ddof=1)) if wealth.size > 1 else 0.0,
        p5=float(p5),
        p95=float(p95),
        n_paths=int(wealth.size),
        objective_mean=obj,
    )


def _evaluate(params: ModelParams, policies: Sequence[Policy], world: World,
              initial: MarketState, seed: int) -> tuple[list[WealthStats], dict[str, PathBatch]]:
    stats, batches = [], {}
    for pol in policies:
        batch = run_policy(params, pol, world, initial.q, initial.m, initial=initial, seed=seed)
        stats.append(wealth_stats(pol.label, final_wealth_batch(batch, params), penalty_batch(batch, params)))
        batches[pol.label] = batch
    return stats, batches


def compare_strategies(params: ModelParams, policies: Sequence[Policy], n_paths: int, n_trades: int,
                       seed: int, initial: MarketState = BENCH_INITIAL, jobs: int = 1,
                       return_batches: bool = False):
    """Run every policy on the same ``n_paths`` simulated worlds.

    Returns the list of :class:`WealthStats` (and the per-policy batches when
    ``return_batches``).
    """
    world = simulate_world(params, initial, n_trades, n_paths, seed, jobs=jobs)
    stats, batches = _evaluate(params, policies, world, initial, seed)
    return (stats, batches) if return_batches else stats


def robustness_test(params: ModelParams, sigma1_range=(0.25, 0.35), sigma2_range=(0.04, 0.06),
                    n_paths: int = 300, seed: int = 0, n_trades: int = 100,
                    initial: MarketState = BENCH_INITIAL, policies: Sequence[Policy] | None = None,
                    jobs: int = 1) -> list[WealthStats]:
    """Per path, draw (sigma1, sigma2) uniformly and simulate that world.

    The policies are built from the nominal ``params`` throughout.
    """
    lo1, hi1 = sigma1_range
    lo2, hi2 = sigma2_range
    if lo1 > hi1 or lo2 > hi2 or lo1 < 0 or lo2 < 0:
        raise ValueError("invalid volatility range")
    vol_rng = np.random.default_rng([int(seed), 2**32 - 1])
    u = vol_rng.random((n_paths, 2))
    sig1 = lo1 + (hi1 - lo1) * u[:, 0]
    sig2 = lo2 + (hi2 - lo2) * u[:, 1]
    if policies is None:
        policies = standard_policies(params, initial.eps)
    world = simulate_world(params, initial, n_trades, n_paths, seed, sigma1=sig1, sigma2=sig2, jobs=jobs)
    stats, _ = _evaluate(params, policies, world, initial, seed)
    return stats


def write_stats_csv(stats: Sequence[WealthStats], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["policy", "mean", "std", "p5", "p95", "n_paths"])
        for s in stats:
            w.writerow([s.policy, repr(s.mean), repr(s.std), repr(s.p5), repr(s.p95), s.n_paths])


def write_stats_json(stats: Sequence[WealthStats], path: str | Path, meta: Mapping | None = None) -> dict:
    """Table-style report; percentages are relative to the first strategy."""
    ref = stats[0]

    def rel(v, r):
        return None if r == 0 else 100.0 * (v - r) / abs(r)

    rows = []
    for s in stats:
        rows.append({
            "strategy": s.policy,
            "exp_val": s.mean,
            "st_dev": s.std,
            "p5": s.p5,
            "p95": s.p95,
            "n_paths": s.n_paths,
            "objective_mean": None if math.isnan(s.objective_mean) else s.objective_mean,
            "rel_to_first_pct": {
                "exp_val": rel(s.mean, ref.mean),
                "st_dev": rel(s.std, ref.std),
                "p5": rel(s.p5, ref.p5),
                "p95": rel(s.p95, ref.p95),
            },
        })
    doc = {"meta": dict(meta or {}), "rows": rows}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True))
    return doc
