"""Classical solution of the liquidation HJB equation.

The candidate value function is

    w(t, a, eps, q) = g1(t, a, eps) 1{q>0} + q a e^eps g2(t, eps) + q^2 g3(t)

with ``g3`` solving a Riccati ODE in closed form, ``g2`` given by a
one-dimensional integral in time (evaluated by Gauss-Legendre quadrature) and
``g1`` a Feynman-Kac expectation estimated by Monte Carlo.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import kernels
from .models import MarketState, ModelParams, Policy, simulate_world

__all__ = [
    "SolvabilityCheck",
    "QuadratureError",
    "G3Curve",
    "G2Surface",
    "ValueEstimate",
    "ClosedFormPolicy",
    "check_solvability",
    "check_condition_51",
    "g3_eval",
    "g3_integral",
    "g2_eval",
    "g2_monte_carlo",
    "g1_estimate",
    "candidate_value",
    "closed_form_policy",
    "pde_residual_g2",
    "write_g3_csv",
    "write_g2_csv",
]

PHI1_EPS = 1e-14


class QuadratureError(ArithmeticError):
    """Doubling the quadrature order moved g2 by more than the tolerance."""

    def __init__(self, t: float, eps: float, change: float):
        super().__init__(f"g2 quadrature not converged at t={t!r}, eps={eps!r} (change {change:.3e})")
        self.t = t
        self.eps = eps
        self.change = change


class SolvabilityCheck(NamedTuple):
    holds: bool
    lhs: float
    rhs: float


def check_solvability(params: ModelParams) -> SolvabilityCheck:
    """Sufficient condition under which g2 <= 1 and the closed form is valid.

    ``phi3 exp(1 + phi2/k) >= k exp(sigma2^2/(2k) + mu1/k + rho sigma1 sigma2 / k)``.
    At ``k = 0`` both sides are replaced by their limits.
    """
    p = params
    c = 0.5 * p.sigma2**2 + p.mu1 + p.rho * p.sigma1 * p.sigma2
    if p.k > 0:
        with np.errstate(over="ignore"):
            lhs = float(p.phi3 * np.exp(1.0 + p.phi2 / p.k))
            rhs = float(p.k * np.exp(c / p.k))
        if math.isinf(lhs) and math.isinf(rhs):
            holds = math.log(p.phi3) + 1.0 + p.phi2 / p.k >= math.log(p.k) + c / p.k
        else:
            holds = lhs >= rhs
        return SolvabilityCheck(bool(holds), lhs, rhs)
    lhs = 0.0 if p.phi3 == 0 else (math.inf if p.phi2 > 0 else p.phi3 * math.e)
    rhs = math.inf if c > 0 else 0.0
    if math.isinf(lhs) and math.isinf(rhs):
        return SolvabilityCheck(p.phi2 >= c, lhs, rhs)
    return SolvabilityCheck(lhs >= rhs, lhs, rhs)

check_condition_51 = check_solvability


class G3Curve:
    """Closed-form solution of ``g3' = phi1 - g3^2/eta``, ``g3(T) = -chi``.

    Written with ``expm1`` so that the small-``phi1`` and ``chi ~ sqrt(phi1 eta)``
    regimes stay accurate; ``phi1 == 0`` uses the exact limit
    ``-chi eta / (eta + chi (T - t))``.
    """

    def __init__(self, params: ModelParams):
        self.params = params
        p = params
        self._linear = p.phi1 < PHI1_EPS
        self._root = math.sqrt(p.phi1 * p.eta)
        self._beta = math.sqrt(p.phi1 / p.eta)
        self._alpha = self._root - p.chi

    def _den(self, t):
        em = np.expm1(2.0 * self._beta * (np.asarray(t, float) - self.params.T))
        den = 2.0 * self._root + self._alpha * em
        if np.any(den <= 0):
            raise ZeroDivisionError("g3 denominator vanished")
        return em, den

    def __call__(self, t):
        p = self.params
        t = np.asarray(t, dtype=float)
        if self._linear:
            out = -p.chi * p.eta / (p.eta + p.chi * (p.T - t))
        else:
            em, den = self._den(t)
            out = self._root * (-2.0 * p.chi + self._alpha * em) / den
        # pin the terminal condition against rounding
        out = np.where(t >= p.T, -p.chi, out)
        return out if out.ndim else float(out)

    def integral(self, t, r):
        """``int_t^r g3(s) ds`` from the analytic antiderivative."""
        p = self.params
        t = np.asarray(t, dtype=float)
        r = np.asarray(r, dtype=float)
        if self._linear:
            out = p.eta * (np.log(p.eta + p.chi * (p.T - r)) - np.log(p.eta + p.chi * (p.T - t)))
        else:
            _, den_r = self._den(r)
            _, den_t = self._den(t)
            out = -self._root * (r - t) + p.eta * (np.log(den_r) - np.log(den_t))
        return out if out.ndim else float(out)


def g3_eval(params: ModelParams, t) -> float:
    p = params
    if np.any(np.asarray(t) < 0) or np.any(np.asarray(t) > p.T):
        raise ValueError("t must lie in [0, T]")
    return G3Curve(params)(t)


def g3_integral(params: ModelParams, t, r) -> float:
    if np.any(np.asarray(r) < np.asarray(t)):
        raise ValueError("need t <= r")
    return G3Curve(params).integral(t, r)


def _ratio(k: float, s: np.ndarray) -> np.ndarray:
    """``(1 - exp(-k s)) / k`` with its ``k -> 0`` limit ``s``."""
    if k == 0:
        return s.copy()
    return -np.expm1(-k * s) / k


@dataclass(frozen=True)
class _Nodes:
    w: np.ndarray
    mubar: np.ndarray
    logc: np.ndarray
    lin: np.ndarray
    base: float
    ghat_integral: float


class G2Surface:
    """Evaluator of ``g2(t, eps)`` by Gauss-Legendre quadrature on ``[t, T]``.

    For a fixed ``t`` the node data (discount factor, OU moments) does not
    depend on ``eps``; it is computed once and memoized, so evaluating a whole
    batch of paths at one time step costs one fused pass over the nodes.
    """

    def __init__(self, params: ModelParams, quad_order: int = 64, g3: G3Curve | None = None,
                 cache_size: int = 4096):
        if quad_order < 2:
            raise ValueError("quad_order must be >= 2")
        self.params = params
        self.quad_order = int(quad_order)
        self.g3 = g3 if g3 is not None else G3Curve(params)
        self._x, self._wq = np.polynomial.legendre.leggauss(self.quad_order)
        self._nodes = lru_cache(maxsize=cache_size)(self._build_nodes)

    def refined(self, factor: int = 2) -> "G2Surface":
        return G2Surface(self.params, self.quad_order * factor, self.g3)

    def hat_g(self, t: float, r):
        """Discount ``exp(int_t^r g3/eta + mu1 (r - t))``."""
        p = self.params
        r = np.asarray(r, dtype=float)
        return np.exp(self.g3.integral(t, r) / p.eta + p.mu1 * (r - t))

    def _build_nodes(self, t: float) -> _Nodes:
        p = self.params
        half = 0.5 * (p.T - t)
        r = t + half * (self._x + 1.0)
        s = r - t
        w = self._wq * half * self.hat_g(t, r)
        mubar = np.exp(-p.k * s)
        c = p.rho * p.sigma1 * p.sigma2
        var = p.sigma2**2 * _ratio(2.0 * p.k, s)
        k_var = p.sigma2**2 * (-np.expm1(-2.0 * p.k * s)) / 2.0
        logc = 0.5 * var + c * _ratio(p.k, s)
        lin = k_var - 0.5 * p.sigma2**2 - c * mubar - p.mu1 + p.phi2
        wsum = float(w.sum())
        return _Nodes(
            w=np.ascontiguousarray(w),
            mubar=np.ascontiguousarray(mubar),
            logc=np.ascontiguousarray(logc),
            lin=np.ascontiguousarray(lin),
            base=p.phi3 * wsum,
            ghat_integral=wsum,
        )

    def _eval_t(self, t: float, eps: np.ndarray) -> np.ndarray:
        if t >= self.params.T:
            return np.ones_like(eps)
        nd = self._nodes(float(t))
        out = np.empty_like(eps)
        kernels.g2_sum(eps, nd.w, nd.mubar, nd.logc, nd.lin, self.params.k, nd.base, out)
        return out

    def __call__(self, t, eps):
        t_arr = np.asarray(t, dtype=float)
        eps_arr = np.asarray(eps, dtype=float)
        if t_arr.ndim == 0:
            flat = np.ascontiguousarray(eps_arr.reshape(-1))
            out = self._eval_t(float(t_arr), flat).reshape(eps_arr.shape)
        else:
            tb, eb = np.broadcast_arrays(t_arr, eps_arr)
            out = np.empty(tb.shape)
            tf, ef, of = tb.reshape(-1), eb.reshape(-1), out.reshape(-1)
            for tv in np.unique(tf):
                sel = tf == tv
                of[sel] = self._eval_t(float(tv), np.ascontiguousarray(ef[sel]))
        return out if out.ndim else float(out)

    def check(self, t: float, eps, tol: float = 1e-8) -> float:
        """Largest change when the order is doubled; raises past ``tol``."""
        eps_arr = np.atleast_1d(np.asarray(eps, dtype=float))
        fine = self.refined()(t, eps_arr)
        diff = np.abs(fine - self(t, eps_arr))
        worst = int(np.argmax(diff))
        if diff[worst] > tol:
            raise QuadratureError(float(t), float(eps_arr[worst]), float(diff[worst]))
        return float(diff[worst])


@dataclass(frozen=True)
class ValueEstimate:
    value: float
    std_error: float
    n_paths: int



def g2_monte_carlo(params: ModelParams, t: float, eps: float, n_paths: int = 1_000_000,
                   n_steps: int = 32, seed: int = 0, chunk: int = 50_000) -> ValueEstimate:
    """Feynman-Kac estimate of ``g2(t, eps)`` from simulated factor paths.

    ``exp(eps) (1 - g2)`` is the expected discounted integral of
    ``exp(x) (k x - sigma2^2/2 - rho sigma1 sigma2 - mu1 + phi2) + phi3`` along
    ``dx = (rho sigma1 sigma2 - k x) dr + sigma2 dW``, ``x_t = eps``. Paths use
    the exact OU transition and the time integral uses Simpson's rule, so the
    only bias is the deterministic Simpson error of a smooth function.
    """
    p = params
    if n_steps < 2 or n_steps % 2:
        raise ValueError("n_steps must be even and >= 2")
    if t >= p.T:
        return ValueEstimate(1.0, 0.0, n_paths)
    dt = (p.T - t) / n_steps
    r = t + dt * np.arange(n_steps + 1)
    g3 = G3Curve(p)
    disc = np.exp(g3.integral(t, r) / p.eta + p.mu1 * (r - t))
    weights = np.full(n_steps + 1, 2.0)
    weights[1::2] = 4.0
    weights[0] = weights[-1] = 1.0
    weights *= dt / 3.0
    c = p.rho * p.sigma1 * p.sigma2
    decay = math.exp(-p.k * dt)
    shift = c * float(_ratio(p.k, np.array(dt)))
    sd = p.sigma2 * math.sqrt(float(_ratio(2.0 * p.k, np.array(dt))))
    lin = -0.5 * p.sigma2**2 - c - p.mu1 + p.phi2
    total = total_sq = 0.0
    done, idx = 0, 0
    while done < n_paths:
        n = min(chunk, n_paths - done)
        z = np.random.default_rng([int(seed), idx]).standard_normal((n, n_steps))
        out = np.empty(n)
        kernels.fk_oracle(z, float(eps), shift, decay, sd, disc, weights, p.k, lin, p.phi3, out)
        total += float(out.sum())
        total_sq += float(np.dot(out, out))
        done += n
        idx += 1
    mean = total / n_paths
    var = max(total_sq / n_paths - mean * mean, 0.0) * n_paths / (n_paths - 1)
    scale = math.exp(-eps)
    return ValueEstimate(1.0 - scale * mean, scale * math.sqrt(var / n_paths), n_paths)

def g2_eval(params: ModelParams, t: float, eps, quad_order: int = 64, tol: float = 1e-8):
    """``g2(t, eps)`` with a doubling-based convergence check."""
    if not 0 <= t <= params.T:
        raise ValueError("t must lie in [0, T]")
    surf = G2Surface(params, quad_order)
    surf.check(t, eps, tol)
    return surf(t, eps)


def g1_estimate(params: ModelParams, t: float, a: float, eps: float, g2surface: G2Surface,
                n_paths: int, seed: int, n_steps: int = 100) -> ValueEstimate:
    """Monte-Carlo estimate of ``E_t[int_t^T S_r^2 (1 - g2(r, eps_r))^2 dr] / (4 eta)``.

    The time integral is taken by the trapezoid rule on ``n_steps`` intervals
    along exact (A, eps) paths.
    """
    if n_paths < 100:
        raise ValueError("n_paths must be >= 100")
    if t >= params.T:
        return ValueEstimate(0.0, 0.0, n_paths)
    world = simulate_world(params, MarketState(t=t, a=a, eps=eps, q=0.0), n_steps, n_paths, seed)
    integrand = np.empty_like(world.a)
    for i, r in enumerate(world.grid):
        gap = 1.0 - g2surface(float(r), np.ascontiguousarray(world.eps[:, i]))
        integrand[:, i] = (world.a[:, i] * np.exp(world.eps[:, i]) * gap) ** 2
    dt = world.grid[1] - world.grid[0]
    per_path = dt * (integrand[:, 1:-1].sum(axis=1) + 0.5 * (integrand[:, 0] + integrand[:, -1]))
    per_path /= 4.0 * params.eta
    return ValueEstimate(
        value=float(per_path.mean()),
        std_error=float(per_path.std(ddof=1) / math.sqrt(n_paths)),
        n_paths=n_paths,
    )


def candidate_value(params: ModelParams, state: MarketState, g2surface: G2Surface,
                    g3curve: G3Curve, g1: float = 0.0) -> float:
    """``g1 1{q>0} + q a e^eps g2 + q^2 g3`` at ``state``."""
    q = state.q
    if q == 0:
        return 0.0
    return g1 + q * state.s * g2surface(state.t, state.eps) + q * q * g3curve(state.t)


class ClosedFormPolicy(Policy):
    """``c = max(0, a e^eps (1 - g2) - 2 q g3) / (2 eta)`` while inventory remains.

    ``freeze_eps`` evaluates the rule as if the cointegration factor were
    pinned at that value (used for the single-stock benchmark).
    """

    def __init__(self, params: ModelParams, g2surface: G2Surface, g3curve: G3Curve,
                 label: str = "closed_form", freeze_eps: float | None = None):
        self.params = params
        self.g2 = g2surface
        self.g3 = g3curve
        self.label = label
        self.freeze_eps = freeze_eps

    def rate(self, t, a, eps, q):
        a = np.asarray(a, dtype=float)
        q = np.asarray(q, dtype=float)
        if self.freeze_eps is not None:
            eps = np.full_like(a, self.freeze_eps)
        eps = np.ascontiguousarray(np.broadcast_to(np.asarray(eps, dtype=float), a.shape))
        s = a * np.exp(eps)
        bracket = s * (1.0 - self.g2(t, eps)) - 2.0 * q * self.g3(t)
        r = np.maximum(bracket, 0.0) / (2.0 * self.params.eta)
        return np.where(q > 0, r, 0.0)


def closed_form_policy(params: ModelParams, g2surface: G2Surface | None = None,
                       g3curve: G3Curve | None = None) -> ClosedFormPolicy:
    cond = check_solvability(params)
    if not cond.holds:
        warnings.warn(
            f"sufficient condition fails (lhs={cond.lhs:.6g} < rhs={cond.rhs:.6g}); "
            "the closed-form rule may not be optimal",
            RuntimeWarning,
            stacklevel=2,
        )
    g3curve = g3curve or G3Curve(params)
    g2surface = g2surface or G2Surface(params, g3=g3curve)
    return ClosedFormPolicy(params, g2surface, g3curve)


def pde_residual_g2(params: ModelParams, g2surface: G2Surface, t: float, eps: float,
                    h_t: float, h_eps: float) -> float:
    """Central-difference residual of the linear PDE solved by ``g2``."""
    p = params
    g = g2surface
    e = np.array([eps - h_eps, eps, eps + h_eps])
    mid = g(t, e)
    g_t = (g(t + h_t, eps) - g(t - h_t, eps)) / (2.0 * h_t)
    g_e = (mid[2] - mid[0]) / (2.0 * h_eps)
    g_ee = (mid[2] - 2.0 * mid[1] + mid[0]) / h_eps**2
    c = p.rho * p.sigma1 * p.sigma2
    g3 = g2surface.g3(t)
    return float(
        g_t
        + 0.5 * p.sigma2**2 * g_ee
        + (p.sigma2**2 + c - p.k * eps) * g_e
        + (0.5 * p.sigma2**2 + c + p.mu1 - p.k * eps + g3 / p.eta) * mid[1]
        - p.phi2
        - p.phi3 * math.exp(-eps)
        - g3 / p.eta
    )


def write_g3_csv(g3curve: G3Curve, path: str | Path, n: int = 201) -> None:
    T = g3curve.params.T
    ts = np.linspace(0.0, T, n)
    vals = g3curve(ts)
    vals[-1] = g3curve(T)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "g3"])
        for t, v in zip(ts, vals):
            w.writerow([repr(float(t)), repr(float(v))])


def write_g2_csv(g2surface: G2Surface, path: str | Path, ts, eps_grid, tol: float | None = 1e-8) -> None:
    """Write ``t,eps,g2`` rows; with ``tol`` every time slice is convergence-checked."""
    eps_grid = np.ascontiguousarray(eps_grid, dtype=float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "eps", "g2"])
        for t in ts:
            if tol is not None:
                g2surface.check(float(t), eps_grid, tol)
            vals = g2surface(float(t), eps_grid)
            for e, v in zip(eps_grid, vals):
                w.writerow([repr(float(t)), repr(float(e)), repr(float(v))])
