"""Model parameters, market state, exact simulators and path bookkeeping.

The liquidated stock is ``S = A * exp(eps)`` where ``A`` follows a geometric
Brownian motion and the cointegration factor ``eps`` an Ornstein-Uhlenbeck
process whose driver is correlated with the one of ``A``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels

__all__ = [
    "ModelParams",
    "MarketState",
    "SimPath",
    "PathBatch",
    "World",
    "Policy",
    "ConstantRatePolicy",
    "SimulationError",
    "path_rng",
    "sample_increments",
    "step_exact",
    "simulate_world",
    "run_policy",
    "simulate_batch",
    "simulate_path",
    "ou_moments",
    "load_params",
    "dump_params",
]


class SimulationError(RuntimeError):
    """A simulated state became non-finite."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


@dataclass(frozen=True)
class ModelParams:
    """Market dynamics and cost/penalty parameters.

    ``q_bar`` is the inventory cap; ``None`` means "initial inventory + 1".
    """

    mu1: float
    sigma1: float
    sigma2: float
    rho: float
    k: float
    eta: float
    chi: float
    phi1: float
    phi2: float
    phi3: float
    T: float
    q_bar: float | None = None

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None and f.name == "q_bar":
                continue
            if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v):
                raise ValueError(f"parameter {f.name!r} must be a finite number, got {v!r}")
            object.__setattr__(self, f.name, float(v))
        if self.sigma1 < 0 or self.sigma2 < 0:
            raise ValueError("volatilities must be nonnegative")
        if self.k < 0:
            raise ValueError("mean-reversion speed k must be nonnegative")
        if self.eta <= 0:
            raise ValueError("temporary impact eta must be positive")
        if self.chi < 0 or min(self.phi1, self.phi2, self.phi3) < 0:
            raise ValueError("chi and phi1..phi3 must be nonnegative")
        if not -1.0 <= self.rho <= 1.0:
            raise ValueError("rho must lie in [-1, 1]")
        if self.T <= 0:
            raise ValueError("horizon T must be positive")
        if self.q_bar is not None and self.q_bar <= 0:
            raise ValueError("q_bar must be positive")

    def replace(self, **changes) -> "ModelParams":
        return replace(self, **changes)

    def cap_for(self, q0: float) -> float:
        return q0 + 1.0 if self.q_bar is None else self.q_bar


def load_params(source: str | Path | dict) -> ModelParams:
    """Build :class:`ModelParams` from a JSON file or an already parsed dict.

    Keys must be exactly the field names; unknown or missing keys raise
    ``KeyError`` naming the key.
    """
    if isinstance(source, dict):
        doc = source
    else:
        doc = json.loads(Path(source).read_text())
    names = [f.name for f in fields(ModelParams)]
    unknown = sorted(set(doc) - set(names))
    if unknown:
        raise KeyError(f"unknown parameter key(s): {', '.join(unknown)}")
    for name in names:
        if name != "q_bar" and name not in doc:
            raise KeyError(f"missing parameter key: {name}")
    return ModelParams(**doc)


def dump_params(params: ModelParams, path: str | Path) -> None:
    Path(path).write_text(json.dumps(asdict(params), indent=2))


@dataclass(frozen=True)
class MarketState:
    """One point of the controlled system."""

    t: float
    a: float
    eps: float
    q: float
    m: float = 0.0

    def __post_init__(self):
        for name in ("t", "a", "eps", "q", "m"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"state field {name!r} is not finite")
        if self.a <= 0:
            raise ValueError("price a must be positive")
        if self.q < 0:
            raise ValueError("inventory q must be nonnegative")
        if self.t < 0:
            raise ValueError("time t must be nonnegative")

    @property
    def s(self) -> float:
        """Price of the liquidated stock."""
        return self.a * math.exp(self.eps)


class Policy:
    """Maps (t, state) to a nonnegative selling rate.

    Subclasses implement :meth:`rate` on numpy arrays (one entry per path).
    Policies that carry per-path memory override :meth:`reset` and
    :meth:`advance`; the simulators call them at the start of a run and after
    every step with the Brownian increments that drove that step.
    """

    label = "policy"

    def rate(self, t: float, a, eps, q):
        raise NotImplementedError

    def reset(self, n_paths: int, initial: MarketState) -> None:
        pass

    def advance(self, t: float, a, eps, q, dw1, dw2, dt: float) -> None:
        pass

    def __call__(self, t: float, state: MarketState) -> float:
        r = self.rate(t, np.array([state.a]), np.array([state.eps]), np.array([state.q]))
        return float(np.asarray(r).reshape(-1)[0])


class ConstantRatePolicy(Policy):
    def __init__(self, value: float, label: str = "constant"):
        if value < 0:
            raise ValueError("rate must be nonnegative")
        self.value = float(value)
        self.label = label

    def rate(self, t, a, eps, q):
        q = np.asarray(q, dtype=float)
        return np.where(q > 0, self.value, 0.0)


def path_rng(seed: int, path_index: int = 0) -> np.random.Generator:
    """Generator for one path, derived from ``(seed, path_index)``.

    Serial and chunked/parallel runs agree because each path owns its stream.
    """
    return np.random.default_rng([int(seed), int(path_index)])


def sample_increments(rng: np.random.Generator, dt: float) -> tuple[float, float]:
    """Two independent N(0, dt) Brownian increments."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    z = rng.standard_normal(2)
    sq = math.sqrt(dt)
    return float(z[0] * sq), float(z[1] * sq)


def _ou_factor(k: float, dt: float) -> tuple[float, float]:
    """Return (exp(-k dt), sqrt(var)/sigma2) of the OU transition over ``dt``."""
    decay = math.exp(-k * dt)
    half = dt if k == 0 else -math.expm1(-2.0 * k * dt) / (2.0 * k)
    return decay, math.sqrt(half)


def ou_moments(params: ModelParams, eps0: float, dt: float) -> tuple[float, float]:
    """Conditional mean and variance of the OU factor after ``dt``."""
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    decay, scale = _ou_factor(params.k, dt)
    return eps0 * decay, (params.sigma2 * scale) ** 2


def step_exact(
    params: ModelParams, state: MarketState, rate: float, dt: float, dw1: float, dw2: float
) -> MarketState:
    """Advance one step: exact GBM/OU transitions, explicit Q and M updates.

    The traded amount is ``min(rate * dt, q)`` so inventory never turns
    negative; wealth uses the pre-step price.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if rate < 0:
        raise ValueError("rate must be nonnegative")
    for v in (rate, dw1, dw2):
        if not math.isfinite(v):
            raise SimulationError("non-finite step input")
    p = params
    s = state.s
    eff = min(rate, state.q / dt)
    a = state.a * math.exp((p.mu1 - 0.5 * p.sigma1**2) * dt + p.sigma1 * dw1)
    decay, scale = _ou_factor(p.k, dt)
    xi = (p.rho * dw1 + math.sqrt(max(0.0, 1.0 - p.rho**2)) * dw2) / math.sqrt(dt)
    eps = state.eps * decay + p.sigma2 * scale * xi
    q = state.q - eff * dt
    if eff * dt >= state.q:
        q = 0.0
    m = state.m + eff * (s - p.eta * eff) * dt
    if not all(math.isfinite(v) for v in (a, eps, m)) or a <= 0:
        raise SimulationError("non-finite state")
    return MarketState(t=state.t + dt, a=a, eps=eps, q=q, m=m)


@dataclass
class World:
    """Policy-independent (A, eps) trajectories for a batch of paths.

    Arrays have shape ``(n_paths, n_steps + 1)``; increments ``dw`` have shape
    ``(n_paths, n_steps, 2)``.
    """

    grid: np.ndarray
    a: np.ndarray
    eps: np.ndarray
    dw: np.ndarray

    @property
    def n_paths(self) -> int:
        return self.a.shape[0]

    @property
    def n_steps(self) -> int:
        return self.grid.size - 1


def _draw_noise(seed: int, indices: Sequence[int], n_steps: int) -> np.ndarray:
    out = np.empty((len(indices), n_steps, 2))
    for row, i in enumerate(indices):
        out[row] = path_rng(seed, i).standard_normal((n_steps, 2))
    return out


def world_from_noise(
    params: ModelParams,
    a0: float,
    eps0: float,
    grid: np.ndarray,
    z: np.ndarray,
    sigma1=None,
    sigma2=None,
) -> World:
    """Build the exact (A, eps) trajectories from unit normals ``z``.

    ``sigma1``/``sigma2`` may be per-path arrays (robustness runs); they
    default to the values in ``params``.
    """
    n = z.shape[0]
    dt = float(grid[1] - grid[0])
    sig1 = np.broadcast_to(np.asarray(params.sigma1 if sigma1 is None else sigma1, float), (n,))
    sig2 = np.broadcast_to(np.asarray(params.sigma2 if sigma2 is None else sigma2, float), (n,))
    decay, scale = _ou_factor(params.k, dt)
    rho_c = math.sqrt(max(0.0, 1.0 - params.rho**2))
    a = np.empty((n, grid.size))
    eps = np.empty((n, grid.size))
    kernels.gbm_ou_paths(
        np.ascontiguousarray(z[:, :, 0]),
        np.ascontiguousarray(z[:, :, 1]),
        float(a0),
        float(eps0),
        float(params.mu1),
        np.ascontiguousarray(sig1, dtype=float),
        np.ascontiguousarray(sig2 * scale, dtype=float),
        decay,
        float(params.rho),
        rho_c,
        dt,
        a,
        eps,
    )
    return World(grid=grid, a=a, eps=eps, dw=z * math.sqrt(dt))


def simulate_world(
    params: ModelParams,
    initial: MarketState,
    n_steps: int,
    n_paths: int,
    seed: int,
    first_index: int = 0,
    sigma1=None,
    sigma2=None,
    jobs: int = 1,
) -> World:
    """Simulate ``n_paths`` world paths with per-path seeds ``(seed, index)``."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if initial.t >= params.T:
        raise ValueError("initial time must be before the horizon")
    grid = np.linspace(initial.t, params.T, n_steps + 1)
    indices = list(range(first_index, first_index + n_paths))
    if jobs > 1 and n_paths > 1:
        from concurrent.futures import ThreadPoolExecutor

        chunks = np.array_split(np.array(indices), jobs)
        with ThreadPoolExecutor(jobs) as ex:
            parts = list(ex.map(lambda c: _draw_noise(seed, list(c), n_steps), chunks))
        z = np.concatenate(parts, axis=0)
    else:
        z = _draw_noise(seed, indices, n_steps)
    return world_from_noise(params, initial.a, initial.eps, grid, z, sigma1, sigma2)


@dataclass
class PathBatch:
    """Trajectories of a policy applied to a :class:`World`."""

    grid: np.ndarray
    a: np.ndarray
    eps: np.ndarray
    q: np.ndarray
    m: np.ndarray
    rate: np.ndarray
    tau_index: np.ndarray
    seed: int | None = None
    label: str = ""

    @property
    def s(self) -> np.ndarray:
        return self.a * np.exp(self.eps)

    def path(self, i: int) -> "SimPath":
        return SimPath(
            grid=self.grid.copy(),
            a=self.a[i].copy(),
            eps=self.eps[i].copy(),
            q=self.q[i].copy(),
            m=self.m[i].copy(),
            rate=self.rate[i].copy(),
            tau_index=int(self.tau_index[i]),
            seed=self.seed,
        )


def run_policy(params: ModelParams, policy: Policy, world: World, q0: float, m0: float = 0.0,
               initial: MarketState | None = None, seed: int | None = None) -> PathBatch:
    """Apply ``policy`` on the common world paths.

    At each grid point the policy sees the current state; the traded amount is
    clamped to the remaining inventory, and wealth accrues at the pre-trade
    price net of temporary impact.
    """
    n, N = world.n_paths, world.n_steps
    dt = float(world.grid[1] - world.grid[0])
    q_bar = params.cap_for(q0)
    if not 0 <= q0 < q_bar:
        raise ValueError("initial inventory must lie in [0, q_bar)")
    if initial is None:
        initial = MarketState(t=float(world.grid[0]), a=float(world.a[0, 0]),
                              eps=float(world.eps[0, 0]), q=q0, m=m0)
    q = np.empty((n, N + 1))
    m = np.empty((n, N + 1))
    rate = np.zeros((n, N + 1))
    q[:, 0] = q0
    m[:, 0] = m0
    policy.reset(n, initial)
    s = world.a * np.exp(world.eps)
    q_cur = np.full(n, float(q0))
    m_cur = np.full(n, float(m0))
    q_next = np.empty(n)
    m_next = np.empty(n)
    for i in range(N):
        t = float(world.grid[i])
        a_i = world.a[:, i]
        eps_i = world.eps[:, i]
        r = np.asarray(policy.rate(t, a_i, eps_i, q_cur), dtype=float)
        r = np.array(np.broadcast_to(r, (n,)), dtype=float)
        if not np.all(np.isfinite(r)):
            raise SimulationError("policy produced a non-finite rate", step=i)
        if np.any(r < 0):
            raise SimulationError("policy produced a negative rate", step=i)
        kernels.trade_step(q_cur, m_cur, r, np.ascontiguousarray(s[:, i]), params.eta, dt,
                           q_next, m_next)
        if not np.all(np.isfinite(m_next)):
            raise SimulationError("non-finite wealth", step=i)
        rate[:, i] = r
        q[:, i + 1] = q_next
        m[:, i + 1] = m_next
        policy.advance(t, a_i, eps_i, q_cur, world.dw[:, i, 0], world.dw[:, i, 1], dt)
        q_cur, q_next = q_next, q_cur
        m_cur, m_next = m_next, m_cur
    zero = q == 0.0
    tau = np.where(zero.any(axis=1), zero.argmax(axis=1), N)
    return PathBatch(grid=world.grid, a=world.a, eps=world.eps, q=q, m=m, rate=rate,
                     tau_index=tau, seed=seed, label=policy.label)


def simulate_batch(params: ModelParams, policy: Policy, initial: MarketState, n_steps: int,
                   n_paths: int, seed: int, jobs: int = 1) -> PathBatch:
    world = simulate_world(params, initial, n_steps, n_paths, seed, jobs=jobs)
    return run_policy(params, policy, world, initial.q, initial.m, initial=initial, seed=seed)


@dataclass
class SimPath:
    """A single discretized trajectory of (A, eps, Q, M) and applied rates.

    ``rate[i]`` is the (clamped) rate used on ``[grid[i], grid[i+1])``; the
    last entry is 0.
    """

    grid: np.ndarray
    a: np.ndarray
    eps: np.ndarray
    q: np.ndarray
    m: np.ndarray
    rate: np.ndarray
    tau_index: int
    seed: int | None = None
    extra: dict = field(default_factory=dict)

    @property
    def n_steps(self) -> int:
        return self.grid.size - 1

    @property
    def states(self) -> list[MarketState]:
        return [MarketState(t=float(t), a=float(a), eps=float(e), q=float(q), m=float(m))
                for t, a, e, q, m in zip(self.grid, self.a, self.eps, self.q, self.m)]

    @property
    def s(self) -> np.ndarray:
        return self.a * np.exp(self.eps)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "a", "eps", "q", "m", "rate"])
            for row in zip(self.grid, self.a, self.eps, self.q, self.m, self.rate):
                w.writerow([repr(float(v)) for v in row])


def simulate_path(params: ModelParams, policy: Policy, initial: MarketState, n_steps: int,
                  seed: int, path_index: int = 0) -> SimPath:
    """Simulate one path on a uniform grid of ``n_steps`` intervals on [t0, T].

    The path equals row ``path_index`` of :func:`simulate_batch` with the same
    seed.
    """
    world = simulate_world(params, initial, n_steps, 1, seed, first_index=path_index)
    batch = run_policy(params, policy, world, initial.q, initial.m, initial=initial, seed=seed)
    return batch.path(0)
