"""Deep-BSDE solver for the coupled liquidation FBSDE.

Forward components: the exact (A, eps) dynamics and the inventory
``dQ = -(S - Y)^+ / (2 eta) dt``. The backward component ``Y`` (the marginal
value of a share) is run forward from a trainable ``Y0`` as
``dY = -g(X) dt + Z . dW`` with ``Z`` produced by a feed-forward network of
``(t, A, eps, Q)``; training drives ``Y_T`` onto ``h(X_T) = S_T - 2 chi Q_T``.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..models import MarketState, ModelParams, Policy, world_from_noise
from . import autodiff as ad
from .autodiff import Tensor

__all__ = [
    "NetParams",
    "TrainConfig",
    "TrainReport",
    "RolloutResult",
    "ArchitectureMismatch",
    "TrainingDiverged",
    "driver_g",
    "terminal_h",
    "fbsde_control",
    "init_net",
    "rollout",
    "loss_and_grads",
    "train",
    "NNPolicy",
    "nn_policy",
]


class ArchitectureMismatch(ValueError):
    def __init__(self, expected: str, found: str):
        super().__init__(f"weight file architecture mismatch: expected {expected!r}, found {found!r}")
        self.expected = expected
        self.found = found


class TrainingDiverged(RuntimeError):
    def __init__(self, report: "TrainReport"):
        super().__init__(f"training diverged at step {report.steps_run}")
        self.report = report


def _unpack(state_or_a, eps, q):
    if isinstance(state_or_a, MarketState):
        return state_or_a.a, state_or_a.eps, state_or_a.q
    return state_or_a, eps, q


def driver_g(params: ModelParams, state_or_a, eps=None, q=None):
    """``-2 phi1 q - phi2 a e^eps - phi3 a``; ``q`` may be a :class:`Tensor`."""
    a, eps, q = _unpack(state_or_a, eps, q)
    s = np.multiply(a, np.exp(eps))
    rest = params.phi2 * s + params.phi3 * np.asarray(a)
    out = (-2.0 * params.phi1) * q - rest
    if isinstance(state_or_a, MarketState):
        return float(out)
    return out


def terminal_h(params: ModelParams, state_or_a, eps=None, q=None):
    """``a e^eps - 2 chi q``."""
    a, eps, q = _unpack(state_or_a, eps, q)
    out = (-2.0 * params.chi) * q + np.multiply(a, np.exp(eps))
    if isinstance(state_or_a, MarketState):
        return float(out)
    return out


def fbsde_control(params: ModelParams, state_or_a, y, eps=None):
    """Hamiltonian maximizer ``(a e^eps - y)^+ / (2 eta)``.

    Called either as ``fbsde_control(params, state, y)`` or with arrays
    ``fbsde_control(params, a, y, eps=eps)``.
    """
    if isinstance(state_or_a, MarketState):
        return max(0.0, state_or_a.s - float(y)) / (2.0 * params.eta)
    s = np.multiply(state_or_a, np.exp(eps))
    if isinstance(y, Tensor):
        return ad.relu(s - y) * (1.0 / (2.0 * params.eta))
    return np.maximum(s - y, 0.0) / (2.0 * params.eta)


@dataclass
class NetParams:
    """Trainable scalar ``Y0`` plus one time-conditioned ``Z`` network.

    ``sizes`` lists layer widths from the 4 input features to the 2 outputs.
    ``scale`` holds the fixed input normalisation.
    """

    y0: float
    weights: list
    biases: list
    sizes: tuple = (4, 16, 16, 2)
    activation: str = "tanh"
    scale: dict = field(default_factory=dict)

    def __post_init__(self):
        self.sizes = tuple(int(s) for s in self.sizes)
        self.weights = [np.asarray(w, dtype=float) for w in self.weights]
        self.biases = [np.asarray(b, dtype=float) for b in self.biases]
        if self.activation != "tanh":
            raise ValueError(f"unsupported activation {self.activation!r}")
        if self.sizes[0] != 4 or self.sizes[-1] != 2:
            raise ValueError("network must map 4 features to 2 outputs")
        if len(self.weights) != len(self.sizes) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("layer count does not match sizes")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.sizes[i], self.sizes[i + 1]) or b.shape != (self.sizes[i + 1],):
                raise ValueError(f"layer {i} shape does not match sizes")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {i} has non-finite entries")
        if not math.isfinite(self.y0):
            raise ValueError("y0 must be finite")

    @property
    def architecture(self) -> str:
        return f"mlp:{'-'.join(map(str, self.sizes))}:{self.activation}:shared_z:scalar_y0"

    def copy(self) -> "NetParams":
        return NetParams(self.y0, [w.copy() for w in self.weights], [b.copy() for b in self.biases],
                         self.sizes, self.activation, dict(self.scale))

    def to_json(self) -> dict:
        return {
            "architecture": self.architecture,
            "sizes": list(self.sizes),
            "activation": self.activation,
            "scale": {k: float(v) for k, v in sorted(self.scale.items())},
            "y0": float(self.y0),
            "weights": [w.reshape(-1).tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1))

    @classmethod
    def from_json(cls, doc: dict, expected_architecture: str | None = None) -> "NetParams":
        found = doc.get("architecture", "<missing>")
        if expected_architecture is not None and found != expected_architecture:
            raise ArchitectureMismatch(expected_architecture, found)
        sizes = tuple(doc["sizes"])
        weights = [np.asarray(w, dtype=float).reshape(sizes[i], sizes[i + 1])
                   for i, w in enumerate(doc["weights"])]
        net = cls(doc["y0"], weights, doc["biases"], sizes, doc["activation"], dict(doc["scale"]))
        if net.architecture != found:
            raise ArchitectureMismatch(found, net.architecture)
        return net

    @classmethod
    def load(cls, path: str | Path, expected_architecture: str | None = None) -> "NetParams":
        return cls.from_json(json.loads(Path(path).read_text()), expected_architecture)


@dataclass(frozen=True)
class TrainConfig:
    n_steps_time: int = 40
    batch_size: int = 64
    validation_size: int = 256
    max_train_steps: int = 5000
    learning_rate: float = 1e-2
    lr_boundaries: tuple = (0.5, 0.75)
    lr_decay: float = 0.1
    eval_every: int = 50
    hidden: tuple = (16, 16)
    seed: int = 0
    y0_init: float | None = None

    def __post_init__(self):
        for name in ("n_steps_time", "batch_size", "validation_size", "max_train_steps", "eval_every"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")

    def lr_at(self, step: int) -> float:
        lr = self.learning_rate
        for frac in self.lr_boundaries:
            if step >= frac * self.max_train_steps:
                lr *= self.lr_decay
        return lr


@dataclass
class TrainReport:
    train_loss: list
    val_steps: list
    val_loss: list
    final_val_loss: float
    best_step: int
    duration: float
    steps_run: int
    diverged: bool = False

    def to_csv(self, path: str | Path) -> None:
        val = dict(zip(self.val_steps, self.val_loss))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "train_loss", "val_loss"])
            for i, tl in enumerate(self.train_loss):
                v = val.get(i)
                w.writerow([i, repr(float(tl)), "" if v is None else repr(float(v))])


def default_scale(params: ModelParams, initial: MarketState) -> dict:
    root_t = math.sqrt(params.T)
    return {
        "T": params.T,
        "a_ref": initial.a,
        "a_scale": params.sigma1 * root_t if params.sigma1 > 0 else 1.0,
        "eps_scale": params.sigma2 * root_t if params.sigma2 > 0 else 1.0,
        "q_ref": initial.q if initial.q > 0 else 1.0,
    }


def init_net(params: ModelParams, initial: MarketState, hidden=(16, 16), seed: int = 0,
             y0: float | None = None) -> NetParams:
    """Glorot-uniform hidden layers; the output layer starts small."""
    rng = np.random.default_rng([int(seed), 7])
    sizes = (4, *map(int, hidden), 2)
    weights, biases = [], []
    for i in range(len(sizes) - 1):
        lim = math.sqrt(6.0 / (sizes[i] + sizes[i + 1]))
        if i == len(sizes) - 2:
            lim *= 0.1
        weights.append(rng.uniform(-lim, lim, (sizes[i], sizes[i + 1])))
        biases.append(np.zeros(sizes[i + 1]))
    y0 = initial.s if y0 is None else float(y0)
    return NetParams(y0, weights, biases, sizes, "tanh", default_scale(params, initial))


class _Model:
    """Tensor view of :class:`NetParams` for differentiation."""

    def __init__(self, net: NetParams, requires_grad: bool = True):
        self.net = net
        self.y0 = Tensor(np.array(net.y0), requires_grad)
        self.weights = [Tensor(w, requires_grad) for w in net.weights]
        self.biases = [Tensor(b, requires_grad) for b in net.biases]

    @property
    def tensors(self) -> list[Tensor]:
        return [self.y0, *self.weights, *self.biases]

    def z(self, t: float, a, eps, q):
        sc = self.net.scale
        n = np.shape(a)[0]
        const = np.empty((n, 3))
        const[:, 0] = t / sc["T"]
        const[:, 1] = np.log(a / sc["a_ref"]) / sc["a_scale"]
        const[:, 2] = eps / sc["eps_scale"]
        if isinstance(q, Tensor):
            qcol = q[:, None] if q.requires_grad else Tensor(q.data[:, None])
            h = ad.concat([const, qcol * (1.0 / sc["q_ref"])], axis=1)
        else:
            h = Tensor(np.concatenate([const, (np.asarray(q) / sc["q_ref"])[:, None]], axis=1))
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = ad.tanh(h)
        return h

    def snapshot(self) -> NetParams:
        n = self.net
        return NetParams(float(self.y0.data), [w.data.copy() for w in self.weights],
                         [b.data.copy() for b in self.biases], n.sizes, n.activation, dict(n.scale))


def z_values(net: NetParams, t: float, a, eps, q) -> np.ndarray:
    """Evaluate the Z network without gradient tracking; returns shape (n, 2)."""
    return _Model(net, requires_grad=False).z(t, np.asarray(a, float), np.asarray(eps, float),
                                               np.asarray(q, float)).data


@dataclass
class RolloutResult:
    y_T: np.ndarray
    a_T: np.ndarray
    eps_T: np.ndarray
    q_T: np.ndarray
    h_T: np.ndarray
    loss: Tensor


def _rollout(model: _Model, params: ModelParams, initial: MarketState, dw: np.ndarray,
             grid: np.ndarray) -> RolloutResult:
    n, N, _ = dw.shape
    dt = float(grid[1] - grid[0])
    world = world_from_noise(params, initial.a, initial.eps, grid, dw / math.sqrt(dt))
    a, eps = world.a, world.eps
    s = a * np.exp(eps)
    y = model.y0 * np.ones(n) if model.y0.requires_grad else Tensor(np.full(n, float(model.y0.data)))
    q = Tensor(np.full(n, initial.q))
    for i in range(N):
        z = model.z(float(grid[i]), a[:, i], eps[:, i], q)
        if not np.all(np.isfinite(z.data)):
            raise FloatingPointError(f"non-finite network output at step {i}")
        c = fbsde_control(params, a[:, i], y, eps=eps[:, i])
        g = driver_g(params, a[:, i], eps[:, i], q)
        y = y - g * dt + z[:, 0] * dw[:, i, 0] + z[:, 1] * dw[:, i, 1]
        q = q - c * dt
        if not (np.all(np.isfinite(y.data)) and np.all(np.isfinite(q.data))):
            raise FloatingPointError(f"non-finite rollout state at step {i}")
    h = terminal_h(params, a[:, -1], eps[:, -1], q)
    loss = ad.mean(ad.absolute(y - h))
    return RolloutResult(y.data, a[:, -1], eps[:, -1], q.data, np.asarray(h.data), loss)


def rollout(net: NetParams, cfg: TrainConfig, params: ModelParams, initial: MarketState,
            dw: np.ndarray) -> RolloutResult:
    """Forward pass over a batch of Brownian increments ``dw`` of shape (B, N, 2).

    Returns terminal ``Y``, terminal states and the loss ``E|Y_T - h(X_T)|``.
    """
    if dw.ndim != 3 or dw.shape[1] != cfg.n_steps_time or dw.shape[2] != 2:
        raise ValueError("dw must have shape (batch, n_steps_time, 2)")
    grid = np.linspace(initial.t, params.T, cfg.n_steps_time + 1)
    return _rollout(_Model(net, requires_grad=False), params, initial, dw, grid)


def loss_and_grads(net: NetParams, params: ModelParams, initial: MarketState,
                   dw: np.ndarray) -> tuple[float, list[np.ndarray]]:
    """Loss and its gradient w.r.t. ``[y0, *weights, *biases]``."""
    model = _Model(net)
    grid = np.linspace(initial.t, params.T, dw.shape[1] + 1)
    res = _rollout(model, params, initial, dw, grid)
    res.loss.backward()
    grads = [np.zeros_like(t.data) if t.grad is None else t.grad for t in model.tensors]
    return float(res.loss.data), grads


def _brownian(rng: np.random.Generator, n: int, steps: int, dt: float) -> np.ndarray:
    return rng.standard_normal((n, steps, 2)) * math.sqrt(dt)


def train(params: ModelParams, cfg: TrainConfig, initial: MarketState,
          net: NetParams | None = None, log=None) -> tuple[NetParams, TrainReport]:
    """Adam on fresh batches; keeps the parameters with the best validation loss."""
    if initial.t >= params.T:
        raise ValueError("initial time must precede T")
    start = time.perf_counter()
    dt = (params.T - initial.t) / cfg.n_steps_time
    val_dw = _brownian(np.random.default_rng([cfg.seed, 1]), cfg.validation_size, cfg.n_steps_time, dt)
    batch_rng = np.random.default_rng([cfg.seed, 2])
    if net is None:
        net = init_net(params, initial, cfg.hidden, cfg.seed, cfg.y0_init)
    model = _Model(net.copy())
    tensors = model.tensors
    m1 = [np.zeros_like(t.data) for t in tensors]
    m2 = [np.zeros_like(t.data) for t in tensors]
    b1, b2, adam_eps = 0.9, 0.999, 1e-8
    grid = np.linspace(initial.t, params.T, cfg.n_steps_time + 1)

    def validate() -> float:
        frozen = _Model(model.snapshot(), requires_grad=False)
        return float(_rollout(frozen, params, initial, val_dw, grid).loss.data)

    train_loss, val_steps, val_loss = [], [], []
    best_val, best_net, best_step = math.inf, model.snapshot(), 0
    initial_val = None
    bad = 0
    diverged = False
    step = 0
    for step in range(cfg.max_train_steps):
        if step % cfg.eval_every == 0:
            v = validate()
            val_steps.append(step)
            val_loss.append(v)
            if initial_val is None:
                initial_val = v
            if v < best_val:
                best_val, best_net, best_step = v, model.snapshot(), step
            bad = bad + 1 if v > 10.0 * initial_val else 0
            if bad >= 100:
                diverged = True
                break
            if log is not None:
                log(step, v)
        for t in tensors:
            t.zero_grad()
        dw = _brownian(batch_rng, cfg.batch_size, cfg.n_steps_time, dt)
        res = _rollout(model, params, initial, dw, grid)
        res.loss.backward()
        train_loss.append(float(res.loss.data))
        lr = cfg.lr_at(step)
        k = step + 1
        for j, t in enumerate(tensors):
            g = t.grad if t.grad is not None else 0.0
            m1[j] = b1 * m1[j] + (1 - b1) * g
            m2[j] = b2 * m2[j] + (1 - b2) * g * g
            t.data = t.data - lr * (m1[j] / (1 - b1**k)) / (np.sqrt(m2[j] / (1 - b2**k)) + adam_eps)
    else:
        step = cfg.max_train_steps
        v = validate()
        val_steps.append(step)
        val_loss.append(v)
        if v < best_val:
            best_val, best_net, best_step = v, model.snapshot(), step
    report = TrainReport(
        train_loss=train_loss,
        val_steps=val_steps,
        val_loss=val_loss,
        final_val_loss=best_val,
        best_step=best_step,
        duration=time.perf_counter() - start,
        steps_run=step,
        diverged=diverged,
    )
    if diverged:
        raise TrainingDiverged(report)
    return best_net, report


class NNPolicy(Policy):
    """Control from a trained network, tracking ``Y`` along each realized path.

    ``Y`` starts at ``Y0`` and is advanced with ``-g dt + Z . dW`` using the
    increments the simulator reports after every step.
    """

    def __init__(self, params: ModelParams, net: NetParams, label: str = "nn"):
        self.params = params
        self.net = net
        self.label = label
        self._model = _Model(net, requires_grad=False)
        self.y = None

    def reset(self, n_paths: int, initial: MarketState) -> None:
        self.y = np.full(n_paths, float(self.net.y0))

    def rate(self, t, a, eps, q):
        if self.y is None:
            raise RuntimeError("NNPolicy.reset must be called before use")
        q = np.asarray(q, dtype=float)
        c = fbsde_control(self.params, np.asarray(a, float), self.y, eps=np.asarray(eps, float))
        return np.where(q > 0, c, 0.0)

    def advance(self, t, a, eps, q, dw1, dw2, dt):
        a = np.asarray(a, float)
        eps = np.asarray(eps, float)
        q = np.asarray(q, float)
        z = self._model.z(float(t), a, eps, q).data
        self.y = self.y - driver_g(self.params, a, eps, q) * dt + z[:, 0] * dw1 + z[:, 1] * dw2


def nn_policy(params: ModelParams, net: NetParams) -> NNPolicy:
    return NNPolicy(params, net)
