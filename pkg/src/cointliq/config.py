"""Run configuration: one JSON document, strict keys, CLI overrides."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from .fbsde.solver import TrainConfig
from .models import MarketState, ModelParams, load_params


class ConfigError(ValueError):
    """Malformed configuration; the message names the offending key."""


HARNESS_DEFAULTS = {
    "n_paths": 100,
    "n_trades": 100,
    "n_steps": 40,
    "seed": 0,
    "jobs": None,
    "quad_order": 64,
    "policies": ["price_S", "gbm_approx", "stock_A"],
    "sigma1_range": [0.25, 0.35],
    "sigma2_range": [0.04, 0.06],
    "g2_grid": {"n_t": 21, "eps_min": -3.0, "eps_max": 3.0, "n_eps": 61},
}
POLICY_NAMES = ("price_S", "gbm_approx", "stock_A")
TOP_KEYS = {"params", "initial", "train", "harness", "out"}


@dataclass
class RunConfig:
    params: ModelParams
    initial: MarketState
    train: TrainConfig | None = None
    harness: dict = field(default_factory=lambda: json.loads(json.dumps(HARNESS_DEFAULTS)))
    out: str = "out"


def _check_keys(doc: dict, allowed, where: str) -> None:
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}: expected an object")
    unknown = sorted(set(doc) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s): {', '.join(unknown)}")


def parse_config(doc: dict) -> RunConfig:
    _check_keys(doc, TOP_KEYS, "config")
    for key in ("params", "initial"):
        if key not in doc:
            raise ConfigError(f"config: missing key: {key}")
    try:
        params = load_params(doc["params"])
    except KeyError as exc:
        raise ConfigError(f"params: {exc.args[0]}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"params: {exc}") from None

    init_doc = doc["initial"]
    _check_keys(init_doc, ("t", "a", "eps", "q", "m"), "initial")
    for key in ("a", "eps", "q"):
        if key not in init_doc:
            raise ConfigError(f"initial: missing key: {key}")
    try:
        initial = MarketState(**{"t": 0.0, "m": 0.0, **init_doc})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"initial: {exc}") from None
    if initial.q >= params.cap_for(initial.q):
        raise ConfigError("initial: q must be below params.q_bar")

    train = None
    if "train" in doc:
        names = [f.name for f in fields(TrainConfig)]
        _check_keys(doc["train"], names, "train")
        tdoc = dict(doc["train"])
        for key in ("hidden", "lr_boundaries"):
            if key in tdoc:
                tdoc[key] = tuple(tdoc[key])
        try:
            train = TrainConfig(**tdoc)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"train: {exc}") from None

    harness = json.loads(json.dumps(HARNESS_DEFAULTS))
    if "harness" in doc:
        _check_keys(doc["harness"], HARNESS_DEFAULTS, "harness")
        harness.update(doc["harness"])
        if "g2_grid" in doc["harness"]:
            _check_keys(doc["harness"]["g2_grid"], HARNESS_DEFAULTS["g2_grid"], "harness.g2_grid")
            harness["g2_grid"] = {**HARNESS_DEFAULTS["g2_grid"], **doc["harness"]["g2_grid"]}
    if not isinstance(harness["policies"], list) or not harness["policies"]:
        raise ConfigError("harness.policies: must be a nonempty list")
    for name in harness["policies"]:
        if name not in POLICY_NAMES:
            raise ConfigError(f"harness.policies: unknown policy {name!r}")
    for key in ("n_paths", "n_trades", "n_steps", "jobs", "quad_order"):
        if key == "jobs" and harness[key] is None:
            continue
        if not isinstance(harness[key], int) or isinstance(harness[key], bool) or harness[key] < 1:
            raise ConfigError(f"harness.{key}: must be a positive integer")
    out = doc.get("out", "out")
    if not isinstance(out, str):
        raise ConfigError("out: must be a string path")
    return RunConfig(params, initial, train, harness, out)


def load_config(path: str | Path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return parse_config(doc)
