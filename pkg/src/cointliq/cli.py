"""Command-line entry point: ``cointliq <command> --config run.json``.

Exit codes: 0 success, 1 usage or configuration error, 2 domain failure
(condition violated, quadrature not converged, training diverged, or an
evaluated network far from the closed form).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import schemas
from .bench import compare_strategies, robustness_test, standard_policies, write_stats_csv, write_stats_json
from .closedform import (
    G2Surface,
    G3Curve,
    QuadratureError,
    check_solvability,
    closed_form_policy,
    g1_estimate,
    write_g2_csv,
    write_g3_csv,
)
from .config import ConfigError, RunConfig, load_config
from .models import PathBatch, SimulationError, simulate_batch
from .bench import final_wealth_batch, penalty_batch, wealth_stats

EXIT_OK, EXIT_CONFIG, EXIT_DOMAIN = 0, 1, 2
# mean relative wealth gap above which `fbsde eval` flags the network
DISCREPANCY_LIMIT = 0.01


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="run configuration (JSON)")
    parser.add_argument("--seed", type=int, help="override harness.seed")
    parser.add_argument("--out", help="override the output directory")
    parser.add_argument("--paths", type=int, help="override harness.n_paths")
    parser.add_argument("--jobs", type=int, help="worker threads for path simulation (default: all cores)")
    parser.add_argument("--quad-order", type=int, help="Gauss-Legendre order for g2")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cointliq", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", help="test the solvability condition")
    _common(p)

    p = sub.add_parser("solve", help="export g3 and the g2 grid")
    _common(p)
    p.add_argument("--g1", action="store_true", help="also estimate g1 at the initial state")

    p = sub.add_parser("simulate", help="simulate the closed-form strategy")
    _common(p)
    p.add_argument("--trades", type=int, help="override harness.n_trades")

    p = sub.add_parser("compare", help="compare strategies on common random numbers")
    _common(p)
    p.add_argument("--trades", type=int, help="override harness.n_trades")
    p.add_argument("--dump-paths", action="store_true", help="write per-policy path CSVs")

    p = sub.add_parser("robustness", help="compare strategies under random volatilities")
    _common(p)
    p.add_argument("--trades", type=int, help="override harness.n_trades")

    p = sub.add_parser("fbsde", help="deep BSDE solver")
    fsub = p.add_subparsers(dest="action", required=True)
    t = fsub.add_parser("train", help="train the network")
    _common(t)
    t.add_argument("--steps", type=int, help="override train.max_train_steps")
    e = fsub.add_parser("eval", help="compare a trained network with the closed form")
    _common(e)
    e.add_argument("--weights", help="weights file (default: <out>/weights.json)")
    e.add_argument("--steps", type=int, help="time steps per path (default: train.n_steps_time or 40)")
    return parser


def _apply_overrides(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    h = dict(cfg.harness)
    for flag, key in (("seed", "seed"), ("paths", "n_paths"), ("jobs", "jobs"),
                      ("quad_order", "quad_order"), ("trades", "n_trades")):
        value = getattr(args, flag, None)
        if value is not None:
            if value < (0 if key == "seed" else 1):
                raise ConfigError(f"--{flag.replace('_', '-')}: out of range")
            h[key] = value
    if h["jobs"] is None:
        h["jobs"] = os.cpu_count() or 1
    train = cfg.train
    if train is not None:
        changes = {}
        if getattr(args, "seed", None) is not None:
            changes["seed"] = args.seed
        if getattr(args, "steps", None) is not None and args.command == "fbsde" and args.action == "train":
            changes["max_train_steps"] = args.steps
        if changes:
            train = replace(train, **changes)
    return replace(cfg, harness=h, train=train, out=args.out or cfg.out)


def _write_json(doc: dict, path: Path, schema: str) -> None:
    schemas.validate(doc, schema)
    path.write_text(json.dumps(doc, indent=2) + "\n")


def _write_batch_csv(batch: PathBatch, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path", "t", "a", "eps", "q", "m", "rate"])
        n = batch.q.shape[1]
        for i in range(batch.q.shape[0]):
            for j in range(n):
                rate = batch.rate[i, j] if j < n - 1 else 0.0
                w.writerow([i, repr(float(batch.grid[j])), repr(float(batch.a[i, j])),
                            repr(float(batch.eps[i, j])), repr(float(batch.q[i, j])),
                            repr(float(batch.m[i, j])), repr(float(rate))])


def _meta(cfg: RunConfig, command: str) -> dict:
    h = cfg.harness
    return {
        "command": command,
        "seed": h["seed"],
        "n_paths": h["n_paths"],
        "n_trades": h["n_trades"],
        "quad_order": h["quad_order"],
        "params": {k: v for k, v in vars(cfg.params).items()},
        "initial": {"t": cfg.initial.t, "a": cfg.initial.a, "eps": cfg.initial.eps,
                    "q": cfg.initial.q, "m": cfg.initial.m},
    }


def _warn_condition(cfg: RunConfig) -> None:
    cond = check_solvability(cfg.params)
    if not cond.holds:
        print(f"warning: solvability condition fails (lhs={cond.lhs!r} < rhs={cond.rhs!r}); "
              "closed-form outputs may not be the value function", file=sys.stderr)


def cmd_check(cfg: RunConfig) -> int:
    cond = check_solvability(cfg.params)
    print(f"lhs={cond.lhs!r}")
    print(f"rhs={cond.rhs!r}")
    print(f"holds={cond.holds}")
    return EXIT_OK if cond.holds else EXIT_DOMAIN


def cmd_solve(cfg: RunConfig, out: Path, with_g1: bool) -> int:
    _warn_condition(cfg)
    h = cfg.harness
    g3 = G3Curve(cfg.params)
    g2 = G2Surface(cfg.params, h["quad_order"], g3=g3)
    grid = h["g2_grid"]
    ts = np.linspace(0.0, cfg.params.T, int(grid["n_t"]))
    eps = np.linspace(float(grid["eps_min"]), float(grid["eps_max"]), int(grid["n_eps"]))
    write_g3_csv(g3, out / "g3.csv")
    try:
        write_g2_csv(g2, out / "g2_grid.csv", ts, eps)
    except QuadratureError as exc:
        print(f"error: g2 quadrature did not converge at t={exc.t!r}, eps={exc.eps!r} "
              f"(change {exc.change:.3e}); raise --quad-order", file=sys.stderr)
        return EXIT_DOMAIN
    if with_g1:
        s0 = cfg.initial
        est = g1_estimate(cfg.params, s0.t, s0.a, s0.eps, g2, max(h["n_paths"], 100), h["seed"])
        _write_json({"t": s0.t, "a": s0.a, "eps": s0.eps, "value": est.value, "std_error": est.std_error,
                     "n_paths": est.n_paths, "n_steps": 100, "seed": h["seed"]},
                    out / "g1_estimate.json", "g1_estimate")
    return EXIT_OK


def _policies(cfg: RunConfig):
    pols = standard_policies(cfg.params, cfg.initial.eps, cfg.harness["quad_order"])
    by_label = {p.label: p for p in pols}
    return [by_label[name] for name in cfg.harness["policies"]]


def _write_stats(stats, out: Path, meta: dict) -> None:
    write_stats_csv(stats, out / "stats.csv")
    doc = write_stats_json(stats, out / "stats.json", meta)
    schemas.validate(doc, "stats")


def cmd_simulate(cfg: RunConfig, out: Path) -> int:
    _warn_condition(cfg)
    h = cfg.harness
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        pol = closed_form_policy(cfg.params, G2Surface(cfg.params, h["quad_order"]))
    pol.label = "price_S"
    batch = simulate_batch(cfg.params, pol, cfg.initial, h["n_trades"], h["n_paths"], h["seed"], jobs=h["jobs"])
    _write_batch_csv(batch, out / "paths.csv")
    stats = [wealth_stats(pol.label, final_wealth_batch(batch, cfg.params), penalty_batch(batch, cfg.params))]
    _write_stats(stats, out, _meta(cfg, "simulate"))
    return EXIT_OK


def cmd_compare(cfg: RunConfig, out: Path, dump_paths: bool) -> int:
    _warn_condition(cfg)
    h = cfg.harness
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        policies = _policies(cfg)
    stats, batches = compare_strategies(cfg.params, policies, h["n_paths"], h["n_trades"], h["seed"],
                                        cfg.initial, jobs=h["jobs"], return_batches=True)
    _write_stats(stats, out, _meta(cfg, "compare"))
    if dump_paths:
        for label, batch in batches.items():
            _write_batch_csv(batch, out / f"paths_{label}.csv")
    return EXIT_OK


def cmd_robustness(cfg: RunConfig, out: Path) -> int:
    _warn_condition(cfg)
    h = cfg.harness
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        policies = _policies(cfg)
    stats = robustness_test(cfg.params, tuple(h["sigma1_range"]), tuple(h["sigma2_range"]), h["n_paths"],
                            h["seed"], h["n_trades"], cfg.initial, policies, jobs=h["jobs"])
    meta = _meta(cfg, "robustness")
    meta["sigma1_range"] = list(h["sigma1_range"])
    meta["sigma2_range"] = list(h["sigma2_range"])
    _write_stats(stats, out, meta)
    return EXIT_OK


def cmd_fbsde_train(cfg: RunConfig, out: Path) -> int:
    from .fbsde import TrainingDiverged, train

    if cfg.train is None:
        raise ConfigError("config: missing key: train")
    try:
        net, report = train(cfg.params, cfg.train, cfg.initial)
    except TrainingDiverged as exc:
        exc.report.to_csv(out / "train_report.csv")
        print(f"error: training diverged after {exc.report.steps_run} steps", file=sys.stderr)
        return EXIT_DOMAIN
    doc = net.to_json()
    _write_json(doc, out / "weights.json", "weights")
    report.to_csv(out / "train_report.csv")
    print(f"best validation loss {min(report.val_loss)!r} at step {report.best_step}; y0={net.y0!r}")
    return EXIT_OK


def cmd_fbsde_eval(cfg: RunConfig, out: Path, weights: str | None, n_steps: int | None) -> int:
    from .fbsde import ArchitectureMismatch, NetParams, discrepancy_vs_closed_form

    path = Path(weights) if weights else out / "weights.json"
    hidden = cfg.train.hidden if cfg.train is not None else (16, 16)
    expected = f"mlp:{'-'.join(map(str, (4, *hidden, 2)))}:tanh:shared_z:scalar_y0"
    try:
        doc = json.loads(path.read_text())
        schemas.validate(doc, "weights")
        net = NetParams.from_json(doc, expected_architecture=expected)
    except OSError as exc:
        raise ConfigError(f"cannot read weights {path}: {exc.strerror}") from None
    except ArchitectureMismatch as exc:
        print(f"error: weight file architecture mismatch: expected {exc.expected}, found {exc.found}",
              file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"weights {path}: {exc}") from None
    if n_steps is None:
        n_steps = cfg.train.n_steps_time if cfg.train is not None else 40
    h = cfg.harness
    disc = discrepancy_vs_closed_form(cfg.params, net, cfg.initial, h["n_paths"], n_steps, h["seed"],
                                      h["quad_order"])
    disc.to_csv(out / "discrepancy.csv")
    summary = {**disc.summary(), "n_paths": h["n_paths"], "seed": h["seed"]}
    _write_json(summary, out / "discrepancy.json", "discrepancy")
    print(f"mean relative M discrepancy {summary['m_rel_mean']:.4%}, "
          f"Q discrepancy {summary['q_rel_mean']:.4%}, mean |Q_T|/Q0 {summary['q_T_nn_mean']:.4f}")
    if not np.isfinite(summary["m_rel_mean"]) or summary["m_rel_mean"] > DISCREPANCY_LIMIT:
        print(f"warning: network control is far from the closed form "
              f"(mean relative M discrepancy above {DISCREPANCY_LIMIT:.0%})", file=sys.stderr)
        return EXIT_DOMAIN
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        if args.command == "check":
            return cmd_check(cfg)
        out = Path(cfg.out)
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"out: cannot create {out}: {exc.strerror}") from None
        if not os.access(out, os.W_OK):
            raise ConfigError(f"out: directory {out} is not writable")
        if args.command == "solve":
            return cmd_solve(cfg, out, args.g1)
        if args.command == "simulate":
            return cmd_simulate(cfg, out)
        if args.command == "compare":
            return cmd_compare(cfg, out, args.dump_paths)
        if args.command == "robustness":
            return cmd_robustness(cfg, out)
        if args.action == "train":
            return cmd_fbsde_train(cfg, out)
        return cmd_fbsde_eval(cfg, out, args.weights, args.steps)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SimulationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
