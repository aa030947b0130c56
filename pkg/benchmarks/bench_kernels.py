"""Time the compiled kernels against the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeat 5]
"""

from __future__ import annotations

import argparse
import math
import timeit

import numpy as np

from cointliq import kernels


def _cases(n_paths: int, n_steps: int):
    rng = np.random.default_rng(0)
    dt = 1.0 / n_steps
    z1 = rng.standard_normal((n_paths, n_steps))
    z2 = rng.standard_normal((n_paths, n_steps))
    sig1 = np.full(n_paths, 0.3)
    ou_sd = np.full(n_paths, 0.05 * math.sqrt(dt))
    decay = math.exp(-0.1 * dt)
    a_out = np.empty((n_paths, n_steps + 1))
    eps_out = np.empty((n_paths, n_steps + 1))

    def paths(mod):
        mod.gbm_ou_paths(z1, z2, 6.0, 0.0, 0.0, sig1, ou_sd, decay, 0.5, math.sqrt(0.75), dt, a_out, eps_out)

    q = np.full(n_paths, 120.0)
    m = np.zeros(n_paths)
    s = np.full(n_paths, 6.0)
    r0 = rng.uniform(0, 300, n_paths)
    qn, mn = np.empty(n_paths), np.empty(n_paths)

    def trade(mod):
        for _ in range(n_steps):
            mod.trade_step(q, m, r0.copy(), s, 0.01, dt, qn, mn)

    n_nodes = 64
    eps = rng.uniform(-3, 3, n_paths)
    w = rng.uniform(0, 0.01, n_nodes)
    mubar = np.exp(-0.1 * np.linspace(0, 1, n_nodes))
    logc = rng.uniform(0, 0.01, n_nodes)
    lin = rng.uniform(-0.1, 0.1, n_nodes)
    out = np.empty(n_paths)

    def g2(mod):
        for _ in range(n_steps):
            mod.g2_sum(eps, w, mubar, logc, lin, 0.1, 0.01, out)

    zf = rng.standard_normal((n_paths, n_steps))
    disc = np.exp(-np.linspace(0, 1, n_steps + 1))
    weights = np.full(n_steps + 1, dt)
    out2 = np.empty(n_paths)

    def fk(mod):
        mod.fk_oracle(zf, 0.0, 0.001, decay, 0.05 * math.sqrt(dt), disc, weights, 0.1, 0.02, 0.07, out2)

    return {"gbm_ou_paths": paths, "trade_step": trade, "g2_sum": g2, "fk_oracle": fk}


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=10_000)
    ap.add_argument("--steps", type=int, default=100)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    backends = ["python"]
    try:
        kernels.backend_module("cython")
        backends.append("cython")
    except ImportError:
        print("compiled extension not built; timing the numpy fallback only")
    cases = _cases(args.paths, args.steps)
    print(f"{'kernel':<14}" + "".join(f"{b:>12}" for b in backends) + ("     speedup" if len(backends) == 2 else ""))
    for name, fn in cases.items():
        times = []
        for b in backends:
            mod = kernels.backend_module(b)
            times.append(min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat)))
        row = f"{name:<14}" + "".join(f"{t * 1e3:>10.2f}ms" for t in times)
        if len(times) == 2:
            row += f"{times[0] / times[1]:>11.1f}x"
        print(row)


if __name__ == "__main__":
    main()
