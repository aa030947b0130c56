import math
import os
import subprocess
import sys

import numpy as np
import pytest

from cointliq import kernels

try:
    COMPILED = kernels.backend_module("cython")
except ImportError:
    COMPILED = None

PY = kernels.backend_module("python")
needs_compiled = pytest.mark.skipif(COMPILED is None, reason="compiled extension not built")


def _close(x, y):
    np.testing.assert_allclose(x, y, rtol=1e-12, atol=1e-13)


@needs_compiled
def test_paths_kernel_agrees():
    rng = np.random.default_rng(1)
    n, N, dt = 50, 30, 0.02
    z1, z2 = rng.standard_normal((2, n, N))
    sig1 = rng.uniform(0.1, 0.4, n)
    ou_sd = rng.uniform(0.01, 0.1, n)
    outs = []
    for mod in (PY, COMPILED):
        a, e = np.empty((n, N + 1)), np.empty((n, N + 1))
        mod.gbm_ou_paths(z1, z2, 6.0, 0.2, 0.03, sig1, ou_sd, math.exp(-0.1 * dt), 0.5, math.sqrt(0.75), dt, a, e)
        outs.append((a, e))
    _close(outs[0][0], outs[1][0])
    _close(outs[0][1], outs[1][1])


@needs_compiled
def test_trade_kernel_agrees():
    rng = np.random.default_rng(2)
    n = 200
    q = rng.uniform(0, 5, n)
    q[:10] = 0.0
    m = rng.normal(0, 10, n)
    r = rng.uniform(0, 400, n)
    s = rng.uniform(5, 7, n)
    outs = []
    for mod in (PY, COMPILED):
        rr = r.copy()
        qn, mn = np.empty(n), np.empty(n)
        mod.trade_step(q, m, rr, s, 0.01, 0.01, qn, mn)
        outs.append((rr, qn, mn))
    for x, y in zip(*outs):
        _close(x, y)
    assert np.all(outs[0][1] >= 0) and np.any(outs[0][1] == 0)


@needs_compiled
def test_g2_kernel_agrees():
    rng = np.random.default_rng(3)
    eps = rng.uniform(-3, 3, 40)
    w, logc, lin = rng.uniform(0, 0.01, (3, 16))
    mubar = np.exp(-0.2 * np.linspace(0, 1, 16))
    outs = []
    for mod in (PY, COMPILED):
        out = np.empty(40)
        mod.g2_sum(eps, w, mubar, logc, lin, 0.2, 0.003, out)
        outs.append(out)
    _close(*outs)


@needs_compiled
def test_fk_kernel_agrees():
    rng = np.random.default_rng(4)
    z = rng.standard_normal((30, 12))
    disc = np.exp(-np.linspace(0, 1, 13))
    weights = rng.uniform(0, 0.1, 13)
    outs = []
    for mod in (PY, COMPILED):
        out = np.empty(30)
        mod.fk_oracle(z, 0.3, 0.001, 0.99, 0.03, disc, weights, 0.2, 0.05, 0.06, out)
        outs.append(out)
    _close(*outs)


@needs_compiled
def test_pipelines_agree_across_backends(monkeypatch):
    from cointliq.bench import BENCH_PARAMS, compare_strategies, standard_policies
    from cointliq.closedform import g2_eval

    def run():
        stats = compare_strategies(BENCH_PARAMS, standard_policies(BENCH_PARAMS, 0.0), 20, 50, seed=1)
        g = g2_eval(BENCH_PARAMS, 0.3, np.linspace(-2, 2, 9))
        return np.array([[s.mean, s.std] for s in stats]), g

    ref = run()
    for name in ("gbm_ou_paths", "trade_step", "g2_sum", "fk_oracle"):
        monkeypatch.setattr(kernels, name, getattr(PY, name))
    other = run()
    np.testing.assert_allclose(ref[0], other[0], rtol=1e-11)
    np.testing.assert_allclose(ref[1], other[1], rtol=1e-12)


def test_pure_python_selector():
    code = "from cointliq import kernels; print(kernels.BACKEND)"
    env = {**os.environ, "COINTLIQ_PURE_PYTHON": "1"}
    res = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert res.stdout.strip() == "python"
    env.pop("COINTLIQ_PURE_PYTHON")
    res = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert res.stdout.strip() == ("cython" if COMPILED is not None else "python")


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.backend_module("fortran")
