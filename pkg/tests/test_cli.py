import csv
import json
import shutil
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from cointliq import schemas
from cointliq.cli import main

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def _config(tmp_path, name="settings1.json", **edits):
    doc = json.loads((CONFIGS / name).read_text())
    for section, changes in edits.items():
        if changes is None:
            doc.pop(section, None)
        else:
            doc.setdefault(section, {}).update(changes)
    doc["out"] = str(tmp_path / "out")
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(doc))
    return path


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_check_exit_codes(tmp_path, capsys):
    assert main(["check", "--config", str(CONFIGS / "settings1.json")]) == 0
    assert "holds=True" in capsys.readouterr().out
    assert main(["check", "--config", str(_config(tmp_path, params={"phi3": 0.0}))]) == 2
    assert "holds=False" in capsys.readouterr().out

    doc = json.loads((CONFIGS / "settings1.json").read_text())
    del doc["params"]["eta"]
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(doc))
    assert main(["check", "--config", str(bad)]) == 1
    assert "eta" in capsys.readouterr().err


def test_config_errors(tmp_path, capsys):
    p = _config(tmp_path, harness={"bogus": 1})
    assert main(["compare", "--config", str(p)]) == 1
    assert "bogus" in capsys.readouterr().err
    broken = tmp_path / "broken.json"
    broken.write_text('{"params": {\n  "eta": }')
    assert main(["check", "--config", str(broken)]) == 1
    assert "line 2" in capsys.readouterr().err
    assert main(["check", "--config", str(tmp_path / "missing.json")]) == 1


def test_shipped_configs_validate(tmp_path):
    for path in sorted(CONFIGS.glob("*.json")):
        schemas.validate(json.loads(path.read_text()), "config")
        assert main(["check", "--config", str(path)]) == 0


def test_solve_outputs(tmp_path):
    cfg = _config(tmp_path, harness={"g2_grid": {"n_t": 6, "n_eps": 7}})
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path / "b"), "--quad-order", "128"]) == 0
    g2a = np.loadtxt(tmp_path / "a" / "g2_grid.csv", delimiter=",", skiprows=1)
    g2b = np.loadtxt(tmp_path / "b" / "g2_grid.csv", delimiter=",", skiprows=1)
    assert _rows(tmp_path / "a" / "g2_grid.csv")[0][:2] == ["t", "eps"]
    last_t = g2a[:, 0] == g2a[:, 0].max()
    assert last_t.sum() == 7 and np.all(g2a[last_t, 2] == 1.0)
    assert np.max(np.abs(g2a[:, 2] - g2b[:, 2])) < 1e-8
    g3 = _rows(tmp_path / "a" / "g3.csv")
    assert g3[0] == ["t", "g3"] and float(g3[-1][1]) == -0.5


def test_solve_g1_estimate(tmp_path):
    cfg = _config(tmp_path, harness={"g2_grid": {"n_t": 3, "n_eps": 3}, "n_paths": 200})
    assert main(["solve", "--config", str(cfg), "--g1"]) == 0
    doc = json.loads((tmp_path / "out" / "g1_estimate.json").read_text())
    schemas.validate(doc, "g1_estimate")
    assert doc["std_error"] > 0 and doc["n_paths"] == 200


def test_compare_is_byte_identical(tmp_path):
    cfg = _config(tmp_path, "benchmark.json", harness={"n_paths": 12, "n_trades": 20})
    for d in ("x", "y"):
        assert main(["compare", "--config", str(cfg), "--seed", "7", "--out", str(tmp_path / d)]) == 0
    for f in ("stats.csv", "stats.json"):
        assert (tmp_path / "x" / f).read_bytes() == (tmp_path / "y" / f).read_bytes()
    rows = _rows(tmp_path / "x" / "stats.csv")
    assert rows[0] == ["policy", "mean", "std", "p5", "p95", "n_paths"]
    assert [r[0] for r in rows[1:]] == ["price_S", "gbm_approx", "stock_A"]
    schemas.validate(json.loads((tmp_path / "x" / "stats.json").read_text()), "stats")
    assert main(["compare", "--config", str(cfg), "--seed", "8", "--out", str(tmp_path / "z")]) == 0
    assert (tmp_path / "z" / "stats.csv").read_bytes() != (tmp_path / "x" / "stats.csv").read_bytes()


def test_compare_single_policy_and_dump(tmp_path):
    cfg = _config(tmp_path, "benchmark.json", harness={"n_paths": 5, "n_trades": 10, "policies": ["stock_A"]})
    assert main(["compare", "--config", str(cfg), "--dump-paths", "--jobs", "2"]) == 0
    out = tmp_path / "out"
    assert len(_rows(out / "stats.csv")) == 2
    paths = _rows(out / "paths_stock_A.csv")
    assert paths[0] == ["path", "t", "a", "eps", "q", "m", "rate"] and len(paths) == 1 + 5 * 11


def test_simulate_and_robustness(tmp_path):
    cfg = _config(tmp_path, "benchmark.json", harness={"n_paths": 4, "n_trades": 10})
    assert main(["simulate", "--config", str(cfg)]) == 0
    assert len(_rows(tmp_path / "out" / "paths.csv")) == 1 + 4 * 11
    assert main(["robustness", "--config", str(cfg), "--out", str(tmp_path / "r")]) == 0
    doc = json.loads((tmp_path / "r" / "stats.json").read_text())
    schemas.validate(doc, "stats")
    assert len(doc["rows"]) == 3


def test_fbsde_train_eval(tmp_path, capsys):
    cfg = _config(tmp_path, train={"max_train_steps": 20, "eval_every": 10, "validation_size": 16,
                                   "hidden": [4, 4]}, harness={"n_paths": 8})
    for d in ("a", "b"):
        assert main(["fbsde", "train", "--config", str(cfg), "--out", str(tmp_path / d)]) == 0
    w = (tmp_path / "a" / "weights.json").read_bytes()
    assert w == (tmp_path / "b" / "weights.json").read_bytes()
    schemas.validate(json.loads(w), "weights")
    report = _rows(tmp_path / "a" / "train_report.csv")
    assert report[0] == ["step", "train_loss", "val_loss"] and len(report) == 21

    # a 20-step network is nowhere near the closed form
    code = main(["fbsde", "eval", "--config", str(cfg), "--out", str(tmp_path / "a")])
    assert code == 2
    assert "warning" in capsys.readouterr().err
    doc = json.loads((tmp_path / "a" / "discrepancy.json").read_text())
    schemas.validate(doc, "discrepancy")
    assert len(_rows(tmp_path / "a" / "discrepancy.csv")) == 9


def test_fbsde_eval_zero_weights_and_mismatch(tmp_path, capsys):
    cfg = _config(tmp_path, train={"hidden": [4, 4]}, harness={"n_paths": 6})
    from cointliq.fbsde import init_net
    from conftest import SETTINGS1, SETTINGS_INITIAL

    net = init_net(SETTINGS1, SETTINGS_INITIAL, (4, 4), y0=0.0)
    net.weights = [w * 0 for w in net.weights]
    net.save(tmp_path / "zero.json")
    assert main(["fbsde", "eval", "--config", str(cfg), "--weights", str(tmp_path / "zero.json")]) == 2
    capsys.readouterr()

    init_net(SETTINGS1, SETTINGS_INITIAL, (3, 3)).save(tmp_path / "other.json")
    assert main(["fbsde", "eval", "--config", str(cfg), "--weights", str(tmp_path / "other.json")]) == 1
    err = capsys.readouterr().err
    assert "mlp:4-4-4-2" in err and "mlp:4-3-3-2" in err
    assert main(["fbsde", "eval", "--config", str(cfg), "--weights", str(tmp_path / "none.json")]) == 1


def test_fbsde_requires_train_section(tmp_path, capsys):
    cfg = _config(tmp_path, train=None)
    assert main(["fbsde", "train", "--config", str(cfg)]) == 1
    assert "train" in capsys.readouterr().err


@pytest.mark.skipif(shutil.which("cointliq") is None, reason="console script not installed")
def test_console_script(tmp_path):
    res = subprocess.run(["cointliq", "check", "--config", str(CONFIGS / "benchmark.json")],
                         capture_output=True, text=True)
    assert res.returncode == 0 and "holds=True" in res.stdout


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "cointliq.cli", "check", "--config",
                          str(CONFIGS / "settings2.json")], capture_output=True, text=True)
    assert res.returncode == 0
