"""Config grammar, validation, the CLI exit-code contract and run determinism."""
import csv
import json
import os

import numpy as np
import pytest

from fracshe import cli, pipeline
from fracshe import config as cf
from fracshe.experiments import CURVE_COLUMNS, run

SMALL_CLT = """
# tiny constant-sigma CLT run
experiment = clt
alpha = 2
sigma = constant
sigma_c = 1.0
L = 0.5
n_space = 64
t = 0.0625
replicas = 300
min_replicas = 100
eps_steps = 8
positions = 4
ks_max = 0.2
"""


@pytest.fixture
def small_cfg(tmp_path):
    p = tmp_path / "clt.cfg"
    p.write_text(SMALL_CLT)
    return p


def test_grammar():
    raw = cf.parse_text("a = 1  # note\n\n# full comment\nb = 3, 2,1\n")
    assert raw == {"a": "1", "b": "3, 2,1"}
    for bad in ("a = 1\na = 2", "just words", "= 3", "a ="):
        with pytest.raises(cf.ConfigError):
            cf.parse_text(bad)


def test_defaults_echoed():
    cfg = cf.build({"eps_steps": "16, 8"}, "ratio")
    echo = cfg.echo()
    assert set(echo) == {"experiment", *cf.EXPERIMENT_KEYS["ratio"]}
    assert echo["eps_steps"] == [16, 8] and echo["replicas"] == 1000
    assert cfg.ref_seed if "ref_seed" in cfg.values else True
    assert len(cfg.digest()) == 12 and cfg.digest() == cf.build({"eps_steps": "16,8"}, "ratio").digest()


@pytest.mark.parametrize("raw,exp", [
    ({"bogus": "1"}, "ratio"),
    ({"replicas": "0"}, "ratio"),
    ({"replicas": "50"}, "ratio"),
    ({"eps_steps": "8, 16"}, "ratio"),
    ({"eps_steps": "2"}, "ratio"),
    ({"eps_steps": "256"}, "ratio"),
    ({"alpha": "1.0"}, "ratio"),
    ({"alpha": "abc"}, "ratio"),
    ({"sigma": "nope"}, "ratio"),
    ({"alpha": "1.5"}, "kpz-qv"),
    ({"beta": "1, 4"}, "localization"),
    ({"a": "1", "b": "0"}, "variation"),
    ({"phi": "cube"}, "variation"),
    ({"k": "3"}, "localization-u"),
    ({"experiment": "lil"}, "ratio"),
    ({}, "unknown"),
])
def test_validation(raw, exp):
    with pytest.raises(cf.ConfigError):
        cf.build(raw, exp)


def test_ref_seed_default():
    cfg = cf.build({"seed": "7", "sigma": "bounded_smooth"}, "clt")
    assert cfg.ref_seed == 7 + 10 ** 6


def test_bundled_configs_parse():
    root = os.path.join(os.path.dirname(__file__), "..", "configs")
    names = sorted(f for f in os.listdir(root) if f.endswith(".cfg"))
    assert len(names) >= 10
    for f in names:
        cfg = cf.load(os.path.join(root, f))
        assert cfg.experiment in cf.EXPERIMENT_KEYS


def test_replicas_zero_exit_code(small_cfg, capsys):
    assert cli.main(["experiment", "clt", "--config", str(small_cfg), "--replicas", "0"]) == cli.EXIT_CONFIG
    assert "replicas" in capsys.readouterr().err
    assert cli.main(["experiment", "clt", "--config", "/nonexistent.cfg"]) == cli.EXIT_CONFIG
    assert cli.main(["--workers", "0", "constants"]) == cli.EXIT_CONFIG


def test_run_determinism_and_files(small_cfg, tmp_path):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert cli.main(["--out", str(out1), "experiment", "clt", "--config", str(small_cfg)]) == cli.EXIT_OK
    assert cli.main(["--out", str(out2), "--workers", "2", "experiment", "clt", "--config", str(small_cfg)]) == 0
    cfg = cf.load(str(small_cfg))
    files = sorted(os.listdir(out1))
    assert files == sorted(os.listdir(out2))
    assert all(cfg.digest() in f for f in files)
    for name in files:
        a, b = (out / name for out in (out1, out2))
        if name.endswith(".json"):
            da, db = json.loads(a.read_text()), json.loads(b.read_text())
            da.pop("runtime"), db.pop("runtime")
            assert da == db
            assert da["config"]["replicas"] == 300 and da["passed"]
        else:
            assert a.read_text() == b.read_text()
            with open(a) as fh:
                header = next(csv.reader(fh))
            assert tuple(header) == CURVE_COLUMNS[name.rsplit("-", 1)[1][:-4]]


def test_report_json_byte_identical(small_cfg):
    cfg = cf.load(str(small_cfg))
    a, b = run(cfg), run(cfg)
    assert a.to_json(with_runtime=False) == b.to_json(with_runtime=False)
    assert a.runtime > 0


def test_exit_fail_and_runtime(tmp_path):
    p = tmp_path / "fail.cfg"
    p.write_text(SMALL_CLT.replace("ks_max = 0.2", "ks_max = 0.0001"))
    assert cli.main(["--out", str(tmp_path), "experiment", "clt", "--config", str(p)]) == cli.EXIT_FAIL
    # every replica blows up -> more than 1% failures -> runtime error
    q = tmp_path / "blow.cfg"
    q.write_text("experiment = variation\nalpha = 2\nsigma = constant\nsigma_c = 0\nu0 = 2e8\nL = 2\n"
                 "n_space = 256\nt = 0.0625\nreplicas = 100\nlevel = 3\n")
    assert cli.main(["--out", str(tmp_path), "experiment", "variation", "--config", str(q)]) == cli.EXIT_RUNTIME


def test_pipeline_helpers():
    assert pipeline.chunks(10, 600) == [(10, 250), (260, 250), (510, 100)]
    assert pipeline.check_failures(np.array([False] * 200 + [True])) < 0.01
    with pytest.raises(RuntimeError):
        pipeline.check_failures(np.array([False] * 50 + [True]))


def test_subcommands(tmp_path, capsys):
    assert cli.main(["constants", "--alpha", "2"]) == 0
    d = json.loads(capsys.readouterr().out)
    assert d["frakA"] == 0.707106781186548 and d["frakB"] == 0.5
    assert cli.main(["kernel", "--alpha", "2", "--t", "1", "--xmin", "0", "--xmax", "0", "--n", "1"]) == 0
    lines = capsys.readouterr().out.split()
    assert lines[0] == "x,p" and float(lines[1].split(",")[1]) == pytest.approx(1 / np.sqrt(4 * np.pi))
    assert cli.main(["oracle", "--formula", "S_derivative_n", "--alpha", "2", "--t", "1", "--n", "1"]) == 0
    out = capsys.readouterr().out
    assert out.count("\n") == 1 and json.loads(out)["value"] == pytest.approx(0.0997, abs=1e-4)
    assert cli.main(["oracle", "--formula", "Q_increment", "--alpha", "1.5", "--t", "1"]) == cli.EXIT_CONFIG
    capsys.readouterr()
    assert cli.main(["--seed", "3", "sample", "--what", "f", "--alpha", "1.5", "--grid-n", "32", "--t", "0.0625"]) == 0
    rows = capsys.readouterr().out.split()
    assert rows[0] == "x,value" and len(rows) == 33
    assert float(rows[1 + 16].split(",")[1]) == 0.0
    assert cli.main(["--out", str(tmp_path), "solve", "--model", "identity", "--u0", "1", "--grid-n", "32",
                     "--t", "0.25", "--snapshots", "0.125,0.25"]) == 0
    paths = capsys.readouterr().out.split()
    assert len(paths) == 2 and all(os.path.exists(p) for p in paths)
    assert cli.main(["solve", "--t", "0.25", "--snapshots", "0.5"]) == cli.EXIT_CONFIG
