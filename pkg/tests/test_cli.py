import json

import numpy as np
import pytest
import yaml

from alloylab import cli
from alloylab.errors import ArgumentError, NumericalError
from alloylab.experiments import IdsTable
from alloylab.output import emit_plot_data, read_csv, sha256_file
from alloylab.spectral import DecayFit

BENCH = dict(d=1, l=8, bc="dirichlet", omega_plus=1.0, gamma=[0, 1], a=[1.0, -0.5])


@pytest.fixture
def config_file(tmp_path):
    def write(extra=None, **model):
        data = {**BENCH, **model, **(extra or {})}
        path = tmp_path / "config.yaml"
        path.write_text(yaml.safe_dump(data))
        return path

    return write


def _run(args):
    return cli.main([str(a) for a in args])


def test_toeplitz_check_columns(config_file, tmp_path):
    cfg = config_file({"toeplitz-check": {"sizes": [4, 8, 16, 32, 64], "export_size": 4}})
    out = tmp_path / "o"
    assert _run(["toeplitz-check", "--config", cfg, "--out", out]) == 0
    header, rows = read_csv(out / "toeplitz_check.csv")
    assert header == ["size", "ab_residual", "norm_b", "bound", "nu"]
    assert [int(r[0]) for r in rows] == [4, 8, 16, 32, 64]
    for r in rows:
        assert float(r[1]) <= 1e-12 and float(r[2]) <= float(r[3]) == 2.0
    header, rows = read_csv(out / "toeplitz_B.csv")
    assert header == ["row", "col", "value"] and len(rows) == 6 * 7 // 2


def test_missing_key_exit_code(config_file, tmp_path, capsys):
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump({k: v for k, v in BENCH.items() if k != "gamma"}))
    assert _run(["wegner", "--config", path, "--out", tmp_path / "o"]) == 2
    assert "gamma" in capsys.readouterr().err


def test_wegner_output_and_manifest(config_file, tmp_path):
    cfg = config_file({"wegner": {"sides": [8, 12], "n_samples": 20}})
    out = tmp_path / "o"
    assert _run(["wegner", "--config", cfg, "--out", out, "--seed", 3]) == 0
    header, rows = read_csv(out / "wegner.csv")
    assert header == ["l", "e1", "e2", "n", "mean", "stderr", "ratio"]
    assert len(rows) == 6
    man = json.loads((out / "manifest.json").read_text())
    assert man["seed"] == 3 and man["command"] == "wegner"
    assert man["config"]["wegner"]["sides"] == [8, 12]
    for item in man["outputs"]:
        f = out / item["file"]
        assert f.stat().st_size > 0 and sha256_file(f) == item["sha256"]
    assert man["excluded_samples"] == 0
    assert not list(out.glob(".*tmp"))


def test_manifest_replay_reproduces_outputs(config_file, tmp_path):
    cfg = config_file({"ids": {"n_samples": 10, "n_points": 21}})
    first, second = tmp_path / "a", tmp_path / "b"
    assert _run(["ids", "--config", cfg, "--out", first, "--seed", 11, "--set", "l=10"]) == 0
    assert _run(["ids", "--config", first / "manifest.json", "--out", second]) == 0
    assert (first / "ids.csv").read_bytes() == (second / "ids.csv").read_bytes()
    m1, m2 = (json.loads((d / "manifest.json").read_text()) for d in (first, second))
    assert m1["input_hash"] == m2["input_hash"] and m1["config"]["l"] == 10


def test_worker_count_does_not_change_bytes(config_file, tmp_path):
    cfg = config_file({"wegner": {"sides": [8, 16], "n_samples": 24}})
    outs = []
    for w in (1, 2):
        out = tmp_path / f"w{w}"
        assert _run(["wegner", "--config", cfg, "--out", out, "--workers", w]) == 0
        outs.append((out / "wegner.csv").read_bytes())
    assert outs[0] == outs[1]


def test_overrides_and_bad_sections(config_file, tmp_path, capsys):
    cfg = config_file()
    out = tmp_path / "o"
    assert _run(["msa", "--config", cfg, "--out", out, "--set", "msa.strict=false", "--set", "msa.steps=2"]) == 0
    _, rows = read_csv(out / "msa.csv")
    assert [int(r[1]) for r in rows] == [9, 27, 138]
    assert _run(["msa", "--out", out, "--set", "msa.bogus=1"]) == 2
    assert _run(["msa", "--out", out, "--set", "novalue"]) == 2
    assert "bogus" in capsys.readouterr().err


@pytest.mark.parametrize(
    "argv,code",
    [
        (["lifshitz"], 3),
        (["msa", "--set", "msa.l0=3", "--set", "msa.zeta=1.1"], 3),
    ],
)
def test_precondition_exit_codes(config_file, tmp_path, argv, code):
    assert _run(argv + ["--config", config_file(), "--out", tmp_path / "o"]) == code


def test_resource_exit_code(config_file, tmp_path, monkeypatch):
    monkeypatch.setenv("ALLOYLAB_MAX_DIM", "4")
    assert _run(["spectrum", "--config", config_file(), "--out", tmp_path / "o"]) == 5


def test_numerical_exit_code(config_file, tmp_path, monkeypatch):
    def boom(*args):
        raise NumericalError("factorisation failed")

    monkeypatch.setitem(cli.COMMANDS, "spectrum", boom)
    assert _run(["spectrum", "--config", config_file(), "--out", tmp_path / "o"]) == 4


@pytest.mark.parametrize(
    "cmd,section,files",
    [
        ("spectrum", {"export_matrix": True}, ["spectrum.csv", "hamiltonian.csv"]),
        ("proximity", {"n_samples": 20}, ["proximity.csv"]),
        ("combes-thomas", {}, ["combes_thomas.csv", "combes_thomas_fit.csv"]),
        ("averaging", {"n_samples": 2, "n_grid": 50}, ["averaging.csv"]),
        ("volume", {"n_samples": 20000}, ["volume.csv"]),
        ("birman-schwinger", {"n_samples": 5}, ["birman_schwinger.csv"]),
    ],
)
def test_subcommands_write_tables(config_file, tmp_path, cmd, section, files):
    cfg = config_file({cmd: section}, l=16)
    out = tmp_path / "o"
    assert _run([cmd, "--config", cfg, "--out", out]) == 0
    for name in files:
        header, rows = read_csv(out / name)
        assert header and rows


def test_lifshitz_subcommand(config_file, tmp_path):
    cfg = config_file({"lifshitz": {"n_samples": 30, "e_min": 0.3, "e_max": 1.0, "n_points": 8}}, a=[1.0, 0.5])
    assert _run(["lifshitz", "--config", cfg, "--out", tmp_path / "o"]) == 0
    header, rows = read_csv(tmp_path / "o" / "lifshitz.csv")
    assert header == ["energy", "ids", "e_minus_e0", "exponent"] and rows


def test_emit_plot_data(tmp_path):
    fit = DecayFit(0.5, 1.0, 0.99, np.array([1.0, 2.0]), np.array([0.4, -0.1]))
    header, rows = read_csv(emit_plot_data(fit, "combes-thomas", tmp_path / "ct.csv"))
    assert header == ["separation", "log_norm", "fit_prediction"]
    assert [float(v) for v in rows[1]] == [2.0, -0.1, 0.0]
    table = IdsTable(np.array([0.0, 1.0]), np.array([0.0, 0.5]), np.array([0.0, 0.1]), 8, "dirichlet", 3)
    header, rows = read_csv(emit_plot_data(table, "ids", tmp_path / "ids.csv"))
    assert header == ["energy", "ids_mean", "ids_stderr", "l", "bc"]
    assert rows[1] == ["1.0", "0.5", "0.1", "8", "dirichlet"]
    header, rows = read_csv(emit_plot_data(None, "ids", tmp_path / "empty.csv"))
    assert header and rows == []
    text = (tmp_path / "empty.csv").read_text()
    assert text.startswith("# kind: ids")
    with pytest.raises(ArgumentError):
        emit_plot_data(table, "histogram", tmp_path / "x.csv")
