import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from nrulesim.analysis import Series
from nrulesim.io_cli import (
    EXIT_CONFIG,
    EXIT_USAGE,
    RunManifest,
    dumps,
    format_float,
    main,
    read_series,
    read_summaries,
    write_series,
)

CASE1 = 'case = "case1"\nt_max = 2.0\n[capture]\nrate = 2.0\n'


@pytest.fixture
def cfg(tmp_path):
    p = tmp_path / "case1.toml"
    p.write_text(CASE1)
    return p


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_float_round_trip(v):
    assert float(format_float(v)) == v
    assert json.loads(dumps({"v": v}))["v"] == v


def test_series_csv_round_trip(tmp_path):
    s = Series(np.array([0.0, 0.1]), np.array([1.0, 1 / 3]), np.array([1.0, 1.0]), np.array([[0.0, 0.0], [0.1, 2e-17]]))
    write_series(tmp_path / "s.csv", s)
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "t,variance,s,H_1,H_2"
    assert read_series(tmp_path / "s.csv") == s


def test_run_writes_results_directory(cfg, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg), "--traj", "300", "--seed", "42", "--out", str(out),
                 "--series-limit", "3"]) == 0
    assert sorted(p.name for p in out.iterdir()) == ["manifest.json", "series", "summary.jsonl"]
    assert len(list((out / "series").glob("*.csv"))) == 3
    man = RunManifest.read(out / "manifest.json")
    assert man.seed == 42 and man.n_traj == 300 and "summary.jsonl" in man.outputs
    summ = read_summaries(out / "summary.jsonl")[0]
    assert summ.n_traj == 300 and summ.ks_statistic is not None
    for f in (out / "series").glob("*.csv"):
        assert len(f.read_text().splitlines()) - 1 <= 2000


def test_manifest_rerun_is_byte_identical(cfg, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["run", "--config", str(cfg), "--traj", "200", "--seed", "1", "--out", str(a), "--no-oracle"])
    main(["run", "--manifest", str(a / "manifest.json"), "--out", str(b), "--no-oracle"])
    assert (a / "summary.jsonl").read_bytes() == (b / "summary.jsonl").read_bytes()
    assert sorted((a / "series").iterdir())[0].read_bytes() == sorted((b / "series").iterdir())[0].read_bytes()


def test_results_root_env(cfg, tmp_path, monkeypatch):
    monkeypatch.setenv("NRULESIM_RESULTS", str(tmp_path / "root"))
    assert main(["baseline", "--config", str(cfg), "--traj", "3", "--series-limit", "0"]) == 0
    summ = read_summaries(tmp_path / "root" / "case1-baseline" / "summary.jsonl")[0]
    assert summ.n_collapsed == 0 and summ.hits == []


def test_report_command(cfg, tmp_path, capsys):
    e, b = tmp_path / "e", tmp_path / "b"
    main(["run", "--config", str(cfg), "--traj", "300", "--out", str(e), "--no-oracle"])
    main(["baseline", "--config", str(cfg), "--traj", "3", "--out", str(b)])
    capsys.readouterr()
    assert main(["report", "--ensemble", str(e), "--baseline", str(b)]) == 0
    assert "reduction factor" in capsys.readouterr().out


def test_sweep_command(cfg, tmp_path):
    out = tmp_path / "sw"
    assert main(["sweep", "--config", str(cfg), "--param", "capture.rate", "--values", "1.0,2.0", "--traj", "100",
                 "--out", str(out), "--no-oracle", "--series-limit", "0"]) == 0
    assert len(read_summaries(out / "summary.jsonl")) == 2
    assert RunManifest.read(out / "manifest.json").sweep == {"param": "capture.rate", "values": [1.0, 2.0]}


def test_exit_codes(cfg, tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text('case = "case1"\ndt = 0.5\n')
    assert main(["run", "--config", str(bad)]) == EXIT_CONFIG
    assert "total hazard per step" in capsys.readouterr().err
    with pytest.raises(SystemExit) as exc:
        main(["nonsense"])
    assert exc.value.code == EXIT_USAGE
    assert main(["report", "--ensemble", str(tmp_path / "x"), "--baseline", str(tmp_path / "y")]) == EXIT_USAGE


def test_numerical_and_acceptance_exit_codes(cfg, tmp_path, monkeypatch):
    from nrulesim import acceptance, io_cli
    from nrulesim.errors import NumericalError

    def boom(*a, **k):
        raise NumericalError("non-finite amplitudes")

    monkeypatch.setattr(io_cli, "compute_prefix", boom)
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == io_cli.EXIT_NUMERICAL
    failing = acceptance.CriterionResult(1, "x", False, "forced")
    monkeypatch.setattr(acceptance, "run_all", lambda **k: [failing])
    assert main(["selftest"]) == io_cli.EXIT_ACCEPTANCE
