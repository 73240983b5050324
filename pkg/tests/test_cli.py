from __future__ import annotations

import csv
import io
import json

import pytest

from chiralbag import cli
from chiralbag.cli import main, read_config, resolve_params

FAST_SPECTRUM = ["spectrum", "--n", "2", "--h", "0.2", "--rmax", "6", "--sign", "minus", "--k", "4"]


def run_json(capsys, argv):
    code = main(argv)
    out = capsys.readouterr().out
    return code, json.loads(out)


def strip_time(report: dict) -> dict:
    return {k: v for k, v in report.items() if k != "timestamp"}


# ---------------------------------------------------------------- commands


def test_verify_clifford(capsys):
    code, report = run_json(capsys, ["verify-clifford"])
    assert code == 0
    assert report["schema"] == 1 and report["pass"]
    assert set(report["verdicts"]) == {f"n={n}" for n in range(2, 7)}


def test_verify_killing_three(capsys):
    code, report = run_json(capsys, ["verify-killing", "--n", "3"])
    assert code == 0
    assert report["verdicts"] and all(report["verdicts"].values())


def test_spectrum_report(capsys):
    code, report = run_json(capsys, FAST_SPECTRUM)
    assert code == 0
    row = report["result"]["runs"][0]
    assert row["lambda1"] == pytest.approx(1.0, rel=0.03)
    assert row["product"] == pytest.approx(2.5066, rel=0.03)
    assert report["config"]["parameters"]["sign"] == -1


def test_spectrum_h_table_and_csv(tmp_path):
    out = tmp_path / "spectrum.csv"
    code = main(FAST_SPECTRUM[:4] + ["0.4,0.2", "--rmax", "6", "--format", "csv", "-o", str(out)])
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out.read_text())))
    assert [float(r["h"]) for r in rows] == [0.4, 0.2]
    assert json.loads(out.with_suffix(".json").read_text())["command"] == "spectrum"


def test_spectrum_export_coo(tmp_path, capsys):
    path = tmp_path / "k.coo"
    code, _ = run_json(capsys, FAST_SPECTRUM + ["--export-coo", str(path)])
    assert code == 0
    assert path.read_text().startswith("# ")


def test_scan_default_passes(capsys):
    code, report = run_json(capsys, ["scan", "--n", "2"])
    assert code == 0
    assert report["result"]["relative_error"] < 0.02


def test_scan_coarse_list_reports(tmp_path, capsys):
    code, report = run_json(capsys, ["scan", "--n", "2", "--delta", "0.5", "--eps", "0.4,0.2,0.1,0.05"])
    assert code in (0, 1)
    assert [v["eps"] for v in report["result"]["values"]] == [0.4, 0.2, 0.1, 0.05]
    assert report["pass"] == (code == 0)


def test_surface2d(capsys):
    code, report = run_json(capsys, ["surface2d"])
    assert code == 0
    assert report["verdicts"]["product_bound"]


def test_symmetry(capsys):
    code, report = run_json(capsys, ["symmetry", "--h", "0.25", "--rmax", "1"])
    assert code == 0
    assert report["result"]["max_pairing_discrepancy"] < 1e-8


def test_hijazi_flat_small(capsys):
    code, report = run_json(capsys, ["hijazi", "--h", "0.5", "--rmax", "2", "--models", "flat"])
    assert code == 0
    assert report["verdicts"] == {"flat:strict": True}


def test_expand_check_single_synthetic(capsys):
    code, report = run_json(capsys, ["expand-check", "--chart", "synthetic:a=0.1,b=0.2,c=0.2", "--points", "3"])
    assert code == 0
    assert report["result"]["runs"][0]["chart"].startswith("synthetic:a=0.1,b=0.2,c=0.2")


def test_failing_verdict_exits_one(capsys):
    code, report = run_json(capsys, FAST_SPECTRUM + ["--budget", "1e-6"])
    assert code == 1
    assert report["status"] == "ok" and not report["pass"]


# ------------------------------------------------------------------ usage


@pytest.mark.parametrize("command", sorted(cli.SCHEMAS))
def test_help_for_every_command(command, capsys):
    with pytest.raises(SystemExit) as exc:
        main([command, "--help"])
    assert exc.value.code == 0
    assert "--output" in capsys.readouterr().out


@pytest.mark.parametrize("argv", [
    ["spectrum", "--sign", "sideways"],
    ["spectrum", "--model", "torus"],
    ["spectrum", "--wilson-term", "0.5"],
    ["scan", "--eps", "0.1,0.2,0.05,0.01"],
])
def test_invalid_values_exit_two(argv, capsys):
    assert main(argv) == 2
    assert capsys.readouterr().err


@pytest.mark.parametrize("argv", [["spectrum", "--bogus", "1"], ["frobnicate"]])
def test_parser_errors_exit_two(argv, capsys):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == 2
    assert "error" in capsys.readouterr().err


def test_unknown_config_key_named(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("h = 0.2\nfoo = 1\n")
    assert main(["spectrum", "--config", str(cfg)]) == 2
    assert "'foo'" in capsys.readouterr().err


def test_numerical_failure_exit_three(monkeypatch, capsys):
    def boom(params):
        raise ArithmeticError("diverged")

    monkeypatch.setitem(cli.COMMANDS, "scan", boom)
    code = main(["scan"])
    captured = capsys.readouterr()
    assert code == 3
    report = json.loads(captured.out)
    assert report["status"] == "numerical-failure"
    assert report["error"]["message"] == "diverged"


# ---------------------------------------------------------------- config


def test_config_precedence(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\nR_max = 4\nh = 0.2, 0.1\nsign: plus\n")
    params = resolve_params("spectrum", read_config(cfg), {"h": "0.25"})
    assert params["rmax"] == 4.0
    assert params["h"] == [0.25]
    assert params["sign"] == 1
    assert params["k"] == 4


def test_json_config(tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"command": "scan", "n": 3, "eps": [0.1, 0.05, 0.02, 0.01]}))
    params = resolve_params("scan", read_config(cfg), {})
    assert params["n"] == 3 and params["eps"] == [0.1, 0.05, 0.02, 0.01]
    with pytest.raises(cli.UsageError, match="command"):
        resolve_params("spectrum", read_config(cfg), {})


@pytest.mark.parametrize("text", ["not a pair\n", "[1, 2]"])
def test_bad_config_files(tmp_path, text):
    cfg = tmp_path / ("bad.json" if text.startswith("[") else "bad.cfg")
    cfg.write_text(text)
    with pytest.raises(cli.UsageError):
        read_config(cfg)


def test_missing_config_file(tmp_path):
    with pytest.raises(cli.UsageError, match="cannot read"):
        read_config(tmp_path / "absent.cfg")


# ---------------------------------------------------------- reproducibility


def test_identical_config_identical_report(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(FAST_SPECTRUM + ["-o", str(a)]) == 0
    assert main(FAST_SPECTRUM + ["-o", str(b)]) == 0
    ra, rb = json.loads(a.read_text()), json.loads(b.read_text())
    assert json.dumps(strip_time(ra), sort_keys=True) == json.dumps(strip_time(rb), sort_keys=True)
    assert ra["config"]["deterministic"] is True
    assert a.with_suffix(".csv").exists()


def test_report_embeds_config(capsys):
    _, report = run_json(capsys, ["surface2d", "--eps", "0.2,0.1"])
    assert report["config"]["parameters"]["eps"] == [0.2, 0.1]
    assert report["config"]["command"] == "surface2d"


def test_figures_written(tmp_path, capsys):
    figs = tmp_path / "figs"
    code, report = run_json(capsys, FAST_SPECTRUM + ["--figures", str(figs)])
    assert code == 0
    assert report["figures"] and all((figs / p.split("/")[-1]).exists() for p in report["figures"])
    assert sorted(p.suffix for p in figs.iterdir()) == [".png"]


@pytest.mark.parametrize("argv", [["scan"], ["surface2d"], ["symmetry", "--h", "0.25", "--rmax", "1"]])
def test_figures_for_other_commands(tmp_path, capsys, argv):
    code, report = run_json(capsys, argv + ["--figures", str(tmp_path)])
    assert code == 0
    assert len(report["figures"]) == 1
