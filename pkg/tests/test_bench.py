"""Benchmark studies, CSV/SVG/manifest emission, and the command line.

The studies are exercised on deliberately tiny grids; what is under test
is the harness contract, not the numerics: exact column sets, 17
significant digits on error cells, deterministic output modulo wall
times, failed solves recorded as flagged rows without aborting the sweep,
and the exit code conventions of the CLI.
"""

import csv
import json
import os
import xml.etree.ElementTree as ET
from argparse import Namespace

import numpy as np
import pytest

import invheat.studies as studies_mod
from invheat import (ConvergenceError, Series, StudyConfig,
                     arnoldi_decay_study, convergence_study, cost_study,
                     line_plot)
from invheat.cli import _resolve_config, main
from invheat.studies import CSV_COLUMNS, DECAY_COLUMNS, write_rows_csv

TINY = dict(dimension=1, N_list=(4, 8), method_list=("direct",),
            workers=1)


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def test_study_config_defaults_and_steps():
    cfg = StudyConfig()
    assert cfg.dimension == 1 and cfg.T == 0.1 and cfg.M_rule == 0.05
    assert cfg.steps(8) == 16 and cfg.steps(32) == 64
    resolved = cfg.resolved("converge")
    assert resolved.N_list == (8, 16, 32, 64)
    assert resolved.method_list == ("shooting", "hybrid", "pure-arnoldi",
                                    "direct")
    d2 = StudyConfig(dimension=2).resolved("converge")
    assert d2.N_list == (8, 16, 32)
    assert "direct" not in d2.method_list
    assert StudyConfig(dimension=3).resolved("converge").N_list == (8, 16)
    assert StudyConfig(dimension=2).resolved("cost").N_list == (8, 16, 32, 40)
    assert StudyConfig(dimension=2).resolved("decay").N_list == (40,)


def test_study_config_validation_and_mapping():
    with pytest.raises(ValueError):
        StudyConfig(dimension=4)
    with pytest.raises(ValueError):
        StudyConfig(N_list=(1,))
    with pytest.raises(ValueError):
        StudyConfig(method_list=("simplex",))
    with pytest.raises(ValueError):
        StudyConfig(k_rule="some")
    with pytest.raises(ValueError):
        StudyConfig(workers=0)
    with pytest.raises(ValueError, match="unknown config keys"):
        StudyConfig.from_mapping({"panels": 4})
    cfg = StudyConfig.from_mapping(
        {"dimension": "2", "N_list": ["4", "8"], "T": "0.2",
         "method_list": ["shooting"], "k_rule": 12})
    assert cfg.dimension == 2 and cfg.N_list == (4, 8)
    assert cfg.T == 0.2 and cfg.k_rule == "12"
    sc = cfg.solver_config("shooting", 8)
    assert sc.k == 12 and sc.M == cfg.steps(8)


def test_convergence_study_outputs(tmp_path):
    cfg = StudyConfig(output_dir=str(tmp_path), **TINY)
    result = convergence_study(cfg)
    header, rows = read_csv(result.csv_path)
    assert header == list(CSV_COLUMNS)
    assert len(rows) == 2
    by_col = dict(zip(header, rows[1]))
    assert by_col["method"] == "direct" and by_col["N"] == "8"
    # Error cells round-trip through 17 significant digits.
    for key in ("E_u", "E_p"):
        cell = by_col[key]
        assert cell == format(float(cell), ".17g")
    assert by_col["order_u"] != "" and by_col["order_p"] != ""
    assert rows[0][header.index("order_u")] == ""  # no coarser grid to pair
    svg = open(result.svg_path).read()
    ET.fromstring(svg)
    assert svg.startswith("<svg")
    manifest = open(result.manifest_path).read()
    assert "study = converge" in manifest
    assert "dimension = 1" in manifest
    assert "N_list = 4,8" in manifest
    assert "summary_orders_within_band" in manifest
    assert not result.failed_rows


def test_study_is_deterministic_except_wall_time(tmp_path):
    out_a = convergence_study(StudyConfig(output_dir=str(tmp_path / "a"),
                                          **TINY))
    out_b = convergence_study(StudyConfig(output_dir=str(tmp_path / "b"),
                                          **TINY))
    header, rows_a = read_csv(out_a.csv_path)
    _, rows_b = read_csv(out_b.csv_path)
    drop = header.index("wall_time_s")
    for a, b in zip(rows_a, rows_b):
        assert a[:drop] + a[drop + 1:] == b[:drop] + b[drop + 1:]


def test_failed_solves_become_flagged_rows(tmp_path, monkeypatch):
    real = studies_mod.solve

    def failing(prob, cfg):
        if cfg.method == "shooting":
            raise ConvergenceError("injected failure")
        return real(prob, cfg)

    monkeypatch.setattr(studies_mod, "solve", failing)
    cfg = StudyConfig(dimension=1, N_list=(4, 8),
                      method_list=("shooting", "direct"), workers=1,
                      output_dir=str(tmp_path))
    result = convergence_study(cfg)
    header, rows = read_csv(result.csv_path)
    flag_col = header.index("flags")
    eu_col = header.index("E_u")
    shooting = [r for r in rows if r[0] == "shooting"]
    direct = [r for r in rows if r[0] == "direct"]
    assert len(shooting) == 2 and len(direct) == 2
    assert all(r[flag_col] == "error:ConvergenceError" for r in shooting)
    assert all(r[eu_col] == "" for r in shooting)
    assert all(r[eu_col] != "" for r in direct)
    assert len(result.failed_rows) == 2


def test_cost_study_matches_and_ranks(tmp_path):
    cfg = StudyConfig(dimension=1, N_list=(4, 8),
                      method_list=("direct", "shooting"), workers=1,
                      tolerance=1.0, output_dir=str(tmp_path))
    result = cost_study(cfg)
    assert "matched_direct" in result.summary
    assert result.summary["matched_direct"].startswith("N=4")
    assert "ranking" in result.summary
    assert set(result.summary["ranking"].split(" < ")) == {"direct",
                                                           "shooting"}
    header, rows = read_csv(result.csv_path)
    assert header == list(CSV_COLUMNS)
    assert len(rows) == 4


def test_decay_study_outputs(tmp_path):
    cfg = StudyConfig(dimension=1, N_list=(10,), k_list=(2, 4, 6, 8),
                      output_dir=str(tmp_path))
    result = arnoldi_decay_study(cfg)
    header, rows = read_csv(result.csv_path)
    assert header == list(DECAY_COLUMNS)
    errs = [float(r[header.index("expm_rel_err")]) for r in rows]
    assert errs == sorted(errs, reverse=True)
    assert errs[-1] < 1e-6
    assert result.summary["expm_err_at_k40"] is None  # no rank reaches 40
    with pytest.raises(ValueError, match="single operator"):
        arnoldi_decay_study(StudyConfig(dimension=1, N_list=(10, 14),
                                        output_dir=str(tmp_path)))


def test_line_plot_is_valid_svg_and_honors_log_filtering():
    series = [Series(label="a & b", xs=[1, 10, 100], ys=[1e-1, 1e-3, 0.0]),
              Series(label="c", xs=[1, 10], ys=[3e-2, 2e-4], dash="4,2")]
    svg = line_plot(series, title="demo <plot>", xlabel="N", ylabel="err")
    root = ET.fromstring(svg)
    assert root.tag.endswith("svg")
    assert "a &amp; b" in svg and "demo &lt;plot&gt;" in svg
    with pytest.raises(ValueError):
        line_plot([Series(label="empty", xs=[1.0], ys=[0.0])],
                  title="t", xlabel="x", ylabel="y")


def test_write_rows_csv_formats_cells(tmp_path):
    path = str(tmp_path / "t.csv")
    write_rows_csv([{"method": "x", "E_u": 1.0 / 3.0, "order_u": 2.0,
                     "flags": ["a", "b"]}], path)
    header, rows = read_csv(path)
    row = dict(zip(header, rows[0]))
    assert row["E_u"] == "0.33333333333333331"
    assert row["flags"] == "a;b"
    assert row["E_p"] == ""


def test_cli_solve_writes_a_solution_bundle(tmp_path, capsys):
    code = main(["solve", "--N", "8", "--M", "8", "--method", "direct",
                 "--output_dir", str(tmp_path)])
    assert code == 0
    out = capsys.readouterr().out
    assert "E_u=" in out and "E_p=" in out
    bundle = np.load(tmp_path / "solution.npz")
    assert set(bundle.files) == {"v0", "p", "u_states", "times"}
    assert bundle["u_states"].shape == (9, 7)
    assert bundle["times"][-1] == pytest.approx(0.1)


def test_cli_converge_with_flags(tmp_path, capsys):
    code = main(["converge", "--N_list", "4,8", "--method_list", "direct",
                 "--workers", "1", "--output_dir", str(tmp_path)])
    assert code == 0
    assert (tmp_path / "converge.csv").exists()
    assert (tmp_path / "converge.svg").exists()
    assert (tmp_path / "run_manifest").exists()
    assert "orders_within_band" in capsys.readouterr().out


def test_cli_flags_override_the_config_file(tmp_path):
    cfg_file = tmp_path / "study.json"
    cfg_file.write_text(json.dumps({
        "N_list": [4, 8], "method_list": ["direct"], "workers": 1,
        "output_dir": str(tmp_path / "from_file")}))
    code = main(["converge", "--config", str(cfg_file),
                 "--N_list", "4", "--output_dir", str(tmp_path / "out")])
    assert code == 0
    header, rows = read_csv(tmp_path / "out" / "converge.csv")
    assert [r[header.index("N")] for r in rows] == ["4"]


def test_cli_decay_defaults_to_two_dimensions():
    cfg = _resolve_config(Namespace(config=None), defaults={"dimension": 2})
    assert cfg.dimension == 2
    assert StudyConfig(dimension=2).resolved("decay").N_list == (40,)


def test_cli_config_errors_exit_with_two(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["converge", "--config", str(bad)]) == 2
    good = tmp_path / "good.json"
    good.write_text(json.dumps({"no_such_key": 1}))
    assert main(["converge", "--config", str(good)]) == 2
    assert main(["converge", "--config", str(tmp_path / "missing.json")]) == 2
    assert main(["converge", "--dimension", "7"]) == 2


def test_cli_reports_failed_rows_with_exit_one(tmp_path, monkeypatch):
    def failing(prob, cfg):
        raise ConvergenceError("injected failure")

    monkeypatch.setattr(studies_mod, "solve", failing)
    code = main(["converge", "--N_list", "4", "--method_list", "direct",
                 "--workers", "1", "--output_dir", str(tmp_path)])
    assert code == 1
    assert (tmp_path / "converge.csv").exists()
    assert not (tmp_path / "converge.svg").exists()  # nothing to plot
    assert (tmp_path / "run_manifest").exists()


def test_cli_selftest_passes(capsys):
    assert main(["selftest"]) == 0
    out = capsys.readouterr().out
    assert "all checks passed" in out
    assert "FAIL" not in out
