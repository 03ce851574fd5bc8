import csv
import json
from pathlib import Path

import pytest

from lookm.cli import (
    EXIT_BUDGET,
    EXIT_IO,
    EXIT_PARSE,
    ExperimentError,
    load_experiment,
    main,
    parse_experiment,
)
from lookm.core import BudgetError

REPO = Path(__file__).resolve().parent.parent
TABLE5 = REPO / "experiments" / "table5_proxy.yaml"
GOLDEN = REPO / "experiments" / "golden" / "table5_proxy.csv"

MINIMAL = """
schema_version: 1
name: mini
model: {layers: 1, heads: 2, d_model: 8, weight_seed: 1}
workload:
  decode_steps: 2
  segments:
    - {kind: text, length: 3}
    - {kind: image, length: 5, spread: 0.2}
seeds: [0]
cells:
  - {policy: full}
"""


def write_experiment(tmp_path, text):
    path = tmp_path / "exp.yaml"
    path.write_text(text)
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestRun:
    def test_minimal_full_cache_run(self, tmp_path):
        path = write_experiment(tmp_path, MINIMAL)
        out = tmp_path / "out"
        assert main(["run", str(path), "--out", str(out), "--no-plots"]) == 0
        jsons = sorted(out.glob("*.json"))
        assert len(jsons) == 1
        doc = json.loads(jsons[0].read_text())
        assert doc["metrics"]["divergence"] == [0.0, 0.0]
        rows = read_csv(out / "mini.csv")
        assert len(rows) == 1 and rows[0]["policy"] == "full"

    def test_invalid_alpha_cell_fails_before_any_run(self, tmp_path):
        bad = MINIMAL + "  - {policy: lookm, alpha1: 0.7, alpha2: 0.5}\n"
        path = write_experiment(tmp_path, bad)
        out = tmp_path / "out"
        assert main(["run", str(path), "--out", str(out), "--no-plots"]) == EXIT_PARSE
        assert not out.exists()

    def test_error_message_names_the_cell(self, tmp_path, capsys):
        bad = MINIMAL + "  - {policy: h2o, alpha1: 0.6, alpha2: 0.6}\n"
        path = write_experiment(tmp_path, bad)
        main(["run", str(path), "--out", str(tmp_path / "o"), "--no-plots"])
        err = capsys.readouterr().err
        assert "cell 1" in err

    def test_yaml_parse_error_exits_two(self, tmp_path):
        path = write_experiment(tmp_path, "::: not yaml {")
        assert main(["run", str(path), "--no-plots"]) == EXIT_PARSE

    def test_wrong_schema_version_rejected(self, tmp_path):
        path = write_experiment(tmp_path, MINIMAL.replace("schema_version: 1", "schema_version: 9"))
        assert main(["run", str(path), "--no-plots"]) == EXIT_PARSE

    def test_file_values_win_over_flags_with_warning(self, tmp_path, capsys):
        path = write_experiment(tmp_path, MINIMAL)
        out = tmp_path / "out"
        code = main(
            ["run", str(path), "--out", str(out), "--no-plots", "--policy", "h2o", "--alpha1", "0.3"]
        )
        assert code == 0
        assert "ignored" in capsys.readouterr().err
        rows = read_csv(out / "mini.csv")
        assert rows[0]["policy"] == "full"  # the file cell, not --policy

    def test_one_off_run_from_flags(self, tmp_path):
        out = tmp_path / "adhoc"
        code = main(
            [
                "run", "--out", str(out), "--no-plots",
                "--policy", "lookm", "--merge", "pivotal", "--text-prior",
                "--alpha1", "0.1", "--alpha2", "0.1", "--decode-steps", "3", "--seed", "5",
            ]
        )
        assert code == 0
        rows = read_csv(out / "adhoc.csv")
        assert rows[0]["merge"] == "pivotal"
        assert rows[0]["seed"] == "5"

    def test_env_var_sets_default_out_dir(self, tmp_path, monkeypatch):
        monkeypatch.setenv("LOOKM_OUT", str(tmp_path / "envout"))
        path = write_experiment(tmp_path, MINIMAL)
        assert main(["run", str(path), "--no-plots"]) == 0
        assert (tmp_path / "envout" / "mini" / "mini.csv").exists()

    def test_budget_error_maps_to_exit_three(self, tmp_path, monkeypatch):
        path = write_experiment(tmp_path, MINIMAL)

        def boom(*args, **kwargs):
            raise BudgetError("lane (layer=0, head=0): budget S=9 exceeds lane length 8")

        monkeypatch.setattr("lookm.cli.run_pair", boom)
        assert main(["run", str(path), "--out", str(tmp_path / "o"), "--no-plots"]) == EXIT_BUDGET

    def test_unwritable_out_dir_maps_to_exit_four(self, tmp_path):
        path = write_experiment(tmp_path, MINIMAL)
        blocker = tmp_path / "blocked"
        blocker.write_text("a file, not a directory")
        assert main(["run", str(path), "--out", str(blocker), "--no-plots"]) == EXIT_IO

    def test_jobs_flag_keeps_output_deterministic(self, tmp_path):
        path = write_experiment(
            tmp_path,
            MINIMAL.replace("seeds: [0]", "seeds: [0, 1, 2, 3]"),
        )
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["run", str(path), "--out", str(a), "--no-plots", "--jobs", "4"]) == 0
        assert main(["run", str(path), "--out", str(b), "--no-plots", "--jobs", "1"]) == 0
        assert (a / "mini.csv").read_bytes() == (b / "mini.csv").read_bytes()

    def test_plots_rendered_by_default(self, tmp_path):
        path = write_experiment(tmp_path, MINIMAL)
        out = tmp_path / "plots"
        assert main(["run", str(path), "--out", str(out)]) == 0
        assert (out / "divergence_steps.png").exists()
        assert (out / "modality_attention.png").exists()


class TestSweepCommand:
    def test_budget_grid_runs_each_cell(self, tmp_path):
        out = tmp_path / "sw"
        code = main(
            [
                "sweep", "--budgets", "0.1,0.2,0.05:0.15", "--seeds", "2",
                "--out", str(out), "--no-plots", "--decode-steps", "2",
            ]
        )
        assert code == 0
        rows = read_csv(out / "sweep.csv")
        assert len(rows) == 6  # 3 budgets x 2 seeds
        assert {(r["alpha1"], r["alpha2"]) for r in rows} == {
            ("0.05", "0.05"), ("0.1", "0.1"), ("0.05", "0.15"),
        }

    def test_bad_budget_string_exits_two(self, tmp_path):
        assert main(["sweep", "--budgets", ",,", "--out", str(tmp_path), "--no-plots"]) == EXIT_PARSE


class TestCompare:
    @pytest.fixture()
    def report_dir(self, tmp_path):
        path = write_experiment(
            tmp_path,
            MINIMAL.replace("seeds: [0]", "seeds: [0, 1]").replace(
                "  - {policy: full}\n",
                "  - {policy: full}\n  - {policy: h2o, alpha1: 0.2, alpha2: 0.2}\n",
            ),
        )
        out = tmp_path / "runs"
        assert main(["run", str(path), "--out", str(out), "--no-plots"]) == 0
        return out

    def test_single_report_single_row(self, report_dir, tmp_path, capsys):
        report = sorted(report_dir.glob("*.json"))[0]
        out = tmp_path / "cmp"
        assert main(["compare", str(report), "--out", str(out), "--no-plots"]) == 0
        rows = read_csv(out / "compare.csv")
        assert len(rows) == 1
        assert "policy" in capsys.readouterr().out

    def test_two_seeds_aggregate_into_one_row(self, report_dir, tmp_path):
        reports = [str(p) for p in sorted(report_dir.glob("run_c01_*.json"))]
        assert len(reports) == 2
        out = tmp_path / "cmp2"
        assert main(["compare", *reports, "--out", str(out), "--no-plots"]) == 0
        rows = read_csv(out / "compare.csv")
        assert len(rows) == 1
        assert rows[0]["n_seeds"] == "2"
        assert rows[0]["policy"] == "h2o-lite"

    def test_policy_rows_both_present(self, report_dir, tmp_path):
        reports = [str(p) for p in sorted(report_dir.glob("*.json"))]
        out = tmp_path / "cmp3"
        assert main(["compare", *reports, "--out", str(out), "--no-plots"]) == 0
        rows = read_csv(out / "compare.csv")
        assert [r["policy"] for r in rows] == ["full", "h2o-lite"]
        assert all(r["mean_divergence"] != "" for r in rows)

    def test_schema_mismatch_exits_two(self, report_dir, tmp_path):
        report = sorted(report_dir.glob("*.json"))[0]
        doc = json.loads(report.read_text())
        doc["schema_version"] = 99
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps(doc))
        assert main(["compare", str(bad), "--out", str(tmp_path), "--no-plots"]) == EXIT_PARSE


class TestExperimentParsing:
    def test_unknown_cell_keys_rejected(self):
        doc = {
            "schema_version": 1,
            "workload": {"segments": [{"kind": "text", "length": 4}], "decode_steps": 1},
            "cells": [{"policy": "full", "bogus": 1}],
        }
        with pytest.raises(ExperimentError, match="unknown keys"):
            parse_experiment(doc)

    def test_missing_cells_rejected(self):
        doc = {
            "schema_version": 1,
            "workload": {"segments": [{"kind": "text", "length": 4}], "decode_steps": 1},
        }
        with pytest.raises(ExperimentError, match="cells"):
            parse_experiment(doc)

    def test_bundled_experiment_parses(self):
        experiment = load_experiment(TABLE5)
        assert experiment.name == "table5_proxy"
        assert len(experiment.cells) == 6
        assert experiment.workload.prompt_len == 100


class TestGolden:
    def test_table5_proxy_reproduces_committed_csv(self, tmp_path):
        out = tmp_path / "t5"
        assert main(["run", str(TABLE5), "--out", str(out), "--no-plots"]) == 0
        assert (out / "table5_proxy.csv").read_bytes() == GOLDEN.read_bytes()

    def test_golden_contains_both_budget_ratio_rows(self):
        rows = read_csv(GOLDEN)
        ratios = {r["memory_ratio"] for r in rows if r["policy"] != "full"}
        assert any(abs(float(x) - 0.20) <= 0.02 for x in ratios)
        assert any(abs(float(x) - 0.05) <= 0.02 for x in ratios)
