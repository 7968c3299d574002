import csv
import os
import subprocess
import sys

import pytest

from ecsgd import cli, harness
from ecsgd.errors import ConfigError
from ecsgd.simulator import read_metrics_csv, summarize

MINIMAL = """\
algorithm: vanilla
iterations: 10
problem: {kind: quadratic, dim: 3}
"""

BATCH = """\
name: pair
paired: true
checks: true
defaults:
  workers: 2
  iterations: 20
  seed: 4
  gamma: 0.1
  problem:
    kind: quadratic
    dim: 4
    noise_sigma: 1.0
experiments:
  - name: ds
    algorithm: doublesqueeze
    compressor: identity
  - name: sgd
    algorithm: vanilla
"""


class TestParse:
    def test_minimal(self):
        b = harness.parse_config(MINIMAL)
        assert len(b.configs) == 1
        c = b.configs[0]
        assert (c.algorithm, c.iterations, c.problem.kind, c.problem.dim) == ("vanilla", 10, "quadratic", 3)

    def test_negative_iterations_path_and_line(self):
        with pytest.raises(ConfigError) as exc:
            harness.parse_config(MINIMAL.replace("iterations: 10", "iterations: -5"))
        assert exc.value.path == "iterations" and exc.value.line == 2
        assert "line 2" in str(exc.value)

    def test_error_inside_batch(self):
        text = BATCH.replace("    compressor: identity", "    compressor: {kind: top_k, k: 0}")
        with pytest.raises(ConfigError) as exc:
            harness.parse_config(text)
        assert exc.value.path == "experiments[0].compressor" and exc.value.line == 16

    def test_nested_number_error(self):
        with pytest.raises(ConfigError) as exc:
            harness.parse_config(BATCH.replace("dim: 4", "dim: four"))
        assert exc.value.path == "experiments[0].problem.dim" and exc.value.line == 11

    @pytest.mark.parametrize(
        "text, path",
        [
            (MINIMAL + "learning_rate: 0.1\n", "learning_rate"),
            ("iterations: 10\n", "algorithm"),
            ("algorithm: vanilla\n", "iterations"),
            (MINIMAL + "cost_model: {bandwidth: 3}\n", "cost_model"),
            (MINIMAL.replace("dim: 3", "dim: 3, depth: 2"), "problem"),
            (MINIMAL + "gamma: {mode: sometimes}\n", "gamma.mode"),
            (MINIMAL + "workers: true\n", "workers"),
        ],
    )
    def test_rejections(self, text, path):
        with pytest.raises(ConfigError) as exc:
            harness.parse_config(text)
        assert exc.value.path == path
        assert exc.value.line is not None

    def test_invalid_yaml(self):
        with pytest.raises(ConfigError) as exc:
            harness.parse_config("algorithm: [vanilla\n")
        assert exc.value.line is not None

    @pytest.mark.parametrize("text", ["", "- a\n- b\n", "experiments: []\n"])
    def test_structural(self, text):
        with pytest.raises(ConfigError):
            harness.parse_config(text)

    def test_duplicate_key(self):
        with pytest.raises(ConfigError) as exc:
            harness.parse_config(MINIMAL + "iterations: 3\n")
        assert exc.value.line == 4

    def test_duplicate_names(self):
        with pytest.raises(ConfigError):
            harness.parse_config(BATCH.replace("name: sgd", "name: ds"))

    def test_paired_requires_same_problem(self):
        text = BATCH + "    seed: 99\n"
        with pytest.raises(ConfigError) as exc:
            harness.parse_config(text)
        assert exc.value.path == "experiments[1].seed"
        assert harness.parse_config(text.replace("paired: true", "paired: false")).paired is False

    def test_overrides(self):
        b = harness.parse_config(BATCH, {"iterations": 7, "gamma": 0.5, "workers": 3})
        assert all(c.iterations == 7 and c.gamma.value == 0.5 and c.n_workers == 3 for c in b.configs)

    def test_numbers_in_exponent_notation(self):
        b = harness.parse_config(MINIMAL + "cost_model: {server_bandwidth: 1e6}\n")
        assert b.configs[0].cost_model.server_bandwidth == 1e6

    def test_gamma_forms(self):
        b = harness.parse_config(MINIMAL + "gamma: {mode: corollary, L: 1, sigma: 1, epsilon: 1}\n")
        assert b.configs[0].gamma.mode == "corollary"
        b = harness.parse_config(MINIMAL + "gamma: {mode: step, value: 0.1, every_epochs: 2}\n")
        assert b.configs[0].gamma.every_epochs == 2


class TestPresets:
    def test_names(self):
        assert set(harness.preset_names()) >= {"five-way-desk", "five-way-onebit", "bandwidth-sweep", "identity-equivalence"}

    def test_five_way(self):
        b = harness.parse_config(harness.preset_text("five-way-desk"))
        assert [c.algorithm for c in b.configs] == ["doublesqueeze", "memsgd", "qsgd", "topk_sgd", "vanilla"]
        assert b.paired and len({(c.problem, c.seed, c.n_workers) for c in b.configs}) == 1

    @pytest.mark.parametrize("name", ["five-way-desk", "five-way-onebit", "bandwidth-sweep", "identity-equivalence"])
    def test_all_parse(self, name):
        assert harness.parse_config(harness.preset_text(name)).configs

    def test_unknown(self):
        with pytest.raises(ConfigError):
            harness.preset_text("nope")


class TestRunBatch:
    def test_trivial(self, tmp_path):
        b = harness.parse_config(MINIMAL)
        assert harness.run_batch(b, out_dir=str(tmp_path), log=lambda m: None) == harness.EXIT_OK
        rows = read_metrics_csv(tmp_path / "run0.csv")
        assert len(rows) == 10
        assert {"summary.csv", "summary.txt", "report.txt"} <= set(os.listdir(tmp_path))

    def test_identity_pair_identical(self, tmp_path):
        b = harness.parse_config(BATCH)
        assert harness.run_batch(b, out_dir=str(tmp_path), log=lambda m: None) == harness.EXIT_OK
        with open(tmp_path / "summary.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert rows[0]["final_loss"] == rows[1]["final_loss"]
        assert (tmp_path / "ds.csv").read_bytes() == (tmp_path / "sgd.csv").read_bytes()
        report = (tmp_path / "report.txt").read_text()
        assert "step_oracle_max_deviation" in report and "telescoping_relative_residual" in report

    def test_report_totals_match_summarize(self, tmp_path):
        b = harness.parse_config(BATCH)
        outcomes = harness.execute_batch(b)
        harness.emit_report(b, outcomes, str(tmp_path))
        with open(tmp_path / "summary.csv") as fh:
            rows = {r["name"]: r for r in csv.DictReader(fh)}
        for o in outcomes:
            s = summarize(o.result.metrics)
            assert int(rows[o.config.name]["total_bits"]) == s.total_bits
            assert float(rows[o.config.name]["theorem_metric"]) == s.theorem_metric
            assert float(rows[o.config.name]["final_loss"]) == s.final_loss

    def test_checker_section(self, tmp_path):
        text = BATCH.replace("compressor: identity", "compressor: {kind: top_k, k: 2}")
        b = harness.parse_config(text)
        outcomes = harness.execute_batch(b)
        dev = [c for c in outcomes[0].checks if c.name == "step_oracle_max_deviation"][0]
        assert dev.ok and dev.value <= 1e-10
        assert any(c.name == "residual_bound_ratio" for c in outcomes[0].checks)

    def test_empty_results(self, tmp_path):
        b = harness.parse_config(MINIMAL)
        out = tmp_path / "never"
        with pytest.raises(ValueError):
            harness.emit_report(b, [], str(out))
        assert not out.exists()

    def test_checker_failure_exit(self, tmp_path, monkeypatch):
        monkeypatch.setattr(harness, "STEP_ORACLE_TOL", -1.0)
        b = harness.parse_config(BATCH)
        logged = []
        assert harness.run_batch(b, out_dir=str(tmp_path), log=logged.append) == harness.EXIT_CHECK
        assert any("checker failed" in m for m in logged)

    def test_runtime_error_exit(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        b = harness.parse_config(MINIMAL)
        assert harness.run_batch(b, out_dir=str(blocker / "sub"), log=lambda m: None) == harness.EXIT_RUNTIME

    def test_bandwidth_sweep(self, tmp_path):
        text = harness.preset_text("bandwidth-sweep")
        b = harness.parse_config(text, {"iterations": 1, "problem": {"dim": 10_000}})
        outcomes = harness.execute_batch(b)
        rows = harness.sweep_table(outcomes, b.bandwidth_sweep)
        low = min(b.bandwidth_sweep)
        at_low = {r["name"]: r["seconds_per_iter"] for r in rows if r["bandwidth"] == low}
        assert at_low["doublesqueeze-onebit"] < at_low["memsgd-onebit"] < at_low["vanilla"]
        comm = {k: v - 0.05 for k, v in at_low.items()}  # minus per-iteration compute
        assert comm["vanilla"] > 30 * comm["doublesqueeze-onebit"]
        harness.emit_report(b, outcomes, str(tmp_path))
        with open(tmp_path / "bandwidth_sweep.csv") as fh:
            assert len(list(csv.DictReader(fh))) == len(b.configs) * len(b.bandwidth_sweep)


class TestCli:
    def test_presets_list(self, capsys):
        assert cli.main(["presets"]) == 0
        assert "five-way-desk" in capsys.readouterr().out

    def test_presets_show(self, capsys):
        assert cli.main(["presets", "identity-equivalence"]) == 0
        assert "experiments:" in capsys.readouterr().out

    def test_presets_unknown(self):
        assert cli.main(["presets", "nope"]) == 2

    def test_run_file_with_overrides(self, tmp_path):
        cfg = tmp_path / "c.yaml"
        cfg.write_text(MINIMAL)
        out = tmp_path / "out"
        code = cli.main(["run", str(cfg), "--iterations", "4", "--lr", "0.2", "--seed", "3", "--workers", "2", "--out-dir", str(out)])
        assert code == 0
        assert len(read_metrics_csv(out / "run0.csv")) == 4

    def test_run_algorithm_override(self, tmp_path):
        cfg = tmp_path / "c.yaml"
        cfg.write_text(MINIMAL + "worker_compressor: one_bit\n")
        out = tmp_path / "out"
        assert cli.main(["run", str(cfg), "--algorithm", "doublesqueeze", "--checks", "--out-dir", str(out)]) == 0
        assert "step_oracle_max_deviation" in (out / "report.txt").read_text()

    def test_config_error_exit(self, tmp_path, capsys):
        cfg = tmp_path / "c.yaml"
        cfg.write_text(MINIMAL.replace("10", "-1"))
        assert cli.main(["run", str(cfg), "--out-dir", str(tmp_path)]) == 2
        assert "line 2" in capsys.readouterr().err

    def test_missing_file(self, tmp_path):
        assert cli.main(["run", str(tmp_path / "absent.yaml")]) == 2

    def test_bad_sweep(self, tmp_path):
        cfg = tmp_path / "c.yaml"
        cfg.write_text(MINIMAL)
        assert cli.main(["run", str(cfg), "--bandwidth-sweep", "1e6,-1", "--out-dir", str(tmp_path)]) == 2

    def test_sweep_flag(self, tmp_path):
        cfg = tmp_path / "c.yaml"
        cfg.write_text(MINIMAL)
        assert cli.main(["run", str(cfg), "--bandwidth-sweep", "1e6,1e7", "--out-dir", str(tmp_path / "o")]) == 0
        assert (tmp_path / "o" / "bandwidth_sweep.csv").exists()

    def test_module_entry_point(self, tmp_path):
        out = tmp_path / "o"
        proc = subprocess.run(
            [sys.executable, "-m", "ecsgd", "run", "--preset", "identity-equivalence", "--iterations", "5", "--out-dir", str(out)],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0, proc.stderr
        assert {"doublesqueeze.csv", "memsgd.csv", "vanilla.csv"} <= set(os.listdir(out))
