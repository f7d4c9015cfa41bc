"""Command-line entry point: tasks, overrides, exit codes, outputs."""

import json

import numpy as np
import pytest

from sailr.cli import main
from sailr import read_csv_columns


def write_doc(tmp_path, doc, name="scenario.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def simulate_doc(**over):
    doc = {
        "name": "cli-demo",
        "task": "simulate",
        "params": {"sigma": 0.3, "mu_A": 0.0, "mu_I": 0.0, "mu_L": 0.0,
                   "l_A": 0.0, "l_I": 0.4, "beta_I": 0.0, "beta_A": 0.0, "xi": 0.0},
        "x0": {"S": 0.97, "A": 0.0, "I": 0.0, "L": 0.02, "R": 0.01},
        "grid": {"T": 2.0, "M": 50},
    }
    doc.update(over)
    return doc


def epidemic_doc(**over):
    doc = {
        "name": "cli-epi",
        "task": "simulate",
        "params": {"sigma": 0.25, "mu_A": 0.1, "mu_I": 0.12, "mu_L": 0.15,
                   "l_A": 0.25, "l_I": 0.35, "beta_I": 0.4, "beta_A": 0.22,
                   "xi": 0.03},
        "x0": {"S": 0.85, "A": 0.07, "I": 0.05, "L": 0.02, "R": 0.01},
        "grid": {"T": 2.0, "M": 400},
    }
    doc.update(over)
    return doc


class TestSimulate:
    def test_zero_dynamics_constant_trajectory(self, tmp_path):
        path = write_doc(tmp_path, simulate_doc())
        out = tmp_path / "out"
        code = main(["simulate", "--scenario", path, "--out", str(out), "--quiet"])
        assert code == 0
        _, cols = read_csv_columns(out / "trajectory.csv")
        for j, v in enumerate([0.97, 0.0, 0.0, 0.02, 0.01]):
            assert np.all(cols[j + 1] == v)
        summary = json.loads((out / "summary.json").read_text())
        assert summary["task"] == "simulate"
        assert set(summary) >= {"task", "cost", "cost_history", "residuals",
                                "controls", "candidate", "R0", "S_bar",
                                "constraint_violation", "seed", "runtime"}

    def test_missing_scenario_is_error(self, tmp_path, capsys):
        code = main(["simulate", "--scenario", str(tmp_path / "nope.json"),
                     "--out", str(tmp_path), "--quiet"])
        assert code == 1
        assert "not found" in capsys.readouterr().err


class TestIdentify:
    def _doc(self, tmp_path):
        doc = epidemic_doc(task="synth")
        doc["grid"] = {"T": 2.0, "M": 300}
        doc["synth"] = {"beta_I_true": 0.4, "A0_true": 0.12, "I0_true": 0.08,
                        "L0": 0.02, "R0": 0.01, "noise": 0.0}
        del doc["x0"]
        return doc

    def test_end_to_end_pipeline(self, tmp_path):
        # synth -> identify on the generated observations
        doc = self._doc(tmp_path)
        synth_path = write_doc(tmp_path, doc, "synth.json")
        out1 = tmp_path / "synth_out"
        assert main(["synth", "--scenario", synth_path, "--out", str(out1),
                     "--quiet"]) == 0
        obs = json.loads((out1 / "summary.json").read_text())["observations"]

        ident = dict(doc)
        ident["task"] = "identify"
        ident["observations"] = obs
        ident["weights"] = {"alpha0": 1e-6, "alpha1": 1e-6}
        ident["solver"] = {"tol": 1e-6, "max_iters": 200}
        ident_path = write_doc(tmp_path, ident, "ident.json")
        out2 = tmp_path / "ident_out"
        code = main(["identify", "--scenario", ident_path, "--out", str(out2),
                     "--quiet"])
        assert code == 0
        summary = json.loads((out2 / "summary.json").read_text())
        assert summary["residuals"]["optimality"] <= 1e-6
        assert summary["converged"] is True
        assert (out2 / "beta_I.csv").exists()
        assert (out2 / "adjoint.csv").exists()

    def test_non_converged_exit_2(self, tmp_path):
        doc = self._doc(tmp_path)
        synth_path = write_doc(tmp_path, doc, "synth.json")
        out1 = tmp_path / "so"
        main(["synth", "--scenario", synth_path, "--out", str(out1), "--quiet"])
        obs = json.loads((out1 / "summary.json").read_text())["observations"]
        ident = dict(doc)
        ident["task"] = "identify"
        ident["observations"] = obs
        ident["solver"] = {"tol": 1e-6, "max_iters": 1}
        path = write_doc(tmp_path, ident, "ident.json")
        code = main(["identify", "--scenario", path, "--out", str(tmp_path / "o2"),
                     "--quiet"])
        assert code == 2


class TestControl:
    def test_lhat_validation_exit_1(self, tmp_path, capsys):
        doc = epidemic_doc(task="control")
        doc["penalty"] = {"alpha0": 1.0, "alpha1": 0.1, "alpha2": 1.0, "Lhat": 0.01}
        path = write_doc(tmp_path, doc)
        code = main(["control", "--scenario", path, "--out", str(tmp_path), "--quiet"])
        assert code == 1
        assert "Lhat must exceed L0" in capsys.readouterr().err

    def test_control_run(self, tmp_path):
        doc = epidemic_doc(task="control")
        doc["grid"] = {"T": 4.0, "M": 100}
        doc["penalty"] = {"alpha0": 2.0, "alpha1": 0.1, "alpha2": 1.0, "Lhat": 10.0,
                          "eps_schedule": [0.1 * 2 ** -k for k in range(8)]}
        path = write_doc(tmp_path, doc)
        out = tmp_path / "out"
        code = main(["control", "--scenario", path, "--out", str(out), "--quiet"])
        assert code == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["controls"] is not None
        assert summary["constraint_violation"] == 0.0
        assert (out / "multiplier.csv").exists()


class TestStability:
    def test_stability_run(self, tmp_path):
        doc = epidemic_doc(task="stability")
        doc["params"]["xi"] = 0.0
        doc["stability"] = {"horizon": 50.0, "tol": 1e-8, "h": 0.01}
        path = write_doc(tmp_path, doc)
        out = tmp_path / "out"
        code = main(["stability", "--scenario", path, "--out", str(out), "--quiet"])
        assert code == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["stability"]["extinction"] is True
        assert summary["R0"] is not None


class TestOverridesAndDeterminism:
    def test_set_override_applied(self, tmp_path):
        path = write_doc(tmp_path, simulate_doc())
        out = tmp_path / "out"
        code = main(["simulate", "--scenario", path, "--out", str(out),
                     "--set", "grid.M=10", "--quiet"])
        assert code == 0
        _, cols = read_csv_columns(out / "trajectory.csv")
        assert len(cols[0]) == 11

    def test_invalid_override_same_error_as_file(self, tmp_path, capsys):
        path = write_doc(tmp_path, simulate_doc())
        code = main(["simulate", "--scenario", path, "--out", str(tmp_path),
                     "--set", "params.l_A=1.5", "--quiet"])
        assert code == 1
        assert "l_A out of [0,1]" in capsys.readouterr().err

    def test_byte_identical_reruns(self, tmp_path):
        doc = epidemic_doc(task="synth")
        doc["grid"] = {"T": 2.0, "M": 200}
        doc["synth"] = {"beta_I_true": 0.4, "A0_true": 0.12, "I0_true": 0.08,
                        "L0": 0.02, "R0": 0.01, "noise": 0.01}
        del doc["x0"]
        path = write_doc(tmp_path, doc)
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert main(["synth", "--scenario", path, "--out", str(out),
                         "--seed", "42", "--quiet"]) == 0
            outs.append(out)
        for fname in ("trajectory.csv", "summary.json"):
            assert (outs[0] / fname).read_bytes() == (outs[1] / fname).read_bytes()

    def test_env_default_outdir(self, tmp_path, monkeypatch):
        monkeypatch.setenv("SAILR_OUT", str(tmp_path / "envout"))
        path = write_doc(tmp_path, simulate_doc())
        assert main(["simulate", "--scenario", path, "--quiet"]) == 0
        assert (tmp_path / "envout" / "summary.json").exists()


class TestJobs:
    def test_multistart_with_workers(self, tmp_path):
        doc = epidemic_doc(task="control")
        doc["grid"] = {"T": 3.0, "M": 60}
        doc["penalty"] = {"alpha0": 2.0, "alpha1": 0.2, "alpha2": 1.0, "Lhat": 10.0,
                          "eps_schedule": [0.1 * 2 ** -k for k in range(5)]}
        doc["solver"] = {"multistart": True}
        path = write_doc(tmp_path, doc)
        out = tmp_path / "out"
        code = main(["control", "--scenario", path, "--out", str(out),
                     "--jobs", "2", "--quiet"])
        assert code in (0, 2)
        summary = json.loads((out / "summary.json").read_text())
        assert summary["controls"] is not None
