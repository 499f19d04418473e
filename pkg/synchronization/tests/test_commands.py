import json
from io import StringIO
from pathlib import Path
from tempfile import TemporaryDirectory

import numpy as np
from django.conf import settings
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import TestCase

from synchronization.management.commands._base import EXIT_BREACH, EXIT_INVALID, EXIT_USAGE
from synchronization.models import SimulationRun
from synchronization.services.artifacts import read_csv
from synchronization.services.netsim import integrate
from synchronization.services.scenario_file import load_scenario

SCENARIOS = Path(settings.BASE_DIR) / "scenarios"
GAP = str(SCENARIOS / "two_agent_gap.json")
RING = str(SCENARIOS / "ring_sweep.json")

CONSTANT = {"family": "constant", "psi0": 1.0}
CLASSICAL = {"family": "classical", "kappa": 1.0}


def scenario_document(graph, drives, x0, t_end=1.0, dt=0.1):
    return {
        "schema": 1,
        "name": "adhoc",
        "t0": 0.0,
        "t_end": t_end,
        "dt": dt,
        "graph": graph,
        "agents": [
            {"f": f, "funnel": CONSTANT, "coupling": CLASSICAL, "x0": x} for f, x in zip(drives, x0)
        ],
    }


class CommandTestCase(TestCase):
    def setUp(self):
        self._tmp = TemporaryDirectory()
        self.tmp = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()

    def call(self, name, *args):
        out = StringIO()
        call_command(name, *args, stdout=out, stderr=StringIO())
        return out.getvalue()

    def call_failing(self, name, *args):
        with self.assertRaises(CommandError) as ctx:
            self.call(name, *args)
        return ctx.exception

    def write_scenario(self, document, filename="adhoc.json"):
        path = self.tmp / filename
        path.write_text(json.dumps(document), encoding="utf-8")
        return str(path)


class SimulateCommandTests(CommandTestCase):
    def test_two_agent_gap_outputs(self):
        out_dir = self.tmp / "gap"
        output = self.call("simulate", "--scenario", GAP, "--out", str(out_dir))
        self.assertIn("outcome=completed", output)

        summary = json.loads((out_dir / "summary.json").read_text())
        self.assertFalse(summary["breach"])
        self.assertTrue(summary["disagreement_ok"])
        self.assertAlmostEqual(summary["lambda2"], 2.0, places=12)
        self.assertTrue(json.loads((out_dir / "validation.json").read_text())["passed"])

        frame = read_csv(out_dir / "trajectory.csv")
        rec = integrate(load_scenario(GAP).scenario)
        np.testing.assert_array_equal(frame["t"].to_numpy(), rec.times)
        np.testing.assert_array_equal(frame[["x_0", "x_1"]].to_numpy(), rec.x)
        self.assertAlmostEqual(float(frame["x_1"].iloc[-1] - frame["x_0"].iloc[-1]), -0.5, places=8)

        run = SimulationRun.objects.get(command="simulate")
        self.assertEqual(run.status, SimulationRun.STATUS_OK)
        self.assertEqual(run.scenario_name, "two_agent_gap")
        self.assertEqual(len(run.scenario_digest), 64)

    def test_reruns_are_byte_identical(self):
        first, second = self.tmp / "a", self.tmp / "b"
        self.call("simulate", "--scenario", GAP, "--out", str(first), "--dry-run")
        self.call("simulate", "--scenario", GAP, "--out", str(second), "--dry-run")
        for name in ("trajectory.csv", "summary.json", "validation.json"):
            self.assertEqual((first / name).read_bytes(), (second / name).read_bytes(), name)
        self.assertFalse(SimulationRun.objects.exists())

    def test_initial_state_outside_funnel(self):
        path = self.write_scenario(
            scenario_document({"n": 2, "edges": [[0, 1, 1.0]]}, ["0", "0"], [0.0, 2.0])
        )
        exc = self.call_failing("simulate", "--scenario", path, "--out", str(self.tmp / "out"))
        self.assertEqual(exc.returncode, EXIT_INVALID)
        self.assertEqual(SimulationRun.objects.get().status, SimulationRun.STATUS_INVALID)

    def test_disconnected_graph(self):
        path = self.write_scenario(
            scenario_document({"n": 4, "edges": [[0, 1, 1.0], [2, 3, 1.0]]}, ["0"] * 4, [0.0] * 4)
        )
        exc = self.call_failing("simulate", "--scenario", path, "--out", str(self.tmp / "out"))
        self.assertEqual(exc.returncode, EXIT_INVALID)

    def test_schema_violation(self):
        document = scenario_document({"n": 2, "edges": [[0, 1, 1.0]]}, ["0", "0"], [0.0, 0.0])
        document["colour"] = "blue"
        exc = self.call_failing("simulate", "--scenario", self.write_scenario(document), "--out", str(self.tmp / "o"))
        self.assertEqual(exc.returncode, EXIT_INVALID)

    def test_breach_writes_partial_trajectory(self):
        document = scenario_document({"n": 2, "edges": [[0, 1, 1.0]]}, ["5", "-5"], [0.0, 0.0], dt=0.5)
        document.update(dt_min=0.5, stability_factor=0.0)
        out_dir = self.tmp / "breach"
        exc = self.call_failing("simulate", "--scenario", self.write_scenario(document), "--out", str(out_dir))
        self.assertEqual(exc.returncode, EXIT_BREACH)
        self.assertTrue((out_dir / "trajectory.csv").exists())
        self.assertTrue(json.loads((out_dir / "summary.json").read_text())["breach"])
        self.assertEqual(SimulationRun.objects.get().status, SimulationRun.STATUS_BREACH)


class EmergentCommandTests(CommandTestCase):
    def test_direct_mode(self):
        out_dir = self.tmp / "em"
        output = self.call("emergent", "--scenario", GAP, "--mode", "direct", "--out", str(out_dir))
        self.assertIn("mode=direct", output)
        frame = read_csv(out_dir / "emergent.csv")
        self.assertEqual(list(frame.columns), ["t", "xi", "chi"])
        # h(1, -1) = 0 for symmetric classical couplings
        self.assertAlmostEqual(float(frame["xi"].abs().max()), 0.0, places=10)

    def test_unknown_mode_is_a_usage_error(self):
        exc = self.call_failing("emergent", "--scenario", GAP, "--mode", "bogus", "--out", str(self.tmp / "o"))
        self.assertEqual(exc.returncode, EXIT_USAGE)


class CompareCommandTests(CommandTestCase):
    def test_sweep_table(self):
        out_dir = self.tmp / "sweep"
        output = self.call("compare", "--scenario", RING, "--eps", "0.5,0.25", "--out", str(out_dir), "--dry-run")
        self.assertIn("sup_state_err", output)
        frame = read_csv(out_dir / "sweep.csv")
        self.assertEqual(frame["eps"].tolist(), [0.5, 0.25])
        self.assertGreater(frame["sup_state_err"].iloc[0], frame["sup_state_err"].iloc[1])

    def test_empty_eps_is_a_usage_error(self):
        exc = self.call_failing("compare", "--scenario", RING, "--eps", "", "--out", str(self.tmp / "o"))
        self.assertEqual(exc.returncode, EXIT_USAGE)

    def test_negative_eps_is_a_usage_error(self):
        exc = self.call_failing("compare", "--scenario", RING, "--eps", "0.5,-1", "--out", str(self.tmp / "o"))
        self.assertEqual(exc.returncode, EXIT_USAGE)


class HSolveCommandTests(CommandTestCase):
    def test_classical(self):
        output = self.call("hsolve", "--f", "0,1,3", "--psi", "1,1,1", "--coupling", "classical")
        self.assertAlmostEqual(float(output.strip()), 1.135, delta=1e-3)
        self.assertFalse(SimulationRun.objects.exists())

    def test_log_specialized(self):
        output = self.call("hsolve", "--f", "0,2", "--coupling", "log", "--method", "specialized")
        self.assertEqual(float(output.strip()), 1.0)

    def test_specialized_needs_classical_or_log(self):
        exc = self.call_failing(
            "hsolve", "--f", "0,1", "--coupling", "near_signum", "--eps", "0.2", "--eta", "0.05",
            "--method", "specialized",
        )
        self.assertEqual(exc.returncode, EXIT_USAGE)

    def test_psi_length_mismatch(self):
        exc = self.call_failing("hsolve", "--f", "0,1,3", "--psi", "1,1")
        self.assertEqual(exc.returncode, EXIT_INVALID)


class MedianCommandTests(CommandTestCase):
    def test_feasible_run(self):
        out_dir = self.tmp / "median"
        self.call(
            "median", "--values", "1,1.02,1.04,1.1,1.2", "--graph", "complete",
            "--eps", "0.2", "--eta", "0.05", "--t-end", "8", "--out", str(out_dir),
        )
        payload = json.loads((out_dir / "median.json").read_text())
        self.assertEqual(payload["median_set"], {"lower": 1.04, "upper": 1.04, "singleton": True})
        self.assertTrue(payload["within_bound"])
        self.assertTrue((out_dir / "trajectory.csv").exists())
        self.assertEqual(SimulationRun.objects.get(command="median").status, SimulationRun.STATUS_OK)

    def test_eps_above_bound(self):
        exc = self.call_failing(
            "median", "--values", "1,2,3,4,5", "--eps", "0.5", "--eta", "0.05", "--out", str(self.tmp / "m"),
        )
        self.assertEqual(exc.returncode, EXIT_INVALID)


class ValidateCommandTests(CommandTestCase):
    def test_report(self):
        output = self.call("validate", "--scenario", GAP, "--dry-run")
        self.assertIn("lambda2 = 2", output)
        self.assertIn("all sampled clauses hold", output)

    def test_writes_report_when_asked(self):
        out_dir = self.tmp / "v"
        self.call("validate", "--scenario", RING, "--out", str(out_dir), "--dry-run")
        report = json.loads((out_dir / "validation.json").read_text())
        self.assertEqual(len(report["agents"]), 5)

    def test_shrinking_common_funnel(self):
        out_dir = self.tmp / "asym"
        self.call("validate", "--scenario", str(SCENARIOS / "asymptotic_ring.json"), "--out", str(out_dir), "--dry-run")
        funnels = json.loads((out_dir / "validation.json").read_text())["funnels"]
        self.assertFalse(funnels["r_psi_unbounded"])
        self.assertAlmostEqual(funnels["psi_bar"], 0.5)
