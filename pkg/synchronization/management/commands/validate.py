"""
Management command: validate

Sampled check of a scenario's standing assumptions: agent vector fields, the funnel
set, couplings and the comparison envelope. Findings are warnings; only files that
cannot be built (schema, graph, initial funnel condition) fail with status 3.

Usage:
    python manage.py validate --scenario scenarios/ring_sweep.json
    python manage.py validate --scenario scenarios/ring_sweep.json --samples 81 --out runs/ring
"""
from __future__ import annotations

from tabulate import tabulate

from synchronization.management.commands._base import FunnelCommand
from synchronization.services.artifacts import ensure_dir, write_json
from synchronization.services.netsim import validate_scenario
from synchronization.services.scenario_file import load_scenario


class Command(FunnelCommand):
    help = "Validate a scenario file against the standing assumptions."

    def add_arguments(self, parser):
        parser.add_argument("--scenario", required=True, help="Scenario JSON file")
        parser.add_argument("--samples", type=int, default=None, help="Samples per axis (time and state)")
        parser.add_argument("--out", default=None, help="Optional output directory for validation.json")
        self.add_dry_run(parser)

    def run(self, **options):
        sf = load_scenario(options["scenario"])
        self.audit.update(scenario_name=sf.name, scenario_digest=sf.digest)
        report = validate_scenario(sf.scenario, samples=options["samples"] or sf.samples, box=sf.box)

        agents = [
            [a.index, a.source, a.finite, a.affine, a.contractive, a.complete_solutions] for a in report.agents
        ]
        self.stdout.write(
            tabulate(agents, headers=["agent", "f", "finite", "affine", "contractive", "complete"])
        )
        clauses = [["funnels", name, ok] for name, ok in report.funnels.clauses.items()]
        for c in report.couplings:
            clauses.extend([f"coupling {c.family}", name, ok] for name, ok in c.clauses.items())
        clauses.append(["envelope", "bounded", report.envelope.bounded])
        self.stdout.write(tabulate(clauses, headers=["part", "clause", "holds"]))
        self.stdout.write(f"lambda2 = {report.lambda2:.6g}")

        for w in report.warnings:
            self.stdout.write(self.style.WARNING(f"warning: {w}"))

        if options["out"]:
            out = ensure_dir(options["out"])
            self.audit["output_dir"] = str(out)
            write_json(out / "validation.json", report.to_dict())

        style = self.style.SUCCESS if report.passed else self.style.WARNING
        self.stdout.write(style(f"{sf.name}: {'all sampled clauses hold' if report.passed else 'see warnings'}"))
        return report.to_dict()
