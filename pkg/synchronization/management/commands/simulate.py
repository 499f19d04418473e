"""
Management command: simulate

Loads a scenario file, runs the sampled assumption check and integrates the
funnel-coupled network.

Usage:
    python manage.py simulate --scenario scenarios/two_agent_gap.json --out runs/gap
    python manage.py simulate --scenario scenarios/ring_sweep.json --out runs/ring --dry-run

Writes trajectory.csv, summary.json and validation.json into --out. A funnel
breach still writes the partial trajectory and exits with status 2.
"""
from __future__ import annotations

from synchronization.management.commands._base import FunnelCommand
from synchronization.services.artifacts import ensure_dir, write_csv, write_json
from synchronization.services.errors import FunnelBreach
from synchronization.services.netsim import check_disagreement, integrate, validate_scenario
from synchronization.services.scenario_file import load_scenario


class Command(FunnelCommand):
    help = "Integrate a funnel-coupled network from a scenario file."

    def add_arguments(self, parser):
        parser.add_argument("--scenario", required=True, help="Scenario JSON file")
        parser.add_argument("--out", required=True, help="Output directory")
        self.add_dry_run(parser)

    def run(self, **options):
        sf = load_scenario(options["scenario"])
        s = sf.scenario
        out = ensure_dir(options["out"])
        self.audit.update(scenario_name=sf.name, scenario_digest=sf.digest, output_dir=str(out))

        report = validate_scenario(s, samples=sf.samples, box=sf.box)
        write_json(out / "validation.json", report.to_dict())
        for w in report.warnings:
            self.stdout.write(self.style.WARNING(f"[validate] {w}"))

        try:
            rec = integrate(s)
        except FunnelBreach as exc:
            if exc.record is not None:
                write_csv(out / "trajectory.csv", exc.record.columns())
                write_json(out / "summary.json", dict(exc.record.summary(), breach=True, breach_time=exc.t))
            raise

        check = check_disagreement(rec, s)
        summary = dict(
            rec.summary(),
            disagreement_ok=check.holds,
            disagreement_worst_ratio=check.worst_ratio,
            lambda2=s.spectrum.lambda2,
        )
        write_csv(out / "trajectory.csv", rec.columns())
        write_json(out / "summary.json", summary)

        self.stdout.write(
            self.style.SUCCESS(
                f"{sf.name}: outcome={rec.outcome} steps={rec.runtime_steps} rejected={rec.rejected_steps} "
                f"max_input={rec.max_input:.6g} max_ratio={rec.max_ratio:.6g}"
            )
        )
        self.stdout.write(f"Artifacts in {out}")
        return summary
