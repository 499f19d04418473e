"""
Management command: compare

Funnel-scaling sweep: for every eps the network runs with funnels eps * psi_i and is
compared with the emergent trajectory after the transient cutoff --tau.

Usage:
    python manage.py compare --scenario scenarios/ring_sweep.json --tau 1 --eps 0.5,0.25,0.125 --out runs/sweep
    python manage.py compare --scenario scenarios/ring_sweep.json --eps 0.5 --initial-median --horizon 1 --out runs/im
"""
from __future__ import annotations

from tabulate import tabulate

from synchronization.management.commands._base import FunnelCommand, float_list, usage_error
from synchronization.services.artifacts import ensure_dir, write_csv
from synchronization.services.emergent import MODES, epsilon_sweep, initial_median_experiment
from synchronization.services.scenario_file import load_scenario


class Command(FunnelCommand):
    help = "Compare network and emergent trajectories over a list of funnel scales."

    def add_arguments(self, parser):
        parser.add_argument("--scenario", required=True, help="Scenario JSON file")
        parser.add_argument("--tau", type=float, default=0.0, help="Transient cutoff after t0")
        parser.add_argument("--eps", required=True, help="Comma-separated funnel scales, e.g. 0.5,0.25")
        parser.add_argument("--mode", choices=MODES, default="direct", help="Emergent integration mode")
        parser.add_argument("--out", required=True, help="Output directory")
        parser.add_argument(
            "--initial-median",
            action="store_true",
            help="Also run non-synchronized starts and report x_s against the weighted median of x0",
        )
        parser.add_argument("--horizon", type=float, default=1.0, help="Time after t0 at which --initial-median reads the states")
        self.add_dry_run(parser)

    def run(self, **options):
        eps_list = float_list(options["eps"], "--eps")
        if any(not e > 0.0 for e in eps_list):
            raise usage_error("--eps values must be positive")
        if options["mode"] not in MODES:
            raise usage_error(f"--mode must be one of {', '.join(MODES)}")

        sf = load_scenario(options["scenario"])
        s = sf.scenario
        out = ensure_dir(options["out"])
        self.audit.update(scenario_name=sf.name, scenario_digest=sf.digest, output_dir=str(out))

        rows = [r.to_dict() for r in epsilon_sweep(s, s.funnels, eps_list, options["tau"], options["mode"])]
        write_csv(out / "sweep.csv", rows)
        self.stdout.write(tabulate(rows, headers="keys", floatfmt=".6g"))
        if any(r["breach"] for r in rows):
            self.stdout.write(self.style.WARNING("Some rows ended in a funnel breach (breach=True)."))

        summary = {"tau": options["tau"], "rows": rows}
        if options["initial_median"]:
            median_rows = [r.to_dict() for r in initial_median_experiment(s, eps_list, options["horizon"])]
            write_csv(out / "initial_median.csv", median_rows)
            self.stdout.write(tabulate(median_rows, headers="keys", floatfmt=".6g"))
            summary["initial_median"] = median_rows

        self.stdout.write(self.style.SUCCESS(f"{sf.name}: {len(rows)} sweep rows written to {out}"))
        return summary
