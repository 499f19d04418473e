"""
Management command: median

Builds the distributed median network x_i' = f*_i - x_i + mu_i(nu_i / psi(t)) with
near-signum couplings and a shared funnel psi(t) = psi0 * exp(-lambda t), integrates it
and reports the final states against the median set.

Usage:
    python manage.py median --values 1,1.02,1.04,1.1,1.2 --graph path --eps 0.2 --eta 0.05 --t-end 8 --out runs/median
"""
from __future__ import annotations

from synchronization.management.commands._base import FunnelCommand, float_list
from synchronization.services.artifacts import ensure_dir, write_csv, write_json
from synchronization.services.errors import FunnelBreach
from synchronization.services.graph import NAMED_FAMILIES, named_graph
from synchronization.services.median import run_median
from synchronization.services.shape import ExpToEta


class Command(FunnelCommand):
    help = "Run the distributed median network and report distances to the median set."

    def add_arguments(self, parser):
        parser.add_argument("--values", required=True, help="Comma-separated private values f*_i")
        parser.add_argument("--graph", choices=NAMED_FAMILIES, default="path", help="Communication graph family")
        parser.add_argument("--eps", type=float, required=True, help="Near-signum eps (must stay below the bound)")
        parser.add_argument("--eta", type=float, required=True, help="Near-signum eta (target accuracy)")
        parser.add_argument("--psi0", type=float, default=0.5, help="Funnel value at t0")
        parser.add_argument("--lambda", dest="lam", type=float, default=0.5, help="Funnel decay rate")
        parser.add_argument("--t-end", type=float, default=30.0, help="Horizon end")
        parser.add_argument("--dt", type=float, default=0.01, help="Output grid step")
        parser.add_argument("--dt-min", type=float, default=None, help="Smallest guarded sub-step")
        parser.add_argument("--x0", default=None, help="Comma-separated initial states (default zeros)")
        parser.add_argument("--seed", type=int, default=None, help="Seed of the random graph family")
        parser.add_argument("--out", required=True, help="Output directory")
        self.add_dry_run(parser)

    def run(self, **options):
        values = float_list(options["values"], "--values")
        x0 = float_list(options["x0"], "--x0") if options["x0"] else None
        out = ensure_dir(options["out"])
        self.audit.update(scenario_name=f"median-{options['graph']}-{len(values)}", output_dir=str(out))

        funnel = ExpToEta(psi0=options["psi0"], eta=0.0, lam=options["lam"])
        graph = named_graph(options["graph"], len(values), seed=options["seed"]) if len(values) > 1 else None
        try:
            report = run_median(
                values,
                graph,
                options["eps"],
                options["eta"],
                funnel,
                x0=x0,
                t_end=options["t_end"],
                dt=options["dt"],
                dt_min=options["dt_min"],
            )
        except FunnelBreach as exc:
            if exc.record is not None:
                write_csv(out / "trajectory.csv", exc.record.columns())
            raise

        write_json(out / "median.json", report.to_json())
        if report.record is not None:
            write_csv(out / "trajectory.csv", report.record.columns())

        m = report.median_set
        label = f"{{{m.lower:g}}}" if m.singleton else f"[{m.lower:g}, {m.upper:g}]"
        style = self.style.SUCCESS if report.within_bound else self.style.WARNING
        self.stdout.write(
            style(
                f"median set {label}: h*={report.h_star:.10g}, "
                f"max distance of final states {max(report.state_distances):.3g}, within_bound={report.within_bound}"
            )
        )
        return report.to_json()
