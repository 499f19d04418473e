"""
Management command: hsolve

One-shot solve of sum_i psi_i * mu^-1(h - f_i) = 0, printed with 17 significant digits.

Usage:
    python manage.py hsolve --f 0,1,3 --psi 1,1,1 --coupling classical
    python manage.py hsolve --f 0,2 --coupling log --method specialized
    python manage.py hsolve --f 1,2,3,10,20 --coupling near_signum --eps 0.2 --eta 0.05
"""
from __future__ import annotations

from synchronization.management.commands._base import FunnelCommand, float_list, usage_error
from synchronization.services.emergent import solve_h, solve_h_classical, solve_h_log
from synchronization.services.errors import DimensionMismatch
from synchronization.services.shape import Classical, LocallyLinear, Log, NearSignum

COUPLINGS = ("classical", "log", "locally_linear", "near_signum")
METHODS = ("auto", "bisection", "specialized")


class Command(FunnelCommand):
    help = "Solve the emergent algebraic equation for one set of drive values."

    persists = False

    def add_arguments(self, parser):
        parser.add_argument("--f", required=True, help="Comma-separated drive values f_i")
        parser.add_argument("--psi", default=None, help="Comma-separated funnel values psi_i (default all 1)")
        parser.add_argument("--coupling", choices=COUPLINGS, default="classical", help="Coupling family")
        parser.add_argument("--kappa", type=float, default=1.0, help="classical: kappa")
        parser.add_argument("--mf-bar", type=float, default=None, help="locally_linear: linear region size")
        parser.add_argument("--eps", type=float, default=None, help="near_signum: eps")
        parser.add_argument("--eta", type=float, default=None, help="near_signum: eta")
        parser.add_argument("--method", choices=METHODS, default="auto", help="auto | bisection | specialized")

    def _coupling(self, options):
        family = options["coupling"]
        if family == "classical":
            return Classical(kappa=options["kappa"])
        if family == "log":
            return Log()
        if family == "locally_linear":
            if options["mf_bar"] is None:
                raise usage_error("--coupling locally_linear needs --mf-bar")
            return LocallyLinear(mf_bar=options["mf_bar"])
        if family == "near_signum":
            if options["eps"] is None or options["eta"] is None:
                raise usage_error("--coupling near_signum needs --eps and --eta")
            return NearSignum(eps=options["eps"], eta=options["eta"])
        raise usage_error(f"--coupling must be one of {', '.join(COUPLINGS)}")

    def run(self, **options):
        f = float_list(options["f"], "--f")
        psi = float_list(options["psi"], "--psi") if options["psi"] else [1.0] * len(f)
        if len(psi) != len(f):
            raise DimensionMismatch(len(f), len(psi), what="--psi")
        if any(not p > 0.0 for p in psi):
            raise usage_error("--psi values must be positive")

        method = options["method"]
        if method not in METHODS:
            raise usage_error(f"--method must be one of {', '.join(METHODS)}")
        coupling = self._coupling(options)
        couplings = [coupling] * len(f)
        specialized = isinstance(coupling, (Classical, Log))
        if method == "specialized" and not specialized:
            raise usage_error("specialized solvers exist for the classical and log couplings only")

        if method == "bisection" or not specialized:
            h = solve_h(f, psi, couplings)
        elif isinstance(coupling, Classical):
            h = solve_h_classical(0.0, f, psi, couplings=couplings)
        else:
            h = solve_h_log(0.0, f, psi, couplings=couplings)

        self.stdout.write(f"{h:.17g}")
        return {"h": h}
