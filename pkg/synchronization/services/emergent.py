"""
synchronization/services/emergent.py

Emergent dynamics xi' = f_em(t, xi), where f_em = h solves

    H(h) = sum_i psi_i(t) * mu_i^-1(h - f_i(t, xi)) = 0.

Responsibilities:
- Generic bracketing solver (scipy bisection + safeguarded Newton polish) and
  the two specialized algorithms (classical: per-interval rational equation,
  log: per-interval quadratic in e^h).
- Implicit-function partials dh/df_i and dh/dt.
- Emergent simulation in direct, two-dimensional (xi, chi) and blended modes.
- Network-vs-emergent comparison and the funnel-scaling sweep.
- Leader limit, contraction estimate, agent-counting network and the
  initial-median experiment.

H is strictly increasing in h, so the root lies in [min f_i, max f_i].
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize

from synchronization.services import conf
from synchronization.services.errors import (
    BracketFailure,
    FunnelBreach,
    GridMismatch,
    InvalidScenario,
    NonFinite,
    NotClassical,
    NotLog,
    SolverError,
    StaleSolution,
)
from synchronization.services.netsim import (
    OUTCOME_COMPLETED,
    Agent,
    Scenario,
    TrajectoryRecord,
    integrate,
)
from synchronization.services.shape import Classical, CouplingSpec, ExpToEta, FunnelSpec, Log, Scaled
from synchronization.services.stepping import nominal_grid, rk4_step
from synchronization.services.vfield import VectorField, eval_with_partials, evaluate, parse

logger = logging.getLogger(__name__)

MODES: Tuple[str, ...] = ("direct", "two_dim", "blended")
_EPS = float(np.finfo(float).eps)


# ---------------------------------------------------------------------------
# Residual
# ---------------------------------------------------------------------------
class _Residual:
    """H(h) = sum_i psi_i mu_i^-1(h - f_i), evaluated per distinct coupling."""

    def __init__(self, f: Sequence[float], psi: Sequence[float], couplings: Sequence[CouplingSpec]):
        self.f = np.asarray(f, dtype=float)
        self.psi = np.asarray(psi, dtype=float)
        groups: Dict[CouplingSpec, List[int]] = {}
        for i, c in enumerate(couplings):
            groups.setdefault(c, []).append(i)
        self.groups = [(c, np.array(idx, dtype=int)) for c, idx in groups.items()]

    def _apply(self, method: str, h: float) -> np.ndarray:
        out = np.empty(self.f.size)
        for c, idx in self.groups:
            out[idx] = getattr(c, method)(h - self.f[idx])
        return out

    def terms(self, h: float) -> np.ndarray:
        return self._apply("mu_inv", h)

    def slopes(self, h: float) -> np.ndarray:
        return self._apply("mu_inv_prime", h)

    def __call__(self, h: float) -> float:
        return float(self.psi @ self.terms(h))

    def derivative(self, h: float) -> float:
        return float(self.psi @ self.slopes(h))


@dataclass(frozen=True)
class HProblem:
    t: float
    f: Tuple[float, ...]
    funnels: Tuple[FunnelSpec, ...]
    couplings: Tuple[CouplingSpec, ...]
    tol: float = 1e-12

    @cached_property
    def psi(self) -> np.ndarray:
        return np.array([fn.value(self.t) for fn in self.funnels])

    @cached_property
    def psi_dot(self) -> np.ndarray:
        return np.array([fn.derivative(self.t) for fn in self.funnels])


def _bisect(fun, lo: float, hi: float, tol: float) -> float:
    return optimize.bisect(fun, lo, hi, xtol=tol, rtol=max(tol, 4.0 * _EPS), maxiter=2000)


def solve_h(
    f: Sequence[float],
    psi: Sequence[float],
    couplings: Sequence[CouplingSpec],
    tol: Optional[float] = None,
) -> float:
    """Root of H on [min f, max f]: bisection to tol(1 + |h|), then Newton polish inside the bracket."""
    tol = conf.setting("bisection_tol") if tol is None else float(tol)
    f = np.asarray(f, dtype=float)
    lo, hi = float(f.min()), float(f.max())
    if lo == hi:
        return lo

    H = _Residual(f, psi, couplings)
    h_lo, h_hi = H(lo), H(hi)
    if not (math.isfinite(h_lo) and math.isfinite(h_hi)) or h_lo > 0.0 or h_hi < 0.0:
        raise BracketFailure(f"H does not change sign on [{lo!r}, {hi!r}]: H(lo)={h_lo!r}, H(hi)={h_hi!r}")
    if h_lo == 0.0:
        return lo
    if h_hi == 0.0:
        return hi

    h = _bisect(H, lo, hi, tol)
    r = H(h)
    for _ in range(int(conf.setting("newton_polish_steps"))):
        slope = H.derivative(h)
        if r == 0.0 or not slope > 0.0:
            break
        candidate = h - r / slope
        if not lo <= candidate <= hi:
            break
        r_new = H(candidate)
        if abs(r_new) >= abs(r):
            break
        h, r = candidate, r_new

    # neighbouring doubles of h differ in H by about slope * ulp(h)
    limit = 1e-10 * float(np.sum(psi)) + abs(H.derivative(h)) * math.ulp(h)
    if not abs(r) <= limit:
        raise SolverError(f"|H(h)| = {abs(r)!r} exceeds {limit!r} at h={h!r}")
    return float(h)


def solve_h_bisection(p: HProblem) -> float:
    return solve_h(p.f, p.psi, p.couplings, p.tol)


# ---------------------------------------------------------------------------
# Specialized solvers
# ---------------------------------------------------------------------------
def _sorted_intervals(f: np.ndarray) -> List[Tuple[float, float]]:
    levels = np.unique(f)
    return [(float(a), float(b)) for a, b in zip(levels[:-1], levels[1:])]


def solve_h_classical(
    t: float,
    f: Sequence[float],
    psi: Sequence[float],
    kappa: Optional[float] = None,
    couplings: Optional[Sequence[CouplingSpec]] = None,
    tol: Optional[float] = None,
) -> float:
    """
    Classical couplings mu^-1(s) = s / (kappa + |s|).

    Works on g = f / kappa (h_kappa(f) = kappa * h_1(f / kappa)); on each sorted interval
    [g_(j), g_(j+1)] the equation

        sum_{g_k <= g_(j)} psi_k (h - g_k)/(1 + h - g_k) + sum_{g_k >= g_(j+1)} psi_k (h - g_k)/(1 - h + g_k) = 0

    is strictly monotone, and the interval whose end values bracket zero holds the root.
    """
    if couplings is not None:
        kinds = {c for c in couplings}
        if not all(isinstance(c, Classical) for c in kinds) or len({c.kappa for c in kinds}) != 1:
            raise NotClassical("solve_h_classical needs one shared Classical(kappa) coupling")
        kappa = next(iter(kinds)).kappa
    if kappa is None or not kappa > 0.0:
        raise NotClassical(f"kappa must be positive, got {kappa!r}")
    tol = conf.setting("bisection_tol") if tol is None else float(tol)

    g = np.asarray(f, dtype=float) / kappa
    w = np.asarray(psi, dtype=float)
    intervals = _sorted_intervals(g)
    if not intervals:
        return float(g[0] * kappa)

    for a, b in intervals:
        below, above = g <= a, g >= b

        def restricted(h: float, below=below, above=above) -> float:
            s_below = h - g[below]
            s_above = h - g[above]
            return float(w[below] @ (s_below / (1.0 + s_below)) + w[above] @ (s_above / (1.0 - s_above)))

        q_a, q_b = restricted(a), restricted(b)
        if q_a > 0.0 or q_b < 0.0:
            continue
        if q_a == 0.0:
            return kappa * a
        if q_b == 0.0:
            return kappa * b
        return kappa * _bisect(restricted, a, b, tol)

    raise BracketFailure("no sorted interval brackets the classical root")


def solve_h_log(
    t: float,
    f: Sequence[float],
    psi: Sequence[float],
    couplings: Optional[Sequence[CouplingSpec]] = None,
) -> float:
    """
    Log couplings. On the sorted interval [f_(j), f_(j+1)] the equation is quadratic in e^h:

        a e^{2h} + b e^h + c = 0,  a = sum_{>} psi e^{-f},  b = sum_{<=} psi - sum_{>} psi,  c = -sum_{<=} psi e^{f}

    Values are shifted by the interval midpoint before exponentiation. Intervals whose
    exponentials under- or overflow are skipped; BracketFailure when no interval holds the root.
    """
    if couplings is not None and not all(isinstance(c, Log) for c in couplings):
        raise NotLog("solve_h_log needs Log couplings on every agent")

    f = np.asarray(f, dtype=float)
    w = np.asarray(psi, dtype=float)
    intervals = _sorted_intervals(f)
    if not intervals:
        return float(f[0])

    nearest = math.inf
    for lo, hi in intervals:
        mid = 0.5 * (lo + hi)
        g = f - mid
        below, above = f <= lo, f >= hi
        a = float(w[above] @ np.exp(-g[above]))
        b = float(w[below].sum() - w[above].sum())
        c = -float(w[below] @ np.exp(g[below]))
        if not (a > 0.0 and c < 0.0 and math.isfinite(a) and math.isfinite(c)):
            logger.debug("[HSOLVE] log solver: exponentials leave range on [%s, %s]", lo, hi)
            continue
        root_disc = math.sqrt(b * b - 4.0 * a * c)
        z = 2.0 * c / (-b - root_disc) if b >= 0.0 else (-b + root_disc) / (2.0 * a)
        h = mid + math.log(z)
        slack = 1e-12 * (1.0 + abs(h))
        if lo - slack <= h <= hi + slack:
            return float(min(max(h, lo), hi))
        nearest = min(nearest, abs(h - lo), abs(h - hi))

    raise BracketFailure(f"no sorted interval holds the log root; nearest miss {nearest!r}")


def solve_h_specialized(p: HProblem) -> float:
    kinds = set(p.couplings)
    if all(isinstance(c, Classical) for c in kinds) and len(kinds) == 1:
        return solve_h_classical(p.t, p.f, p.psi, couplings=p.couplings, tol=p.tol)
    if all(isinstance(c, Log) for c in kinds):
        return solve_h_log(p.t, p.f, p.psi, couplings=p.couplings)
    raise NotClassical("no specialized algorithm for these couplings")


# ---------------------------------------------------------------------------
# Implicit-function partials
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class HPartials:
    dh_df: np.ndarray
    dh_dt: float


def _time_partial(psi: np.ndarray, psi_dot: np.ndarray, inverse: np.ndarray, denominator: float) -> float:
    """-sum_j psi_j' mu_j^-1 / sum_j psi_j (mu_j^-1)'; zero when every psi_j'/psi_j agrees."""
    rates = psi_dot / psi
    if float(np.ptp(rates)) <= 1e-12 * float(np.max(np.abs(rates))):
        return 0.0
    return -float(psi_dot @ inverse) / denominator


def h_partials(p: HProblem, h: float) -> HPartials:
    H = _Residual(p.f, p.psi, p.couplings)
    residual = H(h)
    if abs(residual) > 1e-8 * float(p.psi.sum()):
        raise StaleSolution(h, residual)
    weights = p.psi * H.slopes(h)
    denominator = float(weights.sum())
    if not denominator > 0.0:
        raise SolverError("coupling slopes vanish at h; implicit derivative undefined")
    return HPartials(
        dh_df=weights / denominator,
        dh_dt=_time_partial(p.psi, p.psi_dot, H.terms(h), denominator),
    )


# ---------------------------------------------------------------------------
# Right-hand sides
# ---------------------------------------------------------------------------
def _psi(agents: Sequence[Agent], t: float) -> Tuple[np.ndarray, np.ndarray]:
    pairs = [a.funnel.evaluate(t) for a in agents]
    return np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs])


def emergent_rhs(t: float, xi: float, agents: Sequence[Agent]) -> float:
    f = [evaluate(a.field, t, xi) for a in agents]
    psi, _ = _psi(agents, t)
    return solve_h(f, psi, [a.coupling for a in agents])


def blended_rhs(t: float, xi: float, fields: Sequence[VectorField]) -> float:
    return float(np.mean([evaluate(vf, t, xi) for vf in fields]))


def _two_dim_rhs(t: float, y: np.ndarray, agents: Sequence[Agent]) -> np.ndarray:
    xi, chi = float(y[0]), float(y[1])
    partials = np.array([eval_with_partials(a.field, t, xi) for a in agents])
    f, f_t, f_x = partials[:, 0], partials[:, 1], partials[:, 2]
    psi, psi_dot = _psi(agents, t)
    H = _Residual(f, psi, [a.coupling for a in agents])
    weights = psi * H.slopes(chi)
    denominator = float(weights.sum())
    if not (denominator > 0.0 and math.isfinite(denominator)):
        raise NonFinite("sum_i psi_i (mu_i^-1)'(chi - f_i)", t, xi)
    chi_dot = float(weights @ (f_t + f_x * chi)) / denominator
    chi_dot += _time_partial(psi, psi_dot, H.terms(chi), denominator)
    return np.array([chi, chi_dot])


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class EmergentTrajectory:
    times: np.ndarray
    xi: np.ndarray
    chi: np.ndarray
    mode: str
    max_drift: Optional[float] = None

    def truncated(self, size: int) -> "EmergentTrajectory":
        return EmergentTrajectory(self.times[:size], self.xi[:size], self.chi[:size], self.mode, self.max_drift)

    def columns(self) -> Dict[str, np.ndarray]:
        return {"t": self.times, "xi": self.xi, "chi": self.chi}


def simulate_emergent(
    xi0: float,
    t0: float,
    t_end: float,
    dt: float,
    mode: str,
    agents: Sequence[Agent],
) -> EmergentTrajectory:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {', '.join(MODES)}, got {mode!r}")
    grid = nominal_grid(t0, t_end, dt)
    fields = [a.field for a in agents]
    logger.info("[EMERGENT] simulate mode=%s N=%s t=[%s, %s] dt=%s", mode, len(agents), t0, t_end, dt)

    if mode == "two_dim":
        return _simulate_two_dim(float(xi0), grid, agents)

    if mode == "direct":
        def vector_field(t: float, s: float) -> float:
            return emergent_rhs(t, s, agents)
    else:
        def vector_field(t: float, s: float) -> float:
            return blended_rhs(t, s, fields)

    def rhs(t: float, y: np.ndarray) -> np.ndarray:
        return np.array([vector_field(t, float(y[0]))])

    xi = np.empty(grid.size)
    chi = np.empty(grid.size)
    y = np.array([float(xi0)])
    for k, t in enumerate(grid):
        if k:
            y = rk4_step(rhs, float(grid[k - 1]), y, float(t - grid[k - 1]))
        xi[k] = y[0]
        chi[k] = vector_field(float(t), float(y[0]))
    return EmergentTrajectory(times=grid, xi=xi, chi=chi, mode=mode)


def _simulate_two_dim(xi0: float, grid: np.ndarray, agents: Sequence[Agent]) -> EmergentTrajectory:
    every = max(1, int(conf.setting("drift_check_every")))
    tolerance = float(conf.setting("drift_tolerance"))

    def rhs(t: float, y: np.ndarray) -> np.ndarray:
        return _two_dim_rhs(t, y, agents)

    y = np.array([xi0, emergent_rhs(float(grid[0]), xi0, agents)])
    xi = np.empty(grid.size)
    chi = np.empty(grid.size)
    xi[0], chi[0] = y
    max_drift = 0.0
    for k in range(1, grid.size):
        y = rk4_step(rhs, float(grid[k - 1]), y, float(grid[k] - grid[k - 1]))
        xi[k], chi[k] = y
        if k % every == 0 or k == grid.size - 1:
            drift = abs(y[1] - emergent_rhs(float(grid[k]), float(y[0]), agents))
            max_drift = max(max_drift, drift)
            logger.debug("[EMERGENT] drift check t=%s |chi - h|=%s", grid[k], drift)
    if max_drift > tolerance:
        logger.warning("[EMERGENT] two_dim drift %s exceeds %s", max_drift, tolerance)
    return EmergentTrajectory(times=grid, xi=xi, chi=chi, mode="two_dim", max_drift=max_drift)


# ---------------------------------------------------------------------------
# Comparison and sweeps
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class ComparisonReport:
    tau: float
    sup_state_err: float
    sup_ratio_err: float
    max_input: float
    breach: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return {
            "tau": self.tau,
            "sup_state_err": self.sup_state_err,
            "sup_ratio_err": self.sup_ratio_err,
            "max_input": self.max_input,
            "breach": self.breach,
        }


def compare(rec: TrajectoryRecord, em: EmergentTrajectory, tau: float, s: Scenario) -> ComparisonReport:
    times = np.asarray(rec.times)
    if times.shape != em.times.shape or not np.allclose(times, em.times, rtol=1e-12, atol=1e-12):
        raise GridMismatch(f"record has {times.size} grid times, emergent trajectory {em.times.size}")
    if not 0.0 <= tau <= s.t_end - s.t0:
        raise InvalidScenario(f"tau={tau!r} outside the horizon length {s.t_end - s.t0!r}")

    window = np.flatnonzero(times >= s.t0 + tau - 1e-12)
    state_err = float(np.max(np.abs(rec.x[window] - em.xi[window, None]))) if window.size else 0.0
    ratio_err = 0.0
    for k in window:
        t = float(times[k])
        x_s = float(rec.x[k].mean())
        f = s.drive(t, np.full(s.n, x_s))
        h = solve_h(f, rec.psi[k], s.couplings)
        ratio_err = max(ratio_err, float(np.max(np.abs(rec.ratio[k] - s.couple("mu_inv", h - f)))))
    return ComparisonReport(tau=tau, sup_state_err=state_err, sup_ratio_err=ratio_err, max_input=rec.max_input)


@dataclass(frozen=True)
class SweepRow:
    eps: float
    sup_state_err: float
    sup_ratio_err: float
    max_input: float
    breach: bool

    def to_dict(self) -> Dict[str, Any]:
        return {
            "eps": self.eps,
            "sup_state_err": self.sup_state_err,
            "sup_ratio_err": self.sup_ratio_err,
            "max_input": self.max_input,
            "breach": self.breach,
        }


def epsilon_sweep(
    template: Scenario,
    base_funnels: Sequence[FunnelSpec],
    eps_list: Sequence[float],
    tau: float,
    mode: str = "direct",
) -> List[SweepRow]:
    """Integrate with funnels eps * psi_i for every eps and compare against the emergent run."""
    if float(np.ptp(template.x0)) != 0.0:
        raise InvalidScenario("funnel-scaling sweep needs synchronized initial states")
    xi0 = float(template.x0[0])
    rows: List[SweepRow] = []
    for eps in eps_list:
        scenario = template.with_funnels([Scaled(b, float(eps)) for b in base_funnels])
        try:
            rec = integrate(scenario)
        except FunnelBreach as exc:
            partial = exc.record
            rows.append(SweepRow(float(eps), math.nan, math.nan, partial.max_input if partial else math.nan, True))
            logger.warning("[EMERGENT] sweep eps=%s: funnel breach near t=%s", eps, exc.t)
            continue
        em = simulate_emergent(xi0, scenario.t0, scenario.t_end, scenario.dt, mode, scenario.agents)
        if rec.outcome != OUTCOME_COMPLETED:
            em = em.truncated(rec.times.size)
        report = compare(rec, em, tau, scenario)
        rows.append(SweepRow(float(eps), report.sup_state_err, report.sup_ratio_err, report.max_input, False))
        logger.info(
            "[EMERGENT] sweep eps=%s state_err=%s ratio_err=%s max_input=%s",
            eps, report.sup_state_err, report.sup_ratio_err, report.max_input,
        )
    return rows


# ---------------------------------------------------------------------------
# Experiments and helpers
# ---------------------------------------------------------------------------
def leader_gaps(
    f: Sequence[float],
    psi: Sequence[float],
    couplings: Sequence[CouplingSpec],
    leader: int,
    scales: Sequence[float],
) -> List[float]:
    """|h - f_leader| when the leader's funnel is scaled by each r in scales."""
    gaps = []
    for r in scales:
        weights = np.array(psi, dtype=float)
        weights[leader] *= float(r)
        gaps.append(abs(solve_h(f, weights, couplings) - float(f[leader])))
    return gaps


def emergent_contraction_rate(
    agents: Sequence[Agent],
    t_samples: Sequence[float],
    xi_samples: Sequence[float],
) -> float:
    """Largest sampled d f_em / d xi = sum_i dh/df_i * df_i/dxi; negative means contractive."""
    worst = -math.inf
    couplings = tuple(a.coupling for a in agents)
    funnels = tuple(a.funnel for a in agents)
    for t in t_samples:
        for xi in xi_samples:
            partials = [eval_with_partials(a.field, float(t), float(xi)) for a in agents]
            f = tuple(p[0] for p in partials)
            problem = HProblem(t=float(t), f=f, funnels=funnels, couplings=couplings)
            weights = h_partials(problem, solve_h_bisection(problem)).dh_df
            worst = max(worst, float(weights @ np.array([p[2] for p in partials])))
    return worst


def counting_network(n: int) -> List[VectorField]:
    """Agent 0 runs x' = -x + 1, the rest x' = 1; the blended equilibrium is n."""
    return [parse("-x + 1")] + [parse("1") for _ in range(n - 1)]


def locally_linear_bound(
    fields: Sequence[VectorField],
    box: Tuple[float, float],
    t_span: Tuple[float, float],
    samples: int = 41,
) -> float:
    """max |f_i| over the sampled region: the mf_bar that keeps LocallyLinear couplings linear there."""
    ts = np.linspace(t_span[0], t_span[1], samples)
    xs = np.linspace(box[0], box[1], samples)
    return max(abs(evaluate(vf, float(t), float(x))) for vf in fields for t in ts for x in xs)


@dataclass(frozen=True)
class InitialMedianRow:
    eps: float
    x_s: float
    median_lower: float
    median_upper: float
    distance: float

    def to_dict(self) -> Dict[str, Any]:
        return {
            "eps": self.eps,
            "x_s": self.x_s,
            "median_lower": self.median_lower,
            "median_upper": self.median_upper,
            "distance": self.distance,
        }


def initial_median_experiment(
    template: Scenario,
    eps_list: Sequence[float],
    horizon: float,
    weights: Optional[Sequence[float]] = None,
    rate: float = 50.0,
) -> List[InitialMedianRow]:
    """
    Non-synchronized start: funnels open wide at t0 and settle to eps * weights_i within
    roughly 1/rate. Reports the state average at t0 + horizon next to the weighted median of
    x0 with the given weights. Observational only.
    """
    from synchronization.services.median import MedianProblem, weighted_median_set

    if weights is None:
        weights = template.psi_values(template.t0)[0]
    x0 = np.array(template.x0)
    opening = 2.0 * float(np.max(np.abs(template.spectrum.laplacian @ x0))) + 1.0
    median = weighted_median_set(MedianProblem(tuple(template.x0), tuple(float(w) for w in weights)))
    rows = []
    for eps in eps_list:
        funnels = [
            ExpToEta(psi0=opening + eps * w, eta=eps * w, lam=rate, t0=template.t0) for w in weights
        ]
        agents = [replace(a, funnel=f) for a, f in zip(template.agents, funnels)]
        scenario = template._rebuild(agents=agents, t_end=template.t0 + horizon)
        rec = integrate(scenario)
        x_s = float(rec.x[-1].mean())
        rows.append(InitialMedianRow(float(eps), x_s, median.lower, median.upper, median.distance(x_s)))
        logger.info("[EMERGENT] initial-median eps=%s x_s=%s median=[%s, %s]", eps, x_s, median.lower, median.upper)
    return rows
