"""
synchronization/services/netsim.py

Closed-loop network simulation under node-wise funnel coupling:

    x_i' = f_i(t, x_i) + mu_i(nu_i / psi_i(t)),    nu = -L x

Responsibilities:
- Scenario: immutable bundle of graph, agents and time grid, validated at build
  (connected graph, every agent strictly inside its funnel at t0).
- Funnel-guarded RK4: a trial step is rejected when any stage or the endpoint
  reaches |nu_i|/psi_i >= 1 - guard_margin, and retried with half the step
  down to dt_min. Sub-steps are also capped by the RK4 stability bound of the
  frozen coupling Jacobian -diag(mu_i'/psi_i) L.
- Records sampled on the nominal grid, appendix diagnostics (x_s, y, V, W),
  the disagreement check and the sampled assumption validator.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from synchronization.services import conf
from synchronization.services.errors import (
    DimensionMismatch,
    FunnelBreach,
    FunnelDomainBreach,
    GridMismatch,
    InitialOutsideFunnel,
    InvalidScenario,
    NonFinite,
)
from synchronization.services.graph import Graph, Spectrum, disagreement_bound, spectral_decomposition
from synchronization.services.shape import (
    CouplingReport,
    CouplingSpec,
    FunnelReport,
    FunnelSpec,
    validate_coupling,
    validate_funnel_set,
)
from synchronization.services.stepping import nominal_grid, rk4_step
from synchronization.services.vfield import VectorField, eval_with_partials, evaluate, is_affine, lipschitz_in_x

logger = logging.getLogger(__name__)

OUTCOME_COMPLETED = "completed"
OUTCOME_FUNNEL_CLOSED = "funnel_closed"
OUTCOME_BREACH = "breach"


@dataclass(frozen=True)
class Agent:
    field: VectorField
    funnel: FunnelSpec
    coupling: CouplingSpec


@dataclass(frozen=True, eq=False)
class Scenario:
    graph: Graph
    spectrum: Spectrum
    agents: Tuple[Agent, ...]
    x0: Tuple[float, ...]
    t0: float
    t_end: float
    dt: float
    dt_min: float
    guard_margin: float
    stability_factor: float
    name: str = ""

    @property
    def n(self) -> int:
        return self.graph.n

    @property
    def laplacian(self) -> np.ndarray:
        return self.spectrum.laplacian

    @property
    def funnels(self) -> Tuple[FunnelSpec, ...]:
        return tuple(a.funnel for a in self.agents)

    @property
    def couplings(self) -> Tuple[CouplingSpec, ...]:
        return tuple(a.coupling for a in self.agents)

    @property
    def fields(self) -> Tuple[VectorField, ...]:
        return tuple(a.field for a in self.agents)

    @cached_property
    def _funnel_groups(self) -> List[Tuple[FunnelSpec, np.ndarray]]:
        return _group(self.funnels)

    @cached_property
    def _coupling_groups(self) -> List[Tuple[CouplingSpec, np.ndarray]]:
        return _group(self.couplings)

    def psi_values(self, t: float) -> Tuple[np.ndarray, np.ndarray]:
        psi = np.empty(self.n)
        dpsi = np.empty(self.n)
        for funnel, idx in self._funnel_groups:
            psi[idx], dpsi[idx] = funnel.evaluate(t)
        return psi, dpsi

    def couple(self, method: str, values: np.ndarray) -> np.ndarray:
        """Apply a coupling method ('mu', 'mu_inv', ...) agent-wise."""
        out = np.empty(self.n)
        for coupling, idx in self._coupling_groups:
            out[idx] = getattr(coupling, method)(values[idx])
        return out

    def drive(self, t: float, x: Sequence[float]) -> np.ndarray:
        return np.array([evaluate(a.field, t, float(xi)) for a, xi in zip(self.agents, x)])

    def with_funnels(self, funnels: Sequence[FunnelSpec]) -> "Scenario":
        agents = [replace(a, funnel=f) for a, f in zip(self.agents, funnels)]
        return self._rebuild(agents=agents)

    def with_x0(self, x0: Sequence[float]) -> "Scenario":
        return self._rebuild(x0=x0)

    def _rebuild(self, **changes: Any) -> "Scenario":
        kwargs = dict(
            graph=self.graph,
            agents=self.agents,
            x0=self.x0,
            t0=self.t0,
            t_end=self.t_end,
            dt=self.dt,
            dt_min=self.dt_min,
            guard_margin=self.guard_margin,
            stability_factor=self.stability_factor,
            name=self.name,
        )
        kwargs.update(changes)
        return build_scenario(**kwargs)


def _group(items: Sequence[Any]) -> List[Tuple[Any, np.ndarray]]:
    groups: Dict[Any, List[int]] = {}
    for i, item in enumerate(items):
        groups.setdefault(item, []).append(i)
    return [(item, np.array(idx, dtype=int)) for item, idx in groups.items()]


def build_scenario(
    graph: Graph,
    agents: Sequence[Agent],
    x0: Sequence[float],
    t0: float,
    t_end: float,
    dt: float,
    dt_min: Optional[float] = None,
    guard_margin: Optional[float] = None,
    stability_factor: Optional[float] = None,
    name: str = "",
) -> Scenario:
    agents = tuple(agents)
    x0 = tuple(float(v) for v in x0)
    if len(agents) != graph.n:
        raise DimensionMismatch(graph.n, len(agents), what="agent list")
    if len(x0) != graph.n:
        raise DimensionMismatch(graph.n, len(x0), what="x0")

    dt_min = conf.setting("dt_min") if dt_min is None else float(dt_min)
    guard_margin = conf.setting("guard_margin") if guard_margin is None else float(guard_margin)
    stability_factor = conf.setting("stability_factor") if stability_factor is None else float(stability_factor)
    if not (math.isfinite(t0) and math.isfinite(t_end) and t_end > t0):
        raise InvalidScenario(f"need finite t0 < t_end, got [{t0!r}, {t_end!r}]")
    if not dt > 0.0:
        raise InvalidScenario(f"dt must be positive, got {dt!r}")
    if not 0.0 < dt_min <= dt:
        raise InvalidScenario(f"dt_min must lie in (0, dt], got {dt_min!r}")
    if not 0.0 < guard_margin < 1.0:
        raise InvalidScenario(f"guard_margin must lie in (0, 1), got {guard_margin!r}")

    spectrum = spectral_decomposition(graph)
    scenario = Scenario(
        graph=graph,
        spectrum=spectrum,
        agents=agents,
        x0=x0,
        t0=float(t0),
        t_end=float(t_end),
        dt=float(dt),
        dt_min=dt_min,
        guard_margin=guard_margin,
        stability_factor=stability_factor,
        name=name,
    )

    nu0 = diffusive_terms(np.array(x0), graph)
    psi0, _ = scenario.psi_values(scenario.t0)
    for i in range(graph.n):
        if not abs(nu0[i]) < psi0[i]:
            raise InitialOutsideFunnel(i, float(nu0[i]), float(psi0[i]))
    return scenario


# ---------------------------------------------------------------------------
# Right-hand side
# ---------------------------------------------------------------------------
def diffusive_terms(x: Sequence[float], g: Graph) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (g.n,):
        raise DimensionMismatch(g.n, int(x.size))
    return g.adjacency @ x - g.degree() * x


def network_rhs(t: float, x: Sequence[float], s: Scenario) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (s.n,):
        raise DimensionMismatch(s.n, int(x.size))
    nu = -(s.laplacian @ x)
    psi, _ = s.psi_values(t)
    ratio = nu / psi
    outside = np.flatnonzero(~(np.abs(ratio) < 1.0))
    if outside.size:
        i = int(outside[0])
        raise FunnelDomainBreach(i, t, float(ratio[i]))
    return s.drive(t, x) + s.couple("mu", ratio)


class _GuardTrip(Exception):
    def __init__(self, agent: int, t: float):
        self.agent, self.t = agent, t


class _FunnelClosed(Exception):
    def __init__(self, t: float):
        self.t = t


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class TrajectoryRecord:
    times: np.ndarray
    x: np.ndarray
    nu: np.ndarray
    u: np.ndarray
    ratio: np.ndarray
    psi: np.ndarray
    runtime_steps: int = 0
    rejected_steps: int = 0
    outcome: str = OUTCOME_COMPLETED

    @property
    def n(self) -> int:
        return int(self.x.shape[1])

    @property
    def breach(self) -> bool:
        return self.outcome == OUTCOME_BREACH

    @property
    def max_input(self) -> float:
        return float(np.max(np.abs(self.u))) if self.u.size else 0.0

    @property
    def max_ratio(self) -> float:
        return float(np.max(np.abs(self.ratio))) if self.ratio.size else 0.0

    def summary(self) -> Dict[str, Any]:
        return {
            "max_input": self.max_input,
            "max_ratio": self.max_ratio,
            "breach": self.breach,
            "runtime_steps": self.runtime_steps,
            "rejected_steps": self.rejected_steps,
            "outcome": self.outcome,
        }

    def columns(self) -> Dict[str, np.ndarray]:
        cols: Dict[str, np.ndarray] = {"t": self.times}
        for label, data in (("x", self.x), ("nu", self.nu), ("u", self.u), ("ratio", self.ratio), ("psi", self.psi)):
            for i in range(self.n):
                cols[f"{label}_{i}"] = data[:, i]
        return cols


@dataclass
class _Recorder:
    n: int
    times: List[float] = field(default_factory=list)
    rows: List[Tuple[np.ndarray, ...]] = field(default_factory=list)

    def add(self, s: Scenario, t: float, x: np.ndarray) -> None:
        nu = -(s.laplacian @ x)
        psi, _ = s.psi_values(t)
        ratio = nu / psi
        self.times.append(t)
        self.rows.append((x.copy(), nu, s.couple("mu", ratio), ratio, psi))

    def build(self, steps: int, rejected: int, outcome: str) -> TrajectoryRecord:
        def stack(k: int) -> np.ndarray:
            if not self.rows:
                return np.empty((0, self.n))
            return np.vstack([row[k] for row in self.rows])

        return TrajectoryRecord(
            times=np.array(self.times, dtype=float),
            x=stack(0),
            nu=stack(1),
            u=stack(2),
            ratio=stack(3),
            psi=stack(4),
            runtime_steps=steps,
            rejected_steps=rejected,
            outcome=outcome,
        )


# ---------------------------------------------------------------------------
# Integration
# ---------------------------------------------------------------------------
def _stage(s: Scenario, t: float, x: np.ndarray, limit: float) -> Tuple[np.ndarray, float]:
    """x' at (t, x) and the stiffness estimate lambda_N * max_i mu_i'(r_i)/psi_i."""
    psi, _ = s.psi_values(t)
    if np.any(psi <= 0.0):
        raise _FunnelClosed(t)
    nu = -(s.laplacian @ x)
    ratio = nu / psi
    outside = np.flatnonzero(~(np.abs(ratio) < limit))
    if outside.size:
        raise _GuardTrip(int(outside[0]), t)
    xdot = s.drive(t, x) + s.couple("mu", ratio)
    gain = s.spectrum.lambda_max * float(np.max(s.couple("mu_prime", ratio) / psi))
    return xdot, gain


def integrate(s: Scenario) -> TrajectoryRecord:
    grid = nominal_grid(s.t0, s.t_end, s.dt)
    limit = 1.0 - s.guard_margin
    recorder = _Recorder(s.n)
    x = np.array(s.x0, dtype=float)
    recorder.add(s, s.t0, x)

    steps = rejected = 0
    h = s.dt
    outcome = OUTCOME_COMPLETED
    logger.info("[NETSIM] integrate %s: N=%s, t=[%s, %s], dt=%s", s.name or "-", s.n, s.t0, s.t_end, s.dt)

    def rhs(t: float, y: np.ndarray) -> np.ndarray:
        return _stage(s, t, y, limit)[0]

    try:
        for k in range(1, len(grid)):
            t, t_next = float(grid[k - 1]), float(grid[k])
            while t < t_next:
                remaining = t_next - t
                h_try = remaining if remaining <= h * (1.0 + 1e-9) else h
                try:
                    k1, gain = _stage(s, t, x, limit)
                    if s.stability_factor > 0.0 and gain > 0.0:
                        h_try = min(h_try, max(s.stability_factor / gain, s.dt_min))
                    k2 = rhs(t + h_try / 2, x + h_try / 2 * k1)
                    k3 = rhs(t + h_try / 2, x + h_try / 2 * k2)
                    k4 = rhs(t + h_try, x + h_try * k3)
                    x_new = x + h_try / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
                    _stage(s, t + h_try, x_new, limit)
                except _GuardTrip as trip:
                    rejected += 1
                    h = h_try / 2
                    logger.debug("[NETSIM] guard trip agent=%s t=%s, retry with h=%s", trip.agent, trip.t, h)
                    if h < s.dt_min:
                        record = recorder.build(steps, rejected, OUTCOME_BREACH)
                        logger.warning("[NETSIM] funnel breach agent=%s near t=%s", trip.agent, trip.t)
                        raise FunnelBreach(trip.t, trip.agent, record=record) from None
                    continue
                x = x_new
                steps += 1
                t = t_next if h_try >= remaining else t + h_try
                h = min(s.dt, 2.0 * h)
            recorder.add(s, t_next, x)
    except _FunnelClosed as closed:
        outcome = OUTCOME_FUNNEL_CLOSED
        logger.warning("[NETSIM] funnel closed at t=%s; record ends at t=%s", closed.t, recorder.times[-1])

    record = recorder.build(steps, rejected, outcome)
    logger.info(
        "[NETSIM] done: outcome=%s steps=%s rejected=%s max_input=%s max_ratio=%s",
        outcome, steps, rejected, record.max_input, record.max_ratio,
    )
    return record


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class Diagnostics:
    times: np.ndarray
    x_s: np.ndarray
    y: np.ndarray
    V: np.ndarray
    W: np.ndarray
    identity_residual: np.ndarray


def _aligned(a: np.ndarray, b: np.ndarray) -> bool:
    return a.shape == b.shape and bool(np.all(np.abs(a - b) <= 1e-9 * (1.0 + np.abs(a))))


def diagnostics(rec: TrajectoryRecord, s: Scenario, emergent: Any) -> Diagnostics:
    from synchronization.services.emergent import solve_h

    times = np.asarray(rec.times)
    if not _aligned(times, np.asarray(emergent.times)):
        raise GridMismatch(f"record has {times.size} grid times, emergent trajectory {len(emergent.times)}")

    R = s.spectrum.basis
    lam = s.spectrum.eigenvalues[1:]
    K = times.size
    x_s = rec.x.mean(axis=1)
    y = np.empty((K, s.n - 1))
    residual = np.empty(K)
    for k, t in enumerate(times):
        psi = rec.psi[k]
        psi_min = float(psi.min())
        f = s.drive(t, np.full(s.n, x_s[k]))
        h = solve_h(f, psi, s.couplings)
        steady = s.couple("mu_inv", h - f)
        y[k] = -(lam * (R.T @ rec.x[k])) / psi_min - (R.T @ (psi * steady)) / psi_min
        predicted = (psi_min / psi) * (R @ y[k])
        residual[k] = float(np.max(np.abs(rec.ratio[k] - steady - predicted)))

    V = np.abs(x_s - np.asarray(emergent.xi))
    W = np.sum(y * y / lam, axis=1)
    return Diagnostics(times=times, x_s=x_s, y=y, V=V, W=W, identity_residual=residual)


@dataclass(frozen=True)
class DisagreementCheck:
    holds: bool
    worst_ratio: float  # max over grid of spread / bound

    def to_dict(self) -> Dict[str, Any]:
        return {"holds": self.holds, "worst_ratio": self.worst_ratio}


def check_disagreement(rec: TrajectoryRecord, s: Scenario) -> DisagreementCheck:
    """max_ij |x_i - x_j| <= 2 sqrt(N) max_i psi_i(t) / lambda_2 at every grid time."""
    if not rec.times.size:
        return DisagreementCheck(holds=True, worst_ratio=0.0)
    spread = rec.x.max(axis=1) - rec.x.min(axis=1)
    bound = np.array([2.0 * disagreement_bound(s.spectrum, float(p.max())) for p in rec.psi])
    ratio = spread / bound
    worst = float(ratio.max())
    return DisagreementCheck(holds=worst <= 1.0 + 1e-9, worst_ratio=worst)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class AgentReport:
    index: int
    source: str
    finite: bool
    affine: bool
    globally_lipschitz: bool
    contractive: bool
    contraction_rate: Optional[float]
    lipschitz_estimate: float
    theta_f: float

    @property
    def complete_solutions(self) -> bool:
        return self.finite and (self.globally_lipschitz or self.contractive)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "index": self.index,
            "f": self.source,
            "finite": self.finite,
            "affine": self.affine,
            "globally_lipschitz": self.globally_lipschitz,
            "contractive": self.contractive,
            "contraction_rate": self.contraction_rate,
            "lipschitz_estimate": self.lipschitz_estimate,
            "theta_f": self.theta_f,
        }


@dataclass(frozen=True)
class EnvelopeReport:
    """Comparison system x' = max_i f_i (from max x0) and x' = min_i f_i (from min x0)."""

    bounded: bool
    upper_end: float
    lower_end: float
    escape_time: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "bounded": self.bounded,
            "upper_end": self.upper_end,
            "lower_end": self.lower_end,
            "escape_time": self.escape_time,
        }


@dataclass(frozen=True)
class ScenarioReport:
    agents: Tuple[AgentReport, ...]
    funnels: FunnelReport
    couplings: Tuple[CouplingReport, ...]
    envelope: EnvelopeReport
    lambda2: float
    box: Tuple[float, float]
    warnings: Tuple[str, ...]

    @property
    def passed(self) -> bool:
        return (
            all(a.complete_solutions for a in self.agents)
            and self.funnels.passed
            and all(c.passed for c in self.couplings)
            and self.envelope.bounded
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "passed": self.passed,
            "lambda2": self.lambda2,
            "box": list(self.box),
            "agents": [a.to_dict() for a in self.agents],
            "funnels": self.funnels.to_dict(),
            "couplings": [c.to_dict() for c in self.couplings],
            "envelope": self.envelope.to_dict(),
            "warnings": list(self.warnings),
        }


def _agent_report(i: int, vf: VectorField, ts: np.ndarray, xs: np.ndarray) -> AgentReport:
    df_dt = np.empty((ts.size, xs.size))
    df_dx = np.empty((ts.size, xs.size))
    finite = True
    try:
        for a, t in enumerate(ts):
            for b, x in enumerate(xs):
                _, df_dt[a, b], df_dx[a, b] = eval_with_partials(vf, float(t), float(x))
    except NonFinite:
        finite = False

    affine = is_affine(vf)
    if not finite:
        return AgentReport(i, str(vf.source or vf), False, affine, False, False, None, math.inf, math.inf)

    slope_max = float(df_dx.max())
    contractive = slope_max < 0.0
    return AgentReport(
        index=i,
        source=str(vf.source or vf),
        finite=True,
        affine=affine,
        globally_lipschitz=lipschitz_in_x(vf),
        contractive=contractive,
        contraction_rate=-slope_max if contractive else None,
        lipschitz_estimate=float(np.abs(df_dx).max()),
        theta_f=float(np.abs(df_dt).max()),
    )


def _envelope(s: Scenario) -> EnvelopeReport:
    threshold = conf.setting("escape_threshold")
    dt = max(s.dt, (s.t_end - s.t0) / 5000.0)
    grid = nominal_grid(s.t0, s.t_end, dt)

    def upper(t: float, y: np.ndarray) -> np.ndarray:
        return np.array([max(evaluate(a.field, t, float(y[0])) for a in s.agents)])

    def lower(t: float, y: np.ndarray) -> np.ndarray:
        return np.array([min(evaluate(a.field, t, float(y[0])) for a in s.agents)])

    hi = np.array([max(s.x0)])
    lo = np.array([min(s.x0)])
    for k in range(1, len(grid)):
        t, h = float(grid[k - 1]), float(grid[k] - grid[k - 1])
        try:
            hi = rk4_step(upper, t, hi, h)
            lo = rk4_step(lower, t, lo, h)
        except (NonFinite, OverflowError):
            return EnvelopeReport(False, math.inf, -math.inf, escape_time=float(grid[k]))
        if not (np.all(np.isfinite(hi)) and np.all(np.isfinite(lo))) or max(abs(hi[0]), abs(lo[0])) > threshold:
            return EnvelopeReport(False, float(hi[0]), float(lo[0]), escape_time=float(grid[k]))
    return EnvelopeReport(True, float(hi[0]), float(lo[0]))


def validate_scenario(
    s: Scenario,
    samples: Optional[int] = None,
    box: Optional[Tuple[float, float]] = None,
) -> ScenarioReport:
    samples = int(samples or conf.setting("validation_samples"))
    if box is None:
        half = max(float(conf.setting("validation_box")), 2.0 * max(abs(v) for v in s.x0))
        box = (-half, half)
    ts = np.linspace(s.t0, s.t_end, samples)
    xs = np.linspace(box[0], box[1], samples)
    warnings: List[str] = []

    agents = tuple(_agent_report(i, a.field, ts, xs) for i, a in enumerate(s.agents))
    for rep in agents:
        if not rep.finite:
            warnings.append(f"agent {rep.index}: f={rep.source} is not finite on the sampled box")
        elif not rep.complete_solutions:
            warnings.append(
                f"agent {rep.index}: f={rep.source} not recognized as globally Lipschitz or contractive; "
                "complete solutions rest on the envelope check"
            )

    funnels = validate_funnel_set(s.funnels, (s.t0, s.t_end), samples)
    warnings.extend(funnels.warnings)
    couplings = tuple(validate_coupling(c) for c in dict.fromkeys(s.couplings))
    for rep in couplings:
        warnings.extend(rep.warnings)

    envelope = _envelope(s)
    if not envelope.bounded:
        warnings.append(f"comparison envelope escapes near t={envelope.escape_time!r}")

    # steady ratios mu^-1(h - f_i) saturate numerically past the coupling's resolvable range
    try:
        spread = max(
            float(np.ptp([evaluate(a.field, float(t), float(x)) for a in s.agents])) for t in ts for x in xs
        )
    except NonFinite:
        spread = math.inf
    resolvable = min(c.resolvable_range for c in s.couplings)
    if spread > resolvable:
        warnings.append(
            f"drive spread {spread:.6g} exceeds the coupling resolution {resolvable:.6g}; "
            "steady funnel ratios may sit numerically at the boundary"
        )

    for w in warnings:
        logger.warning("[VALIDATE] %s", w)
    return ScenarioReport(
        agents=agents,
        funnels=funnels,
        couplings=couplings,
        envelope=envelope,
        lambda2=s.spectrum.lambda2,
        box=(float(box[0]), float(box[1])),
        warnings=tuple(dict.fromkeys(warnings)),
    )
