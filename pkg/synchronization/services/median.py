"""
synchronization/services/median.py

Distributed median solver.

Responsibilities:
- Weighted median set of a finite collection (singleton or interval).
- Admissibility bound on the near-signum parameter eps.
- Builder for the median network x_i' = f*_i - x_i + mu_i(nu_i / psi(t)) with a shared
  vanishing funnel, and a runner that integrates it and reports distances.
- Fixed point of the emergent dynamics xi' = h(f*) - xi.

Each agent only sees its own value f*_i and its diffusive term nu_i.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from synchronization.services.emergent import solve_h
from synchronization.services.errors import EpsilonTooLarge, FunnelNotVanishing, TooManySubsets
from synchronization.services.graph import Graph
from synchronization.services.netsim import Agent, Scenario, TrajectoryRecord, build_scenario, integrate
from synchronization.services.shape import CouplingSpec, FunnelSpec, NearSignum
from synchronization.services.vfield import parse

logger = logging.getLogger(__name__)

MAX_EXHAUSTIVE_N = 24


@dataclass(frozen=True)
class MedianProblem:
    values: Tuple[float, ...]
    weights: Tuple[float, ...]

    def __post_init__(self):
        if not self.values:
            raise ValueError("median of an empty collection")
        if len(self.values) != len(self.weights):
            raise ValueError("values and weights differ in length")
        if any(not w > 0.0 for w in self.weights):
            raise ValueError("weights must be positive")

    @classmethod
    def equal(cls, values: Sequence[float]) -> "MedianProblem":
        return cls(tuple(float(v) for v in values), tuple(1.0 for _ in values))


@dataclass(frozen=True)
class MedianSet:
    lower: float
    upper: float

    @property
    def singleton(self) -> bool:
        return self.lower == self.upper

    def distance(self, h: float) -> float:
        return max(0.0, self.lower - h, h - self.upper)

    def to_json(self) -> Dict[str, Any]:
        return {"lower": self.lower, "upper": self.upper, "singleton": self.singleton}


def weighted_median_set(p: MedianProblem) -> MedianSet:
    order = np.argsort(np.asarray(p.values), kind="stable")
    values = np.asarray(p.values, dtype=float)[order]
    cumulative = np.cumsum(np.asarray(p.weights, dtype=float)[order])
    threshold = 0.5 * cumulative[-1]
    tol = 1e-12 * cumulative[-1]

    j = int(np.flatnonzero(cumulative >= threshold - tol)[0])
    if abs(cumulative[j] - threshold) <= tol and j + 1 < values.size:
        return MedianSet(float(values[j]), float(values[j + 1]))
    return MedianSet(float(values[j]), float(values[j]))


def _subset_sums(weights: np.ndarray) -> np.ndarray:
    sums = np.zeros(1)
    for w in weights:
        sums = np.concatenate([sums, sums + w])
    return sums


def median_epsilon_bound(weights: Sequence[float]) -> Tuple[float, float]:
    """
    delta = min over index sets K with weight share above one half of (share - 1/2), and the
    admissible bound eps_max = 4 delta / (2 delta + 1). Equal weights use delta = 1 / (2N).
    """
    w = np.asarray(weights, dtype=float)
    n = w.size
    if n == 0 or np.any(w <= 0.0):
        raise ValueError("weights must be a non-empty list of positive numbers")
    if np.all(w == w[0]):
        delta = 1.0 / (2.0 * n)
    elif n > MAX_EXHAUSTIVE_N:
        raise TooManySubsets(f"{n} unequal weights: subset scan limited to {MAX_EXHAUSTIVE_N}")
    else:
        shares = _subset_sums(w) / w.sum() - 0.5
        delta = float(shares[shares > 1e-12].min())
    return delta, 4.0 * delta / (2.0 * delta + 1.0)


def _check_vanishing(funnel: FunnelSpec) -> None:
    limit, rate = funnel.asymptote()
    if limit != 0.0 or not rate > 0.0:
        raise FunnelNotVanishing(f"median funnel must decay to zero exponentially, got {funnel.to_dict()}")


def build_median_scenario(
    values: Sequence[float],
    graph: Graph,
    eps: float,
    eta: float,
    funnel: FunnelSpec,
    x0: Optional[Sequence[float]] = None,
    t0: float = 0.0,
    t_end: float = 30.0,
    dt: float = 0.01,
    dt_min: Optional[float] = None,
    stability_factor: Optional[float] = None,
    name: str = "median",
) -> Scenario:
    values = [float(v) for v in values]
    _, eps_max = median_epsilon_bound([1.0] * len(values))
    if not eps < eps_max:
        raise EpsilonTooLarge(eps, eps_max)
    _check_vanishing(funnel)

    coupling = NearSignum(eps=eps, eta=eta)
    agents = [Agent(field=parse(f"{v!r} - x"), funnel=funnel, coupling=coupling) for v in values]
    x0 = [0.0] * len(values) if x0 is None else x0
    logger.info("[MEDIAN] build N=%s eps=%s (max %s) eta=%s", len(values), eps, eps_max, eta)
    return build_scenario(
        graph,
        agents,
        x0,
        t0,
        t_end,
        dt,
        dt_min=dt_min,
        stability_factor=stability_factor,
        name=name,
    )


def median_emergent_fixed_point(
    values: Sequence[float],
    couplings: Sequence[CouplingSpec],
    weights: Optional[Sequence[float]] = None,
) -> float:
    """h(f*), the equilibrium of xi' = h(f* - xi) = h(f*) - xi."""
    weights = [1.0] * len(values) if weights is None else weights
    return solve_h(values, weights, couplings)


# ---------------------------------------------------------------------------
# Runner
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class MedianReport:
    median_set: MedianSet
    h_star: float
    final_states: Tuple[float, ...]
    max_input: float
    bound_eta: float
    eps: float
    eps_max: float
    final_psi: float
    record: Optional[TrajectoryRecord] = None

    @property
    def h_star_distance(self) -> float:
        return self.median_set.distance(self.h_star)

    @property
    def state_distances(self) -> List[float]:
        return [self.median_set.distance(x) for x in self.final_states]

    @property
    def within_bound(self) -> bool:
        slack = self.bound_eta + 10.0 * self.final_psi
        return all(d <= slack for d in self.state_distances)

    def to_json(self) -> Dict[str, Any]:
        return {
            "median_set": self.median_set.to_json(),
            "h_star": self.h_star,
            "h_star_distance": self.h_star_distance,
            "final_states": list(self.final_states),
            "distance_to_median": self.state_distances,
            "max_input": self.max_input,
            "bound_eta": self.bound_eta,
            "eps": self.eps,
            "eps_max": self.eps_max,
            "final_psi": self.final_psi,
            "within_bound": self.within_bound,
            "outcome": self.record.outcome if self.record is not None else "trivial",
        }


def run_median(
    values: Sequence[float],
    graph: Optional[Graph],
    eps: float,
    eta: float,
    funnel: FunnelSpec,
    **scenario_kwargs: Any,
) -> MedianReport:
    """Build, integrate and report. A single value is its own median; no network is run."""
    values = [float(v) for v in values]
    problem = MedianProblem.equal(values)
    median = weighted_median_set(problem)
    if len(values) == 1:
        _, eps_max = median_epsilon_bound([1.0])
        return MedianReport(median, values[0], (values[0],), 0.0, eta, eps, eps_max, 0.0)

    scenario = build_median_scenario(values, graph, eps, eta, funnel, **scenario_kwargs)
    _, eps_max = median_epsilon_bound(problem.weights)
    h_star = median_emergent_fixed_point(values, scenario.couplings)
    record = integrate(scenario)
    final = tuple(float(x) for x in record.x[-1])
    report = MedianReport(
        median_set=median,
        h_star=h_star,
        final_states=final,
        max_input=record.max_input,
        bound_eta=eta,
        eps=eps,
        eps_max=eps_max,
        final_psi=float(record.psi[-1].max()),
        record=record,
    )
    logger.info(
        "[MEDIAN] median=[%s, %s] h*=%s max distance=%s within_bound=%s",
        median.lower, median.upper, h_star, max(report.state_distances), report.within_bound,
    )
    return report
