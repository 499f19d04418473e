"""
synchronization/services/errors.py

Exception hierarchy shared by every service module.

Commands translate these into exit codes: FunnelBreach is a numerical breach,
every other FunnelSyncError is an input or validation failure.
"""
from __future__ import annotations

from typing import Any, Optional


class FunnelSyncError(Exception):
    """Base class of all domain errors."""


# ---------------------------------------------------------------------------
# graph
# ---------------------------------------------------------------------------
class GraphError(FunnelSyncError):
    pass


class DuplicateEdge(GraphError):
    def __init__(self, i: int, j: int):
        self.i, self.j = i, j
        super().__init__(f"edge ({i}, {j}) given more than once")


class SelfLoop(GraphError):
    def __init__(self, i: int):
        self.i = i
        super().__init__(f"self-loop on node {i}")


class NonPositiveWeight(GraphError):
    def __init__(self, i: int, j: int, weight: float):
        self.i, self.j, self.weight = i, j, weight
        super().__init__(f"edge ({i}, {j}) has non-positive weight {weight!r}")


class NodeOutOfRange(GraphError):
    def __init__(self, node: int, n: int):
        self.node, self.n = node, n
        super().__init__(f"node {node} outside 0..{n - 1}")


class NotConnected(GraphError):
    def __init__(self, message: str = "graph is not connected"):
        super().__init__(message)


class DimensionMismatch(FunnelSyncError):
    def __init__(self, expected: int, got: int, what: str = "state"):
        self.expected, self.got = expected, got
        super().__init__(f"{what} has length {got}, expected {expected}")


# ---------------------------------------------------------------------------
# shape
# ---------------------------------------------------------------------------
class ShapeError(FunnelSyncError):
    pass


class InvalidParameter(ShapeError):
    pass


class TimeBeforeStart(ShapeError):
    def __init__(self, t: float, t0: float):
        self.t, self.t0 = t, t0
        super().__init__(f"funnel evaluated at t={t!r} before its start t0={t0!r}")


class DomainBreach(ShapeError):
    def __init__(self, v: Any):
        self.v = v
        super().__init__(f"coupling argument outside (-1, 1): {v!r}")


# ---------------------------------------------------------------------------
# vfield
# ---------------------------------------------------------------------------
class ExpressionError(FunnelSyncError):
    pass


class ParseError(ExpressionError):
    def __init__(self, offset: int, message: str):
        self.offset, self.message = offset, message
        super().__init__(f"parse error at byte {offset}: {message}")


class UnknownIdentifier(ExpressionError):
    def __init__(self, name: str, offset: int = 0):
        self.name, self.offset = name, offset
        super().__init__(f"unknown identifier {name!r} at byte {offset}")


class NonFinite(ExpressionError):
    def __init__(self, node: str, t: float, x: float):
        self.node, self.t, self.x = node, t, x
        super().__init__(f"non-finite value in {node} at t={t!r}, x={x!r}")


# ---------------------------------------------------------------------------
# netsim
# ---------------------------------------------------------------------------
class SimulationError(FunnelSyncError):
    pass


class InvalidScenario(SimulationError):
    pass


class FunnelDomainBreach(SimulationError):
    def __init__(self, agent: int, t: float, ratio: float):
        self.agent, self.t, self.ratio = agent, t, ratio
        super().__init__(f"agent {agent} outside its funnel at t={t!r} (|nu/psi|={abs(ratio)!r})")


class FunnelBreach(SimulationError):
    """Guarded stepping reached dt_min without restoring the funnel guard."""

    def __init__(self, t: float, agent: int, record: Optional[Any] = None):
        self.t, self.agent, self.record = t, agent, record
        super().__init__(
            f"funnel guard failed for agent {agent} near t={t!r} at minimum step; "
            "either an assumption is violated or the step is too coarse for the coupling gain"
        )


class InitialOutsideFunnel(SimulationError):
    def __init__(self, agent: int, nu: float, psi: float):
        self.agent, self.nu, self.psi = agent, nu, psi
        super().__init__(f"agent {agent}: |nu(t0)|={abs(nu)!r} is not below psi(t0)={psi!r}")


class GridMismatch(SimulationError):
    pass


# ---------------------------------------------------------------------------
# emergent
# ---------------------------------------------------------------------------
class SolverError(FunnelSyncError):
    pass


class BracketFailure(SolverError):
    pass


class NotClassical(SolverError):
    pass


class NotLog(SolverError):
    pass


class StaleSolution(SolverError):
    def __init__(self, h: float, residual: float):
        self.h, self.residual = h, residual
        super().__init__(f"h={h!r} does not solve the problem (residual {residual!r})")


# ---------------------------------------------------------------------------
# median
# ---------------------------------------------------------------------------
class MedianError(FunnelSyncError):
    pass


class TooManySubsets(MedianError):
    pass


class EpsilonTooLarge(MedianError):
    def __init__(self, eps: float, eps_max: float):
        self.eps, self.eps_max = eps, eps_max
        super().__init__(f"eps={eps!r} is not below the admissible bound {eps_max!r}")


class FunnelNotVanishing(MedianError):
    pass


# ---------------------------------------------------------------------------
# scenario files
# ---------------------------------------------------------------------------
class ScenarioFileError(FunnelSyncError):
    pass
