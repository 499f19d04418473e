"""
synchronization/services/shape.py

Performance functions psi_i (funnels) and coupling functions mu_i.

Responsibilities:
- FunnelSpec families: ExpToEta, Constant, Scaled; exact value and derivative.
- CouplingSpec families: Classical, Log, LocallyLinear, NearSignum; mu, mu^-1,
  their derivatives and the gain gamma(v) = mu(v)/v.
- JSON encoding/decoding of both.
- Sampled validators for funnel sets and couplings. Validators report, they
  never raise for violations.

Coupling methods accept floats or numpy arrays.
"""
from __future__ import annotations

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, ClassVar, Dict, List, Mapping, Sequence, Tuple

import numpy as np

from synchronization.services.errors import DomainBreach, InvalidParameter, TimeBeforeStart

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Funnels
# ---------------------------------------------------------------------------
class FunnelSpec(ABC):
    family: ClassVar[str] = ""

    @property
    @abstractmethod
    def start(self) -> float:
        """First time at which the funnel is defined (may be -inf)."""

    @abstractmethod
    def _value(self, t: float) -> float: ...

    @abstractmethod
    def _derivative(self, t: float) -> float: ...

    @abstractmethod
    def asymptote(self) -> Tuple[float, float]:
        """(limit value, exponential decay rate towards zero; 0 unless the limit is zero)."""

    @abstractmethod
    def to_dict(self) -> Dict[str, Any]: ...

    def _check(self, t: float) -> None:
        t0 = self.start
        if math.isfinite(t0) and t < t0 - 1e-12 * max(1.0, abs(t0)):
            raise TimeBeforeStart(t, t0)

    def value(self, t: float) -> float:
        self._check(t)
        return self._value(t)

    def derivative(self, t: float) -> float:
        self._check(t)
        return self._derivative(t)

    def evaluate(self, t: float) -> Tuple[float, float]:
        self._check(t)
        return self._value(t), self._derivative(t)


@dataclass(frozen=True)
class ExpToEta(FunnelSpec):
    """psi(t) = (psi0 - eta) * exp(-lambda (t - t0)) + eta."""

    family: ClassVar[str] = "exp_to_eta"

    psi0: float
    eta: float
    lam: float
    t0: float = 0.0

    def __post_init__(self):
        if not self.eta >= 0.0:
            raise InvalidParameter(f"exp_to_eta: eta must be >= 0, got {self.eta!r}")
        if not self.psi0 > self.eta:
            raise InvalidParameter(f"exp_to_eta: psi0 must exceed eta, got psi0={self.psi0!r}, eta={self.eta!r}")
        if not self.lam > 0.0:
            raise InvalidParameter(f"exp_to_eta: lambda must be > 0, got {self.lam!r}")

    @property
    def start(self) -> float:
        return self.t0

    def _value(self, t: float) -> float:
        return (self.psi0 - self.eta) * math.exp(-self.lam * (t - self.t0)) + self.eta

    def _derivative(self, t: float) -> float:
        return -self.lam * (self.psi0 - self.eta) * math.exp(-self.lam * (t - self.t0))

    def asymptote(self) -> Tuple[float, float]:
        if self.eta > 0.0:
            return self.eta, 0.0
        return 0.0, self.lam

    def to_dict(self) -> Dict[str, Any]:
        return {"family": self.family, "psi0": self.psi0, "eta": self.eta, "lambda": self.lam, "t0": self.t0}


@dataclass(frozen=True)
class Constant(FunnelSpec):
    family: ClassVar[str] = "constant"

    psi0: float

    def __post_init__(self):
        if not self.psi0 > 0.0:
            raise InvalidParameter(f"constant: psi0 must be > 0, got {self.psi0!r}")

    @property
    def start(self) -> float:
        return -math.inf

    def _value(self, t: float) -> float:
        return self.psi0

    def _derivative(self, t: float) -> float:
        return 0.0

    def asymptote(self) -> Tuple[float, float]:
        return self.psi0, 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {"family": self.family, "psi0": self.psi0}


@dataclass(frozen=True)
class Scaled(FunnelSpec):
    family: ClassVar[str] = "scaled"

    inner: FunnelSpec
    factor: float

    def __post_init__(self):
        if not self.factor > 0.0:
            raise InvalidParameter(f"scaled: factor must be > 0, got {self.factor!r}")

    @property
    def start(self) -> float:
        return self.inner.start

    def _value(self, t: float) -> float:
        return self.factor * self.inner._value(t)

    def _derivative(self, t: float) -> float:
        return self.factor * self.inner._derivative(t)

    def asymptote(self) -> Tuple[float, float]:
        limit, rate = self.inner.asymptote()
        return self.factor * limit, rate

    def to_dict(self) -> Dict[str, Any]:
        return {"family": self.family, "inner": self.inner.to_dict(), "factor": self.factor}


def psi_eval(f: FunnelSpec, t: float) -> Tuple[float, float]:
    return f.evaluate(t)


def funnel_from_dict(data: Mapping[str, Any], default_t0: float = 0.0) -> FunnelSpec:
    family = data.get("family")
    if family == ExpToEta.family:
        return ExpToEta(
            psi0=float(data["psi0"]),
            eta=float(data.get("eta", 0.0)),
            lam=float(data["lambda"]),
            t0=float(data.get("t0", default_t0)),
        )
    if family == Constant.family:
        return Constant(psi0=float(data["psi0"]))
    if family == Scaled.family:
        return Scaled(inner=funnel_from_dict(data["inner"], default_t0), factor=float(data["factor"]))
    raise InvalidParameter(f"unknown funnel family {family!r}")


# ---------------------------------------------------------------------------
# Couplings
# ---------------------------------------------------------------------------
def _scalar(x):
    return float(x) if np.ndim(x) == 0 else x


def _check_domain(v: Any) -> None:
    if np.any(np.abs(v) >= 1.0) or np.any(np.isnan(v)):
        raise DomainBreach(v)


class CouplingSpec(ABC):
    family: ClassVar[str] = ""

    @abstractmethod
    def _mu(self, v): ...

    @abstractmethod
    def _mu_prime(self, v): ...

    @abstractmethod
    def mu_inv(self, s): ...

    @abstractmethod
    def mu_inv_prime(self, s): ...

    @property
    @abstractmethod
    def gamma_zero(self) -> float:
        """lim_{v -> 0+} mu(v) / v."""

    @property
    @abstractmethod
    def resolvable_range(self) -> float:
        """|s| up to which mu(mu^-1(s)) is reproducible in double precision."""

    @abstractmethod
    def to_dict(self) -> Dict[str, Any]: ...

    def mu(self, v):
        _check_domain(v)
        return self._mu(v)

    def mu_prime(self, v):
        _check_domain(v)
        return self._mu_prime(v)

    def gamma(self, v):
        """mu(v)/v for v in [0, 1), with the limit value at 0."""
        _check_domain(v)
        v = np.asarray(v, dtype=float)
        safe = np.where(v > 1e-8, v, 0.5)
        out = np.where(v > 1e-8, self._mu(safe) / safe, self.gamma_zero)
        return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class Classical(CouplingSpec):
    """mu(v) = kappa v / (1 - |v|)."""

    family: ClassVar[str] = "classical"

    kappa: float = 1.0

    def __post_init__(self):
        if not self.kappa > 0.0:
            raise InvalidParameter(f"classical: kappa must be > 0, got {self.kappa!r}")

    def _mu(self, v):
        return self.kappa * v / (1.0 - np.abs(v))

    def _mu_prime(self, v):
        return self.kappa / (1.0 - np.abs(v)) ** 2

    def mu_inv(self, s):
        return s / (self.kappa + np.abs(s))

    def mu_inv_prime(self, s):
        return self.kappa / (self.kappa + np.abs(s)) ** 2

    @property
    def gamma_zero(self) -> float:
        return self.kappa

    @property
    def resolvable_range(self) -> float:
        return 1e4 * self.kappa

    def to_dict(self) -> Dict[str, Any]:
        return {"family": self.family, "kappa": self.kappa}


@dataclass(frozen=True)
class Log(CouplingSpec):
    """mu(v) = -sign(v) ln(1 - |v|)."""

    family: ClassVar[str] = "log"

    def _mu(self, v):
        return -np.sign(v) * np.log1p(-np.abs(v))

    def _mu_prime(self, v):
        return 1.0 / (1.0 - np.abs(v))

    def mu_inv(self, s):
        return -np.sign(s) * np.expm1(-np.abs(s))

    def mu_inv_prime(self, s):
        return np.exp(-np.abs(s))

    @property
    def gamma_zero(self) -> float:
        return 1.0

    @property
    def resolvable_range(self) -> float:
        return 15.0

    def to_dict(self) -> Dict[str, Any]:
        return {"family": self.family}


@dataclass(frozen=True)
class LocallyLinear(CouplingSpec):
    """Linear gain 4 m inside |v| < 1/2, classical-type blow-up m / (1 - |v|) outside."""

    family: ClassVar[str] = "locally_linear"

    mf_bar: float

    def __post_init__(self):
        if not self.mf_bar > 0.0:
            raise InvalidParameter(f"locally_linear: mf_bar must be > 0, got {self.mf_bar!r}")

    def _mu(self, v):
        m = self.mf_bar
        a = np.abs(v)
        with np.errstate(divide="ignore"):
            return _scalar(np.where(a < 0.5, 4.0 * m * v, np.sign(v) * m / (1.0 - a)))

    def _mu_prime(self, v):
        m = self.mf_bar
        a = np.abs(v)
        with np.errstate(divide="ignore"):
            return _scalar(np.where(a < 0.5, 4.0 * m, m / (1.0 - a) ** 2))

    def mu_inv(self, s):
        m = self.mf_bar
        a = np.abs(s)
        with np.errstate(divide="ignore", invalid="ignore"):
            return _scalar(np.where(a < 2.0 * m, s / (4.0 * m), np.sign(s) * (1.0 - m / a)))

    def mu_inv_prime(self, s):
        m = self.mf_bar
        a = np.abs(s)
        with np.errstate(divide="ignore"):
            return _scalar(np.where(a < 2.0 * m, 1.0 / (4.0 * m), m / (a * a)))

    @property
    def gamma_zero(self) -> float:
        return 4.0 * self.mf_bar

    @property
    def resolvable_range(self) -> float:
        return 1e4 * self.mf_bar

    def to_dict(self) -> Dict[str, Any]:
        return {"family": self.family, "mf_bar": self.mf_bar}


@dataclass(frozen=True)
class NearSignum(CouplingSpec):
    """mu(v) = sigma artanh(v), sigma chosen so that mu^-1(eta) = 1 - eps."""

    family: ClassVar[str] = "near_signum"

    eps: float
    eta: float

    def __post_init__(self):
        if not 0.0 < self.eps < 1.0:
            raise InvalidParameter(f"near_signum: eps must lie in (0, 1), got {self.eps!r}")
        if not self.eta > 0.0:
            raise InvalidParameter(f"near_signum: eta must be > 0, got {self.eta!r}")

    @property
    def sigma(self) -> float:
        return self.eta / math.atanh(1.0 - self.eps)

    def _mu(self, v):
        return self.sigma * np.arctanh(v)

    def _mu_prime(self, v):
        return self.sigma / (1.0 - np.square(v))

    def mu_inv(self, s):
        return np.tanh(s / self.sigma)

    def mu_inv_prime(self, s):
        sigma = self.sigma
        with np.errstate(over="ignore"):
            return 1.0 / (sigma * np.square(np.cosh(s / sigma)))

    @property
    def gamma_zero(self) -> float:
        return self.sigma

    @property
    def resolvable_range(self) -> float:
        return 8.0 * self.sigma

    def to_dict(self) -> Dict[str, Any]:
        return {"family": self.family, "eps": self.eps, "eta": self.eta}


def mu_eval(c: CouplingSpec, v):
    return c.mu(v)


def mu_inv(c: CouplingSpec, s):
    return c.mu_inv(s)


def mu_inv_prime(c: CouplingSpec, s):
    return c.mu_inv_prime(s)


def mu_prime(c: CouplingSpec, v):
    return c.mu_prime(v)


def coupling_from_dict(data: Mapping[str, Any]) -> CouplingSpec:
    family = data.get("family")
    if family == Classical.family:
        return Classical(kappa=float(data.get("kappa", 1.0)))
    if family == Log.family:
        return Log()
    if family == LocallyLinear.family:
        return LocallyLinear(mf_bar=float(data["mf_bar"]))
    if family == NearSignum.family:
        return NearSignum(eps=float(data["eps"]), eta=float(data["eta"]))
    raise InvalidParameter(f"unknown coupling family {family!r}")


# ---------------------------------------------------------------------------
# Validators
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class FunnelReport:
    psi_bar: float
    theta_psi: float
    r_psi: float
    lambda_psi: float
    r_psi_unbounded: bool
    clauses: Dict[str, bool]
    warnings: Tuple[str, ...] = ()

    @property
    def passed(self) -> bool:
        return all(self.clauses.values())

    def to_dict(self) -> Dict[str, Any]:
        return {
            "psi_bar": self.psi_bar,
            "theta_psi": self.theta_psi,
            "r_psi": self.r_psi,
            "lambda_psi": self.lambda_psi,
            "r_psi_unbounded": self.r_psi_unbounded,
            "clauses": dict(self.clauses),
            "warnings": list(self.warnings),
        }


def validate_funnel_set(
    specs: Sequence[FunnelSpec],
    horizon: Tuple[float, float],
    samples: int,
) -> FunnelReport:
    if samples < 2:
        raise ValueError("samples must be >= 2")

    warnings: List[str] = []
    t_start, t_end = float(horizon[0]), float(horizon[1])
    latest = max((s.start for s in specs), default=-math.inf)
    defined = not (math.isfinite(latest) and latest > t_start)
    if not defined:
        warnings.append(f"some funnels start at t={latest!r}, after the horizon start {t_start!r}")
        t_start = latest

    times = np.linspace(t_start, t_end, samples)
    values = np.array([[s._value(t) for s in specs] for t in times])
    derivs = np.array([[s._derivative(t) for s in specs] for t in times])

    positive = bool(np.all(values > 0.0))
    psi_bar = float(values.max())
    theta_psi = float(np.abs(derivs).max())
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = values.max(axis=1) / values.min(axis=1)
        log_rates = np.abs(derivs) / values
    r_psi = float(ratios.max()) if positive else math.inf
    lambda_psi = float(log_rates.max()) if positive else math.inf

    # ratios stay bounded iff every funnel approaches its limit at the same exponential order
    rates = {s.asymptote()[1] for s in specs}
    r_unbounded = len(rates) > 1
    if r_unbounded:
        warnings.append("max/min funnel ratio grows without bound (funnels vanish at different rates)")
    if not positive:
        warnings.append("a funnel is not positive on the horizon")

    clauses = {
        "defined_on_horizon": defined,
        "psi_positive": positive,
        "psi_bounded": math.isfinite(psi_bar),
        "psi_derivative_bounded": math.isfinite(theta_psi),
        "psi_ratio_bounded": not r_unbounded and math.isfinite(r_psi),
        "log_derivative_bounded": math.isfinite(lambda_psi),
    }
    for w in warnings:
        logger.warning("[VALIDATE] %s", w)
    return FunnelReport(
        psi_bar=psi_bar,
        theta_psi=theta_psi,
        r_psi=r_psi,
        lambda_psi=lambda_psi,
        r_psi_unbounded=r_unbounded,
        clauses=clauses,
        warnings=tuple(warnings),
    )


@dataclass(frozen=True)
class CouplingReport:
    family: str
    gamma_zero: float
    odd: bool
    increasing: bool
    gamma_nondecreasing: bool
    blows_up: bool
    round_trip_error: float
    clauses: Dict[str, bool] = field(default_factory=dict)
    warnings: Tuple[str, ...] = ()

    @property
    def passed(self) -> bool:
        return all(self.clauses.values())

    def to_dict(self) -> Dict[str, Any]:
        return {
            "family": self.family,
            "gamma_zero": self.gamma_zero,
            "odd": self.odd,
            "increasing": self.increasing,
            "gamma_nondecreasing": self.gamma_nondecreasing,
            "blows_up": self.blows_up,
            "round_trip_error": self.round_trip_error,
            "clauses": dict(self.clauses),
            "warnings": list(self.warnings),
        }


def validate_coupling(c: CouplingSpec, samples: int = 1001) -> CouplingReport:
    v = np.linspace(-1.0 + 1e-6, 1.0 - 1e-6, samples)
    mu = c.mu(v)
    odd = bool(np.all(np.abs(c.mu(-v) + mu) <= 1e-12 * (1.0 + np.abs(mu))))
    increasing = bool(np.all(np.diff(mu) > 0.0))

    vp = v[v > 0.0]
    gam = c.gamma(vp)
    gamma_nondecreasing = bool(np.all(np.diff(gam) >= -1e-12 * np.abs(gam[1:])))

    # increments towards the boundary must not die out
    edge = c.mu(1.0 - 10.0 ** -np.arange(1, 13, dtype=float))
    steps = np.diff(edge)
    blows_up = bool(np.all(steps > 0.0) and steps[-1] >= 0.5 * steps.min())

    s = np.linspace(-c.resolvable_range, c.resolvable_range, samples)
    round_trip = float(np.max(np.abs(c.mu(c.mu_inv(s)) - s) / (1.0 + np.abs(s))))

    warnings: List[str] = []
    if c.gamma_zero <= 0.0:
        warnings.append("gamma(0+) is not positive")
    clauses = {
        "odd": odd,
        "strictly_increasing": increasing,
        "gamma_nondecreasing": gamma_nondecreasing,
        "gamma_unbounded": blows_up,
        "gamma_zero_positive": c.gamma_zero > 0.0,
    }
    for name, ok in clauses.items():
        if not ok:
            warnings.append(f"{c.family}: {name} fails on samples")
    for w in warnings:
        logger.warning("[VALIDATE] %s", w)
    return CouplingReport(
        family=c.family,
        gamma_zero=float(c.gamma_zero),
        odd=odd,
        increasing=increasing,
        gamma_nondecreasing=gamma_nondecreasing,
        blows_up=blows_up,
        round_trip_error=round_trip,
        clauses=clauses,
        warnings=tuple(dict.fromkeys(warnings)),
    )
