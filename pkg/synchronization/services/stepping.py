"""
synchronization/services/stepping.py

Classical RK4 step and the nominal time grid shared by the network and the
emergent integrators.
"""
from __future__ import annotations

import math
from typing import Callable

import numpy as np

Rhs = Callable[[float, np.ndarray], np.ndarray]


def nominal_grid(t0: float, t_end: float, dt: float) -> np.ndarray:
    """t0, t0 + dt, ..., t_end; the last interval absorbs the remainder."""
    if not dt > 0.0:
        raise ValueError(f"dt must be positive, got {dt!r}")
    if not t_end > t0:
        raise ValueError(f"t_end must exceed t0, got [{t0!r}, {t_end!r}]")
    steps = max(1, math.ceil((t_end - t0) / dt - 1e-9))
    grid = t0 + dt * np.arange(steps + 1, dtype=float)
    grid[-1] = t_end
    return grid


def rk4_step(rhs: Rhs, t: float, y: np.ndarray, h: float) -> np.ndarray:
    k1 = rhs(t, y)
    k2 = rhs(t + h / 2, y + h / 2 * k1)
    k3 = rhs(t + h / 2, y + h / 2 * k2)
    k4 = rhs(t + h, y + h * k3)
    return y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
