"""
synchronization/services/conf.py

Access to the FUNNEL_SYNC settings dict with built-in defaults.
Never raises: outside a configured Django process the defaults apply.
"""
from __future__ import annotations

from typing import Any, Dict

from django.conf import settings
from django.core.exceptions import ImproperlyConfigured

DEFAULTS: Dict[str, Any] = {
    "guard_margin": 1e-9,
    "dt_min": 1e-9,
    "stability_factor": 2.0,
    "bisection_tol": 1e-12,
    "newton_polish_steps": 2,
    "drift_check_every": 100,
    "drift_tolerance": 1e-6,
    "validation_samples": 41,
    "validation_box": 10.0,
    "escape_threshold": 1e12,
    "persist_runs": True,
}


def _get_config() -> Dict[str, Any]:
    try:
        cfg = getattr(settings, "FUNNEL_SYNC", None)
    except ImproperlyConfigured:
        cfg = None
    if isinstance(cfg, dict):
        return cfg
    return {}


def setting(name: str) -> Any:
    cfg = _get_config()
    if name in cfg and cfg[name] is not None:
        return cfg[name]
    return DEFAULTS[name]
