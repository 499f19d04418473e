"""
synchronization/services/artifacts.py

Output artifacts and run audit.

Responsibilities:
- CSV writers (17 significant digits, so every float parses back exactly).
- JSON writers (sorted keys, non-finite floats written as null).
- Fail-soft SimulationRun persistence.

Artifacts depend only on inputs; timestamps and log lines never enter them.
"""
from __future__ import annotations

import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Optional, Union

import numpy as np
import pandas as pd

from synchronization.services import conf

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"

PathLike = Union[str, Path]


def ensure_dir(out: PathLike) -> Path:
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def jsonable(value: Any) -> Any:
    """numpy scalars/arrays to Python types; NaN and infinities to None."""
    if isinstance(value, Mapping):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, np.ndarray)):
        return [jsonable(v) for v in value]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


def write_json(path: PathLike, data: Any) -> Path:
    path = Path(path)
    text = json.dumps(jsonable(data), sort_keys=True, indent=2, allow_nan=False)
    path.write_text(text + "\n", encoding="utf-8")
    logger.debug("[ARTIFACTS] wrote %s", path)
    return path


def write_csv(path: PathLike, data: Union[Mapping[str, Any], Iterable[Mapping[str, Any]]]) -> Path:
    """Columns dict (name -> series) or a list of row dicts; column order is kept."""
    path = Path(path)
    frame = pd.DataFrame(dict(data)) if isinstance(data, Mapping) else pd.DataFrame(list(data))
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    logger.debug("[ARTIFACTS] wrote %s (%s rows)", path, len(frame))
    return path


def read_csv(path: PathLike) -> pd.DataFrame:
    return pd.read_csv(path, float_precision="round_trip")


def record_run(
    command: str,
    status: str,
    summary: Optional[Dict[str, Any]] = None,
    *,
    scenario_name: str = "",
    scenario_digest: str = "",
    output_dir: str = "",
    message: str = "",
    persist: bool = True,
):
    """Store a SimulationRun row. Returns None when disabled or when the database is unavailable."""
    if not persist or not conf.setting("persist_runs"):
        logger.debug("[ARTIFACTS] persistence disabled -> skipping SimulationRun for %s", command)
        return None
    try:
        from synchronization.models import SimulationRun

        return SimulationRun.objects.create(
            command=command,
            status=status,
            summary=jsonable(summary or {}),
            scenario_name=scenario_name[:128],
            scenario_digest=scenario_digest,
            output_dir=str(output_dir),
            message=message,
        )
    except Exception as exc:
        logger.warning("[ARTIFACTS] SimulationRun not saved (non-fatal): %s", exc)
        return None
