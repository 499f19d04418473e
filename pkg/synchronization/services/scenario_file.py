"""
synchronization/services/scenario_file.py

Scenario files: JSON documents with "schema": 1, validated against SCENARIO_SCHEMA
(unknown keys rejected at every level) before anything is built.

Responsibilities:
- Read and schema-check a scenario document.
- Build the Scenario (graph, agents, grid) from it.
- Canonical SHA-256 digest used to tag persisted runs.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

from jsonschema import Draft202012Validator
from jsonschema.exceptions import best_match

from synchronization.services.errors import ScenarioFileError
from synchronization.services.graph import NAMED_FAMILIES, Graph, build_graph, named_graph
from synchronization.services.netsim import Agent, Scenario, build_scenario
from synchronization.services.shape import coupling_from_dict, funnel_from_dict
from synchronization.services.vfield import parse

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

_positive = {"type": "number", "exclusiveMinimum": 0}

SCENARIO_SCHEMA: Dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["schema", "t0", "t_end", "dt", "graph", "agents"],
    "properties": {
        "schema": {"const": SCHEMA_VERSION},
        "name": {"type": "string"},
        "t0": {"type": "number"},
        "t_end": {"type": "number"},
        "dt": _positive,
        "dt_min": _positive,
        "guard_margin": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "stability_factor": {"type": "number", "minimum": 0},
        "seed": {"type": "integer"},
        "box": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
        "samples": {"type": "integer", "minimum": 2},
        "graph": {"oneOf": [{"$ref": "#/$defs/explicit_graph"}, {"$ref": "#/$defs/named_graph"}]},
        "agents": {"type": "array", "minItems": 2, "items": {"$ref": "#/$defs/agent"}},
    },
    "$defs": {
        "explicit_graph": {
            "type": "object",
            "additionalProperties": False,
            "required": ["n", "edges"],
            "properties": {
                "n": {"type": "integer", "minimum": 2},
                "edges": {
                    "type": "array",
                    "items": {
                        "type": "array",
                        "prefixItems": [{"type": "integer"}, {"type": "integer"}, {"type": "number"}],
                        "minItems": 3,
                        "maxItems": 3,
                    },
                },
            },
        },
        "named_graph": {
            "type": "object",
            "additionalProperties": False,
            "required": ["family", "n"],
            "properties": {
                "family": {"enum": list(NAMED_FAMILIES)},
                "n": {"type": "integer", "minimum": 2},
                "weight": _positive,
                "p": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
            },
        },
        "agent": {
            "type": "object",
            "additionalProperties": False,
            "required": ["f", "funnel", "coupling", "x0"],
            "properties": {
                "f": {"type": "string"},
                "funnel": {"$ref": "#/$defs/funnel"},
                "coupling": {"$ref": "#/$defs/coupling"},
                "x0": {"type": "number"},
            },
        },
        "funnel": {
            "oneOf": [
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["family", "psi0", "lambda"],
                    "properties": {
                        "family": {"const": "exp_to_eta"},
                        "psi0": _positive,
                        "eta": {"type": "number", "minimum": 0},
                        "lambda": _positive,
                        "t0": {"type": "number"},
                    },
                },
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["family", "psi0"],
                    "properties": {"family": {"const": "constant"}, "psi0": _positive},
                },
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["family", "inner", "factor"],
                    "properties": {
                        "family": {"const": "scaled"},
                        "inner": {"$ref": "#/$defs/funnel"},
                        "factor": _positive,
                    },
                },
            ]
        },
        "coupling": {
            "oneOf": [
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["family"],
                    "properties": {"family": {"const": "classical"}, "kappa": _positive},
                },
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["family"],
                    "properties": {"family": {"const": "log"}},
                },
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["family", "mf_bar"],
                    "properties": {"family": {"const": "locally_linear"}, "mf_bar": _positive},
                },
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["family", "eps", "eta"],
                    "properties": {
                        "family": {"const": "near_signum"},
                        "eps": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                        "eta": _positive,
                    },
                },
            ]
        },
    },
}

_VALIDATOR = Draft202012Validator(SCENARIO_SCHEMA)


@dataclass(frozen=True, eq=False)
class ScenarioFile:
    path: str
    document: Dict[str, Any]
    digest: str
    scenario: Scenario

    @property
    def name(self) -> str:
        return self.scenario.name

    @property
    def box(self) -> Optional[Tuple[float, float]]:
        box = self.document.get("box")
        return (float(box[0]), float(box[1])) if box else None

    @property
    def samples(self) -> Optional[int]:
        return self.document.get("samples")


def canonical_digest(document: Dict[str, Any]) -> str:
    canonical = json.dumps(document, sort_keys=True, separators=(",", ":"), ensure_ascii=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def validate_document(document: Any) -> None:
    first = best_match(_VALIDATOR.iter_errors(document))
    if first is not None:
        where = "/".join(str(p) for p in first.absolute_path) or "<root>"
        raise ScenarioFileError(f"scenario schema violation at {where}: {first.message}")


def read_document(path: Union[str, Path]) -> Dict[str, Any]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            document = json.load(fh)
    except OSError as exc:
        raise ScenarioFileError(f"cannot read scenario {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ScenarioFileError(f"scenario {path} is not valid JSON: {exc}") from exc
    validate_document(document)
    return document


def _graph(document: Dict[str, Any]) -> Graph:
    spec = document["graph"]
    if "family" in spec:
        return named_graph(
            spec["family"],
            int(spec["n"]),
            weight=spec.get("weight", 1.0),
            seed=document.get("seed"),
            p=spec.get("p", 0.5),
        )
    return build_graph(spec["n"], spec["edges"])


def scenario_from_document(document: Dict[str, Any], name: str = "") -> Scenario:
    t0 = float(document["t0"])
    agents = [
        Agent(
            field=parse(a["f"]),
            funnel=funnel_from_dict(a["funnel"], default_t0=t0),
            coupling=coupling_from_dict(a["coupling"]),
        )
        for a in document["agents"]
    ]
    return build_scenario(
        _graph(document),
        agents,
        [a["x0"] for a in document["agents"]],
        t0,
        float(document["t_end"]),
        float(document["dt"]),
        dt_min=document.get("dt_min"),
        guard_margin=document.get("guard_margin"),
        stability_factor=document.get("stability_factor"),
        name=document.get("name", name),
    )


def load_scenario(path: Union[str, Path]) -> ScenarioFile:
    document = read_document(path)
    scenario = scenario_from_document(document, name=Path(path).stem)
    digest = canonical_digest(document)
    logger.info("[SCENARIO] loaded %s (N=%s, digest %s)", path, scenario.n, digest[:12])
    return ScenarioFile(path=str(path), document=document, digest=digest, scenario=scenario)
