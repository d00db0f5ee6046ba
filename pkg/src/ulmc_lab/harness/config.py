"""Experiment configuration: parsing, validation and defaults.

A config is a JSON document.  Structural rules (types, ranges, unknown keys)
are expressed as a JSON Schema; cross-field rules are checked afterwards.
Every problem is reported with its field path and, where the field can be
located in the source text, a line and column.
"""

from __future__ import annotations

import copy
import json
import re
from dataclasses import dataclass, field
from typing import Any, Optional

import jsonschema

from ..targets import BUILTIN_FAMILIES

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "MODES",
    "PLANNERS",
    "CONFIG_SCHEMA",
    "validate_config",
    "load_config",
]

MODES = ("sample", "exact_oracle", "girsanov", "validators", "scaling_study")
PLANNERS = ("kl_strongly_logconcave", "tv_lsi", "renyi_poincare", "manual")
METRICS = ("KL", "TV", "Renyi")

_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}

CONFIG_SCHEMA: dict = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": 1},
        "mode": {"enum": list(MODES)},
        "preset": {"type": "string", "pattern": r"^acceptance/[0-9]+$"},
        "seed": {"type": "integer", "minimum": 0},
        "threads": {"type": "integer", "minimum": 1},
        "target": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "family": {"type": "string"},
                "dim": {"type": "integer", "minimum": 1},
                "params": {"type": "array", "items": {"type": "number"}},
            },
        },
        "planner": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "name": {"enum": list(PLANNERS)},
                "eps": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "xi": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "s": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "R": _NONNEG,
                "beta": _NONNEG,
                "enforce_guards": {"type": "boolean"},
                "constants": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "c_h": _POS,
                        "c_T": _POS,
                        "c_gamma": _POS,
                        "C0": _POS,
                        "log_factor": _POS,
                        "horizon_log": _POS,
                    },
                },
            },
        },
        "overrides": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "gamma": _POS,
                "h": _POS,
                "N": {"type": "integer", "minimum": 0},
            },
        },
        "metric": {"enum": list(METRICS)},
        "renyi_order": {"type": "number", "exclusiveMinimum": 1},
        "tolerance": _POS,
        "chains": {"type": "integer", "minimum": 1},
        "checkpoints": {
            "oneOf": [
                {"const": "geometric"},
                {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
            ]
        },
        "girsanov": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "paths": {"type": "integer", "minimum": 100},
                "substeps": {"type": "integer", "minimum": 1},
                "q": {"type": "number", "minimum": 1},
                "T": _POS,
                "bootstrap": {"type": "integer", "minimum": 0},
            },
        },
        "validators": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "trials": {"type": "integer", "minimum": 10000},
                "multiplier": _POS,
                "deltas": {
                    "type": "array",
                    "minItems": 1,
                    "items": {"type": "number", "exclusiveMinimum": 0, "maximum": 0.5},
                },
                "brownian": {"type": "boolean"},
                "iterates": {"type": "boolean"},
            },
        },
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "required": ["axis", "values"],
            "properties": {
                "axis": {"enum": ["d", "eps", "L", "h"]},
                "values": {"type": "array", "minItems": 2, "items": _POS},
                "method": {"enum": ["fixed_h", "optimal_h"]},
                "base": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "m": _POS,
                        "L": _POS,
                        "d": {"type": "integer", "minimum": 1},
                        "eps": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                    },
                },
                "expected_slope": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dir": {"type": "string", "minLength": 1},
                "trajectory": {"type": "boolean"},
                "figures": {"type": "boolean"},
            },
        },
    },
}

DEFAULTS: dict = {
    "schema_version": 1,
    "seed": 0,
    "threads": 1,
    "target": {"family": "gaussian", "dim": 1, "params": []},
    "planner": {"name": "kl_strongly_logconcave", "eps": 0.3, "enforce_guards": True, "constants": {}},
    "overrides": {},
    "renyi_order": 2.0,
    "chains": 1000,
    "checkpoints": "geometric",
    "girsanov": {"paths": 10000, "substeps": 32, "q": 1.0, "bootstrap": 1000},
    "validators": {"trials": 10000, "multiplier": 10.0, "deltas": [0.1, 0.01], "brownian": True, "iterates": True},
    "output": {"dir": "ulmc-out", "trajectory": False, "figures": True},
}

_PLANNER_METRIC = {"kl_strongly_logconcave": "KL", "tv_lsi": "TV", "renyi_poincare": "Renyi", "manual": "KL"}


class ConfigError(ValueError):
    """Config validation failure; ``errors`` lists one message per problem."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("invalid config:\n  " + "\n  ".join(self.errors))


@dataclass
class ExperimentConfig:
    """A validated experiment description with every default filled in."""

    mode: str
    seed: int
    threads: int
    target: dict
    planner: dict
    overrides: dict
    metric: str
    renyi_order: float
    chains: int
    checkpoints: Any
    girsanov: dict
    validators: dict
    output: dict
    preset: Optional[str] = None
    sweep: Optional[dict] = None
    tolerance: Optional[float] = None
    warnings: list = field(default_factory=list)

    def to_dict(self) -> dict:
        out = {
            "schema_version": 1,
            "mode": self.mode,
            "preset": self.preset,
            "seed": self.seed,
            "threads": self.threads,
            "target": self.target,
            "planner": self.planner,
            "overrides": self.overrides,
            "metric": self.metric,
            "renyi_order": self.renyi_order,
            "tolerance": self.tolerance,
            "chains": self.chains,
            "checkpoints": self.checkpoints,
            "girsanov": self.girsanov,
            "validators": self.validators,
            "sweep": self.sweep,
            "output": self.output,
        }
        return copy.deepcopy(out)

    def metric_tolerance(self) -> float:
        """Pass threshold for the final divergence: ``eps^2`` for KL and Rényi, ``eps`` for TV."""
        if self.tolerance is not None:
            return float(self.tolerance)
        eps = float(self.planner["eps"])
        return eps if self.metric == "TV" else eps * eps


def _locate(text: str, path) -> str:
    """Best-effort ``line L, column C`` of the last key in ``path``."""
    pos = 0
    found = None
    for part in path:
        if isinstance(part, int):
            continue
        m = re.compile(r'"' + re.escape(str(part)) + r'"\s*:').search(text, pos)
        if m is None:
            break
        found = m.start()
        pos = m.end()
    if found is None:
        return ""
    line = text.count("\n", 0, found) + 1
    col = found - (text.rfind("\n", 0, found) + 1) + 1
    return f" (line {line}, column {col})"


def _path_str(path) -> str:
    out = ""
    for part in path:
        out += f"[{part}]" if isinstance(part, int) else (("." if out else "") + str(part))
    return out or "<root>"


def _merge(defaults: dict, given: dict) -> dict:
    out = copy.deepcopy(defaults)
    for k, v in given.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def validate_config(text: str) -> ExperimentConfig:
    """Parse and validate a JSON config, filling defaults.

    Raises
    ------
    ConfigError
        With one entry per problem, each naming the offending field.
    """
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}"]) from None
    if not isinstance(raw, dict):
        raise ConfigError(["<root>: config must be a JSON object"])
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = []
    for err in sorted(validator.iter_errors(raw), key=lambda e: list(map(str, e.absolute_path))):
        path = list(err.absolute_path)
        if err.validator == "additionalProperties":
            known = set(err.schema.get("properties", {}))
            for key in sorted(set(err.instance) - known):
                full = path + [key]
                errors.append(f"{_path_str(full)}: unknown key{_locate(text, full)}")
            continue
        errors.append(f"{_path_str(path)}: {err.message}{_locate(text, path)}")
    if errors:
        raise ConfigError(errors)

    preset = raw.get("preset")
    mode = raw.get("mode")
    if preset is None and mode is None:
        errors.append("mode: exactly one of 'mode' or 'preset' is required")
    if preset is not None and mode is not None:
        errors.append(f"preset: cannot be combined with mode{_locate(text, ['preset'])}")
    cfg = _merge(DEFAULTS, raw)
    fam = cfg["target"]["family"]
    if fam not in BUILTIN_FAMILIES:
        errors.append(
            f"target.family: unknown family {fam!r}; expected one of {', '.join(BUILTIN_FAMILIES)}"
            f"{_locate(text, ['target', 'family'])}"
        )
    if fam == "gaussian" and not cfg["target"]["params"]:
        cfg["target"]["params"] = [1.0]
    planner = cfg["planner"]
    ov = cfg["overrides"]
    notes = []
    if planner["name"] == "manual":
        missing = [k for k in ("gamma", "h", "N") if k not in ov]
        if missing:
            errors.append("overrides: the manual planner needs explicit " + ", ".join(missing))
    elif "h" in ov:
        notes.append(f"explicit h={ov['h']} overrides the {planner['name']} planner's step size")
    if planner["name"] == "renyi_poincare":
        planner.setdefault("xi", 0.5)
        planner.setdefault("R", 0.0)
    if mode == "scaling_study" and "sweep" not in raw:
        errors.append("sweep: scaling_study mode requires a sweep section")
    if "sweep" in cfg:
        sw = cfg["sweep"]
        sw.setdefault("method", "fixed_h")
        sw["base"] = _merge({"m": 1.0, "L": 1.0, "d": 1, "eps": 0.3}, sw.get("base", {}))
        if sw["axis"] == "d" and any(float(v) != int(v) for v in sw["values"]):
            errors.append("sweep.values: dimension sweeps need integer values")
    if errors:
        raise ConfigError(errors)
    metric = raw.get("metric", _PLANNER_METRIC[planner["name"]])
    return ExperimentConfig(
        mode="acceptance" if preset is not None else mode,
        seed=int(cfg["seed"]),
        threads=int(cfg["threads"]),
        target=cfg["target"],
        planner=planner,
        overrides=ov,
        metric=metric,
        renyi_order=float(cfg["renyi_order"]),
        chains=int(cfg["chains"]),
        checkpoints=cfg["checkpoints"],
        girsanov=cfg["girsanov"],
        validators=cfg["validators"],
        output=cfg["output"],
        preset=preset,
        sweep=cfg.get("sweep"),
        tolerance=cfg.get("tolerance"),
        warnings=notes,
    )


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return validate_config(fh.read())
