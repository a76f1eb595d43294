"""Experiment configuration: YAML documents checked against the bundled JSON schema."""
from __future__ import annotations

import copy
import hashlib
import json
import os
import platform
import sys
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

import yaml
from jsonschema import Draft202012Validator

from . import __version__
from .errors import ConfigError
from .model import HurstSpec, Regime, require_admissible
from .special_d1 import check_ladder

ARTIFACT_VERSION = __version__


def _resources_dir() -> Path:
    """
    Return the directory containing packaged resources.

    - Dev: <repo>/src/fkheat/resources
    - PyInstaller: <_MEIPASS>/resources
    """
    meipass = getattr(sys, "_MEIPASS", None)
    if meipass:
        return Path(meipass) / "resources"
    return Path(__file__).resolve().parent / "resources"


def resource_path(*relative_parts: str) -> str:
    """Build an absolute path to a resource file."""
    return str(_resources_dir().joinpath(*relative_parts))


def data_dir() -> Path:
    """기본 결과 저장 디렉토리 반환 (FKHEAT_DATA_DIR 우선)"""
    override = os.getenv("FKHEAT_DATA_DIR")
    if override:
        base = Path(override).expanduser()
    else:
        system = platform.system()
        if system == "Windows":
            root = Path(os.getenv("APPDATA", str(Path.home() / "AppData" / "Roaming")))
            base = root / "Fkheat" / "data"
        elif system == "Darwin":
            base = Path.home() / "Library" / "Application Support" / "Fkheat" / "data"
        else:
            root = Path(os.getenv("XDG_DATA_HOME", str(Path.home() / ".local" / "share")))
            base = root / "fkheat" / "data"
    base.mkdir(parents=True, exist_ok=True)
    return base


class ExperimentKind(str, Enum):
    SIMULATE_REGULARIZED = "simulate-regularized"
    MOMENTS = "moments"
    CHAOS = "chaos"
    EXPONENTS = "exponents"
    EXP_MOMENT = "exp-moment"
    SPECIAL_D1 = "special-d1"
    LEMMA_SUITE = "lemma-suite"
    ACCEPTANCE = "acceptance"


# 실험별 기본 파라미터 (x 는 d 차원 원점으로 채워짐)
_CONSTANT_ONE = {"kind": "constant", "c": 1.0}
_SPACE_LAGS = [0.125, 0.0625, 0.03125, 0.015625, 0.0078125]
_TIME_LAGS = [0.25, 0.125, 0.0625, 0.03125, 0.015625]

PARAM_DEFAULTS: Dict[ExperimentKind, Dict[str, Any]] = {
    ExperimentKind.SIMULATE_REGULARIZED: {
        "t": 0.25,
        "x": None,
        "f": _CONSTANT_ONE,
        "deltas": [0.2, 0.1, 0.05],
        "n_sheets": 16,
        "mc": 128,
        "oracle_mc": 4000,
        "n_steps": 64,
        "weak_form": {"enabled": False, "radius": 0.3, "shape": "bump", "mc": 16, "n_space": 32, "n_time": 64},
    },
    ExperimentKind.MOMENTS: {
        "t": 0.25,
        "points": None,
        "f": _CONSTANT_ONE,
        "orders": [1, 2],
        "kinds": ["stratonovich", "skorokhod"],
        "mc": 4000,
        "grid_n": 64,
        "exp_cap": 700.0,
    },
    ExperimentKind.CHAOS: {
        "t_values": [0.1, 0.2],
        "x": None,
        "f": _CONSTANT_ONE,
        "order_max": 3,
        "mc": 4000,
        "grid_n": 32,
        "method": "backbone",
        "skorokhod_mc": 4000,
    },
    ExperimentKind.EXPONENTS: {
        "t": 1.0,
        "x": None,
        "component": 0,
        "space_lags": _SPACE_LAGS,
        "time_lags": _TIME_LAGS,
        "mc": 1000,
        "grid_n": 64,
        "method": "monte_carlo",
    },
    ExperimentKind.EXP_MOMENT: {
        "mu_levels": [0.05, 0.2],
        "times": [1.0, 0.25],
        "mc": 4000,
        "grid_n": 64,
        "exp_cap": 700.0,
    },
    ExperimentKind.SPECIAL_D1: {
        "t": 1.0,
        "x": 0.0,
        "eps_ladder": [0.04, 0.02, 0.01],
        "mc": 4000,
        "grid_n": 256,
        "negative_p": [0.02, 0.05],
        "space_lags": [0.125, 0.0625, 0.03125, 0.015625, 0.0078125, 0.00390625],
        "time_lags": [0.125, 0.0625, 0.03125, 0.015625, 0.0078125, 0.00390625],
        "block_levels": [1, 2, 3],
        "block_eps0": 0.05,
        "block_cells": 32,
    },
    ExperimentKind.LEMMA_SUITE: {"alpha": 0.4, "hurst_index": 0.8, "series_alpha": -0.5, "n_test": 100},
    ExperimentKind.ACCEPTANCE: {"criteria": list(range(1, 11)), "scale": 1.0},
}


@dataclass
class ExperimentConfig:
    experiment: ExperimentKind
    seed: int
    hurst: HurstSpec
    params: Dict[str, Any]
    output_dir: Path
    output_name: str
    workers: Optional[int] = None
    source: Optional[Path] = None
    raw: Dict[str, Any] = field(default_factory=dict)

    def resolved(self) -> Dict[str, Any]:
        """The config with defaults filled in; embedded in every run record."""
        out: Dict[str, Any] = {
            "experiment": self.experiment.value,
            "seed": self.seed,
            "hurst": self.hurst.to_dict(),
            "params": copy.deepcopy(self.params),
            "output": {"dir": str(self.output_dir), "name": self.output_name},
        }
        if self.workers is not None:
            out["workers"] = self.workers
        return out

    @property
    def config_hash(self) -> str:
        """SHA-256 of the value-determining part (workers and output location excluded)."""
        resolved = self.resolved()
        resolved.pop("output", None)
        resolved.pop("workers", None)
        canonical = json.dumps(resolved, sort_keys=True, separators=(",", ":"), ensure_ascii=True)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


_SCHEMA: Optional[Dict[str, Any]] = None


def load_schema() -> Dict[str, Any]:
    global _SCHEMA
    if _SCHEMA is None:
        with open(resource_path("schema", "experiment.schema.json"), "r", encoding="utf-8") as fh:
            _SCHEMA = json.load(fh)
    return _SCHEMA


def _field_path(error: Any) -> str:
    parts = [str(p) for p in error.absolute_path]
    return ".".join(parts) if parts else "<root>"


def validate_document(doc: Any) -> None:
    """Raise ConfigError for the first schema violation, naming its field path."""
    if not isinstance(doc, Mapping):
        raise ConfigError("config must be a mapping at the top level", field="<root>")
    validator = Draft202012Validator(load_schema())
    errors = sorted(validator.iter_errors(doc), key=lambda e: (list(map(str, e.absolute_path)), e.message))
    if errors:
        first = errors[0]
        raise ConfigError(first.message, field=_field_path(first))


def _fill_defaults(kind: ExperimentKind, params: Mapping[str, Any], d: int) -> Dict[str, Any]:
    merged = copy.deepcopy(PARAM_DEFAULTS[kind])
    for key, value in params.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), dict) and key != "f":
            merged[key] = {**merged[key], **value}
        else:
            merged[key] = copy.deepcopy(value)
    origin = [0.0] * d
    if "x" in merged and merged["x"] is None:
        merged["x"] = origin
    if "points" in merged and merged["points"] is None:
        merged["points"] = [origin]
    if isinstance(merged.get("x"), list) and len(merged["x"]) != d:
        raise ConfigError(f"expected {d} coordinates, got {len(merged['x'])}", field="params.x")
    for i, point in enumerate(merged.get("points") or []):
        if len(point) != d:
            raise ConfigError(f"expected {d} coordinates, got {len(point)}", field=f"params.points.{i}")
    return merged


def _check_regime(kind: ExperimentKind, spec: HurstSpec) -> None:
    wanted = Regime.SPECIAL_D1 if kind is ExperimentKind.SPECIAL_D1 else Regime.REGULAR
    if spec.regime is not wanted:
        raise ConfigError(f"experiment {kind.value} needs regime {wanted.value}", field="hurst.regime")
    require_admissible(spec, wanted, operation="config")


def config_from_dict(doc: Mapping[str, Any], *, source: Optional[Path] = None) -> ExperimentConfig:
    validate_document(doc)
    kind = ExperimentKind(doc["experiment"])
    hurst = HurstSpec.from_dict(doc["hurst"])
    _check_regime(kind, hurst)
    params = _fill_defaults(kind, doc.get("params") or {}, hurst.d)
    if "eps_ladder" in params:
        check_ladder(params["eps_ladder"])

    output = doc.get("output") or {}
    base = source.parent if source is not None else Path.cwd()
    if "dir" in output:
        out_dir = Path(output["dir"]).expanduser()
        if not out_dir.is_absolute():
            out_dir = (base / out_dir).resolve()
    else:
        out_dir = data_dir() / "runs"
    name = output.get("name") or (source.stem if source is not None else kind.value)
    return ExperimentConfig(kind, int(doc["seed"]), hurst, params, out_dir, name, doc.get("workers"), source, dict(doc))


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    """Parse and validate a YAML experiment config; every failure is a ConfigError (exit 2)."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}", field="<file>")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"YAML parse error: {exc}", field="<file>") from exc
    return config_from_dict(doc, source=path)
