"""Run record persistence: an append-only JSON-lines log plus a CSV table per run."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from .errors import RecordError
from .log import handle_log
from .model import EstimatorResult

logger = logging.getLogger(__name__)

CSV_COLUMNS = ("experiment", "param_json", "value", "stderr", "n_samples", "seed", "clip_count", "verdict")
CSV_VERSION = 1


def format_float(value: float) -> str:
    """17 significant digits, so the text round-trips to the same double."""
    return format(float(value), ".17g")


def _json_safe(value: Any) -> Any:
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    if isinstance(value, dict):
        return {str(k): _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    if hasattr(value, "item") and callable(value.item):
        return _json_safe(value.item())
    if hasattr(value, "tolist"):
        return _json_safe(value.tolist())
    return value


@dataclass
class Verdict:
    name: str
    passed: bool
    margin: float = math.nan
    detail: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {"name": self.name, "passed": self.passed, "margin": self.margin, "detail": dict(self.detail)}


@dataclass
class RunRecord:
    """One run as read back from the log."""

    header: Dict[str, Any]
    estimates: List[Dict[str, Any]] = field(default_factory=list)
    verdicts: List[Dict[str, Any]] = field(default_factory=list)
    footer: Optional[Dict[str, Any]] = None

    @property
    def config_hash(self) -> str:
        return str(self.header.get("config_hash", ""))

    @property
    def passed(self) -> bool:
        return all(v.get("passed") for v in self.verdicts)


class RunRecordStore:
    """실행 기록 관리 클래스

    ``start`` opens a run, ``add_estimate``/``add_verdict`` collect rows,
    ``finish`` appends the whole run to ``<name>.jsonl`` and rewrites
    ``<name>.csv`` with this run's table.
    """

    def __init__(self, out_dir: Union[str, Path], name: str) -> None:
        self.out_dir = Path(out_dir)
        self.name = name
        self.record_file = self.out_dir / f"{name}.jsonl"
        self.csv_file = self.out_dir / f"{name}.csv"
        self.lines: List[Dict[str, Any]] = []
        self.rows: List[Dict[str, str]] = []
        self._started: Optional[datetime] = None

    def start(self, config_hash: str, config: Dict[str, Any], version: str) -> None:
        self._started = datetime.now()
        self.lines = [
            {
                "type": "header",
                "config_hash": config_hash,
                "config": config,
                "version": version,
                "csv_version": CSV_VERSION,
                "started": self._started.isoformat(),
            }
        ]
        self.rows = []

    def add_estimate(
        self,
        experiment: str,
        params: Dict[str, Any],
        result: EstimatorResult,
        verdict: Optional[bool] = None,
        target: Optional[float] = None,
    ) -> None:
        """새 추정치 기록 추가"""
        verdict_text = "" if verdict is None else ("pass" if verdict else "fail")
        line = {
            "type": "estimate",
            "experiment": experiment,
            "params": params,
            "result": result.to_dict(),
            "verdict": verdict_text,
        }
        if target is not None:
            line["target"] = target
        self.lines.append(_json_safe(line))
        self.rows.append(
            {
                "experiment": experiment,
                "param_json": json.dumps(_json_safe(params), sort_keys=True, separators=(",", ":")),
                "value": format_float(result.value),
                "stderr": format_float(result.std_error),
                "n_samples": str(result.n_samples),
                "seed": str(result.seed),
                "clip_count": str(result.clip_count),
                "verdict": verdict_text,
            }
        )

    def add_verdict(self, verdict: Verdict) -> None:
        self.lines.append(_json_safe(dict(verdict.to_dict(), type="verdict")))
        handle_log(logger, f"{verdict.name}: {'PASS' if verdict.passed else 'FAIL'} (margin {verdict.margin:.3g})",
                   "SUCCESS" if verdict.passed else "WARNING")

    def finish(self, error: Optional[str] = None) -> Path:
        wall = (datetime.now() - self._started).total_seconds() if self._started else 0.0
        verdicts = [line for line in self.lines if line.get("type") == "verdict"]
        footer = {
            "type": "footer",
            "wall_time_s": wall,
            "n_estimates": len(self.rows),
            "passed": all(v["passed"] for v in verdicts) and error is None,
        }
        if error is not None:
            footer["error"] = error
        self.lines.append(footer)
        self.save()
        return self.record_file

    def save(self) -> None:
        """기록을 파일에 저장 (JSONL 은 이어쓰기, CSV 는 이번 실행으로 교체)"""
        self.out_dir.mkdir(parents=True, exist_ok=True)
        with open(self.record_file, "a", encoding="utf-8") as fh:
            for line in self.lines:
                fh.write(json.dumps(line, ensure_ascii=False, sort_keys=True) + "\n")
        with open(self.csv_file, "w", encoding="utf-8", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
            writer.writeheader()
            writer.writerows(self.rows)

    # ---------------------------------------------------------
    # 읽기
    # ---------------------------------------------------------
    @staticmethod
    def load(path: Union[str, Path]) -> List[RunRecord]:
        """Parse a record log; a missing file or a corrupted line raises RecordError."""
        path = Path(path)
        if not path.exists():
            raise RecordError(f"run record not found: {path}")
        runs: List[RunRecord] = []
        with open(path, "r", encoding="utf-8") as fh:
            for line_no, text in enumerate(fh, start=1):
                if not text.strip():
                    continue
                try:
                    line = json.loads(text)
                except json.JSONDecodeError as exc:
                    raise RecordError(f"corrupted JSON at line {line_no}: {exc.msg}", line_no=line_no) from exc
                kind = line.get("type") if isinstance(line, dict) else None
                if kind == "header":
                    runs.append(RunRecord(line))
                elif kind in ("estimate", "verdict", "footer"):
                    if not runs:
                        raise RecordError(f"line {line_no}: {kind} before any header", line_no=line_no)
                    if kind == "estimate":
                        runs[-1].estimates.append(line)
                    elif kind == "verdict":
                        runs[-1].verdicts.append(line)
                    else:
                        runs[-1].footer = line
                else:
                    raise RecordError(f"line {line_no}: unknown record type {kind!r}", line_no=line_no)
        return runs

    @staticmethod
    def read_csv(path: Union[str, Path]) -> List[Dict[str, str]]:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            return list(csv.DictReader(fh))
