"""Command-line entry point: ``fkheat run|report|validate``."""
from __future__ import annotations

import argparse
import json
import logging
from collections import OrderedDict
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from . import __version__
from .config import load_config
from .errors import FkheatError, RecordError
from .experiments import run_experiment
from .log import handle_log, setup_logging
from .model import validate
from .run_records import RunRecord, RunRecordStore

logger = logging.getLogger(__name__)

TABLE_HEADER = ("experiment", "params", "value", "stderr", "n", "clip", "target", "verdict")


# ---------------------------------------------------------
# [로직 1] 리포트 렌더링
# ---------------------------------------------------------
def _short(value: Any) -> str:
    if isinstance(value, float):
        return format(value, ".6g")
    return str(value)


def _render_run(index: int, run: RunRecord) -> List[str]:
    header = run.header
    config = header.get("config", {})
    lines = [
        f"== run {index}: {config.get('experiment', '?')} | seed {config.get('seed', '?')} | "
        f"hash {run.config_hash[:12]} | version {header.get('version', '?')}",
        " | ".join(TABLE_HEADER),
    ]
    clips: "OrderedDict[str, List[int]]" = OrderedDict()
    for est in run.estimates:
        result = est.get("result", {})
        meta = result.get("meta", {})
        clip = int(meta.get("clip_count", 0))
        params = json.dumps(est.get("params", {}), sort_keys=True, separators=(",", ":"))
        target = est.get("target")
        lines.append(
            " | ".join(
                (
                    str(est.get("experiment", "")),
                    params,
                    _short(result.get("value")),
                    _short(result.get("std_error")),
                    str(result.get("n_samples", "")),
                    str(clip),
                    "" if target is None else _short(target),
                    est.get("verdict", "") or "-",
                )
            )
        )
        slot = clips.setdefault(str(est.get("experiment", "")), [0, 0])
        slot[0] += clip
        slot[1] += 1

    if run.verdicts:
        lines.append("-- verdicts")
        for verdict in run.verdicts:
            mark = "PASS" if verdict.get("passed") else "FAIL"
            lines.append(f"{mark} {verdict.get('name')} (margin {_short(verdict.get('margin'))})")
    if clips:
        lines.append("-- clip counts")
        for name, (total, n) in clips.items():
            lines.append(f"{name}: {total} clipped over {n} estimate(s)")

    footer = run.footer
    if footer is None:
        lines.append("-- run incomplete (no footer)")
    else:
        status = "PASS" if footer.get("passed") else "FAIL"
        lines.append(f"-- {status}: {footer.get('n_estimates', 0)} estimate(s), {len(run.verdicts)} verdict(s)")
        if footer.get("error"):
            lines.append(f"   error: {footer['error']}")
    return lines


def render_report(runs: Sequence[RunRecord], *, last_only: bool = False) -> str:
    """Plain-text summary of a record log; wall times are left out so the text is stable."""
    if not runs:
        return " | ".join(TABLE_HEADER) + "\n"
    selected = list(enumerate(runs, start=1))
    if last_only:
        selected = selected[-1:]
    blocks = ["\n".join(_render_run(i, run)) for i, run in selected]
    return "\n\n".join(blocks) + "\n"


# ---------------------------------------------------------
# [로직 2] 하위 명령
# ---------------------------------------------------------
def cmd_run(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    if args.out is not None:
        config.output_dir = Path(args.out).expanduser().resolve()
    if args.name is not None:
        config.output_name = args.name
    outcome = run_experiment(config, workers=args.workers)
    handle_log(logger, f"csv table: {outcome.csv_file}", "INFO")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    path = Path(args.record)
    if path.suffix == ".csv":
        raise RecordError(f"report reads the .jsonl record, not the CSV table: {path}")
    runs = RunRecordStore.load(path)
    print(render_report(runs, last_only=not args.all), end="")
    return 0


def cmd_validate(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    report = validate(config.hurst)
    payload: Dict[str, Any] = {
        "experiment": config.experiment.value,
        "config_hash": config.config_hash,
        "admissible": report.admissible,
        "kappa": report.kappa,
        "alpha_h": report.alpha_h,
        "alpha_h0": report.alpha_h0,
        "output": str(config.output_dir / f"{config.output_name}.jsonl"),
    }
    print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


def _parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        prog="fkheat",
        description="Feynman-Kac experiments for the heat equation with fractional Brownian sheet noise.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the experiment named in a YAML config")
    run.add_argument("config", type=Path)
    run.add_argument("--workers", type=int, default=None, help="worker threads (default: FKHEAT_WORKERS or physical cores)")
    run.add_argument("--out", type=Path, default=None, help="output directory (overrides output.dir)")
    run.add_argument("--name", default=None, help="record base name (overrides output.name)")
    run.set_defaults(handler=cmd_run)

    report = sub.add_parser("report", help="summarize a run record")
    report.add_argument("record", type=Path)
    report.add_argument("--all", action="store_true", help="every run in the log, not only the last")
    report.set_defaults(handler=cmd_report)

    check = sub.add_parser("validate", help="validate a config without running it")
    check.add_argument("config", type=Path)
    check.set_defaults(handler=cmd_validate)
    return parser.parse_args(argv)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parse_args(argv)
    setup_logging(args.verbose)
    try:
        return args.handler(args)
    except FkheatError as exc:
        where = exc.operation or args.command
        handle_log(logger, f"{where}: {exc}", "ERROR")
        return exc.exit_code
    except Exception:
        logger.exception("unexpected failure in %s", args.command)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
