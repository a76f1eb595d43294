import json
import math

import pytest
import yaml
from hypothesis import given
from hypothesis import strategies as st

from fkheat import __version__
from fkheat.cli import TABLE_HEADER, main, render_report
from fkheat.config import ExperimentKind, config_from_dict, data_dir, load_config
from fkheat.errors import AdmissibilityError, ConfigError, RecordError
from fkheat.model import KAPPA_CONDITION, EstimatorResult
from fkheat.run_records import CSV_COLUMNS, RunRecordStore, Verdict, format_float

QUICK_RUN = {
    "experiment": "exp-moment",
    "seed": 11,
    "hurst": {"d": 1, "h0": 0.7, "h": [0.9]},
    "params": {"mu_levels": [0.05], "times": [1.0, 0.25], "mc": 8, "grid_n": 8},
}


def _write(tmp_path, doc, name="trial.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(doc), encoding="utf-8")
    return path


# ---------------------------------------------------------
# 설정
# ---------------------------------------------------------
def test_defaults_are_filled(tmp_path):
    config = load_config(_write(tmp_path, {**QUICK_RUN, "output": {"dir": "out"}}))
    assert config.experiment is ExperimentKind.EXP_MOMENT
    assert config.params["exp_cap"] == 700.0
    assert config.output_dir == (tmp_path / "out").resolve()
    assert config.output_name == "trial"


def test_hash_ignores_workers_and_output():
    base = config_from_dict(QUICK_RUN)
    moved = config_from_dict({**QUICK_RUN, "workers": 4, "output": {"dir": "/tmp/elsewhere", "name": "other"}})
    assert base.config_hash == moved.config_hash
    reseeded = config_from_dict({**QUICK_RUN, "seed": 12})
    assert reseeded.config_hash != base.config_hash


@pytest.mark.parametrize(
    "change, field",
    [
        ({"seed": -1}, "seed"),
        ({"experiment": "sweep"}, "experiment"),
        ({"hurst": {"d": 1, "h0": 0.7}}, "hurst"),
        ({"params": {"mc": 1}}, "params.mc"),
        ({"colour": "blue"}, "<root>"),
    ],
)
def test_schema_errors_name_the_field(change, field):
    with pytest.raises(ConfigError) as info:
        config_from_dict({**QUICK_RUN, **change})
    assert info.value.field == field
    assert info.value.exit_code == 2


def test_coordinate_and_regime_checks():
    doc = {"experiment": "moments", "seed": 1, "hurst": {"d": 2, "h0": 0.9, "h": [0.8, 0.8]}, "params": {"points": [[0.0]]}}
    with pytest.raises(ConfigError) as info:
        config_from_dict(doc)
    assert info.value.field == "params.points.0"
    special = {"experiment": "special-d1", "seed": 1, "hurst": {"d": 1, "h0": 0.7, "h": [0.9]}}
    with pytest.raises(ConfigError) as info:
        config_from_dict(special)
    assert info.value.field == "hurst.regime"


def test_inadmissible_hurst_names_the_condition():
    doc = {**QUICK_RUN, "hurst": {"d": 2, "h0": 0.5, "h": [0.7, 0.7]}}
    with pytest.raises(AdmissibilityError) as info:
        config_from_dict(doc)
    assert info.value.condition == KAPPA_CONDITION


def test_missing_and_broken_files(tmp_path):
    with pytest.raises(ConfigError) as info:
        load_config(tmp_path / "nope.yaml")
    assert info.value.field == "<file>"
    broken = tmp_path / "broken.yaml"
    broken.write_text("experiment: [unclosed\n", encoding="utf-8")
    with pytest.raises(ConfigError) as info:
        load_config(broken)
    assert info.value.field == "<file>"


def test_data_dir_override(tmp_path, monkeypatch):
    monkeypatch.setenv("FKHEAT_DATA_DIR", str(tmp_path / "data"))
    assert data_dir() == tmp_path / "data"
    assert data_dir().is_dir()


# ---------------------------------------------------------
# 실행 기록
# ---------------------------------------------------------
@given(value=st.floats(allow_nan=False, allow_infinity=False))
def test_format_float_round_trips(value):
    assert float(format_float(value)) == value


def test_store_writes_log_and_table(tmp_path):
    store = RunRecordStore(tmp_path, "unit")
    store.start("abc", {"experiment": "moments"}, __version__)
    store.add_estimate("moment_p", {"p": 2}, EstimatorResult(1.5, 0.1, 10, 3, {"clip_count": 1}), True, 1.4)
    store.add_verdict(Verdict("moment_p:p=2", True, 0.5))
    store.finish()

    runs = RunRecordStore.load(store.record_file)
    assert len(runs) == 1
    run = runs[0]
    assert run.config_hash == "abc"
    assert run.passed
    assert run.estimates[0]["target"] == 1.4
    assert run.footer["n_estimates"] == 1

    rows = RunRecordStore.read_csv(store.csv_file)
    assert tuple(rows[0]) == CSV_COLUMNS
    assert rows[0]["value"] == "1.5"
    assert rows[0]["clip_count"] == "1"
    assert rows[0]["verdict"] == "pass"


def test_failed_run_keeps_the_error(tmp_path):
    store = RunRecordStore(tmp_path, "unit")
    store.start("abc", {}, __version__)
    store.finish(error="boom")
    footer = RunRecordStore.load(store.record_file)[-1].footer
    assert footer["passed"] is False
    assert footer["error"] == "boom"


@pytest.mark.parametrize(
    "lines, fragment",
    [
        (['{"type": "header"}', "{not json"], "corrupted JSON at line 2"),
        (['{"type": "estimate"}'], "before any header"),
        (['{"type": "header"}', '{"type": "gossip"}'], "unknown record type"),
    ],
)
def test_load_rejects_bad_logs(tmp_path, lines, fragment):
    path = tmp_path / "bad.jsonl"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    with pytest.raises(RecordError) as info:
        RunRecordStore.load(path)
    assert fragment in str(info.value)
    assert info.value.exit_code == 2


def test_render_empty_report():
    assert render_report([]) == " | ".join(TABLE_HEADER) + "\n"


# ---------------------------------------------------------
# CLI
# ---------------------------------------------------------
def test_cli_validate_prints_json(tmp_path, capsys):
    assert main(["validate", str(_write(tmp_path, QUICK_RUN))]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["admissible"] is True
    assert payload["experiment"] == "exp-moment"
    assert payload["kappa"] == pytest.approx(0.3)


def test_cli_rejects_inadmissible_config(tmp_path, caplog):
    path = _write(tmp_path, {**QUICK_RUN, "hurst": {"d": 2, "h0": 0.5, "h": [0.7, 0.7]}})
    assert main(["validate", str(path)]) == 2
    assert KAPPA_CONDITION in caplog.text


def test_cli_config_error_exit_code(tmp_path):
    assert main(["run", str(_write(tmp_path, {**QUICK_RUN, "seed": -3}))]) == 2
    assert main(["run", str(tmp_path / "missing.yaml")]) == 2


def test_cli_report_errors(tmp_path, caplog):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"type": "header"}\n{oops\n', encoding="utf-8")
    assert main(["report", str(bad)]) == 2
    assert "line 2" in caplog.text
    assert main(["report", str(tmp_path / "table.csv")]) == 2
    assert main(["report", str(tmp_path / "missing.jsonl")]) == 2


def test_cli_report_of_empty_log(tmp_path, capsys):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("", encoding="utf-8")
    assert main(["report", str(empty)]) == 0
    assert capsys.readouterr().out == " | ".join(TABLE_HEADER) + "\n"


def test_cli_run_is_worker_independent(tmp_path, capsys):
    path = _write(tmp_path, QUICK_RUN)
    out = tmp_path / "runs"
    assert main(["run", str(path), "--out", str(out), "--name", "one", "--workers", "1"]) == 0
    assert main(["run", str(path), "--out", str(out), "--name", "many", "--workers", "3"]) == 0
    one = RunRecordStore.read_csv(out / "one.csv")
    many = RunRecordStore.read_csv(out / "many.csv")
    assert len(one) == 2
    assert one == many

    assert main(["run", str(path), "--out", str(out), "--name", "one"]) == 0
    runs = RunRecordStore.load(out / "one.jsonl")
    assert len(runs) == 2
    assert runs[0].config_hash == runs[1].config_hash
    assert all(math.isfinite(float(row["value"])) for row in one)

    capsys.readouterr()
    assert main(["report", str(out / "one.jsonl"), "--all"]) == 0
    text = capsys.readouterr().out
    assert "== run 2: exp-moment" in text
    assert "exp_moment_V" in text
