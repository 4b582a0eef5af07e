import csv
import io
import json
import math

import pytest

from nlsobs.cli import cli_main
from nlsobs.experiments import (
    ConfigError,
    ExperimentConfig,
    RunRecord,
    check_gcc,
    dumps_json,
    export_record,
    format_float,
    record_csv,
    rng_for,
    run_experiment,
)

SMALL = {
    "convergence": {"kind": "convergence", "sizes": [16], "ranks": [4], "T": 0.1, "dt": 0.01, "convergence": {"levels": 2}},
    "decay": {"kind": "decay", "sizes": [16], "ranks": [4], "T": 1.0, "dt": 0.01,
              "decay": {"fit_start": 0.2, "fit_end": 1.0, "transient": 0.1, "sample_every": 5}},
    "reconstruct": {"kind": "reconstruct", "sizes": [32], "T": 0.2, "dt": 0.002, "ranks": [8],
                    "nonlinearity": [], "reconstruction": {"check_uniqueness": False}},
}

# reconstruction through an empty window has a singular Gramian
EMPTY_WINDOW = {"kind": "reconstruct", "sizes": [16], "T": 0.1, "dt": 0.01, "ranks": [4],
                "window": {"kind": "empty"}, "reconstruction": {"check_uniqueness": False}}


def write_config(tmp_path, data, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return p


# --- config ---


def test_defaults_fill_in():
    cfg = ExperimentConfig.from_dict({"kind": "decay"})
    assert cfg.sizes == (64,) and cfg.nl.coeffs == (1.0,)
    again = ExperimentConfig.from_dict(cfg.to_dict())
    assert again == cfg


@pytest.mark.parametrize("bad, needle", [
    ({"kind": "nope"}, "unknown experiment kind"),
    ({"kind": "decay", "bogus": 1}, "unknown keys"),
    ({"kind": "decay", "T": "one"}, "config.T"),
    ({"kind": "decay", "T": 1.0, "dt": 0.3}, "T/dt"),
    ({"kind": "decay", "sizes": [48]}, "powers of two"),
    ({"kind": "decay", "ranks": [64]}, "split ranks"),
    ({"kind": "decay", "window": {"kind": "cross"}}, "two-dimensional"),
    ({"kind": "decay", "window": 3}, "must be an object"),
    ({"kind": "decay", "schema": 2}, "schema"),
    ({"kind": "decay", "seed": -1}, "seed"),
    ({"kind": "decay", "reconstruction": {"check_uniqueness": 1}}, "check_uniqueness"),
])
def test_config_errors(bad, needle):
    with pytest.raises(ConfigError) as exc:
        ExperimentConfig.from_dict(bad)
    assert needle in str(exc.value)


def test_from_file_errors(tmp_path):
    with pytest.raises(OSError):
        ExperimentConfig.from_file(tmp_path / "missing.json")
    p = tmp_path / "broken.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_file(p)


def test_integral_float_accepted_for_int():
    assert ExperimentConfig.from_dict({"kind": "decay", "seed": 3.0}).seed == 3


def test_seeded_streams_are_independent():
    a = rng_for(5, 1).standard_normal(3)
    b = rng_for(5, 1).standard_normal(3)
    c = rng_for(5, 2).standard_normal(3)
    assert (a == b).all() and not (a == c).all()


# --- export ---


def test_format_float_roundtrips():
    for x in (0.1, 1 / 3, 1e-300, -2.5e17, 12.0):
        assert float(format_float(x)) == x
    assert format_float(math.nan) == "nan"
    assert dumps_json({"b": math.inf, "a": [1, 0.5, True, None]}) == '{"a": [1, 0.5, true, null], "b": null}'


def test_header_only_csv(tmp_path):
    rec = RunRecord({"kind": "decay"}, "v0.1.0", 0.0, ["t", "h1_norm"], [], status="failed", diagnostics="x")
    assert record_csv(rec) == "t,h1_norm\r\n"
    out = export_record(rec, tmp_path / "r.csv", "csv")
    assert out.read_bytes() == b"t,h1_norm\r\n"
    with pytest.raises(ValueError):
        export_record(rec, tmp_path / "r.xml", "xml")


@pytest.mark.parametrize("kind", sorted(SMALL))
def test_records_are_reproducible(tmp_path, kind):
    cfg = ExperimentConfig.from_dict(SMALL[kind])
    a, b = run_experiment(cfg), run_experiment(cfg)
    assert a.status == "ok", a.diagnostics
    for fmt in ("csv", "json"):
        pa = export_record(a, tmp_path / f"a.{fmt}", fmt)
        pb = export_record(b, tmp_path / f"b.{fmt}", fmt)
        assert pa.read_bytes() == pb.read_bytes()
    parsed = json.loads((tmp_path / "a.json").read_text())
    assert parsed["version"] == "v0.1.0"
    assert parsed["columns"] == a.columns and len(parsed["rows"]) == len(a.rows)
    assert "duration" not in parsed
    rows = list(csv.reader(io.StringIO((tmp_path / "a.csv").read_bytes().decode())))
    assert rows[0] == a.columns and len(rows) == len(a.rows) + 1


def test_record_reexecutes_from_embedded_config():
    cfg = ExperimentConfig.from_dict(SMALL["convergence"])
    a = run_experiment(cfg)
    b = run_experiment(ExperimentConfig.from_dict(a.config))
    assert dumps_json(a.to_dict()) == dumps_json(b.to_dict())


def test_linear_reconstruct_record():
    rec = run_experiment(ExperimentConfig.from_dict(SMALL["reconstruct"]))
    row = dict(zip(rec.columns, rec.rows[0]))
    assert row["status"] == "ok"
    assert row["relative_error"] <= 1e-8


def test_numerical_failure_is_recorded():
    cfg = ExperimentConfig.from_dict(EMPTY_WINDOW)
    rec = run_experiment(cfg)
    assert rec.status == "failed"
    assert "ObservabilityError" in rec.diagnostics


def test_workers_do_not_change_results():
    base = {"kind": "gramian-scan", "sizes": [16], "T": 0.2, "dt": 0.01, "ranks": [4, 6],
            "potentials": {"count": 2, "radius": 0.5}}
    a = run_experiment(ExperimentConfig.from_dict(base))
    b = run_experiment(ExperimentConfig.from_dict({**base, "workers": 2}))
    assert a.rows == b.rows


def test_gcc_check_examples():
    cross = ExperimentConfig.from_dict({"kind": "decay", "sizes": [16, 16],
                                        "window": {"kind": "cross", "lo": 2.64, "length": 1.0},
                                        "gcc": {"T0": 12.6, "n_positions": 8, "n_directions": 16}})
    assert check_gcc(cross).passed
    strip = ExperimentConfig.from_dict({"kind": "decay", "sizes": [16, 16],
                                        "window": {"kind": "strip", "axis": 0, "lo": 2.64, "length": 1.0},
                                        "gcc": {"T0": 12.6, "n_positions": 8, "n_directions": 16}})
    rep = check_gcc(strip)
    assert not rep.passed


# --- CLI ---


def test_cli_version(capsys):
    assert cli_main(["version"]) == 0
    assert capsys.readouterr().out.strip() == "0.1.0"


def test_cli_usage_errors(capsys):
    assert cli_main(["frobnicate"]) == 2
    assert cli_main([]) == 2


def test_cli_missing_config_is_io_error(tmp_path):
    assert cli_main(["run", str(tmp_path / "nope.json")]) == 4


def test_cli_bad_config(tmp_path):
    assert cli_main(["run", str(write_config(tmp_path, {"kind": "nope"}))]) == 2


def test_cli_run_writes_outputs(tmp_path, capsys):
    cfg = write_config(tmp_path, SMALL["convergence"])
    stem = tmp_path / "out" / "conv"
    assert cli_main(["run", str(cfg), "-o", str(stem)]) == 0
    assert (tmp_path / "out" / "conv.csv").exists()
    assert (tmp_path / "out" / "conv.json").exists()
    timing = json.loads((tmp_path / "out" / "conv.timing.json").read_text())
    assert timing["duration"] >= 0


def test_cli_numerical_failure_exit(tmp_path):
    cfg = write_config(tmp_path, EMPTY_WINDOW)
    assert cli_main(["run", str(cfg), "-o", str(tmp_path / "f"), "--format", "csv"]) == 3
    assert (tmp_path / "f.csv").exists()


def test_cli_check_gcc(tmp_path):
    cross = {"kind": "decay", "sizes": [16, 16], "window": {"kind": "cross", "lo": 2.64, "length": 1.0},
             "gcc": {"T0": 12.6, "n_positions": 8, "n_directions": 16}}
    assert cli_main(["check-gcc", str(write_config(tmp_path, cross))]) == 0
    strip = {**cross, "window": {"kind": "strip", "axis": 0, "lo": 2.64, "length": 1.0}}
    assert cli_main(["check-gcc", str(write_config(tmp_path, strip, "s.json"))]) == 1
