import json
from pathlib import Path

import pytest

from brw.cli import (ExperimentConfig, ParseError, ValidationError,
                     config_from_argv, parse_config, run, validate_config)

LAT = {"family": "lattice_binary", "params": {}, "normalize": False}
H2 = {"family": "heavy_count", "params": {"theta": 2.0}, "normalize": True}


def _write(tmp_path, name, obj):
    p = tmp_path / name
    p.write_text(json.dumps(obj))
    return str(p)


def test_validate_minimal():
    cfg = validate_config({"task": "selftest", "seed": 7, "out": "o"})
    assert cfg.workers == 1 and cfg.params == {}
    assert len(cfg.digest()) == 64


def test_validate_collects_all_problems():
    with pytest.raises(ValidationError) as exc:
        validate_config({"task": "bogus", "workers": 0, "extra": 1})
    msg = str(exc.value)
    assert "task" in msg and "seed" in msg and "out" in msg
    assert "workers" in msg and "unknown keys" in msg
    assert len(exc.value.problems) >= 5


def test_validate_rejects_bad_counts_and_law():
    with pytest.raises(ValidationError) as exc:
        validate_config({
            "task": "simulate", "seed": 1, "out": "o",
            "law": {"family": "heavy_count", "params": {"theta": 0.5},
                    "normalize": True},
            "params": {"replicas": 0, "generations": 3}})
    msg = str(exc.value)
    assert "replicas" in msg and "theta must exceed 1" in msg


def test_validate_rejects_unknown_params_and_bad_y():
    with pytest.raises(ValidationError) as exc:
        validate_config({"task": "criterion", "seed": 1, "out": "o",
                         "law": LAT, "params": {"nope": 1, "y": [0.5]}})
    msg = str(exc.value)
    assert "unknown params" in msg and "y entries" in msg


def test_validate_seed_range():
    with pytest.raises(ValidationError):
        validate_config({"task": "selftest", "seed": -1, "out": "o"})
    with pytest.raises(ValidationError):
        validate_config({"task": "selftest", "seed": 2 ** 64, "out": "o"})


def test_parse_config_reports_line(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{"task": "selftest",\n  "seed": }')
    with pytest.raises(ParseError) as exc:
        parse_config(str(p))
    assert "line 2" in str(exc.value)


def test_parse_config_missing_file(tmp_path):
    with pytest.raises(ParseError):
        parse_config(str(tmp_path / "nope.json"))


def test_config_from_argv_flags(tmp_path):
    law = _write(tmp_path, "lat.json", LAT)
    cfg = config_from_argv(["simulate", "--law", law, "--generations", "4",
                            "--replicas", "2", "--seed", "9",
                            "--out", str(tmp_path / "o")])
    assert cfg.task == "simulate"
    assert cfg.params == {"generations": 4, "replicas": 2}
    assert cfg.law["family"] == "lattice_binary"


def test_config_from_argv_inline_law(tmp_path):
    cfg = config_from_argv(["criterion", "--law", json.dumps(LAT),
                            "--y", "1,2,8", "--seed", "3",
                            "--out", str(tmp_path)])
    assert cfg.params["y"] == [1.0, 2.0, 8.0]


def test_config_file_with_flag_override(tmp_path):
    conf = _write(tmp_path, "conf.json", {
        "task": "simulate", "seed": 5, "out": str(tmp_path / "a"),
        "law": LAT, "params": {"generations": 3, "replicas": 2}})
    cfg = config_from_argv(["--config", conf, "simulate",
                            "--seed", "6"])
    assert cfg.seed == 6 and cfg.params["generations"] == 3


def test_run_simulate_and_manifest(tmp_path):
    out = tmp_path / "sim"
    cfg = ExperimentConfig("simulate", 11, str(out), law=LAT,
                           params={"generations": 5, "replicas": 3})
    man = run(cfg)
    assert man.errors == []
    assert man.outputs == ["simulate.csv"]
    assert man.config_hash == cfg.digest()
    meta = json.loads((out / "manifest.json").read_text())
    assert meta["task"] == "simulate" and meta["wall_clock"] >= 0
    lines = (out / "simulate.csv").read_text().splitlines()
    assert lines[0] == "replica,seed,n,population,W_n_t1,D_n,D_n_beta"
    assert len(lines) == 1 + 3 * 6


def test_run_rerun_byte_identical(tmp_path):
    cfg_a = ExperimentConfig("simulate", 11, str(tmp_path / "a"), law=LAT,
                             params={"generations": 6, "replicas": 4})
    cfg_b = ExperimentConfig("simulate", 11, str(tmp_path / "b"), law=LAT,
                             params={"generations": 6, "replicas": 4})
    run(cfg_a)
    run(cfg_b)
    assert (tmp_path / "a/simulate.csv").read_bytes() == \
        (tmp_path / "b/simulate.csv").read_bytes()


def test_run_worker_invariance(tmp_path):
    base = {"generations": 5, "replicas": 6}
    run(ExperimentConfig("simulate", 17, str(tmp_path / "w1"), workers=1,
                         law=LAT, params=base))
    run(ExperimentConfig("simulate", 17, str(tmp_path / "w8"), workers=8,
                         law=LAT, params=base))
    assert (tmp_path / "w1/simulate.csv").read_bytes() == \
        (tmp_path / "w8/simulate.csv").read_bytes()


def test_run_spine_worker_invariance(tmp_path):
    base = {"horizon": 4, "replicas": 5}
    run(ExperimentConfig("spine", 23, str(tmp_path / "s1"), workers=1,
                         law=LAT, params=base))
    run(ExperimentConfig("spine", 23, str(tmp_path / "s8"), workers=8,
                         law=LAT, params=base))
    assert (tmp_path / "s1/spine.csv").read_bytes() == \
        (tmp_path / "s8/spine.csv").read_bytes()
    header = (tmp_path / "s1/spine.csv").read_text().splitlines()[0]
    assert header == "replica,n,spine_position,n_siblings"


def test_run_conditioned_with_f_table(tmp_path):
    ftab = tmp_path / "f.csv"
    ftab.write_text("y,F_of_y\n" + "\n".join(
        f"{y},{(1.0 + y) ** -3}" for y in range(0, 200)) + "\n")
    out = tmp_path / "cond"
    cfg = ExperimentConfig("conditioned", 31, str(out), law=LAT,
                           params={"horizon": 200, "f_table": str(ftab)})
    man = run(cfg)
    assert man.errors == []
    assert set(man.outputs) == {"conditioned_path.csv",
                                "conditioned_series.csv",
                                "conditioned_class.txt"}
    cls = (out / "conditioned_class.txt").read_text().split()
    assert cls[0] in ("convergent", "divergent", "inconclusive")


def test_run_criterion_outputs(tmp_path):
    out = tmp_path / "crit"
    cfg = ExperimentConfig("criterion", 41, str(out), law=LAT,
                           params={"horizon": 120, "paths": 2,
                                   "y": [1.0, 2.0], "m_draws": 16})
    man = run(cfg)
    assert man.errors == []
    lines = (out / "criterion.csv").read_text().splitlines()
    assert lines[0] == "law,series,n,summand,partial_sum,se"
    # capped plus two tail series, horizon levels each
    assert len(lines) == 1 + 3 * 120
    verdict = (out / "criterion_class.txt").read_text()
    assert "verdict" in verdict


def test_run_selftest(tmp_path):
    out = tmp_path / "st"
    man = run(ExperimentConfig("selftest", 7, str(out)))
    assert man.errors == []
    rows = (out / "selftest.csv").read_text().splitlines()[1:]
    assert rows and all(r.rsplit(",", 1)[1] == "1" for r in rows)


def test_run_records_error_in_manifest(tmp_path):
    out = tmp_path / "err"
    cfg = ExperimentConfig("conditioned", 3, str(out), law=LAT,
                           params={"horizon": 10,
                                   "f_table": str(tmp_path / "nope.csv")})
    man = run(cfg)
    assert man.errors and "FileNotFoundError" in man.errors[0]
    assert (out / "manifest.json").exists()
    # the partial path output written before the failure is preserved
    assert (out / "conditioned_path.csv").exists()
