from pathlib import Path

import pytest

from pswinfer import dgp
from pswinfer.config import DEFAULT_METHODS, dump_default, load_config, parse_config
from pswinfer.errors import ConfigError


def test_empty_config_is_full_grid():
    cfg = parse_config("")
    assert len(cfg.scenarios) == 160
    sc = cfg.scenarios[0]
    assert sc.reps == 1000 and sc.B == 500 and sc.separation == "lenient"
    assert [m.label for m in sc.methods] == [f"{m}/wald" if "/" not in m else m for m in DEFAULT_METHODS]
    assert cfg.augmentation is None and cfg.N == dgp.DEFAULT_N and cfg.workers is None


def test_aipw_preset_and_overrides():
    assert len(parse_config("grid: {preset: aipw}").scenarios) == 120
    cfg = parse_config("grid:\n  n: [150]\n  pz: [0.2]\n  py0: [0.3, 0.5]\nreps: 7\nB: 30\n")
    assert [(s.n, s.pz, s.py0) for s in cfg.scenarios] == [(150, 0.2, 0.3), (150, 0.2, 0.5)]
    assert cfg.scenarios[1].reps == 7 and cfg.scenarios[1].B == 30


def test_exclusions_override():
    cfg = parse_config("grid:\n  n: [100, 150]\n  pz: [0.1, 0.2]\n  py0: [0.3]\n  exclude: [[100, 0.1]]\n")
    assert {(s.n, s.pz) for s in cfg.scenarios} == {(150, 0.1), (100, 0.2), (150, 0.2)}


def test_bad_method_reports_key_and_line():
    with pytest.raises(ConfigError) as exc:
        parse_config("reps: 10\nmethods: [fs, bogus]\n")
    assert exc.value.key == "methods.1" and exc.value.line == 2
    assert "line 2" in str(exc.value)


@pytest.mark.parametrize("text, key, line", [
    ("reps: 0\n", "reps", 1),
    ("B: 1\n", "B", 1),
    ("foo: 1\n", "foo", 1),
    ("grid:\n  n: [100, 1.5]\n", "grid.n.1", 2),
    ("grid:\n  size: 3\n", "grid.size", 2),
    ("estimands: [ATE, ATT]\n", "estimands.1", 1),
    ("separation: maybe\n", "separation", 1),
    ("augment:\n  covariates: [x1, x99]\n", "augment.covariates", 2),
    ("augment:\n  per_arm: 3\n", "augment.per_arm", 2),
    ("superpopulation:\n  N: 10\n", "superpopulation.N", 2),
    ("output:\n  reps_csv: yes please\n", "output.reps_csv", 2),
    ("workers: -2\n", "workers", 1),
    ("grid:\n  pz: [1.5]\n", "grid", 1),
])
def test_schema_errors(text, key, line):
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    assert exc.value.key == key and exc.value.line == line
    assert exc.value.exit_code == 2


def test_invalid_yaml_has_line():
    with pytest.raises(ConfigError) as exc:
        parse_config("reps: 10\nmethods: [fs\n")
    assert exc.value.line is not None


def test_augment_parsing():
    cfg = parse_config("augment: {}\n")
    assert cfg.augmentation.covariates == dgp.CORRECT_OUTCOME_COVARIATES
    assert not cfg.augmentation.per_arm and cfg.augmentation.benchmark == "unaugmented"
    cfg = parse_config("augment:\n  covariates: misspecified\n  per_arm: true\n  benchmark: self\n")
    assert cfg.augmentation.covariates == dgp.MISSPECIFIED_OUTCOME_COVARIATES
    assert cfg.augmentation.per_arm and cfg.augmentation.benchmark == "self"
    assert parse_config("augment:\n  covariates: [x1, x6]\n").augmentation.covariates == ("x1", "x6")


def test_paths_relative_to_config(tmp_path):
    p = tmp_path / "sim.yaml"
    p.write_text("superpopulation: {cache_dir: cache}\noutput: {dir: out, reps_csv: true}\nworkers: 2\n")
    cfg = load_config(p)
    assert cfg.cache_dir == tmp_path / "cache" and cfg.output_dir == tmp_path / "out"
    assert cfg.reps_csv and cfg.workers == 2
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")


def test_dump_default_round_trips():
    cfg = parse_config(dump_default())
    assert len(cfg.scenarios) == 1
    sc = cfg.scenarios[0]
    assert (sc.n, sc.pz, sc.py0) == (1000, 0.5, 0.5) and cfg.output_dir == Path("results")
