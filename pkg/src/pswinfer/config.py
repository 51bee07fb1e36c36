"""Simulation config files (YAML).

Schema (every key optional unless noted)::

    grid:
      preset: full             # full (160 cells) | aipw (120 cells)
      n: [150, 1000]           # overrides the preset axis
      pz: [0.2, 0.5]
      py0: [0.3, 0.5]
      exclude: [[100, 0.1]]    # (n, pz) pairs; default: the preset's exclusions
    estimands: [ATE, ATO]
    methods: [fs, ns, boot-std-est, boot-std-est/pct]   # variance[/ci]
    reps: 1000
    B: 500
    separation: lenient        # lenient | strict quasi-separation policy
    augment:                   # presence turns on the augmented estimator
      covariates: correct      # correct | misspecified | [x1, x2, ...]
      per_arm: false
      benchmark: unaugmented   # unaugmented | self
    superpopulation:
      N: 1000000
      direction: above         # dichotomization direction for x6..x10
      cache_dir: null          # reuse saved super-populations from here
    output:
      dir: results
      reps_csv: false
    workers: 1

Errors carry the offending key path and its line in the file.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from . import dgp, harness
from .errors import ConfigError, InvalidGrid, InvalidMethod

_TOP = {"grid", "estimands", "methods", "reps", "B", "separation", "augment",
        "superpopulation", "output", "workers"}
_GRID = {"preset", "n", "pz", "py0", "exclude"}
_AUG = {"covariates", "per_arm", "benchmark"}
_SP = {"N", "direction", "cache_dir"}
_OUT = {"dir", "reps_csv"}
DEFAULT_METHODS = ("fs", "ns", "boot-std-fixed", "boot-std-est", "boot-std-est/pct")


@dataclass
class SimulationConfig:
    scenarios: list[harness.Scenario]
    augmentation: harness.Augmentation | None = None
    N: int = dgp.DEFAULT_N
    direction: str = "above"
    cache_dir: Path | None = None
    output_dir: Path = Path("results")
    reps_csv: bool = False
    workers: int | None = None
    raw: dict = field(default_factory=dict)


def _lines(node, path=(), out=None) -> dict[tuple, int]:
    """Map each key path in a composed YAML node to its 1-based line."""
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            p = path + (k.value,)
            out[p] = k.start_mark.line + 1
            _lines(v, p, out)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            p = path + (i,)
            out[p] = v.start_mark.line + 1
            _lines(v, p, out)
    return out


class _Ctx:
    def __init__(self, lines):
        self.lines = lines

    def fail(self, msg, *path):
        key = ".".join(str(p) for p in path) if path else None
        line = None
        for i in range(len(path), 0, -1):
            if path[:i] in self.lines:
                line = self.lines[path[:i]]
                break
        raise ConfigError(msg, key, line)

    def mapping(self, value, allowed, *path) -> dict:
        if value is None:
            return {}
        if not isinstance(value, dict):
            self.fail("expected a mapping", *path)
        for k in value:
            if k not in allowed:
                self.fail(f"unknown key; allowed: {', '.join(sorted(allowed))}", *path, k)
        return value

    def number_list(self, value, kind, *path) -> list:
        if not isinstance(value, list) or not value:
            self.fail("expected a non-empty list", *path)
        for i, v in enumerate(value):
            if isinstance(v, bool) or not isinstance(v, (int, float)) or (kind is int and v != int(v)):
                self.fail(f"expected {kind.__name__} values", *path, i)
        return [kind(v) for v in value]

    def positive_int(self, value, *path) -> int:
        if isinstance(value, bool) or not isinstance(value, int) or value < 1:
            self.fail("expected a positive integer", *path)
        return value


def parse_config(text: str, base_dir: Path | str = ".") -> SimulationConfig:
    try:
        node = yaml.compose(text)
        raw = yaml.safe_load(text)
    except yaml.YAMLError as err:
        mark = getattr(err, "problem_mark", None)
        raise ConfigError(f"invalid YAML: {getattr(err, 'problem', err)}",
                          line=mark.line + 1 if mark else None) from None
    ctx = _Ctx(_lines(node) if node is not None else {})
    raw = ctx.mapping(raw, _TOP)
    base_dir = Path(base_dir)

    grid = ctx.mapping(raw.get("grid"), _GRID, "grid")
    preset = grid.get("preset", "full")
    if preset not in ("full", "aipw"):
        ctx.fail("preset must be 'full' or 'aipw'", "grid", "preset")
    if preset == "full":
        ns, pzs, py0s, excl = harness.GRID_N, harness.GRID_PZ, harness.GRID_PY0, harness.GRID_EXCLUSIONS
    else:
        ns, pzs, py0s, excl = harness.GRID_N[1:], harness.GRID_PZ[1:], harness.GRID_PY0, ()
    if "n" in grid:
        ns = ctx.number_list(grid["n"], int, "grid", "n")
    if "pz" in grid:
        pzs = ctx.number_list(grid["pz"], float, "grid", "pz")
    if "py0" in grid:
        py0s = ctx.number_list(grid["py0"], float, "grid", "py0")
    if "exclude" in grid:
        ex = grid["exclude"] or []
        if not isinstance(ex, list):
            ctx.fail("expected a list of [n, pz] pairs", "grid", "exclude")
        for i, pair in enumerate(ex):
            if not (isinstance(pair, list) and len(pair) == 2):
                ctx.fail("expected an [n, pz] pair", "grid", "exclude", i)
        excl = [tuple(p) for p in ex]

    estimands = raw.get("estimands", ["ATE"])
    if not isinstance(estimands, list) or not estimands:
        ctx.fail("expected a non-empty list", "estimands")
    for i, e in enumerate(estimands):
        if str(e).upper() not in ("ATE", "ATO"):
            ctx.fail("estimand must be ATE or ATO", "estimands", i)
    estimands = [str(e).upper() for e in estimands]

    methods_raw = raw.get("methods", list(DEFAULT_METHODS))
    if not isinstance(methods_raw, list) or not methods_raw:
        ctx.fail("expected a non-empty list", "methods")
    methods = []
    for i, m in enumerate(methods_raw):
        try:
            methods.append(harness.MethodSpec.parse(str(m)))
        except InvalidMethod as err:
            ctx.fail(str(err), "methods", i)

    reps = ctx.positive_int(raw.get("reps", 1000), "reps")
    B = ctx.positive_int(raw.get("B", 500), "B")
    if B < 2:
        ctx.fail("B must be at least 2", "B")
    separation = raw.get("separation", "lenient")
    if separation not in ("lenient", "strict"):
        ctx.fail("separation must be 'lenient' or 'strict'", "separation")

    augmentation = None
    if "augment" in raw:
        aug = ctx.mapping(raw["augment"], _AUG, "augment")
        cov = aug.get("covariates", "correct")
        if cov == "correct":
            cov = dgp.CORRECT_OUTCOME_COVARIATES
        elif cov == "misspecified":
            cov = dgp.MISSPECIFIED_OUTCOME_COVARIATES
        elif isinstance(cov, list) and all(c in dgp.COVARIATE_NAMES for c in cov):
            cov = tuple(cov)
        else:
            ctx.fail("covariates must be 'correct', 'misspecified' or a list of x1..x10",
                     "augment", "covariates")
        per_arm = aug.get("per_arm", False)
        if not isinstance(per_arm, bool):
            ctx.fail("expected true or false", "augment", "per_arm")
        bench = aug.get("benchmark", "unaugmented")
        if bench not in ("unaugmented", "self"):
            ctx.fail("benchmark must be 'unaugmented' or 'self'", "augment", "benchmark")
        augmentation = harness.Augmentation(tuple(cov), per_arm, bench)

    spc = ctx.mapping(raw.get("superpopulation"), _SP, "superpopulation")
    N = spc.get("N", dgp.DEFAULT_N)
    if isinstance(N, bool) or not isinstance(N, int) or N < 1000:
        ctx.fail("N must be an integer >= 1000", "superpopulation", "N")
    direction = spc.get("direction", "above")
    if direction not in ("above", "below"):
        ctx.fail("direction must be 'above' or 'below'", "superpopulation", "direction")
    cache = spc.get("cache_dir")
    cache_dir = (base_dir / cache) if cache else None

    out = ctx.mapping(raw.get("output"), _OUT, "output")
    out_dir = base_dir / str(out.get("dir", "results"))
    reps_csv = out.get("reps_csv", False)
    if not isinstance(reps_csv, bool):
        ctx.fail("expected true or false", "output", "reps_csv")

    workers = raw.get("workers")
    if workers is not None:
        workers = ctx.positive_int(workers, "workers")

    try:
        scenarios = harness.scenario_grid(ns, pzs, py0s, excl, reps, B, methods, estimands,
                                          separation)
    except InvalidGrid as err:
        ctx.fail(str(err), "grid")
    return SimulationConfig(scenarios, augmentation, N, direction, cache_dir, out_dir, reps_csv,
                            workers, raw)


def load_config(path) -> SimulationConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err.strerror}") from None
    return parse_config(text, path.parent)


def dump_default() -> str:
    """A starter config reproducing one desk-scale cell."""
    doc: dict[str, Any] = {
        "grid": {"n": [1000], "pz": [0.5], "py0": [0.5]},
        "estimands": ["ATE"],
        "methods": list(DEFAULT_METHODS),
        "reps": 1000,
        "B": 500,
        "superpopulation": {"N": 1000000},
        "output": {"dir": "results", "reps_csv": False},
    }
    return yaml.safe_dump(doc, sort_keys=False)
