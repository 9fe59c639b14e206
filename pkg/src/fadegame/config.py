"""Experiment configuration: a YAML document with a fixed schema.

Example::

    preset: example2
    variants: [full, direct]
    snr_db: [0, 5, 10]
    seed: 3
    solver: {max_picard: 100, eps: 0.001}

Unknown keys are rejected and every error names the offending field (and
its line when the file is YAML).
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .bayes import BayesParams, PowerLevels
from .channel import ChannelModel, Variant
from .pareto import AugLagParams
from .presets import PRESETS, preset, snr_to_budget
from .vi import SolveParams


class ConfigError(ValueError):
    """Invalid experiment configuration."""


MODEL_KEYS = {"n_users", "direct", "cross", "direct_probs", "cross_probs", "alpha",
              "direct_support", "cross_support"}
OBJECTIVE_KEYS = {"kind", "weights", "disagreement"}
LEVEL_KEYS = {"step", "top"}


@dataclass
class ExperimentConfig:
    preset: str | None = "example1"
    model: dict | None = None
    variants: list = field(default_factory=lambda: ["full", "incident", "direct"])
    snr_db: list = field(default_factory=lambda: [0.0, 5.0, 10.0, 15.0, 20.0])
    seed: int = 0
    out: str = "results"
    log_base: str = "e"
    jobs: int = 1
    solver: dict = field(default_factory=dict)
    pareto: dict = field(default_factory=dict)
    objective: dict = field(default_factory=lambda: {"kind": "weighted_sum"})
    bayes: dict = field(default_factory=dict)
    levels: dict = field(default_factory=lambda: {"step": 5.0, "top": 50.0})
    starts: int = 100
    max_iter: int = 100

    def __post_init__(self):
        validate(self)

    def solve_params(self) -> SolveParams:
        return SolveParams(**self.solver)

    def aug_params(self) -> AugLagParams:
        return AugLagParams(**self.pareto)

    def bayes_params(self) -> BayesParams:
        return BayesParams(**self.bayes)

    def power_levels(self, n_users: int) -> PowerLevels:
        return PowerLevels.grid(n_users, float(self.levels["step"]), float(self.levels["top"]))

    def build_model(self, snr_db: float) -> ChannelModel:
        if self.model is None:
            return preset(self.preset, snr_db)
        return model_from_spec(self.model, snr_to_budget(snr_db))

    def label(self) -> str:
        return self.preset if self.model is None else "custom"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _fail(field_name: str, msg: str, lines=None):
    where = f" (line {lines[field_name]})" if lines and field_name in lines else ""
    raise ConfigError(f"config field {field_name!r}{where}: {msg}")


def _number(name, value, lines=None) -> float:
    if isinstance(value, bool):
        _fail(name, f"expected a number, got {value!r}", lines)
    try:
        x = float(value)
    except (TypeError, ValueError):
        _fail(name, f"expected a number, got {value!r}", lines)
    if not math.isfinite(x):
        _fail(name, f"expected a finite number, got {value!r}", lines)
    return x


def _params_check(name, values, cls, lines):
    if not isinstance(values, dict):
        _fail(name, "expected a mapping", lines)
    known = {f.name: f for f in dataclasses.fields(cls)}
    for key, val in values.items():
        if key not in known:
            _fail(f"{name}.{key}", f"unknown parameter; expected one of {sorted(known)}", lines)
        default = known[key].default
        if isinstance(default, bool):
            if not isinstance(val, bool):
                _fail(f"{name}.{key}", f"expected true or false, got {val!r}", lines)
        elif isinstance(default, int):
            if isinstance(val, bool) or not isinstance(val, int):
                _fail(f"{name}.{key}", f"expected an integer, got {val!r}", lines)
        else:
            values[key] = _number(f"{name}.{key}", val, lines)
    try:
        cls(**values)
    except (TypeError, ValueError) as exc:
        _fail(name, str(exc), lines)


def validate(cfg: ExperimentConfig, lines=None) -> None:
    if cfg.model is None:
        if cfg.preset not in PRESETS:
            _fail("preset", f"unknown preset {cfg.preset!r}; choose from {list(PRESETS)}", lines)
    else:
        if not isinstance(cfg.model, dict):
            _fail("model", "expected a mapping", lines)
        bad = set(cfg.model) - MODEL_KEYS
        if bad:
            _fail(f"model.{sorted(bad)[0]}", f"unknown key; expected one of {sorted(MODEL_KEYS)}",
                  lines)
        try:
            model_from_spec(cfg.model, 1.0)
        except (TypeError, ValueError, KeyError) as exc:
            _fail("model", str(exc), lines)
    if isinstance(cfg.variants, str):
        cfg.variants = [cfg.variants]
    if not isinstance(cfg.variants, list) or not cfg.variants:
        _fail("variants", "expected a nonempty list", lines)
    for k, v in enumerate(cfg.variants):
        try:
            cfg.variants[k] = Variant.parse(v).value
        except ValueError as exc:
            _fail(f"variants[{k}]", str(exc), lines)
    if isinstance(cfg.snr_db, (int, float)) and not isinstance(cfg.snr_db, bool):
        cfg.snr_db = [cfg.snr_db]
    if not isinstance(cfg.snr_db, list) or not cfg.snr_db:
        _fail("snr_db", "the SNR grid must be a nonempty list", lines)
    cfg.snr_db = [_number(f"snr_db[{k}]", x, lines) for k, x in enumerate(cfg.snr_db)]
    for name in ("seed", "jobs", "starts", "max_iter"):
        val = getattr(cfg, name)
        if isinstance(val, bool) or not isinstance(val, int):
            _fail(name, f"expected an integer, got {val!r}", lines)
    if cfg.jobs < 1 or cfg.starts < 1 or cfg.max_iter < 1:
        _fail("jobs" if cfg.jobs < 1 else "starts" if cfg.starts < 1 else "max_iter",
              "must be at least 1", lines)
    if not isinstance(cfg.out, str) or not cfg.out:
        _fail("out", "expected a directory path", lines)
    cfg.log_base = str(cfg.log_base)
    if cfg.log_base not in ("e", "2"):
        _fail("log_base", f"expected 'e' or '2', got {cfg.log_base!r}", lines)
    _params_check("solver", cfg.solver, SolveParams, lines)
    _params_check("pareto", cfg.pareto, AugLagParams, lines)
    _params_check("bayes", cfg.bayes, BayesParams, lines)
    if not isinstance(cfg.objective, dict):
        _fail("objective", "expected a mapping", lines)
    bad = set(cfg.objective) - OBJECTIVE_KEYS
    if bad:
        _fail(f"objective.{sorted(bad)[0]}", "unknown key", lines)
    if cfg.objective.get("kind", "weighted_sum") not in ("weighted_sum", "nash_product"):
        _fail("objective.kind", "expected weighted_sum or nash_product", lines)
    for key in ("weights", "disagreement"):
        if cfg.objective.get(key) is not None:
            vals = cfg.objective[key]
            if not isinstance(vals, list):
                _fail(f"objective.{key}", "expected a list", lines)
            cfg.objective[key] = [_number(f"objective.{key}[{k}]", x, lines)
                                  for k, x in enumerate(vals)]
    if not isinstance(cfg.levels, dict) or set(cfg.levels) != LEVEL_KEYS:
        _fail("levels", "expected a mapping with keys step and top", lines)
    step = _number("levels.step", cfg.levels["step"], lines)
    top = _number("levels.top", cfg.levels["top"], lines)
    if step <= 0 or top < step:
        _fail("levels", "need 0 < step <= top", lines)
    cfg.levels = {"step": step, "top": top}


def model_from_spec(spec: dict, budget: float) -> ChannelModel:
    """Model from a config mapping, either symmetric or fully nested."""
    alpha = spec.get("alpha")
    if "direct_support" in spec:
        n = len(spec["direct_support"])
        return ChannelModel(
            direct_support=tuple(spec["direct_support"]),
            direct_probs=tuple(spec["direct_probs"]),
            cross_support=tuple(tuple(r) for r in spec["cross_support"]),
            cross_probs=tuple(tuple(r) for r in spec["cross_probs"]),
            budgets=np.full(n, budget), alpha=alpha)
    return ChannelModel.symmetric(int(spec["n_users"]), spec["direct"], spec["cross"], budget,
                                  direct_probs=spec.get("direct_probs"),
                                  cross_probs=spec.get("cross_probs"), alpha=alpha)


def _key_lines(text: str) -> dict:
    """Line number of every top-level and nested key, as dotted paths."""
    out = {}
    try:
        node = yaml.compose(text)
    except yaml.YAMLError:
        return out

    def walk(n, prefix):
        if isinstance(n, yaml.MappingNode):
            for k, v in n.value:
                name = f"{prefix}{k.value}"
                out[name] = k.start_mark.line + 1
                walk(v, name + ".")

    walk(node, "")
    return out


def parse_config(text: str) -> ExperimentConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}" if mark is not None else ""
        raise ConfigError(f"config is not valid YAML{where}: {exc}") from None
    data = {} if data is None else data
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping at the top level")
    lines = _key_lines(text)
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    for key in data:
        if key not in known:
            _fail(str(key), f"unknown field; expected one of {sorted(known)}", lines)
    if "model" in data and "preset" not in data:
        data["preset"] = None
    cfg = ExperimentConfig.__new__(ExperimentConfig)
    for f in dataclasses.fields(ExperimentConfig):
        if f.name in data:
            setattr(cfg, f.name, data[f.name])
        elif f.default is not dataclasses.MISSING:
            setattr(cfg, f.name, f.default)
        else:
            setattr(cfg, f.name, f.default_factory())
    validate(cfg, lines)
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {str(path)!r} does not exist")
    return parse_config(path.read_text())


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


def save_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(dump_config(cfg))
