"""Experiment configuration in INI format.

Example::

    [model]
    kind = BlackScholes
    mu = 0.05
    sigma = 0.2

    [grid]
    T = 1.0
    n_steps = 1024
    refinement_levels = 3

    [mc]
    n_paths = 2000
    master_seed = 7

    [tasks]
    run = characteristics, deflators, strategies, classify

    [output]
    dir = out
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field

from .classifier import Thresholds
from .errors import ValidationError
from .evidence import MIN_STAT_PATHS, RunSettings
from .models import MODEL_KINDS

TASKS = ("characteristics", "deflators", "strategies", "classify")
STATISTICAL_TASKS = ("deflators", "strategies", "classify")
RESERVED_SECTIONS = ("manifest", "files")


@dataclass(frozen=True)
class StrategySettings:
    """Parameters of the strategy experiments."""

    eps_zero_c: float = 1.0
    k_const: float = 3.0
    combination_terms: int = 32
    profit_levels: tuple = (1.0, 2.0, 4.0, 8.0)
    approx_levels: tuple = (4.0, 16.0, 64.0)
    bridge_depth: int = 36
    bridge_substeps: int = 500
    bridge_start: float = 0.25
    bridge_paths: int = 1000
    tol_floor: float = 1e-10


@dataclass(frozen=True)
class ExperimentConfig:
    """A validated experiment."""

    model: object
    settings: RunSettings
    tasks: tuple
    output_dir: str = "arbspec-out"
    thresholds: Thresholds = field(default_factory=Thresholds)
    strategies: StrategySettings = field(default_factory=StrategySettings)

    def validate(self):
        if not self.tasks:
            raise ValidationError("tasks must not be empty")
        unknown = [t for t in self.tasks if t not in TASKS]
        if unknown:
            raise ValidationError(f"unknown tasks {unknown}; choose from {list(TASKS)}")
        self.model.validate()
        statistical = any(t in STATISTICAL_TASKS for t in self.tasks)
        self.settings.validate(statistical=statistical)
        if "classify" in self.tasks and self.settings.levels < 3:
            raise ValidationError("classify needs refinement_levels >= 3")
        if statistical and self.strategies.bridge_paths < MIN_STAT_PATHS and "strategies" in self.tasks:
            raise ValidationError(f"bridge_paths must be at least {MIN_STAT_PATHS}")
        return self

    def with_overrides(self, seed=None, output_dir=None, tasks=None):
        settings = self.settings if seed is None else dataclasses.replace(self.settings, master_seed=seed)
        return dataclasses.replace(
            self, settings=settings,
            output_dir=self.output_dir if output_dir is None else str(output_dir),
            tasks=self.tasks if tasks is None else tuple(tasks)).validate()


def _split(text):
    return tuple(t.strip() for t in text.replace(";", ",").split(",") if t.strip())


def _number(key, text):
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        raise ValidationError(f"{key}: expected a number, got {text!r}") from None


_GRID_KEYS = {"T": "horizon", "n_steps": "n_steps", "refinement_levels": "levels",
              "depth": "depth", "substeps": "substeps"}
_MC_KEYS = {"n_paths": "n_paths", "master_seed": "master_seed", "nu_paths": "nu_paths",
            "nu_steps": "nu_steps", "workers": "workers"}
_SETTINGS_THRESHOLDS = ("rho_div", "consecutive", "k_cap", "z_floor")


def _coerce(cls, name, text):
    ftype = {f.name: f.type for f in dataclasses.fields(cls)}[name]
    if ftype == "tuple":
        return tuple(float(_number(name, t)) for t in _split(text))
    val = _number(name, text)
    return int(val) if ftype == "int" else float(val)


def parse_config(text):
    """Parse INI text into a validated :class:`ExperimentConfig`."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ValidationError(f"malformed config: {exc}") from None
    known = {"model", "grid", "mc", "tasks", "thresholds", "strategies", "output", *RESERVED_SECTIONS}
    extra = [s for s in cp.sections() if s not in known]
    if extra:
        raise ValidationError(f"unknown sections {extra}")
    if not cp.has_section("model") or "kind" not in cp["model"]:
        raise ValidationError("[model] kind is required")
    kind = cp["model"]["kind"].strip()
    if kind not in MODEL_KINDS or kind == "Diffusion":
        raise ValidationError(f"unknown model kind {kind!r}")
    cls = MODEL_KINDS[kind]
    fields = {f.name for f in dataclasses.fields(cls)}
    params = {}
    for key, val in cp["model"].items():
        if key == "kind":
            continue
        if key not in fields:
            raise ValidationError(f"[model] {kind} has no parameter {key!r}")
        params[key] = float(_number(key, val))
    model = cls(**params)

    s_kw = {}
    for section, mapping in (("grid", _GRID_KEYS), ("mc", _MC_KEYS)):
        if cp.has_section(section):
            for key, val in cp[section].items():
                if key not in mapping:
                    raise ValidationError(f"[{section}] unknown key {key!r}")
                s_kw[mapping[key]] = _coerce(RunSettings, mapping[key], val)
    t_kw, st_kw = {}, {}
    if cp.has_section("thresholds"):
        t_fields = {f.name for f in dataclasses.fields(Thresholds)}
        for key, val in cp["thresholds"].items():
            if key in _SETTINGS_THRESHOLDS:
                s_kw[key] = _coerce(RunSettings, key, val)
            elif key in t_fields:
                t_kw[key] = _coerce(Thresholds, key, val)
            elif key in ("eps_zero_c", "tol_floor"):
                st_kw[key] = _coerce(StrategySettings, key, val)
            else:
                raise ValidationError(f"[thresholds] unknown key {key!r}")
    if cp.has_section("strategies"):
        st_fields = {f.name for f in dataclasses.fields(StrategySettings)}
        for key, val in cp["strategies"].items():
            if key not in st_fields:
                raise ValidationError(f"[strategies] unknown key {key!r}")
            st_kw[key] = _coerce(StrategySettings, key, val)
    if not cp.has_section("tasks") or "run" not in cp["tasks"]:
        raise ValidationError("[tasks] run is required")
    tasks = _split(cp["tasks"]["run"])
    out = cp["output"].get("dir", "arbspec-out") if cp.has_section("output") else "arbspec-out"
    cfg = ExperimentConfig(model, RunSettings(**s_kw), tasks, out,
                           Thresholds(**t_kw), StrategySettings(**st_kw))
    return cfg.validate()


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def _fmt(v):
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def config_sections(cfg):
    """The configuration as ``{section: {key: text}}``, parseable by :func:`parse_config`."""
    model = {"kind": cfg.model.kind}
    model.update({k: _fmt(v) for k, v in cfg.model.params().items()})
    s = cfg.settings
    grid = {k: _fmt(getattr(s, attr)) for k, attr in _GRID_KEYS.items()}
    mc = {k: _fmt(getattr(s, attr)) for k, attr in _MC_KEYS.items()}
    th = {k: _fmt(getattr(s, k)) for k in _SETTINGS_THRESHOLDS}
    th.update({f.name: _fmt(getattr(cfg.thresholds, f.name)) for f in dataclasses.fields(Thresholds)})
    strat = {f.name: _fmt(getattr(cfg.strategies, f.name)) for f in dataclasses.fields(StrategySettings)}
    return {"model": model, "grid": grid, "mc": mc, "tasks": {"run": ", ".join(cfg.tasks)},
            "thresholds": th, "strategies": strat, "output": {"dir": cfg.output_dir}}
