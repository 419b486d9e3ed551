"""Run configuration: YAML files, ``NSPLAN_`` environment overrides and the effective-config echo."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .conditioning import ConditioningConfig
from .kbm import KbmParams
from .rules import ArbitrationConfig
from .scenarios import TEMPLATES, ScenarioSpec, named_suite
from .training import TrainConfig

ENV_PREFIX = "NSPLAN_"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    kbm: KbmParams = field(default_factory=KbmParams)
    arbitration: ArbitrationConfig = field(default_factory=ArbitrationConfig)
    conditioning: ConditioningConfig = field(default_factory=ConditioningConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    generator: str = "template"
    suite: str = "default"          # built-in suite name or path to a suite file
    train_suite: str = "train"
    seed: int = 0
    weights: str | None = None      # checkpoint; trained from scratch when absent
    ablate: list = field(default_factory=list)
    out: str = "runs/latest"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_SECTIONS = {"kbm": KbmParams, "arbitration": ArbitrationConfig, "conditioning": ConditioningConfig,
             "training": TrainConfig}


def _build(cls, values: dict, where: str):
    if not isinstance(values, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(values).__name__}")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {sorted(unknown)}")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def from_dict(raw: dict) -> RunConfig:
    raw = dict(raw or {})
    top = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(raw) - top
    if unknown:
        raise ConfigError(f"unknown top-level key(s) {sorted(unknown)}")
    kwargs = {}
    for name, cls in _SECTIONS.items():
        if name in raw:
            base = dataclasses.asdict(cls())
            base.update(raw.pop(name) or {})
            kwargs[name] = _build(cls, base, name)
    for key in ("seed",):
        if key in raw and not isinstance(raw[key], int):
            raise ConfigError(f"{key}: expected an integer")
    if "ablate" in raw and raw["ablate"] is None:
        raw["ablate"] = []
    kwargs.update(raw)
    return RunConfig(**kwargs)


def _set_path(d: dict, path: list[str], value) -> None:
    for key in path[:-1]:
        d = d.setdefault(key, {})
        if not isinstance(d, dict):
            raise ConfigError(f"cannot override inside non-mapping at {'.'.join(path)}")
    d[path[-1]] = value


def env_overrides(environ=None) -> dict:
    """``NSPLAN_KBM__DT=0.25`` becomes ``{"kbm": {"dt": 0.25}}``; values are parsed as YAML scalars."""
    environ = os.environ if environ is None else environ
    out: dict = {}
    for key in sorted(environ):
        if not key.startswith(ENV_PREFIX):
            continue
        path = [p.lower() for p in key[len(ENV_PREFIX):].split("__") if p]
        if not path:
            continue
        _set_path(out, path, yaml.safe_load(environ[key]))
    return out


def _merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path=None, overrides: dict | None = None, environ=None) -> RunConfig:
    """File values, then environment, then explicit overrides (highest precedence)."""
    raw: dict = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            raw = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    raw = _merge(raw, env_overrides(environ))
    raw = _merge(raw, {k: v for k, v in (overrides or {}).items() if v is not None})
    return from_dict(raw)


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True)


def load_suite(name_or_path: str, seed: int = 0) -> list[ScenarioSpec]:
    """A built-in suite name or a YAML file listing ``{template, params, seed[, count]}`` entries."""
    path = Path(name_or_path)
    if not path.exists():
        try:
            return named_suite(name_or_path, seed)
        except ValueError as exc:
            raise ConfigError(f"suite {name_or_path!r} is neither a file nor a built-in suite") from exc
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot load suite {path}: {exc}") from exc
    entries = raw.get("scenarios") if isinstance(raw, dict) else raw
    if not isinstance(entries, list) or not entries:
        raise ConfigError(f"{path}: expected a non-empty list of scenarios")
    specs = []
    for n, e in enumerate(entries):
        if not isinstance(e, dict) or "template" not in e:
            raise ConfigError(f"{path}: entry {n} needs a template")
        if e["template"] not in TEMPLATES:
            raise ConfigError(f"{path}: entry {n}: unknown template {e['template']!r}")
        extra = set(e) - {"template", "params", "seed", "count"}
        if extra:
            raise ConfigError(f"{path}: entry {n}: unknown key(s) {sorted(extra)}")
        base_seed = int(e.get("seed", n))
        for k in range(int(e.get("count", 1))):
            specs.append(ScenarioSpec(e["template"], dict(e.get("params") or {}), base_seed + k))
    return specs
