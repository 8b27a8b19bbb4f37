"""Declarative run configuration (YAML) to and from the harness dataclasses.

Unknown keys are errors. Error messages carry the dotted field path and, when
the value came from a file, its line number.
"""
from __future__ import annotations

import dataclasses
import logging
import types
import typing
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Union

import yaml

from .harness import (ExperimentError, ExperimentSpec, GridConfig, InitialState,
                      IntegratorSettings, LadderConfig, LinearLimitConfig, PotentialConfig,
                      SubsystemConfig, TermConfig, Thresholds, Units, VariantConfig)

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    experiments: tuple[ExperimentSpec, ...] = ()
    units: Units = Units()
    output_dir: str = "results"
    seed: int = 0
    verbosity: str = "info"
    workers: int = 1


# --------------------------------------------------------------------------
# YAML loading with line numbers
# --------------------------------------------------------------------------

class _LineDict(dict):
    lines: dict
    line: int = 0


class _LineLoader(yaml.SafeLoader):
    pass


def _construct_mapping(loader, node, deep=False):
    loader.flatten_mapping(node)
    out = _LineDict()
    out.lines = {}
    out.line = node.start_mark.line + 1
    for key_node, value_node in node.value:
        key = loader.construct_object(key_node, deep=True)
        out[key] = loader.construct_object(value_node, deep=True)
        out.lines[key] = key_node.start_mark.line + 1
    return out


_LineLoader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_mapping)


def load_yaml(text: str) -> Any:
    try:
        return yaml.load(text, Loader=_LineLoader)
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed configuration: {exc}") from None


# --------------------------------------------------------------------------
# typed conversion
# --------------------------------------------------------------------------

def _where(path: str, line: int | None) -> str:
    return f"{path} (line {line})" if line else path


def _is_optional(tp) -> tuple[bool, Any]:
    origin = typing.get_origin(tp)
    if origin in (Union, types.UnionType):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if len(args) == 1:
            return True, args[0]
    return False, tp


def _convert(tp, value, path: str, line: int | None):
    optional, tp = _is_optional(tp)
    if value is None:
        if optional:
            return None
        raise ConfigError(f"{_where(path, line)}: value required")
    origin = typing.get_origin(tp)
    if dataclasses.is_dataclass(tp):
        return from_mapping(tp, value, path, line)
    if origin is tuple:
        args = typing.get_args(tp)
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{_where(path, line)}: expected a list, got {value!r}")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_convert(args[0], v, f"{path}[{i}]", line) for i, v in enumerate(value))
        if len(value) != len(args):
            raise ConfigError(f"{_where(path, line)}: expected {len(args)} entries")
        return tuple(_convert(a, v, f"{path}[{i}]", line) for i, (a, v) in enumerate(zip(args, value)))
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{_where(path, line)}: expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{_where(path, line)}: expected an integer, got {value!r}")
        return value
    if tp is float:
        # YAML 1.1 reads 1e-3 (no dot) as a string
        if isinstance(value, bool):
            raise ConfigError(f"{_where(path, line)}: expected a number, got {value!r}")
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{_where(path, line)}: expected a number, got {value!r}") from None
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{_where(path, line)}: expected a string, got {value!r}")
        return value
    raise ConfigError(f"{_where(path, line)}: unsupported field type {tp!r}")


def from_mapping(cls, data, path: str = "", line: int | None = None):
    """Build dataclass ``cls`` from a mapping; unknown keys raise."""
    if isinstance(data, cls):
        return data
    if not isinstance(data, dict):
        raise ConfigError(f"{_where(path or cls.__name__, line)}: expected a mapping, got {data!r}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    lines = getattr(data, "lines", {})
    for key in data:
        if key not in names:
            raise ConfigError(f"{_where(f'{path}.{key}' if path else str(key), lines.get(key))}: "
                              f"unknown key {key!r} (allowed: {', '.join(sorted(names))})")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name in data:
            sub = f"{path}.{f.name}" if path else f.name
            kwargs[f.name] = _convert(hints[f.name], data[f.name], sub, lines.get(f.name, line))
    missing = [f.name for f in dataclasses.fields(cls)
               if f.name not in kwargs and f.default is dataclasses.MISSING
               and f.default_factory is dataclasses.MISSING]
    if missing:
        raise ConfigError(f"{_where(path or cls.__name__, getattr(data, 'line', line))}: "
                          f"missing required key(s) {', '.join(missing)}")
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{_where(path or cls.__name__, getattr(data, 'line', line))}: {exc}") from None


def to_plain(obj):
    """Dataclasses and tuples to dicts and lists (YAML/JSON friendly)."""
    if dataclasses.is_dataclass(obj):
        return {f.name: to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    return obj


def spec_to_dict(spec: ExperimentSpec) -> dict:
    return to_plain(spec)


def spec_from_dict(data: dict, path: str = "experiment") -> ExperimentSpec:
    return from_mapping(ExperimentSpec, data, path)


def run_config_to_dict(cfg: RunConfig) -> dict:
    out = to_plain(cfg)
    # units and seed live at top level; experiments carry copies
    for exp in out["experiments"]:
        exp.pop("units", None)
        exp.pop("seed", None)
    return out


# --------------------------------------------------------------------------
# run config
# --------------------------------------------------------------------------

def parse_config_data(data, source: str = "<config>") -> RunConfig:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    lines = getattr(data, "lines", {})
    allowed = {f.name for f in dataclasses.fields(RunConfig)}
    for key in data:
        if key not in allowed:
            raise ConfigError(f"{source}: {_where(str(key), lines.get(key))}: unknown key {key!r} "
                              f"(allowed: {', '.join(sorted(allowed))})")
    top = {k: v for k, v in data.items() if k != "experiments"}
    if isinstance(data, _LineDict):
        top = _LineDict(top)
        top.lines, top.line = lines, data.line
    base = from_mapping(RunConfig, top, "")
    raw = data.get("experiments") or []
    if not isinstance(raw, list):
        raise ConfigError(f"{source}: {_where('experiments', lines.get('experiments'))}: expected a list")
    experiments = []
    for i, entry in enumerate(raw):
        path = f"experiments[{i}]"
        if isinstance(entry, dict) and ("units" in entry or "seed" in entry):
            bad = "units" if "units" in entry else "seed"
            raise ConfigError(f"{source}: {_where(path + '.' + bad, getattr(entry, 'lines', {}).get(bad))}: "
                              f"unknown key {bad!r} ({bad} is set at top level)")
        spec = from_mapping(ExperimentSpec, entry, path, getattr(entry, "line", None))
        spec = dataclasses.replace(spec, units=base.units, seed=base.seed)
        try:
            spec.validate()
        except ExperimentError as exc:
            raise ConfigError(f"{source}: {_where(path, getattr(entry, 'line', None))}: {exc}") from None
        experiments.append(spec)
    names = [e.name for e in experiments]
    dupes = {n for n in names if names.count(n) > 1}
    if dupes:
        raise ConfigError(f"{source}: duplicate experiment names {sorted(dupes)}")
    return dataclasses.replace(base, experiments=tuple(experiments))


def parse_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"configuration file not found: {path}")
    return parse_config_data(load_yaml(path.read_text()), str(path))


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(run_config_to_dict(cfg), sort_keys=False)
