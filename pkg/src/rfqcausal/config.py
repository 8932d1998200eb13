"""INI configuration files for the command line.

Sections mirror the library dataclasses; keys are field names.  Values are
Python literals (``0.5``, ``(0.1, 0.3)``, ``[{"C": 1.0}]``) or bare
strings.  Nested fields are flattened: ``sep_loc`` / ``sep_scale`` /
``sep_shape`` / ``sep_asym`` under ``[params]``; sampler marginals are
``mean, sd[, floor]`` tuples under ``[sampler]``.
"""

from __future__ import annotations

import ast
import configparser
import dataclasses
from pathlib import Path

from .distributions import SepParams
from .simulator import FeatureSampler, GenerativeParams, HistoricalPolicy, InvalidConfig, Normal, ScenarioConfig

PRESETS = ("default", "confounded", "unconfounded")


def parse_value(text: str):
    try:
        return ast.literal_eval(text.strip())
    except (ValueError, SyntaxError):
        return text.strip()


def read_config(path: str | Path | None) -> dict:
    """Sections as dicts of parsed values; a missing path gives an empty config."""
    if path is None:
        return {}
    path = Path(path)
    if not path.is_file():
        raise InvalidConfig(f"config file {path} does not exist")
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise InvalidConfig(f"{path}: {exc}") from exc
    return {s: {k: parse_value(v) for k, v in cp[s].items()} for s in cp.sections()}


def _build(cls, values: dict, base=None):
    names = {fld.name for fld in dataclasses.fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise InvalidConfig(f"unknown {cls.__name__} keys {sorted(unknown)}")
    try:
        return dataclasses.replace(base, **values) if base is not None else cls(**values)
    except (TypeError, ValueError) as exc:
        raise InvalidConfig(f"{cls.__name__}: {exc}") from exc


def scenario_from_config(cfg: dict, seed: int | None = None) -> ScenarioConfig:
    from .causal import confounded_scenario

    sc = dict(cfg.get("scenario", {}))
    preset = sc.pop("preset", "default")
    if preset not in PRESETS:
        raise InvalidConfig(f"unknown scenario preset {preset!r}")
    base = ScenarioConfig() if preset == "default" else confounded_scenario(confounded=preset == "confounded")

    params = dict(cfg.get("params", {}))
    sep = {k[4:]: params.pop(k) for k in list(params) if k.startswith("sep_")}
    if sep:
        params["sep"] = SepParams(**{**base.params.sep.as_dict(), **sep})
    sampler = {k: Normal(*v) if isinstance(v, tuple) and k not in ("n_client",) else v
               for k, v in cfg.get("sampler", {}).items()}
    if "n_client" in params and "n_client" not in sampler:
        sampler["n_client"] = params["n_client"]
    changes = dict(sc)
    if "delta_grid" in changes:
        changes["delta_grid"] = tuple(changes["delta_grid"])
    if params:
        changes["params"] = _build(GenerativeParams, params, base.params)
    if sampler:
        changes["sampler"] = _build(FeatureSampler, sampler, base.sampler)
    if cfg.get("policy"):
        changes["policy"] = _build(HistoricalPolicy, cfg["policy"], base.policy)
    if seed is not None:
        changes["seed"] = seed
    return _build(ScenarioConfig, changes, base)


def section(cfg: dict, name: str, cls=None, **overrides):
    """A section as a dict, or built into ``cls`` when given."""
    values = {**cfg.get(name, {}), **{k: v for k, v in overrides.items() if v is not None}}
    return values if cls is None else _build(cls, values)
