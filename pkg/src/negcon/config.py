"""Flat ``key = value`` configuration files.

Model keys are the :class:`~negcon.core.ModelConfig` field names. Keys
starting with ``sim.`` configure the simulator; coefficient maps use a
further dotted level, e.g. ``sim.theta1.z = 0.35`` or ``sim.law.trait_sd =
4``. List values are comma separated. Later sources override earlier ones:
defaults, then the file, then command-line ``--set`` pairs and flags.
"""

from __future__ import annotations

import configparser
import dataclasses

from .core import ModelConfig
from .errors import ConfigError
from .simulation import CovariateLaw, SimConfig

_SECTION = "config"
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}
RUN_KEYS = {"strata": "1,2,3", "bootstrap": "0", "bootstrap_seed": "0"}


def parse_config_text(text: str, source="<config>") -> dict:
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",),
                                       comment_prefixes=("#", ";"), inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string(f"[{_SECTION}]\n" + text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {source}: {exc}") from None
    return dict(parser[_SECTION])


def load_config(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from None
    return parse_config_text(text, str(path))


def parse_overrides(pairs) -> dict:
    out = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _bool(key, value):
    v = str(value).strip().lower()
    if v in _TRUE:
        return True
    if v in _FALSE:
        return False
    raise ConfigError(f"{key}: expected a boolean, got {value!r}")


def _number(key, value, kind=float):
    try:
        return kind(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected {'an integer' if kind is int else 'a number'}, "
                          f"got {value!r}") from None


def _floats(key, value):
    return tuple(_number(key, v.strip()) for v in str(value).split(",") if v.strip())


def _convert(key, field, value):
    default = field.default
    if isinstance(default, bool):
        return _bool(key, value)
    if isinstance(default, int) or field.name in ("n_observed",):
        return None if str(value).lower() in ("", "none") else _number(key, value, int)
    if isinstance(default, float):
        return _number(key, value)
    return value


def model_config(values: dict) -> ModelConfig:
    """ModelConfig from the non-``sim.`` keys; unknown keys are rejected."""
    fields = {f.name: f for f in dataclasses.fields(ModelConfig)}
    kwargs = {}
    for key, value in values.items():
        if key.startswith("sim.") or key in RUN_KEYS:
            continue
        if key not in fields:
            raise ConfigError(f"unknown configuration key {key!r}")
        kwargs[key] = _convert(key, fields[key], value)
    return ModelConfig(**kwargs)


def run_options(values: dict) -> dict:
    merged = {**RUN_KEYS, **{k: v for k, v in values.items() if k in RUN_KEYS}}
    strata = tuple(_number("strata", s.strip(), int) for s in merged["strata"].split(",") if s.strip())
    if not strata or any(s not in (1, 2, 3) for s in strata):
        raise ConfigError("strata must be a comma-separated subset of 1,2,3")
    bootstrap = _number("bootstrap", merged["bootstrap"], int)
    if bootstrap < 0:
        raise ConfigError("bootstrap must be non-negative")
    return {"strata": strata, "bootstrap": bootstrap,
            "bootstrap_seed": _number("bootstrap_seed", merged["bootstrap_seed"], int)}


def sim_config(values: dict, model: ModelConfig) -> SimConfig | None:
    """SimConfig from the ``sim.`` keys, or None when there are none.

    The simulated outcome link follows the model's ``link`` unless
    ``sim.link`` is given.
    """
    sim = {k[4:]: v for k, v in values.items() if k.startswith("sim.")}
    if not sim:
        return None
    fields = {f.name: f for f in dataclasses.fields(SimConfig)}
    law_fields = {f.name: f for f in dataclasses.fields(CovariateLaw)}
    kwargs = {"link": model.link}
    maps = {"eta": {}, "theta1": {}, "theta2": {}, "beta_c": {}}
    gamma = [{}, {}, {}]
    law = {}
    for key, value in sim.items():
        full = f"sim.{key}"
        head, _, rest = key.partition(".")
        if rest:
            if head in maps:
                maps[head][rest] = _number(full, value)
            elif head in ("gamma1", "gamma2", "gamma3"):
                gamma[int(head[-1]) - 1][rest] = _number(full, value)
            elif head == "law" and rest in law_fields:
                law[rest] = _number(full, value)
            else:
                raise ConfigError(f"unknown configuration key {full!r}")
        elif key in ("alpha", "beta0", "beta_a"):
            vals = _floats(full, value)
            kwargs[key] = vals[0] if len(vals) == 1 and key != "alpha" else vals
        elif key in ("mechanism", "link", "outcome_family"):
            kwargs[key] = value
        elif key in fields and key not in maps and key not in ("gamma", "law"):
            kwargs[key] = _convert(full, fields[key], value)
        else:
            raise ConfigError(f"unknown configuration key {full!r}")
    kwargs.update({k: v for k, v in maps.items() if v})
    if any(gamma):
        kwargs["gamma"] = tuple(gamma)
    if law:
        kwargs["law"] = CovariateLaw(**law)
    try:
        return SimConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
