"""Run configuration: INI files, typed schema, and command-line overrides.

A config is a small INI document with [model], [geometry], [method], and
[run] sections. Every key is declared in the schema below with a type
and a default; unknown sections or keys are rejected up front so a typo
cannot silently fall back to a default. Any key can be overridden on
the command line with --section.key=value, which keeps the resolved
config in the manifest authoritative for reruns.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass
from pathlib import Path

from .lattice import TorusGeometry, build_torus
from .model import ModelSpec


class ConfigError(ValueError):
    """Bad configuration input; the CLI maps this to its own exit code."""


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _parse_list(text: str, conv, what: str):
    parts = [p for chunk in text.split(",") for p in chunk.split()]
    try:
        return tuple(conv(p) for p in parts)
    except ValueError:
        raise ConfigError(f"expected {what}, got {text!r}") from None


def _parse_scalar(text: str, conv, what: str):
    try:
        return conv(text.strip())
    except ValueError:
        raise ConfigError(f"expected {what}, got {text!r}") from None


_CONVERTERS = {
    "int": lambda s: _parse_scalar(s, int, "an integer"),
    "float": lambda s: _parse_scalar(s, float, "a number"),
    "bool": _parse_bool,
    "str": lambda s: s.strip(),
    "ints": lambda s: _parse_list(s, int, "a list of integers"),
    "floats": lambda s: _parse_list(s, float, "a list of numbers"),
}

# section -> key -> (type name, default, optional choice set)
SCHEMA = {
    "model": {
        "family": ("str", "ising_ferro",
                   ("ising_ferro", "ising_antiferro", "hardcore")),
        "beta": ("float", 0.4, None),
        "h": ("float", 0.0, None),
        "rate_rule": ("str", "heat_bath", ("heat_bath", "metropolis")),
    },
    "geometry": {
        "d": ("int", 0, None),
        "sides": ("ints", (8,), None),
    },
    "method": {
        "t_grid": ("floats", (), None),
        "t_max": ("float", 0.0, None),
        "t_points": ("int", 48, None),
        "replicas": ("int", 2000, None),
        "eps": ("floats", (), None),
        "statistic": ("str", "magnetization",
                      ("magnetization", "product_blocks")),
        "stat_region_side": ("int", 0, None),
        "sweep_sides": ("ints", (), None),
        "r_list": ("ints", (), None),
        "block_side": ("int", 0, None),
        "halo_width": ("int", 0, None),
        "diameter_cap": ("int", 0, None),
        "linkage": ("int", 0, None),
        "count_cap": ("int", 0, None),
        "region": ("ints", (), None),
        "log_sobolev": ("bool", False, None),
        "synthetic": ("bool", False, None),
        "quick": ("bool", False, None),
    },
    "run": {
        "seed": ("int", 0, None),
        "output_dir": ("str", "", None),
        "workers": ("int", 0, None),
    },
}

OUTPUT_ENV_VAR = "CUTOFF_LAB_OUT"


@dataclass
class RunConfig:
    """Fully resolved, typed configuration for one command invocation."""

    subcommand: str
    model: dict
    geometry: dict
    method: dict
    run: dict

    def section(self, name: str) -> dict:
        return getattr(self, name)

    def model_spec(self) -> ModelSpec:
        m = self.model
        try:
            return ModelSpec(family=m["family"], beta=m["beta"], h=m["h"],
                             rate_rule=m["rate_rule"])
        except ValueError as e:
            raise ConfigError(str(e)) from None

    def torus(self) -> TorusGeometry:
        sides = self.resolved_sides()
        try:
            return build_torus(sides)
        except ValueError as e:
            raise ConfigError(str(e)) from None

    def resolved_sides(self) -> tuple:
        """Side list after applying the d/sides shorthand.

        A single side with d > 1 is replicated to a cube; otherwise d,
        when given, must match the number of sides.
        """
        d = self.geometry["d"]
        sides = tuple(self.geometry["sides"])
        if not sides:
            raise ConfigError("geometry.sides must not be empty")
        if d == 0:
            return sides
        if len(sides) == 1 and d > 1:
            return sides * d
        if len(sides) != d:
            raise ConfigError(
                f"geometry.d = {d} does not match {len(sides)} sides")
        return sides

    def dimension(self) -> int:
        return len(self.resolved_sides())

    def output_dir(self) -> Path:
        configured = self.run["output_dir"]
        if configured:
            return Path(configured)
        root = os.environ.get(OUTPUT_ENV_VAR, "cutoff-lab-out")
        return Path(root) / self.subcommand

    def workers(self) -> int:
        w = self.run["workers"]
        if w < 0:
            raise ConfigError("run.workers must be nonnegative")
        return w if w > 0 else min(8, os.cpu_count() or 1)

    def as_tree(self) -> dict:
        """Plain nested dict (lists, not tuples) for the manifest."""
        out = {}
        for sec in SCHEMA:
            vals = self.section(sec)
            out[sec] = {k: (list(v) if isinstance(v, tuple) else v)
                        for k, v in vals.items()}
        return out


def _convert(section: str, key: str, raw: str):
    if section not in SCHEMA:
        raise ConfigError(f"unknown config section [{section}]")
    if key not in SCHEMA[section]:
        known = ", ".join(sorted(SCHEMA[section]))
        raise ConfigError(
            f"unknown key {key!r} in [{section}] (known: {known})")
    typ, _, choices = SCHEMA[section][key]
    value = _CONVERTERS[typ](raw)
    if choices is not None and value not in choices:
        raise ConfigError(
            f"{section}.{key} must be one of {', '.join(choices)}; "
            f"got {value!r}")
    return value


def parse_overrides(pairs) -> list:
    """Split --section.key=value strings into (section, key, raw) triples."""
    out = []
    for item in pairs:
        head, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(
                f"override {item!r} must look like section.key=value")
        sec, dot, key = head.partition(".")
        if not dot or not sec or not key:
            raise ConfigError(
                f"override key {head!r} must look like section.key")
        out.append((sec.strip(), key.strip(), raw))
    return out


def load_config(path=None, overrides=(), subcommand: str = "") -> RunConfig:
    """Read the INI file (if any), apply overrides, and type-check."""
    values = {sec: {k: spec[1] for k, spec in keys.items()}
              for sec, keys in SCHEMA.items()}

    if path is not None:
        parser = configparser.ConfigParser(interpolation=None, strict=True)
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"cannot read config file: {e}") from None
        try:
            parser.read_string(text, source=str(path))
        except configparser.Error as e:
            raise ConfigError(f"malformed config: {e}") from None
        for section in parser.sections():
            for key, raw in parser.items(section):
                values.setdefault(section, {})
                if section not in SCHEMA:
                    raise ConfigError(f"unknown config section [{section}]")
                values[section][key] = _convert(section, key, raw)

    for sec, key, raw in parse_overrides(overrides):
        values[sec][key] = _convert(sec, key, raw)

    cfg = RunConfig(subcommand=subcommand, model=values["model"],
                    geometry=values["geometry"], method=values["method"],
                    run=values["run"])
    cfg.resolved_sides()
    cfg.model_spec()
    return cfg
