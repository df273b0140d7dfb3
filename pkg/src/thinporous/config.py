"""Run configuration: flat ``section.key = value`` text files and JSON output.

Example::

    # VTPM pipeline
    regime.delta = 0.5
    regime.gamma = 1
    regime.epsilon = 0.1
    geometry.shape = disk
    geometry.radius = 0.25
    geometry.n = 64
    domain.m = 32
    domain.force = manufactured
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Optional


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt(conv):
    def parse(text):
        return None if text.strip().lower() in ("", "none") else conv(text)
    return parse


def _choice(*options):
    def parse(text):
        t = text.strip()
        if t not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {t!r}")
        return t
    return parse


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: Any
    help: str


SCHEMA = {
    "regime.epsilon": Key(_opt(float), None, "film thickness eps in (0, 1)"),
    "regime.delta": Key(_opt(float), None, "perforation exponent (cylinder size eps^delta)"),
    "regime.gamma": Key(_opt(float), None, "Reynolds exponent (Re = eps^-gamma)"),
    "geometry.shape": Key(_choice("none", "disk", "ellipse", "rectangle"), "disk", "obstacle kind"),
    "geometry.cx": Key(float, 0.0, "obstacle centre x"),
    "geometry.cy": Key(float, 0.0, "obstacle centre y"),
    "geometry.radius": Key(float, 0.25, "disk radius"),
    "geometry.a": Key(float, 0.3, "ellipse semi-axis along the rotated x axis"),
    "geometry.b": Key(float, 0.15, "ellipse semi-axis along the rotated y axis"),
    "geometry.rotation_deg": Key(float, 0.0, "ellipse rotation in degrees"),
    "geometry.hx": Key(float, 0.3, "rectangle half-width in x"),
    "geometry.hy": Key(float, 0.1, "rectangle half-width in y"),
    "geometry.n": Key(int, 64, "cells per side of the unit cell"),
    "geometry.nz": Key(int, 16, "cells across z3 (PTPM only)"),
    "solver.rel_tol": Key(float, 1e-10, "relative residual tolerance"),
    "solver.max_iter": Key(_opt(int), None, "iteration cap (default 50 sqrt(dim), >= 10000)"),
    "solver.precond": Key(_choice("none", "jacobi"), "none", "preconditioner"),
    "domain.Lx": Key(float, 1.0, "macro domain length in x"),
    "domain.Ly": Key(float, 1.0, "macro domain length in y"),
    "domain.m": Key(int, 32, "macro cells in x"),
    "domain.my": Key(_opt(int), None, "macro cells in y (default: m)"),
    "domain.eta": Key(float, 1.0, "viscosity"),
    "domain.force": Key(_choice("constant", "zero", "manufactured"), "constant",
                        "body force: constant (fx, fy), zero, or manufactured (exact for isotropic K)"),
    "domain.fx": Key(float, 1.0, "constant force x component"),
    "domain.fy": Key(float, 0.0, "constant force y component"),
    "domain.k_json": Key(_opt(str), None, "permeability JSON written by the cell command"),
    "domain.regime": Key(_opt(_choice("HTPM", "PTPM", "VTPM")), None, "regime when K is given inline"),
    "domain.k11": Key(_opt(float), None, "inline permeability entries"),
    "domain.k12": Key(_opt(float), None, ""),
    "domain.k22": Key(_opt(float), None, ""),
    "output.dir": Key(str, ".", "output directory"),
    "output.fields": Key(_bool, False, "write CSV field dumps"),
}


class RunConfig(dict):
    """Validated flat key/value mapping with schema defaults filled in."""

    def __getattr__(self, name):
        # cfg.geometry.n style access
        prefix = name + "."
        if not any(k.startswith(prefix) for k in SCHEMA):
            raise AttributeError(name)
        return _Section(self, name)

    def explicit(self, key) -> bool:
        return key in self._given

    @classmethod
    def from_pairs(cls, pairs, source="<args>") -> "RunConfig":
        cfg = cls({k: v.default for k, v in SCHEMA.items()})
        cfg._given = set()
        for where, key, raw in pairs:
            where = where if isinstance(where, str) else f"{source}:{where}"
            if key not in SCHEMA:
                raise ConfigError(f"{where}: unknown key {key!r}")
            try:
                cfg[key] = SCHEMA[key].parse(raw)
            except ValueError as exc:
                raise ConfigError(f"{where}: bad value for {key}: {exc}") from None
            cfg._given.add(key)
        return cfg

    def updated(self, pairs, source="--set") -> "RunConfig":
        merged = [("<merged>", k, _unparse(v)) for k, v in self.items() if k in self._given]
        return RunConfig.from_pairs(merged + list(pairs), source)


def _unparse(v):
    return "none" if v is None else str(v)


class _Section:
    def __init__(self, cfg, name):
        self._cfg = cfg
        self._name = name

    def __getattr__(self, key):
        full = f"{self._name}.{key}"
        if full not in SCHEMA:
            raise AttributeError(full)
        return self._cfg[full]


def parse_lines(text: str, source="<config>"):
    pairs = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'section.key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key.count(".") != 1:
            raise ConfigError(f"{source}:{lineno}: key {key!r} must look like section.key")
        pairs.append((lineno, key, value))
    return pairs


def load_config(path: Optional[str] = None, overrides=()) -> RunConfig:
    pairs = []
    source = "<defaults>"
    if path is not None:
        source = str(path)
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        pairs = parse_lines(text, source)
    extra = []
    for i, item in enumerate(overrides, 1):
        if "=" not in item:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        k, v = item.split("=", 1)
        extra.append((f"--set #{i}", k.strip(), v.strip()))
    return RunConfig.from_pairs(pairs + extra, source)


def describe_schema() -> str:
    lines = []
    for k, v in SCHEMA.items():
        lines.append(f"{k:22s} default={v.default!r:10s} {v.help}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# JSON with 17 significant digits


def _fmt_float(x: float) -> str:
    if math.isnan(x) or math.isinf(x):
        raise ValueError("non-finite float cannot be written as JSON")
    s = format(x, ".17g")
    if "." not in s and "e" not in s and "n" not in s:
        s += ".0"
    return s


def dumps(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON text with every float printed to 17 significant digits."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if obj is None:
        return "null"
    if obj is True:
        return "true"
    if obj is False:
        return "false"
    if isinstance(obj, int) and not isinstance(obj, bool):
        return str(obj)
    if isinstance(obj, float):
        return _fmt_float(obj)
    if hasattr(obj, "dtype") and getattr(obj, "shape", None) == ():
        return dumps(obj.item(), indent, _level)
    if hasattr(obj, "tolist"):
        return dumps(obj.tolist(), indent, _level)
    if isinstance(obj, str):
        import json
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{dumps(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in obj):
            return "[" + ", ".join(dumps(v) for v in obj) + "]"
        items = [pad + dumps(v, indent, _level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    if hasattr(obj, "numerator"):  # Fraction
        return _fmt_float(float(obj))
    raise TypeError(f"cannot serialise {type(obj).__name__}")
