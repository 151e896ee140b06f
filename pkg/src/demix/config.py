"""Flat ``key = value`` experiment configuration files.

Blank lines and ``#`` comments are ignored, lists are comma-separated and
``--override key=value`` pairs are applied after the file, with the same
grammar. ``step_size`` and ``dst_lambda`` accept ``auto``.
"""
import os
from dataclasses import fields

from .bench import ExperimentSpec
from .errors import ConfigError, DemixError
from .model import NoiseSpec

__all__ = ["KEYS", "parse_text", "parse_override", "load_config", "build_spec", "dump_spec"]


def _int(v):
    return int(v)


def _float(v):
    return float(v)


def _auto_float(v):
    return None if v.lower() == "auto" else float(v)


def _str(v):
    return v


def _int_list(v):
    return tuple(int(x) for x in v.split(",") if x.strip())


def _str_list(v):
    return tuple(x.strip() for x in v.split(",") if x.strip())


def _bool(v):
    low = v.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean, got %r" % v)


# experiment fields, then keys only used by the `solve` command and the runner
KEYS = {
    "p": _int, "b": _int, "s": _int, "sample_grid": _int_list, "trials": _int,
    "link": _str, "design": _str, "basis_phi": _str, "basis_psi": _str,
    "noise": _str, "sigma": _float, "solvers": _str_list,
    "success_threshold": _float, "master_seed": _int, "step_size": _auto_float,
    "max_iters": _int, "stop_tol": _float, "init": _str, "dst_lambda": _auto_float,
    "dst_mode": _str, "step_probes": _int, "step_rule": _str,
    "n": _int, "trial": _int, "solver": _str, "record_timing": _bool,
}

_RUN_KEYS = ("n", "trial", "solver", "record_timing")


def parse_override(item):
    if "=" not in item:
        raise ConfigError(item, "override must have the form key=value")
    key, value = item.split("=", 1)
    return key.strip(), value.strip()


def parse_text(text, source="<config>"):
    """Raw ``{key: string}`` pairs from config text."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(line, "%s:%d: expected 'key = value'" % (source, lineno))
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def build_spec(raw):
    """Typed ``(ExperimentSpec, run_options)`` from raw string pairs."""
    values = {}
    for key, text in raw.items():
        if key not in KEYS:
            raise ConfigError(key, "unknown key")
        try:
            values[key] = KEYS[key](text)
        except ValueError as exc:
            raise ConfigError(key, "bad value %r (%s)" % (text, exc))
    run = {k: values.pop(k) for k in _RUN_KEYS if k in values}
    noise_kind = values.pop("noise", "none")
    sigma = values.pop("sigma", 0.0)
    try:
        values["noise"] = NoiseSpec(noise_kind, sigma)
    except DemixError as exc:
        raise ConfigError("sigma" if noise_kind == "none" else "noise", str(exc))
    spec_fields = {f.name for f in fields(ExperimentSpec)}
    assert set(values) <= spec_fields
    try:
        spec = ExperimentSpec(**values)
    except DemixError as exc:
        raise ConfigError(_guess_key(str(exc), values), str(exc))
    return spec, run


def _guess_key(message, values):
    head = message.split(":", 1)[0]
    if head in KEYS or head in ("noise", "sigma"):
        return head
    return "config"


def load_config(path, overrides=()):
    if not os.path.isfile(path):
        raise ConfigError("config", "file not found: %s" % path)
    with open(path) as fh:
        raw = parse_text(fh.read(), path)
    for item in overrides:
        key, value = parse_override(item)
        raw[key] = value
    return build_spec(raw)


def dump_spec(spec, run=None):
    """Config text that reproduces ``spec`` (and ``run`` options) exactly."""
    lines = []
    for f in fields(ExperimentSpec):
        value = getattr(spec, f.name)
        if f.name == "noise":
            lines.append("noise = %s" % value.kind)
            lines.append("sigma = %r" % value.sigma)
            continue
        if value is None:
            text = "auto"
        elif isinstance(value, tuple):
            text = ",".join(str(x) for x in value)
        else:
            text = repr(value) if isinstance(value, float) else str(value)
        lines.append("%s = %s" % (f.name, text))
    for key, value in (run or {}).items():
        lines.append("%s = %s" % (key, value))
    return "\n".join(lines) + "\n"
