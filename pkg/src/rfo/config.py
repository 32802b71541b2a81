"""Experiment configuration: TOML/JSON files, environment overrides and defaults.

Precedence, highest first: command-line flags, ``RFO_*`` environment
variables, the config file, built-in defaults. Environment variables of the
form ``RFO_<SECTION>__<KEY>`` (for example ``RFO_MODEL__EPS=0.25``) override
single fields; the value is read as a TOML literal when possible, else as a
string.
"""

from __future__ import annotations

import copy
import json
import os
import re
import sys
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

ENV_PREFIX = "RFO_"


class ConfigError(ValueError):
    """Invalid configuration; ``path`` is the dotted field path, ``line`` 1-based if known."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None, source: str | None = None):
        self.path = path
        self.line = line
        self.source = source
        where = ""
        if source:
            where += f"{source}"
            if line:
                where += f":{line}"
            where += ": "
        elif line:
            where += f"line {line}: "
        field_part = f"{path}: " if path else ""
        super().__init__(f"{where}{field_part}{message}")


REQUIRED = object()

# section -> key -> (type, default); types: int, float, bool, str, "floats", "ints", "int_lists"
SCHEMA: dict[str, dict[str, tuple]] = {
    "lattice": {"d": (int, REQUIRED), "N": (int, REQUIRED), "periodic": (bool, False)},
    "model": {
        "n": (int, 2),
        "k": (int, 1),
        "eps": (float, 0.5),
        "beta": (float, 1.0),
        "coupling": (float, 1.0),
        "gamma": (float, 0.25),
        "ell": (int, None),
        "L": (int, None),
        "xi": (float, 0.3),
        "delta": (float, None),
        "dist": (str, "gaussian"),
    },
    "model.boundary": {"kind": (str, "field"), "vector": ("floats", None), "strength": (float, 1.0)},
    "chain": {
        "therm_sweeps": (int, 500),
        "meas_sweeps": (int, 2000),
        "stride": (int, 1),
        "width": (float, 1.0),
        "tune": (bool, True),
        "target_acceptance": (float, 0.5),
        "overrelax": (int, 0),
        "checkerboard": (bool, False),
        "init": (str, "ordered"),
        "observables": ("strs", ["m_par", "p_norm_sq", "energy_density"]),
        "z": ("ints", None),
        "block_eps": (float, None),
    },
    "experiment": {"seed": (int, 0), "realizations": (int, 8), "chains": (int, 1), "trend_sigma": (float, 5.0)},
    "sweep": {"parameter": (str, None), "values": ("floats", None)},
    "groundstate": {"starts": (int, 4), "realization": (int, 0), "tol": (float, 1e-8), "max_sweeps": (int, 100_000)},
    "contours": {
        "snapshot": (str, None),
        "disorder": (str, None),
        "realization": (int, 0),
        "factor": (float, 1.0),
        "surgery": (bool, True),
    },
    "oracle": {
        "shapes": ("int_lists", [[2, 2]]),
        "betas": ("floats", [0.5, 2.0]),
        "eps_values": ("floats", [0.0, 0.5]),
        "seeds": ("ints", [0, 1, 2]),
        "sweeps": (int, 40_000),
        "therm_sweeps": (int, 2_000),
        "points": (int, 64),
        "block_eps": (float, 0.5),
        "nsigma": (float, 3.0),
        "min_fraction": (float, 0.95),
    },
    "gaussian": {
        "N": (int, 8),
        "eps_values": ("floats", [0.0, 0.3]),
        "beta": (float, 1.0),
        "draws": (int, 10_000),
        "nsigma": (float, 3.0),
        "min_fraction": (float, 0.95),
        "gradient_N": ("ints", [8, 16, 32]),
        "gradient_eps": (float, 0.3),
    },
}

# sections whose [lattice] block is optional for the given command
LATTICE_OPTIONAL = {"oracle-check", "gaussian-check", "contours"}


def _key_line(text: str, path: list[str], fmt: str) -> int | None:
    """Best-effort 1-based line of a dotted key (or its section) in the source text."""
    lines = text.splitlines()
    if fmt == "toml":
        section = ".".join(path[:-1])
        key = path[-1]
        current = ""
        header_line = None
        for i, raw in enumerate(lines, 1):
            s = raw.strip()
            m = re.match(r"^\[\s*([A-Za-z0-9_.\-\s]+?)\s*\]", s)
            if m:
                current = re.sub(r"\s+", "", m.group(1))
                if current == section:
                    header_line = i
                continue
            if current == section and re.match(rf"^\"?{re.escape(key)}\"?\s*=", s):
                return i
        if header_line is None and path:
            full = ".".join(path)
            for i, raw in enumerate(lines, 1):
                if re.match(rf"^\[\s*{re.escape(full)}\s*\]", raw.strip()):
                    return i
        return header_line
    # json: walk the keys in order
    pos = 0
    found = None
    for key in path:
        m = re.compile(rf'"{re.escape(key)}"\s*:').search(text, pos)
        if not m:
            break
        pos = m.end()
        found = text.count("\n", 0, m.start()) + 1
    return found


def parse_text(text: str, fmt: str, source: str | None = None) -> dict:
    try:
        if fmt == "toml":
            return tomllib.loads(text)
        data = json.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(f"TOML syntax error: {exc}", line=int(m.group(1)) if m else None, source=source) from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"JSON syntax error: {exc.msg}", line=exc.lineno, source=source) from None
    if not isinstance(data, dict):
        raise ConfigError("top level must be a table/object", source=source)
    return data


def load_file(path) -> tuple[dict, str, str]:
    """Parse a config file; returns ``(data, text, fmt)``."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", source=str(path)) from None
    fmt = "json" if path.suffix.lower() == ".json" else "toml"
    return parse_text(text, fmt, str(path)), text, fmt


def _flatten(data: dict, prefix: str = "") -> dict[str, object]:
    out = {}
    for k, v in data.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _coerce(value, kind):
    """Check and convert one value; raises ``TypeError`` with the expectation."""

    def bad(expect):
        return TypeError(f"expected {expect}, got {type(value).__name__} {value!r}")

    if value is None:
        return None
    if kind is bool:
        if not isinstance(value, bool):
            raise bad("a boolean")
        return value
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise bad("an integer")
        return value
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise bad("a number")
        return float(value)
    if kind is str:
        if not isinstance(value, str):
            raise bad("a string")
        return value
    if not isinstance(value, list):
        raise bad("a list")
    if kind == "floats":
        return [_coerce(v, float) for v in value]
    if kind == "ints":
        return [_coerce(v, int) for v in value]
    if kind == "strs":
        return [_coerce(v, str) for v in value]
    if kind == "int_lists":
        return [_coerce(v, "ints") for v in value]
    raise AssertionError(kind)


def _env_overrides(environ) -> dict[str, object]:
    out = {}
    for name, raw in environ.items():
        if not name.startswith(ENV_PREFIX) or "__" not in name:
            continue
        section, _, key = name[len(ENV_PREFIX) :].partition("__")
        # keys are case sensitive in the schema (N, L); match case-insensitively
        sec = section.lower()
        keys = SCHEMA.get(sec, {})
        match = next((k for k in keys if k.lower() == key.lower()), key)
        path = f"{sec}.{match}"
        try:
            value = tomllib.loads(f"v = {raw}")["v"]
        except tomllib.TOMLDecodeError:
            value = raw
        out[path] = value
    return out


def resolve(
    data: dict | None = None,
    text: str = "",
    fmt: str = "toml",
    source: str | None = None,
    command: str = "simulate",
    environ=None,
    overrides: dict[str, object] | None = None,
) -> dict:
    """Merge defaults, file data, environment and flag overrides; validate everything.

    Returns a nested dict with every schema field present. Unknown fields
    and missing required fields raise ``ConfigError`` naming the field path
    (and the source line when it can be located).
    """
    data = copy.deepcopy(data or {})
    environ = os.environ if environ is None else environ
    flat = _flatten(data)
    valid = {f"{s}.{k}" for s, keys in SCHEMA.items() for k in keys}
    for path in flat:
        if path not in valid:
            raise ConfigError("unknown field", path=path, line=_key_line(text, path.split("."), fmt), source=source)
    env = _env_overrides(environ)
    for path in env:
        if path not in valid:
            raise ConfigError("unknown field (from environment)", path=path)
    merged = {**flat, **env, **(overrides or {})}
    out: dict[str, dict] = {}
    for section, keys in SCHEMA.items():
        sec = {}
        for key, (kind, default) in keys.items():
            path = f"{section}.{key}"
            if path in merged:
                try:
                    sec[key] = _coerce(merged[path], kind)
                except TypeError as exc:
                    from_file = path in flat and path not in env and path not in (overrides or {})
                    line = _key_line(text, path.split("."), fmt) if from_file else None
                    raise ConfigError(str(exc), path, line, source if from_file else None) from None
            elif default is REQUIRED:
                if section == "lattice" and command in LATTICE_OPTIONAL:
                    sec[key] = None
                    continue
                line = _key_line(text, [section, key], fmt) if text else None
                raise ConfigError("required field missing", path=path, line=line, source=source)
            else:
                sec[key] = copy.deepcopy(default)
        out[section] = sec
    boundary = out.pop("model.boundary")
    out["model"]["boundary"] = boundary
    return out


def dumps_resolved(cfg: dict) -> str:
    return json.dumps(cfg, indent=2, sort_keys=True)
