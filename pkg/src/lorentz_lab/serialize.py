"""Plain-text key-value files for environments and experiment configs.

One ``key = value`` per line; lines starting with ``#`` are comments. Values are JSON; a value
that is not valid JSON is taken as a bare string (``lattice = hex``). The keys
``override``, ``removal`` and ``addition`` may repeat. Floats are written with
``repr`` so files round-trip exactly.

Environment keys::

    schema         lorentz-lab/env/1
    law            disc | ellipse | finite
    lattice        square | hex
    spacing        nearest-neighbour distance (default 1)
    radius, offset_radius, margin, tau_bound, fixed     (disc law)
    offset_radius, a_range, b_range, corner_radius, margin, tau_bound   (ellipse law)
    labels, weights                                     (finite law)
    seed           64-bit integer
    shift_offset   [i, j]
    override       [[i, j], state]          (repeatable)
    pattern        [[[i, j], state], ...]   with block = [b1, b2]
    removal        [[i, j], index]          (repeatable, base frame)
    addition       shape object             (repeatable, base-frame plane coordinates)
"""
from __future__ import annotations

import json
from typing import Any

from .ensemble import CellLaw, Environment, law_from_dict
from .errors import SchemaError
from .geometry import Disc, Ellipse, FourierShape, Shape

ENV_SCHEMA = "lorentz-lab/env/1"
REPEATABLE = ("override", "removal", "addition")
LAW_KEYS = {
    "disc": ("radius", "offset_radius", "margin", "tau_bound", "fixed"),
    "ellipse": ("offset_radius", "a_range", "b_range", "corner_radius", "margin", "tau_bound"),
    "finite": ("labels", "weights"),
}
ENV_KEYS = {"schema", "law", "lattice", "spacing", "seed", "shift_offset", "pattern", "block", *REPEATABLE}


def shape_to_dict(s: Shape) -> dict:
    if isinstance(s, Disc):
        return {"kind": "disc", "center": list(s.center), "radius": s.radius}
    if isinstance(s, Ellipse):
        return {"kind": "ellipse", "center": list(s.center), "a": s.a, "b": s.b, "orientation": s.orientation}
    if isinstance(s, FourierShape):
        return {"kind": "parametric", "center": list(s.center), "mean_radius": s.mean_radius,
                "cos": list(s.cos_coeffs), "sin": list(s.sin_coeffs), "panels": s.panels}
    raise TypeError(f"cannot serialize {type(s).__name__}")


def shape_from_dict(d: dict) -> Shape:
    try:
        kind = d["kind"]
        if kind == "disc":
            return Disc(tuple(d["center"]), d["radius"])
        if kind == "ellipse":
            return Ellipse(tuple(d["center"]), d["a"], d["b"], d.get("orientation", 0.0))
        if kind == "parametric":
            return FourierShape(tuple(d["center"]), d["mean_radius"], tuple(d.get("cos", ())),
                                tuple(d.get("sin", ())), int(d.get("panels", 1024)))
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"bad shape record {d!r}: {exc}") from exc
    raise SchemaError(f"unknown shape kind {d.get('kind')!r}")


def parse_kv(text: str) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise SchemaError(f"line {lineno}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        if not key:
            raise SchemaError(f"line {lineno}: empty key")
        try:
            parsed = json.loads(value)
        except json.JSONDecodeError:
            parsed = value
        if key in REPEATABLE:
            out.setdefault(key, []).append(parsed)
        elif key in out:
            raise SchemaError(f"line {lineno}: duplicate key {key!r}")
        else:
            out[key] = parsed
    return out


def dump_kv(items: dict[str, Any]) -> str:
    lines = []
    for key, value in items.items():
        if key in REPEATABLE:
            lines.extend(f"{key} = {json.dumps(v)}" for v in value)
        else:
            lines.append(f"{key} = {json.dumps(value)}")
    return "\n".join(lines) + "\n"


def _state_out(w):
    return list(w) if isinstance(w, tuple) else w


def _state_in(w):
    return tuple(float(x) for x in w) if isinstance(w, list) else w


def env_to_kv(env: Environment) -> dict[str, Any]:
    d: dict[str, Any] = {"schema": ENV_SCHEMA}
    d.update(env.law.to_dict())
    d["seed"] = env.seed
    if env.shift_offset != (0, 0):
        d["shift_offset"] = list(env.shift_offset)
    if env.pattern is not None:
        d["pattern"] = [[list(g), _state_out(w)] for g, w in env.pattern]
        d["block"] = list(env.block)
    if env.overrides:
        d["override"] = [[list(g), _state_out(w)] for g, w in env.overrides]
    if env.removals:
        d["removal"] = [[list(g), k] for g, k in sorted(env.removals)]
    if env.additions:
        d["addition"] = [shape_to_dict(s) for s in env.additions]
    return d


def law_from_kv(d: dict[str, Any]) -> CellLaw:
    kind = d.get("law")
    if kind not in LAW_KEYS:
        raise SchemaError(f"unknown or missing law {kind!r}")
    params = {k: d[k] for k in LAW_KEYS[kind] if k in d}
    params.update(law=kind, lattice=d.get("lattice", "square"), spacing=d.get("spacing", 1.0))
    try:
        return law_from_dict(params)
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"invalid {kind} law: {exc}") from exc


def env_from_kv(d: dict[str, Any], strict: bool = True) -> Environment:
    if d.get("schema", ENV_SCHEMA) != ENV_SCHEMA:
        raise SchemaError(f"unsupported schema {d.get('schema')!r}")
    if strict:
        known = ENV_KEYS | {k for ks in LAW_KEYS.values() for k in ks}
        extra = set(d) - known
        if extra:
            raise SchemaError(f"unknown keys: {sorted(extra)}")
    law = law_from_kv(d)
    seed = d.get("seed")
    if not isinstance(seed, int):
        raise SchemaError("seed must be an integer")
    try:
        pattern = d.get("pattern")
        return Environment(
            law, seed,
            overrides=tuple((tuple(g), _state_in(w)) for g, w in d.get("override", ())),
            shift_offset=tuple(d.get("shift_offset", (0, 0))),
            pattern=None if pattern is None else tuple(sorted((tuple(g), _state_in(w)) for g, w in pattern)),
            block=None if pattern is None else tuple(d["block"]),
            removals=frozenset((tuple(g), int(k)) for g, k in d.get("removal", ())),
            additions=tuple(shape_from_dict(s) for s in d.get("addition", ())),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"invalid environment: {exc}") from exc


def dumps_env(env: Environment) -> str:
    return dump_kv(env_to_kv(env))


def loads_env(text: str) -> Environment:
    return env_from_kv(parse_kv(text))
