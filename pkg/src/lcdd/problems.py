"""Named problem presets and JSON problem descriptions.

A problem is either a preset name (``"one-bar"``, ``"fifteen-bar"``,
``"beam"``), a dict ``{"preset": name, **overrides}``, or an explicit truss
``{"kind": "truss", "nodes": ..., "members": ..., "areas": ...,
"supports": [[node, "x", value], ...], "loads": [[node, "y", value], ...],
"M": ...}``.
"""
from __future__ import annotations

import json
from pathlib import Path

from .assembly import Discretization, build_beam, build_truss, fifteen_bar, one_bar
from .errors import ContractError

PRESETS = {"one-bar": one_bar, "fifteen-bar": fifteen_bar, "beam": build_beam}

# dataset generator that suits each preset, used by the CLI defaults
PRESET_GENERATOR = {"one-bar": "linear-truss", "fifteen-bar": "linear-truss",
                    "beam": "plane-stress"}


def normalize(problem) -> dict:
    if isinstance(problem, str):
        return {"preset": problem}
    if isinstance(problem, dict):
        return dict(problem)
    raise ContractError(f"problem must be a preset name or a dict, got {type(problem).__name__}")


def build_problem(problem) -> Discretization:
    spec = normalize(problem)
    if "preset" in spec:
        name = spec.pop("preset")
        if name not in PRESETS:
            raise ContractError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        try:
            return PRESETS[name](**spec)
        except TypeError as exc:
            raise ContractError(f"bad parameters for preset {name!r}: {exc}") from None
    kind = spec.get("kind")
    if kind != "truss":
        raise ContractError("explicit problems must have kind='truss' (or use a preset)")
    try:
        return build_truss(spec["nodes"], spec["members"], spec["areas"],
                           [tuple(s) for s in spec.get("supports", [])],
                           [tuple(f) for f in spec.get("loads", [])], spec["M"])
    except KeyError as exc:
        raise ContractError(f"truss problem is missing field {exc}") from None


def load_problem(path) -> dict:
    """Read a problem description from JSON (returned unbuilt)."""
    text = Path(path).read_text()
    try:
        spec = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ContractError(f"{path}: invalid JSON ({exc})") from None
    if isinstance(spec, dict) and "problem" in spec:
        spec = spec["problem"]
    return normalize(spec)
