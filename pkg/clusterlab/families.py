# clusterlab/families.py
"""
Registry of the named parametric families an experiment file may reference.

The config never embeds code: intensities, potentials, cluster components and
so on are picked by name from the tables below. Names are matched
case-insensitively and every family may carry aliases.
"""

from __future__ import annotations

from functools import lru_cache
from typing import Dict, Iterable

_FAMILY_RECORDS: Dict[str, list[dict]] = {
    "intensity": [
        {"name": "constant", "aliases": ["homogeneous", "uniform"]},
        {"name": "linear", "aliases": ["ramp"]},
        {"name": "gaussian_bump", "aliases": ["bump"]},
        {"name": "step", "aliases": ["halfplane", "piecewise"]},
    ],
    "potential": [
        {"name": "zero", "aliases": ["none", "poisson"]},
        {"name": "hard_core", "aliases": ["hardcore"]},
        {"name": "strauss", "aliases": []},
    ],
    "size": [
        {"name": "fixed", "aliases": ["constant", "dirac"]},
        {"name": "poisson", "aliases": []},
        {"name": "explicit", "aliases": ["vector", "table"]},
    ],
    "component": [
        {"name": "gaussian", "aliases": ["normal", "thomas"]},
        {"name": "dirac", "aliases": ["point", "degenerate"]},
        {"name": "uniform_ball", "aliases": ["matern", "disk"]},
        {"name": "rotation", "aliases": ["se2", "rotation_about"]},
        {"name": "tangent_gaussian", "aliases": ["wrapped_gaussian"]},
        {"name": "radial", "aliases": ["radii"]},
    ],
    "radial": [
        {"name": "fixed", "aliases": ["delta", "shell"]},
        {"name": "uniform", "aliases": []},
        {"name": "half_normal", "aliases": ["halfnormal"]},
    ],
    "placement": [
        {"name": "translation", "aliases": ["shift"]},
        {"name": "group_action", "aliases": ["group", "se2"]},
        {"name": "geodesic_transport", "aliases": ["geodesic", "cartan_hadamard"]},
        {"name": "radial_angular", "aliases": ["radial", "metric"]},
    ],
    "test_function": [
        {"name": "indicator", "aliases": ["indicator_scaled"]},
        {"name": "smooth_bump", "aliases": ["bump"]},
    ],
    "outer": [
        {"name": "identity", "aliases": ["linear"]},
        {"name": "exp_neg", "aliases": ["laplace"]},
        {"name": "tanh_mix", "aliases": ["tanh"]},
    ],
}


class UnknownFamilyError(KeyError):
    """Raised when a config names a family (or family kind) that does not exist."""

    def __init__(self, kind: str, name: str, accepted: Iterable[str] = ()):
        names = ", ".join(sorted(accepted))
        super().__init__(f"Unknown {kind} family '{name}' (accepted: {names})")
        self.kind = kind
        self.name = name


def _normalize(name: str) -> str:
    return (name or "").strip().lower().replace("-", "_")


def _build_table(records: Iterable[dict]) -> Dict[str, str]:
    """Returns {"<name or alias>": "<canonical name>"}."""
    table: Dict[str, str] = {}
    for rec in records:
        canonical = _normalize(rec.get("name", ""))
        if not canonical:
            continue
        table[canonical] = canonical
        for alias in rec.get("aliases") or []:
            alias_key = _normalize(str(alias))
            if alias_key:
                table[alias_key] = canonical
    return table


@lru_cache(maxsize=None)
def families(kind: str) -> Dict[str, str]:
    if kind not in _FAMILY_RECORDS:
        raise UnknownFamilyError("family kind", kind, _FAMILY_RECORDS)
    return _build_table(_FAMILY_RECORDS[kind])


def canonical_family(kind: str, name: str) -> str:
    table = families(kind)
    key = _normalize(name)
    if key not in table:
        raise UnknownFamilyError(kind, name, table)
    return table[key]
