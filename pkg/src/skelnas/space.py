"""Declarative search spaces and sampled candidates.

A space is an ordered list of choice groups plus optional fixed values for
settings that are not searched. Spaces and candidates round-trip through a
small JSON document format; the full 25-group space and a reduced desk-scale
space ship as package assets.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from typing import Any

import numpy as np

SPACE_FORMAT = "skelnas.space/1"
CANDIDATE_FORMAT = "skelnas.candidate/1"
KINDS = ("general", "input_stream", "main_stream", "optimizer")
ROLES = ("alpha", "h")

# Table-1 best configuration of the full space.
BEST_CHOICE = {
    "Init layer size": 64, "Activation layer": "Swish", "Attention layer": "Fa",
    "Conv. layer type": "Sep", "Dropout probability": 0.05, "Multi-GCN": False,
    "Expand ratio": 1.5, "Reduction ratio": 1.5,
    "Blocks input": 2, "Depth input": 2, "Stride input": 3, "Scale input": 1,
    "Temporal window input": 3, "Graph distance input": 1,
    "Blocks main": 2, "Depth main": 2, "Stride main": 1, "Scale main": 1,
    "Temporal window main": 7, "Graph distance main": 1,
    "Optimizer": "Adam", "Learning rate": 0.005, "Weight decay": 0.0,
    "Momentum": 0.99, "Batch size": 32,
}

# architecture-view keys, by group name
ARCH_KEYS = {
    "Init layer size": "init_size", "Activation layer": "activation",
    "Attention layer": "attention", "Conv. layer type": "conv_type",
    "Dropout probability": "dropout", "Multi-GCN": "multi_gcn",
    "Expand ratio": "expand_ratio", "Reduction ratio": "reduction_ratio",
    "Blocks input": "blocks_input", "Depth input": "depth_input",
    "Stride input": "stride_input", "Scale input": "scale_input",
    "Temporal window input": "window_input", "Graph distance input": "distance_input",
    "Blocks main": "blocks_main", "Depth main": "depth_main",
    "Stride main": "stride_main", "Scale main": "scale_main",
    "Temporal window main": "window_main", "Graph distance main": "distance_main",
}
HYPER_KEYS = {
    "Optimizer": "optimizer", "Learning rate": "lr", "Weight decay": "weight_decay",
    "Momentum": "momentum", "Batch size": "batch_size",
}


class SchemaError(ValueError):
    pass


class VersionError(ValueError):
    pass


def _same_atom(a, b) -> bool:
    # True == 1 in Python; the document keeps booleans and numbers apart
    return type(a) is type(b) and a == b or (
        not isinstance(a, bool) and not isinstance(b, bool)
        and isinstance(a, (int, float)) and isinstance(b, (int, float)) and a == b
    )


@dataclass(frozen=True)
class ChoiceGroup:
    name: str
    kind: str
    role: str
    options: tuple

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"group {self.name!r}: unknown kind {self.kind!r}")
        if self.role not in ROLES:
            raise SchemaError(f"group {self.name!r}: unknown role {self.role!r}")
        if len(self.options) < 2:
            raise SchemaError(f"group {self.name!r}: needs at least 2 options")
        for i, a in enumerate(self.options):
            if not isinstance(a, (bool, int, float, str)):
                raise SchemaError(f"group {self.name!r}: option {a!r} is not an atom")
            if any(_same_atom(a, b) for b in self.options[:i]):
                raise SchemaError(f"group {self.name!r}: duplicate option {a!r}")

    def __len__(self) -> int:
        return len(self.options)

    def index_of(self, value) -> int:
        for i, opt in enumerate(self.options):
            if _same_atom(opt, value):
                return i
        raise SchemaError(f"group {self.name!r}: {value!r} is not one of {list(self.options)}")


@dataclass(frozen=True)
class SearchSpace:
    groups: tuple[ChoiceGroup, ...]
    fixed: dict = field(default_factory=dict)
    name: str = "custom"

    def __post_init__(self):
        names = [g.name for g in self.groups]
        if len(set(names)) != len(names):
            raise SchemaError("group names must be unique")
        clash = set(names) & set(self.fixed)
        if clash:
            raise SchemaError(f"groups also listed as fixed: {sorted(clash)}")

    def __len__(self) -> int:
        return len(self.groups)

    def __eq__(self, other):
        return isinstance(other, SearchSpace) and self.to_dict() == other.to_dict()

    def __hash__(self):
        return hash(self.hash)

    @property
    def sizes(self) -> list[int]:
        return [len(g) for g in self.groups]

    def group(self, name: str) -> ChoiceGroup:
        for g in self.groups:
            if g.name == name:
                return g
        raise KeyError(name)

    def position(self, name: str) -> int:
        for i, g in enumerate(self.groups):
            if g.name == name:
                return i
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "format": SPACE_FORMAT,
            "name": self.name,
            "groups": [
                {"index": i, "name": g.name, "kind": g.kind, "role": g.role, "options": list(g.options)}
                for i, g in enumerate(self.groups)
            ],
            "fixed": dict(self.fixed),
        }

    @cached_property
    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def concat(self, other: "SearchSpace") -> "SearchSpace":
        return SearchSpace(self.groups + other.groups, {**self.fixed, **other.fixed},
                           f"{self.name}+{other.name}")


@dataclass(frozen=True)
class Candidate:
    space: SearchSpace
    selections: tuple[int, ...]

    def __post_init__(self):
        sel = tuple(int(s) for s in self.selections)
        object.__setattr__(self, "selections", sel)
        if len(sel) != len(self.space.groups):
            raise SchemaError(f"expected {len(self.space.groups)} selections, got {len(sel)}")
        for g, s in zip(self.space.groups, sel):
            if not 0 <= s < len(g):
                raise SchemaError(f"group {g.name!r}: index {s} out of range 0..{len(g) - 1}")

    def __getitem__(self, name: str):
        for g, s in zip(self.space.groups, self.selections):
            if g.name == name:
                return g.options[s]
        if name in self.space.fixed:
            return self.space.fixed[name]
        raise KeyError(name)

    def get(self, name: str, default=None):
        try:
            return self[name]
        except KeyError:
            return default

    def values(self) -> dict[str, Any]:
        out = dict(self.space.fixed)
        for g, s in zip(self.space.groups, self.selections):
            out[g.name] = g.options[s]
        return out

    def arch(self) -> dict[str, Any]:
        vals = self.values()
        return {key: vals[name] for name, key in ARCH_KEYS.items() if name in vals}

    def hyper(self) -> dict[str, Any]:
        vals = self.values()
        return {key: vals[name] for name, key in HYPER_KEYS.items() if name in vals}

    @property
    def key(self) -> str:
        """Short stable identifier of the selection within its space."""
        blob = f"{self.space.hash}:{','.join(map(str, self.selections))}"
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    def to_dict(self) -> dict:
        return {
            "format": CANDIDATE_FORMAT,
            "space": self.space.name,
            "space_hash": self.space.hash,
            "selections": {g.name: g.options[s] for g, s in zip(self.space.groups, self.selections)},
        }


def space_from_dict(doc: dict) -> SearchSpace:
    if doc.get("format") != SPACE_FORMAT:
        raise SchemaError(f"space document: expected format {SPACE_FORMAT!r}, got {doc.get('format')!r}")
    raw = doc.get("groups")
    if not isinstance(raw, list) or not raw:
        raise SchemaError("space document: 'groups' must be a non-empty list")
    for pos, g in enumerate(raw):
        missing = {"name", "kind", "role", "options"} - set(g)
        if missing:
            raise SchemaError(f"groups[{pos}]: missing {sorted(missing)}")
    if all("index" in g for g in raw):
        idx = [g["index"] for g in raw]
        if sorted(idx) != list(range(len(raw))):
            raise SchemaError("groups: 'index' values must be 0..n-1 without gaps")
        raw = sorted(raw, key=lambda g: g["index"])
    groups = []
    for pos, g in enumerate(raw):
        try:
            groups.append(ChoiceGroup(g["name"], g["kind"], g["role"], tuple(g["options"])))
        except SchemaError as exc:
            raise SchemaError(f"groups[{pos}]: {exc}") from None
    return SearchSpace(tuple(groups), dict(doc.get("fixed", {})), doc.get("name", "custom"))


def parse_space(text: str) -> SearchSpace:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"space document: line {exc.lineno}: {exc.msg}") from None
    return space_from_dict(doc)


def serialize_space(space: SearchSpace) -> str:
    return json.dumps(space.to_dict(), indent=2) + "\n"


def candidate_from_dict(doc: dict, space: SearchSpace) -> Candidate:
    if doc.get("format") != CANDIDATE_FORMAT:
        raise SchemaError(f"candidate document: expected format {CANDIDATE_FORMAT!r}")
    sel = doc.get("selections")
    if not isinstance(sel, dict):
        raise SchemaError("candidate document: 'selections' must be an object")
    unknown = [k for k in sel if k not in {g.name for g in space.groups}]
    if unknown:
        raise SchemaError(f"selections[{unknown[0]!r}]: no such group in space {space.name!r}")
    idx = []
    for g in space.groups:
        if g.name not in sel:
            raise SchemaError(f"selections[{g.name!r}]: missing")
        try:
            idx.append(g.index_of(sel[g.name]))
        except SchemaError as exc:
            raise SchemaError(f"selections[{g.name!r}]: {exc}") from None
    return Candidate(space, tuple(idx))


def parse_candidate(text: str, space: SearchSpace) -> Candidate:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"candidate document: line {exc.lineno}: {exc.msg}") from None
    return candidate_from_dict(doc, space)


def serialize_candidate(c: Candidate) -> str:
    return json.dumps(c.to_dict(), indent=2) + "\n"


def _asset_space(filename: str) -> SearchSpace:
    text = resources.files("skelnas.data").joinpath(filename).read_text("utf-8")
    return parse_space(text)


def builtin_cp_space() -> SearchSpace:
    """The full architecture and hyperparameter space (25 groups)."""
    return _asset_space("cp_space.json")


def desk_space() -> SearchSpace:
    """Reduced six-group space with small fixed widths for CPU-sized runs."""
    return _asset_space("desk_space.json")


def best_choice_candidate(space: SearchSpace | None = None) -> Candidate:
    space = space or builtin_cp_space()
    if space.hash != builtin_cp_space().hash:
        raise VersionError(f"best-choice configuration is defined for the builtin space, not {space.name!r}")
    return Candidate(space, tuple(g.index_of(BEST_CHOICE[g.name]) for g in space.groups))


def cardinality(space: SearchSpace) -> int:
    return math.prod(len(g) for g in space.groups)


def validate_probs(space: SearchSpace, probs) -> list[np.ndarray]:
    if len(probs) != len(space.groups):
        raise ValueError(f"expected {len(space.groups)} probability vectors, got {len(probs)}")
    out = []
    for g, p in zip(space.groups, probs):
        p = np.asarray(p, dtype=float)
        if p.shape != (len(g),):
            raise ValueError(f"group {g.name!r}: probability vector has shape {p.shape}, need ({len(g)},)")
        if (p < 0).any() or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError(f"group {g.name!r}: probabilities must be nonnegative and sum to 1")
        out.append(p)
    return out


def sample(space: SearchSpace, probs, rng: np.random.Generator) -> Candidate:
    """Independent categorical draw per group (inverse CDF on one uniform each)."""
    probs = validate_probs(space, probs)
    u = rng.random(len(probs))
    sel = []
    for p, ui in zip(probs, u):
        cdf = np.cumsum(p)
        k = int(np.searchsorted(cdf, ui * cdf[-1], side="right"))
        k = min(k, len(p) - 1)
        while p[k] == 0:  # never land on a zero-probability option via rounding
            k -= 1
        sel.append(k)
    return Candidate(space, tuple(sel))
