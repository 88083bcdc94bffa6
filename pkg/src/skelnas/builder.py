"""Turn a candidate into a shape-checked layer graph and count its cost.

The graph has one stream per feature category (P, V, A, B). Each stream
is a run of blocks whose first graph conv reads the raw feature channels;
the streams are concatenated on channels, squeezed by a pointwise conv
and passed through a main stream of blocks before global pooling and a
two-way linear head.

Parameter and MAC counts come from closed-form per-layer formulas. MACs
are for one sample at the graph's input length; pooling, activations,
elementwise sums and the hop aggregation inside attention pooling are
not counted, the dense 29x29 adjacency products are.
"""
from __future__ import annotations

import hashlib
import json
import math
import warnings
from collections.abc import Iterator, Mapping
from dataclasses import dataclass, field

import numpy as np

from .skeleton import SkeletonGraph, load_skeleton
from .space import Candidate

STREAMS = ("P", "V", "A", "B")
DEFAULT_FEATURE_CHANNELS = {"P": 4, "V": 2, "A": 2, "B": 2}
NUM_CLASSES = 2
LAYER_KINDS = (
    "graph_conv_block", "temporal_conv", "attention", "activation", "dropout",
    "fuse_concat", "pointwise_conv", "global_pool", "linear_classifier",
)
CONV_VARIANTS = ("Basic", "Bottleneck", "Sep", "SG", "V3", "Shuffle")
ATTENTION_VARIANTS = ("Stja", "Ca", "Fa", "Ja", "Pa")
ACTIVATION_NAMES = ("Relu", "Relu6", "Hardswish", "Swish")
MIN_MAIN_CHANNELS = 8
BOTTLENECK_RATIO = 4
V3_EXPANSION = 4
ATTENTION_REDUCTION = 4

# values reported for the selected network, kept for side-by-side display
REFERENCE_PARAMS = 621_000
REFERENCE_MACS = 909_000_000

# which table row controls which part of the build, for error messages
GROUP_NAMES = {
    "init_size": "Init layer size", "activation": "Activation layer",
    "attention": "Attention layer", "conv_type": "Conv. layer type",
    "dropout": "Dropout probability", "multi_gcn": "Multi-GCN",
    "expand_ratio": "Expand ratio", "reduction_ratio": "Reduction ratio",
    "blocks_input": "Blocks input", "depth_input": "Depth input",
    "stride_input": "Stride input", "scale_input": "Scale input",
    "window_input": "Temporal window input", "distance_input": "Graph distance input",
    "blocks_main": "Blocks main", "depth_main": "Depth main",
    "stride_main": "Stride main", "scale_main": "Scale main",
    "window_main": "Temporal window main", "distance_main": "Graph distance main",
}


class BuildError(ValueError):
    def __init__(self, group: str, message: str):
        super().__init__(f"{group}: {message}")
        self.group = group


# --- adjacency --------------------------------------------------------------

@dataclass(frozen=True)
class AdjacencyStack:
    distance: int
    matrices: tuple[np.ndarray, ...]

    def __len__(self) -> int:
        return len(self.matrices)

    def summed(self) -> np.ndarray:
        return np.sum(self.matrices, axis=0)


def build_adjacency(graph: SkeletonGraph, distance: int) -> AdjacencyStack:
    """Row-normalized hop-k adjacency for k = 0..distance."""
    if distance not in (1, 2, 3):
        raise ValueError(f"graph distance must be 1, 2 or 3, got {distance}")
    hops = graph.hop_distances()
    if (hops < 0).any():
        warnings.warn("skeleton graph is disconnected; unreachable hops give zero rows", stacklevel=2)
    mats = []
    for k in range(distance + 1):
        a = (hops == k).astype(float)
        deg = a.sum(axis=1, keepdims=True)
        mats.append(np.divide(a, deg, out=np.zeros_like(a), where=deg > 0))
    return AdjacencyStack(distance, tuple(mats))


# --- layer specs ------------------------------------------------------------

Shape = tuple[int, int, int]  # (C, T, V); head layers use (C, 1, 1)


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str
    in_shape: Shape
    out_shape: Shape
    attrs: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        for s in (self.in_shape, self.out_shape):
            if min(s) < 1:
                raise ValueError(f"{self.name}: non-positive shape {s}")
        if "stride" in self.attrs and self.attrs["stride"] not in (1, 2, 3):
            raise ValueError(f"{self.name}: stride must be 1, 2 or 3")
        if "window" in self.attrs and self.attrs["window"] % 2 == 0:
            raise ValueError(f"{self.name}: temporal window must be odd")

    def describe(self) -> dict:
        return {"name": self.name, "kind": self.kind, "in": list(self.in_shape),
                "out": list(self.out_shape), **{k: self.attrs[k] for k in sorted(self.attrs)}}


@dataclass(frozen=True)
class Block:
    name: str
    layers: tuple[LayerSpec, ...]
    residual: bool

    @property
    def in_shape(self) -> Shape:
        return self.layers[0].in_shape

    @property
    def out_shape(self) -> Shape:
        return self.layers[-1].out_shape


@dataclass(frozen=True)
class ArchitectureGraph:
    streams: dict  # stream name -> tuple[Block, ...]
    fusion: tuple[LayerSpec, ...]
    main: tuple[Block, ...]
    head: tuple[LayerSpec, ...]
    input_shapes: dict  # stream name -> (C, T, V)
    adjacency: dict  # distance -> AdjacencyStack
    part_groups: tuple[tuple[int, ...], ...]
    num_classes: int = NUM_CLASSES

    def layers(self) -> Iterator[LayerSpec]:
        for name in STREAMS:
            for block in self.streams[name]:
                yield from block.layers
        yield from self.fusion
        for block in self.main:
            yield from block.layers
        yield from self.head

    def describe(self) -> dict:
        return {
            "inputs": {k: list(v) for k, v in self.input_shapes.items()},
            "layers": [spec.describe() for spec in self.layers()],
            "residual": [b.name for b in self._blocks() if b.residual],
            "parts": [list(p) for p in self.part_groups],
            "adjacency": {str(d): [m.round(12).tolist() for m in st.matrices]
                          for d, st in sorted(self.adjacency.items())},
        }

    def _blocks(self) -> Iterator[Block]:
        for name in STREAMS:
            yield from self.streams[name]
        yield from self.main

    @property
    def hash(self) -> str:
        blob = json.dumps(self.describe(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


# --- construction -----------------------------------------------------------

def _width(x: float) -> int:
    return int(math.floor(x + 1e-9))


def _t_out(t: int, stride: int) -> int:
    return -(-t // stride)


class _StreamBuilder:
    """Accumulates layers while tracking the running (C, T, V) shape."""

    def __init__(self, prefix: str, shape: Shape, arch: dict):
        self.prefix = prefix
        self.shape = shape
        self.arch = arch

    def layer(self, name: str, kind: str, out_shape: Shape | None = None, **attrs) -> LayerSpec:
        out = self.shape if out_shape is None else out_shape
        spec = LayerSpec(f"{self.prefix}.{name}", kind, self.shape, out, attrs)
        self.shape = out
        return spec

    def unit(self, name: str, c_out: int, distance: int, window: int, stride: int,
             multi: bool, attention: str, conv: str, act: str, p: float, n_parts: int,
             stride_group: str) -> list[LayerSpec]:
        c, t, v = self.shape
        out = [self.layer(f"{name}.gcn", "graph_conv_block", (c_out, t, v),
                          c_in=c, c_out=c_out, distance=distance, hops=distance + 1,
                          multi=multi, bn=True)]
        att = {"variant": attention, "channels": c_out}
        if attention in ("Stja", "Ca"):
            att["hidden"] = max(1, c_out // ATTENTION_REDUCTION)
        if attention == "Pa":
            att["parts"] = n_parts
        out.append(self.layer(f"{name}.att", "attention", **att))
        out.append(self.layer(f"{name}.act", "activation", fn=act))
        t2 = _t_out(t, stride)
        if t2 < 1:
            raise BuildError(stride_group, f"temporal length collapses below 1 at {self.prefix}.{name}")
        tc = {"variant": conv, "channels": c_out, "window": window, "stride": stride, "activation": act}
        if conv == "Bottleneck":
            tc["hidden"] = max(1, c_out // BOTTLENECK_RATIO)
        elif conv == "V3":
            tc["hidden"] = V3_EXPANSION * c_out
        elif conv == "Shuffle":
            tc["groups"] = 2 if c_out % 2 == 0 else 1
        out.append(self.layer(f"{name}.tcn", "temporal_conv", (c_out, t2, v), **tc))
        out.append(self.layer(f"{name}.drop", "dropout", p=p))
        return out


def _arch_values(c) -> dict:
    if isinstance(c, Candidate):
        arch = c.arch()
    else:
        arch = dict(c)
    missing = [GROUP_NAMES[k] for k in GROUP_NAMES if k not in arch]
    if missing:
        raise BuildError(missing[0], "no value selected or fixed")
    return arch


def _check_choice(arch: dict, key: str, allowed) -> None:
    if arch[key] not in allowed:
        raise BuildError(GROUP_NAMES[key], f"unsupported value {arch[key]!r}")


def build_architecture(c, graph: SkeletonGraph | None = None,
                       feature_shapes: Mapping[str, tuple[int, int, int]] | None = None) -> ArchitectureGraph:
    """Materialize a candidate (or a dict of architecture values) as a layer graph."""
    graph = load_skeleton() if graph is None else graph
    arch = _arch_values(c)
    _check_choice(arch, "conv_type", CONV_VARIANTS)
    _check_choice(arch, "attention", ATTENTION_VARIANTS)
    _check_choice(arch, "activation", ACTIVATION_NAMES)
    for key in ("stride_input", "stride_main"):
        _check_choice(arch, key, (1, 2, 3))
    for key in ("distance_input", "distance_main"):
        _check_choice(arch, key, (1, 2, 3))
    for key in ("window_input", "window_main"):
        if not (isinstance(arch[key], int) and arch[key] >= 1 and arch[key] % 2 == 1):
            raise BuildError(GROUP_NAMES[key], f"temporal window must be a positive odd integer, got {arch[key]!r}")
    for key in ("blocks_input", "depth_input", "blocks_main", "depth_main"):
        if not (isinstance(arch[key], int) and arch[key] >= 1):
            raise BuildError(GROUP_NAMES[key], f"must be a positive integer, got {arch[key]!r}")
    if not 0 <= arch["dropout"] < 1:
        raise BuildError(GROUP_NAMES["dropout"], f"must lie in [0, 1), got {arch['dropout']!r}")

    if feature_shapes is None:
        feature_shapes = {k: (ch, 150, graph.vertex_count) for k, ch in DEFAULT_FEATURE_CHANNELS.items()}
    input_shapes = {k: tuple(int(x) for x in feature_shapes[k]) for k in STREAMS}
    for k, (ch, t, v) in input_shapes.items():
        if v != graph.vertex_count:
            raise ValueError(f"stream {k}: {v} vertices but the skeleton has {graph.vertex_count}")
        if ch < 1 or t < 1:
            raise ValueError(f"stream {k}: bad input shape {(ch, t, v)}")

    parts = tuple(tuple(p) for p in graph.parts.values()) or (tuple(range(graph.vertex_count)),)
    act = arch["activation"]

    base = _width(arch["init_size"] * arch["scale_input"])
    if base < 1:
        raise BuildError(GROUP_NAMES["scale_input"], "input stream width below 1 channel")
    streams = {}
    for name in STREAMS:
        sb = _StreamBuilder(name, input_shapes[name], arch)
        blocks = []
        for b in range(arch["blocks_input"]):
            width = _width(base * arch["expand_ratio"] ** (b + 1))
            if width < 1:
                raise BuildError(GROUP_NAMES["expand_ratio"], f"block {b} width below 1 channel")
            start = sb.shape
            layers = []
            for u in range(arch["depth_input"]):
                last = u == arch["depth_input"] - 1
                layers += sb.unit(f"b{b}.u{u}", width, arch["distance_input"], arch["window_input"],
                                  arch["stride_input"] if last else 1, arch["multi_gcn"],
                                  arch["attention"], arch["conv_type"], act, arch["dropout"],
                                  len(parts), GROUP_NAMES["stride_input"])
            blocks.append(Block(f"{name}.b{b}", tuple(layers), residual=start == sb.shape))
        streams[name] = tuple(blocks)

    outs = [streams[k][-1].out_shape for k in STREAMS]
    t_f, v_f = outs[0][1], outs[0][2]
    if any(o[1:] != (t_f, v_f) for o in outs):
        raise BuildError(GROUP_NAMES["stride_input"], f"stream outputs disagree on (T, V): {outs}")
    cat_c = sum(o[0] for o in outs)
    main_base = _width(arch["init_size"] * arch["scale_main"])
    if main_base < 1:
        raise BuildError(GROUP_NAMES["scale_main"], "main stream width below 1 channel")
    fb = _StreamBuilder("fuse", (outs[0][0], t_f, v_f), arch)
    cat = LayerSpec("fuse.cat", "fuse_concat", (outs[0][0], t_f, v_f), (cat_c, t_f, v_f),
                    {"inputs": list(STREAMS), "channels": [o[0] for o in outs]})
    fb.shape = (cat_c, t_f, v_f)
    fusion = (
        cat,
        fb.layer("pw", "pointwise_conv", (main_base, t_f, v_f), c_in=cat_c, c_out=main_base, bn=True),
        fb.layer("act", "activation", fn=act),
    )

    mb = _StreamBuilder("main", fb.shape, arch)
    main = []
    for b in range(arch["blocks_main"]):
        width = max(MIN_MAIN_CHANNELS, _width(main_base / arch["reduction_ratio"] ** (b + 1)))
        start = mb.shape
        layers = []
        for u in range(arch["depth_main"]):
            last = u == arch["depth_main"] - 1
            layers += mb.unit(f"b{b}.u{u}", width, arch["distance_main"], arch["window_main"],
                              arch["stride_main"] if last else 1, arch["multi_gcn"],
                              arch["attention"], arch["conv_type"], act, arch["dropout"],
                              len(parts), GROUP_NAMES["stride_main"])
        main.append(Block(f"main.b{b}", tuple(layers), residual=start == mb.shape))

    c_last = mb.shape[0]
    head = (
        LayerSpec("head.pool", "global_pool", mb.shape, (c_last, 1, 1), {}),
        LayerSpec("head.fc", "linear_classifier", (c_last, 1, 1), (NUM_CLASSES, 1, 1),
                  {"c_in": c_last, "n_classes": NUM_CLASSES}),
    )
    distances = {arch["distance_input"], arch["distance_main"]}
    g = ArchitectureGraph(
        streams=streams, fusion=fusion, main=tuple(main), head=head,
        input_shapes=input_shapes,
        adjacency={d: build_adjacency(graph, d) for d in sorted(distances)},
        part_groups=parts,
    )
    validate_shapes(g)
    return g


def validate_shapes(g: ArchitectureGraph) -> None:
    """Every layer's input shape must equal its predecessor's output shape."""
    def chain(specs, shape, where):
        for spec in specs:
            if spec.in_shape != shape:
                raise ValueError(f"{spec.name}: expects {spec.in_shape}, predecessor gives {shape} ({where})")
            shape = spec.out_shape
        return shape

    ends = []
    for name in STREAMS:
        ends.append(chain([s for b in g.streams[name] for s in b.layers], g.input_shapes[name], name))
    cat = g.fusion[0]
    if list(cat.attrs["channels"]) != [e[0] for e in ends] or cat.out_shape[1:] != ends[0][1:]:
        raise ValueError("fusion does not match stream outputs")
    shape = chain(g.fusion[1:], cat.out_shape, "fusion")
    shape = chain([s for b in g.main for s in b.layers], shape, "main")
    chain(g.head, shape, "head")


# --- complexity ------------------------------------------------------------

def layer_cost(spec: LayerSpec) -> tuple[int, int]:
    """(parameters, MACs) of one layer for a single sample."""
    a = spec.attrs
    c_in, t_in, v = spec.in_shape
    c_out, t_out, _ = spec.out_shape
    r_in, r_out = t_in * v, t_out * v
    kind = spec.kind
    if kind == "graph_conv_block":
        ci, co, k = a["c_in"], a["c_out"], a["hops"]
        bn_p, bn_m = (2 * co, co * r_out) if a["bn"] else (0, 0)
        if a["multi"]:
            return k * ci * co + co + bn_p, k * (v * v * ci * t_in + v * ci * co * t_in) + bn_m
        return ci * co + co + bn_p, k * v * v * ci * t_in + v * ci * co * t_in + bn_m
    if kind == "attention":
        c = a["channels"]
        apply = c * r_in
        var = a["variant"]
        if var == "Stja":
            h = a["hidden"]
            return c * h + h + 2 * (h * c + c), c * h * (t_in + v) + h * c * t_in + h * c * v + 2 * apply
        if var == "Ca":
            h = a["hidden"]
            return 2 * c * h + h + c, 2 * c * h + apply
        if var == "Fa":
            return c + 1, c * t_in + apply
        if var == "Ja":
            return c + 1, c * v + apply
        if var == "Pa":
            p = a["parts"]
            return p * c + p, p * c + apply
        raise ValueError(f"unknown attention variant {var!r}")
    if kind == "temporal_conv":
        c, k, var = a["channels"], a["window"], a["variant"]
        if var == "Basic":
            return c * c * k + 3 * c, c * c * k * r_out + c * r_out
        if var == "Bottleneck":
            m = a["hidden"]
            params = (c * m + 3 * m) + (m * m * k + 3 * m) + (m * c + 3 * c)
            macs = c * m * r_in + m * r_in + m * m * k * r_out + m * r_out + m * c * r_out + c * r_out
            return params, macs
        if var == "Sep":
            return (c * k + 3 * c) + (c * c + 3 * c), c * k * r_out + c * r_out + c * c * r_out + c * r_out
        if var == "SG":
            params = (c * k + 3 * c) + (c * c + 3 * c) + (c * c + c)
            macs = c * k * r_out + c * r_out + 2 * c * c * r_out + c * r_out + c * r_out
            return params, macs
        if var == "V3":
            e = a["hidden"]
            params = (c * e + 3 * e) + (e * k + 3 * e) + (e * c + 3 * c)
            macs = c * e * r_in + e * r_in + e * k * r_out + e * r_out + e * c * r_out + c * r_out
            return params, macs
        if var == "Shuffle":
            g = a["groups"]
            return c * (c // g) * k + 3 * c, c * (c // g) * k * r_out + c * r_out
        raise ValueError(f"unknown conv variant {var!r}")
    if kind == "pointwise_conv":
        ci, co = a["c_in"], a["c_out"]
        bn_p, bn_m = (2 * co, co * r_out) if a["bn"] else (0, 0)
        return ci * co + co + bn_p, ci * co * r_out + bn_m
    if kind == "linear_classifier":
        return a["c_in"] * a["n_classes"] + a["n_classes"], a["c_in"] * a["n_classes"]
    return 0, 0  # activation, dropout, fuse_concat, global_pool


@dataclass(frozen=True)
class ComplexityReport:
    params: int
    macs: int
    layers: tuple[tuple[str, str, int, int], ...]  # (name, kind, params, macs)

    def to_dict(self) -> dict:
        return {
            "params": self.params, "macs": self.macs,
            "reference": {"params": REFERENCE_PARAMS, "macs": REFERENCE_MACS},
            "ratio": {"params": self.params / REFERENCE_PARAMS, "macs": self.macs / REFERENCE_MACS},
            "layers": [{"name": n, "kind": k, "params": p, "macs": m} for n, k, p, m in self.layers],
        }


def complexity(g: ArchitectureGraph) -> ComplexityReport:
    rows = tuple((s.name, s.kind, *layer_cost(s)) for s in g.layers())
    return ComplexityReport(sum(r[2] for r in rows), sum(r[3] for r in rows), rows)


def count_params(g: ArchitectureGraph) -> int:
    return complexity(g).params


def count_macs(g: ArchitectureGraph) -> int:
    return complexity(g).macs


def _fmt_shape(s: Shape) -> str:
    return "x".join(map(str, s))


def dump_architecture(g: ArchitectureGraph, reference: bool = True) -> str:
    """Layer-by-layer listing with shapes, parameters and MACs."""
    rep = complexity(g)
    specs = {s.name: s for s in g.layers()}
    residual = {b.name for b in g._blocks() if b.residual}
    w = max(len(n) for n in specs) + 2
    lines = [f"{'layer':<{w}}{'kind':<19}{'in':>12}{'out':>12}{'params':>10}{'MACs':>14}  detail"]
    lines.append("-" * len(lines[0]))
    for name, kind, p, m in rep.layers:
        s = specs[name]
        detail = ", ".join(f"{k}={s.attrs[k]}" for k in sorted(s.attrs)
                           if k not in ("c_in", "c_out", "channels", "inputs"))
        lines.append(f"{name:<{w}}{kind:<19}{_fmt_shape(s.in_shape):>12}{_fmt_shape(s.out_shape):>12}"
                     f"{p:>10}{m:>14}  {detail}")
    lines.append("-" * len(lines[0]))
    if residual:
        lines.append("residual blocks: " + ", ".join(sorted(residual)))
    lines.append(f"total parameters: {rep.params} ({rep.params / 1e6:.3f} M)")
    lines.append(f"total MACs: {rep.macs} ({rep.macs / 1e9:.3f} G)")
    if reference:
        lines.append(
            f"reference network: {REFERENCE_PARAMS / 1e6:.3f} M parameters, {REFERENCE_MACS / 1e9:.3f} G MACs"
            f" (ratio {rep.params / REFERENCE_PARAMS:.2f} / {rep.macs / REFERENCE_MACS:.2f});"
            " block internals differ, so only the order of magnitude is comparable"
        )
    return "\n".join(lines)
