"""Executable models: weight layout, initialization, forward pass, checkpoints.

Parameter names are ``<layer name>.<local name>``, e.g. ``P.b0.u0.gcn.weight``.
Batch-norm running statistics live in a separate buffer dict so that the
parameter count matches the builder's learnable-scalar count.
"""
from __future__ import annotations

import json
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .builder import STREAMS, ArchitectureGraph, Block, LayerSpec

WEIGHTS_FORMAT = "skelnas.weights/1"


class ExecutionError(RuntimeError):
    pass


class ModelMismatchError(ValueError):
    pass


# --- parameter layout -------------------------------------------------------

def _conv(prefix: str, o: int, c: int, fan_in: int, k: int | None = None, bn: bool = True) -> dict:
    shape = (o, c) if k is None else (o, c, k)
    out = {f"{prefix}weight": (shape, ("uniform", fan_in)), f"{prefix}bias": ((o,), ("uniform", fan_in))}
    if bn:
        out[f"{prefix}bn.gamma"] = ((o,), "ones")
        out[f"{prefix}bn.beta"] = ((o,), "zeros")
    return out


def layer_param_shapes(spec: LayerSpec) -> dict[str, tuple]:
    """Local parameter name -> (shape, init rule) for one layer."""
    a = spec.attrs
    if spec.kind == "graph_conv_block":
        ci, co, k = a["c_in"], a["c_out"], a["hops"]
        if a["multi"]:
            out = {"weight": ((k, co, ci), ("uniform", k * ci)), "bias": ((co,), ("uniform", k * ci))}
            if a["bn"]:
                out.update({"bn.gamma": ((co,), "ones"), "bn.beta": ((co,), "zeros")})
            return out
        return _conv("", co, ci, ci, bn=a["bn"])
    if spec.kind == "pointwise_conv":
        return _conv("", a["c_out"], a["c_in"], a["c_in"], bn=a["bn"])
    if spec.kind == "linear_classifier":
        return _conv("", a["n_classes"], a["c_in"], a["c_in"], bn=False)
    if spec.kind == "attention":
        c, var = a["channels"], a["variant"]
        if var == "Stja":
            h = a["hidden"]
            return {**_conv("fc1.", h, c, c, bn=False), **_conv("t.", c, h, h, bn=False),
                    **_conv("v.", c, h, h, bn=False)}
        if var == "Ca":
            h = a["hidden"]
            return {**_conv("fc1.", h, c, c, bn=False), **_conv("fc2.", c, h, h, bn=False)}
        if var in ("Fa", "Ja"):
            return _conv("score.", 1, c, c, bn=False)
        if var == "Pa":
            return _conv("score.", a["parts"], c, c, bn=False)
        raise ExecutionError(f"{spec.name}: unknown attention variant {var!r}")
    if spec.kind == "temporal_conv":
        c, k, var = a["channels"], a["window"], a["variant"]
        if var == "Basic":
            return _conv("conv.", c, c, c * k, k)
        if var == "Bottleneck":
            m = a["hidden"]
            return {**_conv("reduce.", m, c, c), **_conv("conv.", m, m, m * k, k), **_conv("expand.", c, m, m)}
        if var == "Sep":
            return {**_conv("dw.", c, 1, k, k), **_conv("pw.", c, c, c)}
        if var == "SG":
            return {**_conv("dw.", c, 1, k, k), **_conv("pw.", c, c, c), **_conv("gate.", c, c, c, bn=False)}
        if var == "V3":
            e = a["hidden"]
            return {**_conv("expand.", e, c, c), **_conv("dw.", e, 1, k, k), **_conv("project.", c, e, e)}
        if var == "Shuffle":
            g = a["groups"]
            return _conv("conv.", c, c // g, (c // g) * k, k)
        raise ExecutionError(f"{spec.name}: unknown conv variant {var!r}")
    return {}


def param_layout(graph: ArchitectureGraph) -> dict[str, tuple]:
    out = {}
    for spec in graph.layers():
        for local, entry in layer_param_shapes(spec).items():
            out[f"{spec.name}.{local}"] = entry
    return out


def buffer_layout(graph: ArchitectureGraph) -> dict[str, tuple[int, ...]]:
    out = {}
    for name, (shape, rule) in param_layout(graph).items():
        if name.endswith("bn.gamma"):
            stem = name[: -len("gamma")]
            out[stem + "mean"] = shape
            out[stem + "var"] = shape
    return out


@dataclass
class ModelWeights:
    params: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray]
    seed: int | None = None
    graph_hash: str | None = None

    def count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def copy(self) -> "ModelWeights":
        return ModelWeights({k: v.copy() for k, v in self.params.items()},
                            {k: v.copy() for k, v in self.buffers.items()}, self.seed, self.graph_hash)

    def astype(self, dtype) -> "ModelWeights":
        return ModelWeights({k: v.astype(dtype) for k, v in self.params.items()},
                            {k: v.astype(dtype) for k, v in self.buffers.items()}, self.seed, self.graph_hash)

    def tensors(self, requires_grad: bool = True) -> dict[str, Tensor]:
        return {k: Tensor(v, requires_grad=requires_grad, name=k) for k, v in self.params.items()}


def init_weights(graph: ArchitectureGraph, seed: int = 0, dtype=np.float32,
                 rng: np.random.Generator | None = None) -> ModelWeights:
    """Fan-in scaled uniform for convs and linears, ones/zeros for batch norm."""
    rng = np.random.default_rng(seed) if rng is None else rng
    params = {}
    for name, (shape, rule) in param_layout(graph).items():
        if rule == "ones":
            params[name] = np.ones(shape, dtype=dtype)
        elif rule == "zeros":
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            bound = 1.0 / np.sqrt(rule[1])
            params[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
    buffers = {}
    for name, shape in buffer_layout(graph).items():
        fill = np.zeros if name.endswith("mean") else np.ones
        buffers[name] = fill(shape, dtype=dtype)
    return ModelWeights(params, buffers, seed, graph.hash)


# --- forward ----------------------------------------------------------------

@dataclass
class _Ctx:
    graph: ArchitectureGraph
    params: Mapping[str, Tensor]
    buffers: dict[str, np.ndarray]
    training: bool
    batch_stats: bool
    rng: np.random.Generator | None
    dtype: np.dtype
    cache: dict = field(default_factory=dict)

    def p(self, spec: LayerSpec, local: str) -> Tensor:
        return self.params[f"{spec.name}.{local}"]

    def constant(self, key, build) -> np.ndarray:
        if key not in self.cache:
            self.cache[key] = np.ascontiguousarray(build(), dtype=self.dtype)
        return self.cache[key]


def _bn(ctx: _Ctx, spec: LayerSpec, prefix: str, x: Tensor) -> Tensor:
    base = f"{spec.name}.{prefix}bn."
    return ad.batch_norm(x, ctx.params[base + "gamma"], ctx.params[base + "beta"],
                         ctx.buffers[base + "mean"], ctx.buffers[base + "var"],
                         training=ctx.batch_stats)


def _pw(ctx: _Ctx, spec: LayerSpec, prefix: str, x: Tensor, bn: bool = True) -> Tensor:
    y = ad.channel_mix(x, ctx.p(spec, prefix + "weight"), ctx.p(spec, prefix + "bias"))
    return _bn(ctx, spec, prefix, y) if bn else y


def _tconv(ctx: _Ctx, spec: LayerSpec, prefix: str, x: Tensor, stride: int, groups: int = 1) -> Tensor:
    w = ctx.p(spec, prefix + "weight")
    if w.ndim == 3 and w.shape[1] == 1 and groups == 1:
        groups = w.shape[0]  # depthwise
    y = ad.temporal_conv(x, w, ctx.p(spec, prefix + "bias"), stride=stride, groups=groups)
    return _bn(ctx, spec, prefix, y)


def _graph_conv(ctx: _Ctx, spec: LayerSpec, x: Tensor) -> Tensor:
    a = spec.attrs
    stack = ctx.graph.adjacency[a["distance"]]
    w, b = ctx.p(spec, "weight"), ctx.p(spec, "bias")
    if a["multi"]:
        aggs = [ad.graph_aggregate(x, ctx.constant(("adjT", a["distance"], k), lambda k=k: stack.matrices[k].T))
                for k in range(len(stack))]
        # stack hops on channels so all per-hop mixes run as one matmul
        xs = ad.concat(aggs, axis=1)
        k, co, ci = w.shape
        wm = ad.reshape(_transpose_hops(w), (co, k * ci))
        y = ad.channel_mix(xs, wm, b)
    else:
        at = ctx.constant(("adjsumT", a["distance"]), lambda: stack.summed().T)
        y = ad.channel_mix(ad.graph_aggregate(x, at), w, b)
    return _bn(ctx, spec, "", y) if a["bn"] else y


def _transpose_hops(w: Tensor) -> Tensor:
    """(K, O, C) -> (O, K, C) so that a reshape gives (O, K*C) in hop-major order."""
    k, o, c = w.shape
    out = np.ascontiguousarray(w.data.transpose(1, 0, 2))
    return ad._result(out, (w,), lambda g: (g.transpose(1, 0, 2),))


def _part_matrices(ctx: _Ctx, v: int) -> tuple[np.ndarray, np.ndarray]:
    def build():
        parts = ctx.graph.part_groups
        m = np.zeros((v, len(parts)))
        for j, p in enumerate(parts):
            m[list(p), j] = 1.0
        return m
    member = ctx.constant("parts", build)
    pool = ctx.constant("parts_pool", lambda: member / np.maximum(member.sum(axis=0, keepdims=True), 1))
    return pool, member


def _attention(ctx: _Ctx, spec: LayerSpec, x: Tensor) -> Tensor:
    var = spec.attrs["variant"]
    n, c, t, v = x.shape
    if var == "Fa":
        s = ad.channel_mix(ad.mean(x, 3), ctx.p(spec, "score.weight"), ctx.p(spec, "score.bias"))  # (N,1,T)
        gate = ad.mul(ad.softmax(s, axis=2), float(t))
        return ad.mul(x, ad.reshape(gate, (n, 1, t, 1)))
    if var == "Ja":
        s = ad.channel_mix(ad.mean(x, 2), ctx.p(spec, "score.weight"), ctx.p(spec, "score.bias"))  # (N,1,V)
        return ad.mul(x, ad.reshape(ad.sigmoid(s), (n, 1, 1, v)))
    if var == "Ca":
        z = ad.channel_mix(ad.mean(x, (2, 3)), ctx.p(spec, "fc1.weight"), ctx.p(spec, "fc1.bias"))
        z = ad.channel_mix(ad.relu(z), ctx.p(spec, "fc2.weight"), ctx.p(spec, "fc2.bias"))
        return ad.mul(x, ad.reshape(ad.sigmoid(z), (n, c, 1, 1)))
    if var == "Pa":
        pool, member = _part_matrices(ctx, v)
        pooled = ad.matmul(ad.mean(x, 2), Tensor(pool))  # (N, C, P)
        w = ctx.p(spec, "score.weight")  # (P, C)
        score = ad.add(ad.sum_(ad.mul(pooled, _transpose2(w)), axis=1), ctx.p(spec, "score.bias"))
        gate = ad.matmul(ad.sigmoid(score), Tensor(np.ascontiguousarray(member.T)))  # (N, V)
        return ad.mul(x, ad.reshape(gate, (n, 1, 1, v)))
    if var == "Stja":
        cat = ad.concat([ad.mean(x, 3), ad.mean(x, 2)], axis=2)  # (N, C, T+V)
        h = ad.relu(ad.channel_mix(cat, ctx.p(spec, "fc1.weight"), ctx.p(spec, "fc1.bias")))
        ht, hv = ad.split(h, [t, v], axis=2)
        gt = ad.sigmoid(ad.channel_mix(ht, ctx.p(spec, "t.weight"), ctx.p(spec, "t.bias")))
        gv = ad.sigmoid(ad.channel_mix(hv, ctx.p(spec, "v.weight"), ctx.p(spec, "v.bias")))
        gate = ad.mul(ad.reshape(gt, (n, c, t, 1)), ad.reshape(gv, (n, c, 1, v)))
        return ad.mul(x, gate)
    raise ExecutionError(f"{spec.name}: unknown attention variant {var!r}")


def _transpose2(w: Tensor) -> Tensor:
    return ad._result(np.ascontiguousarray(w.data.T), (w,), lambda g: (g.T,))


def _temporal(ctx: _Ctx, spec: LayerSpec, x: Tensor) -> Tensor:
    a = spec.attrs
    act = ad.ACTIVATIONS[a["activation"]]
    s, var = a["stride"], a["variant"]
    if var == "Basic":
        return _tconv(ctx, spec, "conv.", x, s)
    if var == "Bottleneck":
        y = act(_pw(ctx, spec, "reduce.", x))
        y = act(_tconv(ctx, spec, "conv.", y, s))
        return _pw(ctx, spec, "expand.", y)
    if var == "Sep":
        return _pw(ctx, spec, "pw.", act(_tconv(ctx, spec, "dw.", x, s)))
    if var == "SG":
        y = act(_tconv(ctx, spec, "dw.", x, s))
        return ad.mul(_pw(ctx, spec, "pw.", y), ad.sigmoid(_pw(ctx, spec, "gate.", y, bn=False)))
    if var == "V3":
        y = act(_pw(ctx, spec, "expand.", x))
        y = act(_tconv(ctx, spec, "dw.", y, s))
        return _pw(ctx, spec, "project.", y)
    if var == "Shuffle":
        g = a["groups"]
        y = _tconv(ctx, spec, "conv.", x, s, groups=g)
        c = a["channels"]
        perm = np.arange(c).reshape(g, c // g).T.reshape(-1)
        return ad.take(y, perm, axis=1)
    raise ExecutionError(f"{spec.name}: unknown conv variant {var!r}")


def run_layer(ctx: _Ctx, spec: LayerSpec, x: Tensor) -> Tensor:
    kind = spec.kind
    if kind == "graph_conv_block":
        y = _graph_conv(ctx, spec, x)
    elif kind == "attention":
        y = _attention(ctx, spec, x)
    elif kind == "activation":
        y = ad.ACTIVATIONS[spec.attrs["fn"]](x)
    elif kind == "temporal_conv":
        y = _temporal(ctx, spec, x)
    elif kind == "dropout":
        y = ad.dropout(x, spec.attrs["p"], ctx.rng, ctx.training)
    elif kind == "pointwise_conv":
        y = _pw(ctx, spec, "", x, bn=spec.attrs["bn"])
    elif kind == "global_pool":
        y = ad.mean(x, (2, 3))
    elif kind == "linear_classifier":
        y = ad.channel_mix(x, ctx.p(spec, "weight"), ctx.p(spec, "bias"))
    else:
        raise ExecutionError(f"{spec.name}: layer kind {kind!r} is not executable on its own")
    want = spec.out_shape if kind not in ("global_pool", "linear_classifier") else spec.out_shape[:1]
    if y.shape[1:] != tuple(want):
        raise ExecutionError(f"{spec.name}: produced {y.shape[1:]}, expected {tuple(want)}")
    return y


def _run_blocks(ctx: _Ctx, blocks: tuple[Block, ...], x: Tensor) -> Tensor:
    for block in blocks:
        y = x
        for spec in block.layers:
            y = run_layer(ctx, spec, y)
        x = ad.add(y, x) if block.residual else y
    return x


def _stream_input(batch, name: str):
    if isinstance(batch, Mapping):
        return batch[name]
    return getattr(batch, name)


def forward(graph: ArchitectureGraph, weights: ModelWeights, batch, mode: str = "eval",
            rng: np.random.Generator | None = None, params: Mapping[str, Tensor] | None = None,
            batch_stats: bool | None = None) -> Tensor:
    """Logits of shape (N, 2) for a batch of P, V, A, B arrays shaped (N, C, T, V).

    ``params`` lets the caller pass gradient-tracking tensors; by default the
    weights are wrapped as constants. ``batch_stats`` overrides whether batch
    norm uses batch statistics (default: only in train mode).
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    training = mode == "train"
    if params is None:
        params = weights.tensors(requires_grad=False)
    ctx = _Ctx(graph, params, weights.buffers, training,
               training if batch_stats is None else batch_stats, rng, weights.dtype)
    outs = []
    for name in STREAMS:
        x = np.asarray(_stream_input(batch, name))
        want = graph.input_shapes[name]
        if x.ndim != 4 or x.shape[1:] != tuple(want):
            first = graph.streams[name][0].layers[0].name
            raise ExecutionError(f"{first}: input {name} has shape {x.shape[1:]}, expected {tuple(want)}")
        outs.append(_run_blocks(ctx, graph.streams[name], Tensor(x.astype(ctx.dtype, copy=False))))
    x = ad.concat(outs, axis=1)
    for spec in graph.fusion[1:]:
        x = run_layer(ctx, spec, x)
    x = _run_blocks(ctx, graph.main, x)
    for spec in graph.head:
        x = run_layer(ctx, spec, x)
    return x


def predict_proba(graph: ArchitectureGraph, weights: ModelWeights, batch, batch_size: int = 64) -> np.ndarray:
    """Positive-class probability per sample, eval mode, in chunks."""
    n = len(_stream_input(batch, "P"))
    out = []
    for lo in range(0, n, batch_size):
        chunk = {k: _stream_input(batch, k)[lo: lo + batch_size] for k in STREAMS}
        z = forward(graph, weights, chunk, "eval").data.astype(np.float64)
        out.append(1.0 / (1.0 + np.exp(z[:, 0] - z[:, 1])))
    return np.concatenate(out) if out else np.zeros(0)


# --- checkpoints ------------------------------------------------------------

def save_weights(path, weights: ModelWeights, extra: dict | None = None) -> None:
    """Write params and buffers to an npz container with a JSON header."""
    meta = {
        "format": WEIGHTS_FORMAT,
        "graph_hash": weights.graph_hash,
        "seed": weights.seed,
        "dtype": str(weights.dtype),
        "params": {k: list(v.shape) for k, v in weights.params.items()},
        "buffers": {k: list(v.shape) for k, v in weights.buffers.items()},
        "extra": extra or {},
    }
    arrays = {f"param/{k}": v for k, v in weights.params.items()}
    arrays.update({f"buffer/{k}": v for k, v in weights.buffers.items()})
    arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    with open(Path(path), "wb") as fh:
        np.savez(fh, **arrays)


def load_weights(path, graph: ArchitectureGraph | None = None) -> tuple[ModelWeights, dict]:
    with np.load(Path(path)) as z:
        meta = json.loads(bytes(z["meta"]).decode())
        if meta.get("format") != WEIGHTS_FORMAT:
            raise ModelMismatchError(f"unsupported weights format {meta.get('format')!r}")
        params = {k: z[f"param/{k}"] for k in meta["params"]}
        buffers = {k: z[f"buffer/{k}"] for k in meta["buffers"]}
    w = ModelWeights(params, buffers, meta["seed"], meta["graph_hash"])
    if graph is not None:
        check_compatible(graph, w)
    return w, meta


def check_compatible(graph: ArchitectureGraph, weights: ModelWeights) -> None:
    if weights.graph_hash is not None and weights.graph_hash != graph.hash:
        raise ModelMismatchError(f"weights built for graph {weights.graph_hash}, got {graph.hash}")
    layout = param_layout(graph)
    if set(layout) != set(weights.params):
        raise ModelMismatchError("parameter names differ from the architecture")
    for k, (shape, _) in layout.items():
        if tuple(weights.params[k].shape) != tuple(shape):
            raise ModelMismatchError(f"{k}: shape {weights.params[k].shape}, expected {shape}")
