"""Synthetic two-class skeleton recordings for desk-scale experiments.

Class 0 moves its limbs with smooth, broad, low-frequency oscillations;
class 1 has reduced limb amplitude plus a fast jitter. Both are rendered by
forward kinematics on the 29-joint skeleton and placed in a random image
frame (offset, scale, tilt) so preprocessing has something to undo.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .signal import RawSequence
from .skeleton import SkeletonGraph, load_skeleton

# supine infant seen from above, centimetres, y towards the head
REST_POSE = np.array([
    (0, 0), (0, 10), (0, 20), (0, 26), (0, 29), (0, 32),
    (-1.5, 34), (1.5, 34), (-4, 33), (4, 33), (0, 39),
    (-7, 20), (-13, 14), (-17, 8), (-18, 5),
    (7, 20), (13, 14), (17, 8), (18, 5),
    (-4, -1), (-6, -11), (-7, -20), (-7, -22), (-9, -23),
    (4, -1), (6, -11), (7, -20), (7, -22), (9, -23),
], dtype=float)

LIMB_PARTS = ("left_arm", "right_arm", "left_leg", "right_leg")


@dataclass(frozen=True)
class SynthConfig:
    videos_per_class: int = 20
    frames_per_video: int = 450
    fps: float = 30.0
    noise_std: float = 0.0
    freq_band: tuple[tuple[float, float], tuple[float, float]] = ((0.3, 1.5), (0.3, 1.5))
    limb_amplitude: tuple[float, float] = (0.35, 0.1)
    jitter_band: tuple[float, float] = (2.5, 4.0)
    jitter_amplitude: tuple[float, float] = (0.0, 0.08)
    components: int = 3
    seed: int = 1234

    def __post_init__(self):
        if self.videos_per_class < 1 or self.frames_per_video < 1:
            raise ValueError("video and frame counts must be positive")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if not self.fps > 0:
            raise ValueError("fps must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        d = dict(d)
        for key in ("freq_band",):
            if key in d:
                d[key] = tuple(tuple(b) for b in d[key])
        for key in ("limb_amplitude", "jitter_band", "jitter_amplitude"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def _oscillation(rng, t, n_bones, amp, band, k):
    freqs = rng.uniform(*band, size=(n_bones, k))
    phases = rng.uniform(0, 2 * np.pi, size=(n_bones, k))
    weights = rng.uniform(0.5, 1.0, size=(n_bones, k))
    weights *= amp / weights.sum(axis=1, keepdims=True)
    waves = np.sin(2 * np.pi * freqs[..., None] * t + phases[..., None])
    return (weights[..., None] * waves).sum(axis=1)  # (n_bones, T)


def render(angles: np.ndarray, graph: SkeletonGraph, rest: np.ndarray = REST_POSE) -> np.ndarray:
    """Forward kinematics: per-bone angle offsets (V, T) -> joint positions (T, V, 2)."""
    parents = graph.parents()
    order = np.argsort(graph.hop_distances()[graph.central_joint], kind="stable")
    T = angles.shape[1]
    pos = np.zeros((T, graph.vertex_count, 2))
    phi = np.zeros((graph.vertex_count, T))
    pos[:, graph.central_joint] = rest[graph.central_joint]
    for j in order:
        p = parents[j]
        if p == j:
            continue
        phi[j] = phi[p] + angles[j]
        r = rest[j] - rest[p]
        c, s = np.cos(phi[j]), np.sin(phi[j])
        pos[:, j, 0] = pos[:, p, 0] + c * r[0] - s * r[1]
        pos[:, j, 1] = pos[:, p, 1] + s * r[0] + c * r[1]
    return pos


def _video(cfg: SynthConfig, graph: SkeletonGraph, label: int, index: int) -> RawSequence:
    rng = np.random.default_rng([cfg.seed, label, index])
    t = np.arange(cfg.frames_per_video) / cfg.fps
    limb = np.zeros(graph.vertex_count, dtype=bool)
    for name in LIMB_PARTS:
        limb[list(graph.parts[name])] = True
    n = graph.vertex_count
    angles = np.zeros((n, len(t)))
    k = cfg.components
    angles[limb] = _oscillation(rng, t, limb.sum(), cfg.limb_amplitude[label], cfg.freq_band[label], k)
    if cfg.jitter_amplitude[label] > 0:
        angles[limb] += _oscillation(rng, t, limb.sum(), cfg.jitter_amplitude[label], cfg.jitter_band, k)
    # slow head and trunk sway, identical statistics for both classes
    angles[~limb] = _oscillation(rng, t, (~limb).sum(), 0.03, (0.1, 0.4), 2)
    pos = render(angles, graph)

    scale = rng.uniform(3.0, 6.0)
    tilt = rng.uniform(-0.3, 0.3)
    offset = rng.uniform(150.0, 450.0, size=2)
    c, s = np.cos(tilt), np.sin(tilt)
    frames = pos @ (scale * np.array([[c, -s], [s, c]])).T + offset
    if cfg.noise_std > 0:
        frames = frames + rng.normal(0.0, cfg.noise_std, size=frames.shape)
    return RawSequence(video_id=f"synth-{label}-{index:03d}", fps=cfg.fps, frames=frames, label=label)


def generate_synthetic(cfg: SynthConfig, graph: SkeletonGraph | None = None) -> list[RawSequence]:
    graph = graph or load_skeleton()
    return [_video(cfg, graph, label, i)
            for label in (0, 1) for i in range(cfg.videos_per_class)]
