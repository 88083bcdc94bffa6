"""Preprocessing and feature extraction for skeleton sequences.

Raw recordings are resampled to 30 Hz, median filtered, centred on the
median mid-pelvis position and scaled by twice the trunk length, cut into
5 s windows with 2.5 s overlap, and turned into four feature tensors:
positions, velocities, accelerations and bones.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage
from scipy import signal as sps

from .skeleton import NUM_JOINTS, SkeletonGraph

TARGET_FPS = 30.0
WINDOW_FRAMES = 150
WINDOW_HOP = 75
DEFAULT_CUTOFF_HZ = 5.0
BUTTER_ORDER = 8


class MalformedInputError(ValueError):
    pass


class DegenerateGeometryError(ValueError):
    pass


@dataclass(frozen=True)
class RawSequence:
    video_id: str
    fps: float
    frames: np.ndarray  # (T, 29, 2)
    label: int | None = None

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        object.__setattr__(self, "frames", frames)
        if not self.fps > 0:
            raise MalformedInputError(f"{self.video_id}: fps must be positive, got {self.fps}")
        if frames.ndim != 3 or frames.shape[1:] != (NUM_JOINTS, 2):
            raise MalformedInputError(
                f"{self.video_id}: frames must be T x {NUM_JOINTS} x 2, got {frames.shape}"
            )
        if frames.shape[0] < 1:
            raise MalformedInputError(f"{self.video_id}: empty sequence")
        if not np.isfinite(frames).all():
            raise MalformedInputError(f"{self.video_id}: non-finite coordinates")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


# A normalized sequence has the same layout; fps is pinned to 30 Hz.
SkeletonSequence = RawSequence


@dataclass(frozen=True)
class Window:
    frames: np.ndarray  # (150, 29, 2)
    source_video_id: str
    window_index: int
    label: int | None = None

    @property
    def start(self) -> int:
        return self.window_index * WINDOW_HOP


@dataclass(frozen=True)
class FeatureSet:
    P: np.ndarray  # (..., 4, T, V): raw x, y then pelvis-relative x, y
    V: np.ndarray  # (..., 2, T, V) units / s
    A: np.ndarray  # (..., 2, T, V) units / s^2, low-passed
    B: np.ndarray  # (..., 2, T, V) bone length, bone angle

    def as_tuple(self):
        return self.P, self.V, self.A, self.B


def resample_30hz(seq: RawSequence) -> RawSequence:
    """Linearly interpolate every joint trajectory onto a 30 Hz grid."""
    if seq.fps == TARGET_FPS:
        return seq
    n = seq.n_frames
    if n < 2:
        raise MalformedInputError(f"{seq.video_id}: need at least 2 frames to resample")
    duration = (n - 1) / seq.fps
    n_out = int(np.floor(duration * TARGET_FPS + 1e-9)) + 1
    pos = np.arange(n_out) * (seq.fps / TARGET_FPS)
    lo = np.minimum(np.floor(pos + 1e-9).astype(int), n - 1)
    hi = np.minimum(lo + 1, n - 1)
    frac = np.clip(pos - lo, 0.0, 1.0)[:, None, None]
    frames = seq.frames[lo] * (1.0 - frac) + seq.frames[hi] * frac
    return replace(seq, fps=TARGET_FPS, frames=frames)


def median_filter(seq: RawSequence, size: int = 5) -> RawSequence:
    """Running median along time, edges replicated so the length is kept."""
    frames = ndimage.median_filter(seq.frames, size=(size, 1, 1), mode="nearest")
    return replace(seq, frames=frames)


def trunk_normalize(seq: RawSequence, graph: SkeletonGraph) -> SkeletonSequence:
    centre = np.median(seq.frames[:, graph.central_joint, :], axis=0)
    a, b = graph.trunk_pair
    trunk = np.median(np.linalg.norm(seq.frames[:, a] - seq.frames[:, b], axis=-1))
    if not trunk > 0:
        raise DegenerateGeometryError(f"{seq.video_id}: trunk length is zero")
    frames = (seq.frames - centre) / (2.0 * trunk)
    return replace(seq, frames=frames)


def preprocess(seq: RawSequence, graph: SkeletonGraph) -> SkeletonSequence:
    if seq.fps != TARGET_FPS:
        seq = resample_30hz(seq)
    return trunk_normalize(median_filter(seq), graph)


def window_count(n_frames: int, size: int = WINDOW_FRAMES, hop: int = WINDOW_HOP) -> int:
    if n_frames < size:
        return 0
    return (n_frames - size) // hop + 1


def segment_windows(seq: SkeletonSequence) -> list[Window]:
    if seq.fps != TARGET_FPS:
        raise MalformedInputError(f"{seq.video_id}: windows need {TARGET_FPS:g} Hz, got {seq.fps}")
    return [
        Window(
            frames=seq.frames[k * WINDOW_HOP: k * WINDOW_HOP + WINDOW_FRAMES],
            source_video_id=seq.video_id,
            window_index=k,
            label=seq.label,
        )
        for k in range(window_count(seq.n_frames))
    ]


def butterworth_lowpass(x, cutoff_hz: float = DEFAULT_CUTOFF_HZ, fs: float = TARGET_FPS,
                        order: int = BUTTER_ORDER, axis: int = -1, zero_phase: bool = True):
    """Low-pass Butterworth filter along ``axis``.

    With ``zero_phase`` the filter runs forward and backward, which squares
    the magnitude response and removes the phase lag.
    """
    if not 0 < cutoff_hz < fs / 2:
        raise ValueError(f"cutoff {cutoff_hz} Hz must lie in (0, {fs / 2}) for fs={fs}")
    sos = sps.butter(order, cutoff_hz, btype="low", fs=fs, output="sos")
    if zero_phase:
        return sps.sosfiltfilt(sos, x, axis=axis)
    return sps.sosfilt(sos, x, axis=axis)


def first_difference(x: np.ndarray, fps: float, axis: int = 0) -> np.ndarray:
    """Central difference inside, one-sided at both ends."""
    return np.gradient(x, 1.0 / fps, axis=axis, edge_order=1)


def second_difference(x: np.ndarray, fps: float, axis: int = 0) -> np.ndarray:
    x = np.moveaxis(x, axis, 0)
    out = np.empty_like(x)
    out[1:-1] = x[2:] - 2.0 * x[1:-1] + x[:-2]
    out[0] = out[1]
    out[-1] = out[-2]
    return np.moveaxis(out * fps * fps, 0, axis)


def bone_features(frames: np.ndarray, parents: np.ndarray) -> np.ndarray:
    """Length and angle (w.r.t. +x, in (-pi, pi]) of each joint-to-parent vector.

    ``frames`` is (..., T, V, 2); returns (..., T, V, 2). The root's bone is zero.
    """
    vec = frames[..., parents, :] - frames
    length = np.hypot(vec[..., 0], vec[..., 1])
    angle = np.arctan2(vec[..., 1], vec[..., 0])
    angle = np.where(angle <= -np.pi, np.pi, angle)
    root = parents == np.arange(len(parents))
    angle = np.where(root | (length == 0), 0.0, angle)
    return np.stack([length, angle], axis=-1)


def compute_features(frames: np.ndarray, graph: SkeletonGraph, fps: float = TARGET_FPS,
                     cutoff_hz: float = DEFAULT_CUTOFF_HZ) -> FeatureSet:
    """Features for one window (T, V, 2) or a stack of windows (N, T, V, 2)."""
    frames = np.asarray(frames, dtype=np.float64)
    t_axis = frames.ndim - 3
    rel = frames - frames[..., graph.central_joint: graph.central_joint + 1, :]
    vel = first_difference(frames, fps, axis=t_axis)
    acc = second_difference(frames, fps, axis=t_axis)
    acc = butterworth_lowpass(acc, cutoff_hz, fs=fps, axis=t_axis)
    bones = bone_features(frames, graph.parents())

    def chan_first(x):  # (..., T, V, C) -> (..., C, T, V)
        return np.moveaxis(x, -1, -3)

    P = np.concatenate([chan_first(frames), chan_first(rel)], axis=-3)
    return FeatureSet(P=P, V=chan_first(vel), A=chan_first(acc), B=chan_first(bones))


def extract_features(w: Window, graph: SkeletonGraph,
                     cutoff_hz: float = DEFAULT_CUTOFF_HZ) -> FeatureSet:
    return compute_features(w.frames, graph, TARGET_FPS, cutoff_hz)


@dataclass(frozen=True)
class AugmentRanges:
    scale: tuple[float, float] = (0.9, 1.1)
    rotation: tuple[float, float] = (-np.pi / 18, np.pi / 18)
    translation: tuple[float, float] = (-0.1, 0.1)

    def __post_init__(self):
        lo, hi = self.scale
        if not 0 < lo <= hi:
            raise ValueError(f"scale range must lie in (0, inf), got {self.scale}")
        if self.rotation[0] > self.rotation[1] or self.translation[0] > self.translation[1]:
            raise ValueError("augmentation ranges must be ordered (lo, hi)")

    @classmethod
    def identity(cls) -> "AugmentRanges":
        return cls(scale=(1.0, 1.0), rotation=(0.0, 0.0), translation=(0.0, 0.0))


def similarity_transform(frames: np.ndarray, scale: float, theta: float,
                         shift: tuple[float, float]) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    rot = np.array([[c, -s], [s, c]]) * scale
    return frames @ rot.T + np.asarray(shift)


def draw_transforms(rng: np.random.Generator, n: int, ranges: AugmentRanges) -> np.ndarray:
    """n rows of (scale, theta, dx, dy)."""
    return np.column_stack([
        rng.uniform(*ranges.scale, size=n),
        rng.uniform(*ranges.rotation, size=n),
        rng.uniform(*ranges.translation, size=n),
        rng.uniform(*ranges.translation, size=n),
    ])


def augment(w: Window, rng: np.random.Generator, ranges: AugmentRanges = AugmentRanges()) -> Window:
    s, theta, dx, dy = draw_transforms(rng, 1, ranges)[0]
    return replace(w, frames=similarity_transform(w.frames, s, theta, (dx, dy)))


def augment_batch(frames: np.ndarray, rng: np.random.Generator,
                  ranges: AugmentRanges = AugmentRanges()) -> np.ndarray:
    """Independent random similarity per window of an (N, T, V, 2) stack."""
    params = draw_transforms(rng, frames.shape[0], ranges)
    s, theta = params[:, 0], params[:, 1]
    cos, sin = np.cos(theta) * s, np.sin(theta) * s
    rot = np.stack([np.stack([cos, -sin], -1), np.stack([sin, cos], -1)], -2)  # (N, 2, 2)
    out = np.einsum("ntvc,ndc->ntvd", frames, rot)
    return out + params[:, None, None, 2:4]
