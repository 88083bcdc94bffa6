"""Dataset container (JSON lines, one video per record) and window datasets."""
from __future__ import annotations

import json
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .signal import (DEFAULT_CUTOFF_HZ, FeatureSet, MalformedInputError, RawSequence,
                     compute_features, preprocess, segment_windows)
from .skeleton import SkeletonGraph

SCHEMA = "skelnas.video/1"
FIELD_ORDER = ("schema", "video_id", "fps", "label", "frames")


class SchemaError(ValueError):
    pass


def normalize_record(rec: dict, lineno: int | None = None) -> dict:
    """Validate one container record and return it with canonical field order."""
    where = f"record {lineno}: " if lineno is not None else ""
    schema = rec.get("schema", SCHEMA)
    if schema != SCHEMA:
        raise SchemaError(f"{where}unsupported schema {schema!r}, expected {SCHEMA!r}")
    unknown = set(rec) - set(FIELD_ORDER)
    if unknown:
        raise SchemaError(f"{where}unknown fields {sorted(unknown)}")
    for key in ("video_id", "fps", "frames"):
        if key not in rec:
            raise SchemaError(f"{where}missing field {key!r}")
    label = rec.get("label")
    if label not in (None, 0, 1):
        raise SchemaError(f"{where}label must be 0, 1 or null, got {label!r}")
    try:
        seq = RawSequence(str(rec["video_id"]), float(rec["fps"]), np.asarray(rec["frames"], float), label)
    except (MalformedInputError, ValueError) as exc:
        raise SchemaError(f"{where}{exc}") from None
    return {
        "schema": SCHEMA,
        "video_id": seq.video_id,
        "fps": seq.fps,
        "label": label,
        "frames": seq.frames.tolist(),
    }


def record_to_sequence(rec: dict) -> RawSequence:
    return RawSequence(rec["video_id"], rec["fps"], np.asarray(rec["frames"], float), rec["label"])


def sequence_to_record(seq: RawSequence) -> dict:
    return {
        "schema": SCHEMA,
        "video_id": seq.video_id,
        "fps": float(seq.fps),
        "label": None if seq.label is None else int(seq.label),
        "frames": np.asarray(seq.frames).tolist(),
    }


def read_container(path: str | Path) -> list[RawSequence]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"record {lineno}: invalid JSON ({exc.msg})") from None
            out.append(record_to_sequence(normalize_record(rec, lineno)))
    return out


def write_container(path: str | Path, seqs: Iterable[RawSequence]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for seq in seqs:
            fh.write(json.dumps(sequence_to_record(seq), separators=(",", ":")))
            fh.write("\n")


def convert_container(src: str | Path, dst: str | Path) -> int:
    """Validate ``src`` and rewrite it with canonical field order; returns record count."""
    seqs = read_container(src)
    write_container(dst, seqs)
    return len(seqs)


@dataclass
class WindowSet:
    """Normalized windows of several videos, stacked for batched training."""
    frames: np.ndarray  # (N, 150, 29, 2)
    labels: np.ndarray  # (N,)
    video_ids: list[str]
    window_index: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "WindowSet":
        idx = np.asarray(idx)
        return WindowSet(self.frames[idx], self.labels[idx],
                         [self.video_ids[i] for i in idx], self.window_index[idx])

    def features(self, graph: SkeletonGraph, cutoff_hz: float = DEFAULT_CUTOFF_HZ) -> FeatureSet:
        return compute_features(self.frames, graph, cutoff_hz=cutoff_hz)

    def videos(self) -> dict[str, np.ndarray]:
        """Window indices grouped per video, in first-appearance order."""
        groups: dict[str, list[int]] = {}
        for i, vid in enumerate(self.video_ids):
            groups.setdefault(vid, []).append(i)
        return {k: np.asarray(v) for k, v in groups.items()}


def build_windows(seqs: Sequence[RawSequence], graph: SkeletonGraph) -> WindowSet:
    frames, labels, ids, widx = [], [], [], []
    for seq in seqs:
        if seq.label is None:
            raise SchemaError(f"{seq.video_id}: training data needs labels")
        for w in segment_windows(preprocess(seq, graph)):
            frames.append(w.frames)
            labels.append(w.label)
            ids.append(w.source_video_id)
            widx.append(w.window_index)
    if not frames:
        return WindowSet(np.zeros((0, 150, graph.vertex_count, 2)), np.zeros(0, int), [], np.zeros(0, int))
    return WindowSet(np.stack(frames), np.asarray(labels, int), ids, np.asarray(widx, int))


def stratified_split(seqs: Sequence[RawSequence], fractions=(0.5, 0.25, 0.25),
                     seed: int = 1234) -> tuple[list[RawSequence], ...]:
    """Split videos (never windows) into train/val/test, per label."""
    if not np.isclose(sum(fractions), 1.0):
        raise ValueError("split fractions must sum to 1")
    rng = np.random.default_rng([seed, 7])
    parts: list[list[RawSequence]] = [[] for _ in fractions]
    for label in sorted({s.label for s in seqs}, key=lambda v: -1 if v is None else v):
        group = [s for s in seqs if s.label == label]
        order = rng.permutation(len(group))
        bounds = np.round(np.cumsum((0,) + tuple(fractions)) * len(group)).astype(int)
        for k in range(len(fractions)):
            parts[k].extend(group[i] for i in order[bounds[k]:bounds[k + 1]])
    return tuple(sorted(p, key=lambda s: s.video_id) for p in parts)


def save_features(path: str | Path, ws: WindowSet, graph: SkeletonGraph,
                  cutoff_hz: float = DEFAULT_CUTOFF_HZ) -> None:
    f = ws.features(graph, cutoff_hz)
    np.savez_compressed(
        path, P=f.P, V=f.V, A=f.A, B=f.B, labels=ws.labels,
        video_ids=np.asarray(ws.video_ids), window_index=ws.window_index,
    )
