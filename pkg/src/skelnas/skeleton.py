"""Skeleton topology: the 29-joint graph, its rooted tree and hop distances."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

NUM_JOINTS = 29


class SkeletonError(ValueError):
    pass


@dataclass(frozen=True)
class SkeletonGraph:
    vertex_count: int
    edges: tuple[tuple[int, int], ...]
    central_joint: int
    trunk_pair: tuple[int, int]
    names: tuple[str, ...] = ()
    parts: dict[str, tuple[int, ...]] = field(default_factory=dict)
    version: int = 1

    def __post_init__(self):
        n = self.vertex_count
        seen = set()
        for i, j in self.edges:
            if not (0 <= i < n and 0 <= j < n):
                raise SkeletonError(f"edge ({i}, {j}) out of range for {n} vertices")
            if i == j:
                raise SkeletonError(f"self loop on joint {i}")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise SkeletonError(f"duplicate edge {key}")
            seen.add(key)
        for j in (self.central_joint, *self.trunk_pair):
            if not 0 <= j < n:
                raise SkeletonError(f"joint index {j} out of range")
        if self.trunk_pair[0] == self.trunk_pair[1]:
            raise SkeletonError("trunk pair must name two distinct joints")
        if self.names and len(self.names) != n:
            raise SkeletonError(f"expected {n} joint names, got {len(self.names)}")

    def adjacency(self) -> np.ndarray:
        """Symmetric 0/1 adjacency without self loops."""
        a = np.zeros((self.vertex_count, self.vertex_count))
        for i, j in self.edges:
            a[i, j] = a[j, i] = 1.0
        return a

    def neighbors(self) -> list[list[int]]:
        nb = [[] for _ in range(self.vertex_count)]
        for i, j in self.edges:
            nb[i].append(j)
            nb[j].append(i)
        return [sorted(x) for x in nb]

    def hop_distances(self) -> np.ndarray:
        """All-pairs shortest-path hop counts; -1 marks unreachable pairs."""
        n = self.vertex_count
        nb = self.neighbors()
        dist = np.full((n, n), -1, dtype=int)
        for s in range(n):
            dist[s, s] = 0
            queue = deque([s])
            while queue:
                u = queue.popleft()
                for v in nb[u]:
                    if dist[s, v] < 0:
                        dist[s, v] = dist[s, u] + 1
                        queue.append(v)
        return dist

    def is_connected(self) -> bool:
        return bool((self.hop_distances() >= 0).all())

    def parents(self) -> np.ndarray:
        """Parent of every joint in the BFS tree rooted at the central joint.

        The root is its own parent; unreachable joints are also their own parent.
        """
        parent = np.arange(self.vertex_count)
        nb = self.neighbors()
        visited = {self.central_joint}
        queue = deque([self.central_joint])
        while queue:
            u = queue.popleft()
            for v in nb[u]:
                if v not in visited:
                    visited.add(v)
                    parent[v] = u
                    queue.append(v)
        return parent

    def part_index(self) -> np.ndarray:
        """Body-part id per joint, in the declared part order."""
        idx = np.full(self.vertex_count, -1, dtype=int)
        for p, joints in enumerate(self.parts.values()):
            idx[list(joints)] = p
        if (idx < 0).any():
            # joints outside every declared part form one extra group
            idx[idx < 0] = len(self.parts)
        return idx


def parse_skeleton(text: str) -> SkeletonGraph:
    header: dict[str, str] = {}
    parts: dict[str, tuple[int, ...]] = {}
    edges = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if ":" in line:
            key, value = (s.strip() for s in line.split(":", 1))
            if key.startswith("part."):
                parts[key[5:]] = tuple(int(v) for v in value.split())
            else:
                header[key] = value
            continue
        tokens = line.split()
        if len(tokens) != 2:
            raise SkeletonError(f"line {lineno}: expected 'i j' edge, got {raw!r}")
        edges.append((int(tokens[0]), int(tokens[1])))
    try:
        n = int(header["vertices"])
        central = int(header["central_joint"])
        trunk = tuple(int(v) for v in header["trunk_pair"].split())
    except KeyError as exc:
        raise SkeletonError(f"missing header field {exc.args[0]!r}") from None
    if len(trunk) != 2:
        raise SkeletonError("trunk_pair needs exactly two joints")
    names = tuple(header.get("names", "").split())
    return SkeletonGraph(
        vertex_count=n,
        edges=tuple(edges),
        central_joint=central,
        trunk_pair=trunk,
        names=names,
        parts=parts,
        version=int(header.get("version", 1)),
    )


def load_skeleton(path: str | Path | None = None) -> SkeletonGraph:
    """Load a skeleton asset; defaults to the bundled 29-joint topology."""
    if path is None:
        text = resources.files("skelnas.data").joinpath("skeleton29.txt").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    return parse_skeleton(text)


def path_graph(n: int) -> SkeletonGraph:
    """Small chain graph, handy for tests and gradient checks."""
    return SkeletonGraph(
        vertex_count=n,
        edges=tuple((i, i + 1) for i in range(n - 1)),
        central_joint=0,
        trunk_pair=(0, 1),
        parts={"all": tuple(range(n))},
    )
