"""Seed-point selection (semantic-aware and uniform grid) and track snapping."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence

import numpy as np

from .clustering import ClusterAssignment
from .data import TrajectorySet
from .errors import InvalidGrid, NoTracksError, QuotaError


@dataclass
class SeedPoints:
    x: np.ndarray
    y: np.ndarray
    t0: np.ndarray
    cluster: np.ndarray

    def __len__(self):
        return len(self.x)

    def to_json(self) -> dict:
        return {"points": [{"x": float(a), "y": float(b), "t0": int(c), "cluster": int(d)}
                           for a, b, c, d in zip(self.x, self.y, self.t0, self.cluster)]}

    @classmethod
    def from_json(cls, doc) -> "SeedPoints":
        pts = doc["points"]
        return cls(np.array([p["x"] for p in pts]), np.array([p["y"] for p in pts]),
                   np.array([p["t0"] for p in pts], dtype=np.int64),
                   np.array([p["cluster"] for p in pts], dtype=np.int64))


def save_seeds(path, seeds: SeedPoints) -> None:
    Path(path).write_text(json.dumps(seeds.to_json()))


def load_seeds(path) -> SeedPoints:
    return SeedPoints.from_json(json.loads(Path(path).read_text()))


def allocate_quotas(M: int, sizes: Sequence[int]) -> List[int]:
    """floor(M/L) points per cluster, the remainder going one each to the
    largest clusters (ties broken by lower cluster id)."""
    L = len(sizes)
    if L < 1 or M < L:
        raise QuotaError(f"cannot spread M={M} points over {L} clusters")
    q, r = divmod(M, L)
    quotas = [q] * L
    for l in sorted(range(L), key=lambda i: (-sizes[i], i))[:r]:
        quotas[l] += 1
    return quotas


def sample_semantic(a: ClusterAssignment, M: int, rng_seed: int) -> SeedPoints:
    """Per-cluster quotas, drawn from each cluster's first frame.

    Seeds come out grouped by cluster, clusters ordered by
    ``(first_frame, -size, id)``, and raster ordered inside a cluster.
    """
    rng = np.random.default_rng(rng_seed)
    H, W, _ = a.labels.shape
    quotas = allocate_quotas(M, a.member_counts)
    order = sorted(range(a.L_effective), key=lambda l: (a.first_frame[l], -a.member_counts[l], l))
    xs, ys, ts, cs = [], [], [], []
    for l in order:
        t0 = a.first_frame[l]
        rows, cols = np.nonzero(a.labels[:, :, t0] == l)
        n, k = len(rows), quotas[l]
        if n >= k:
            pick = np.sort(rng.choice(n, size=k, replace=False))
            px = (cols[pick] + 0.5) / W
            py = (rows[pick] + 0.5) / H
        else:
            pick = np.concatenate([np.arange(n), np.sort(rng.integers(0, n, size=k - n))])
            px = (cols[pick] + 0.5) / W
            py = (rows[pick] + 0.5) / H
            # duplicates get a quarter-patch nudge
            jit = rng.choice([-0.25, 0.25], size=(k - n, 2))
            px[n:] = np.clip(px[n:] + jit[:, 0] / W, 0.0, 1.0)
            py[n:] = np.clip(py[n:] + jit[:, 1] / H, 0.0, 1.0)
        xs.append(px)
        ys.append(py)
        ts.append(np.full(k, t0))
        cs.append(np.full(k, l))
    return SeedPoints(np.concatenate(xs), np.concatenate(ys), np.concatenate(ts).astype(np.int64),
                      np.concatenate(cs).astype(np.int64))


def sample_uniform_grid(M: int, t0: int = 0) -> SeedPoints:
    g = math.isqrt(M) if M > 0 else 0
    if g * g != M or M == 0:
        raise InvalidGrid(f"M={M} is not a positive perfect square")
    c = (np.arange(g) + 0.5) / g
    yy, xx = np.meshgrid(c, c, indexing="ij")
    return SeedPoints(xx.ravel(), yy.ravel(), np.full(M, t0, dtype=np.int64), np.full(M, -1, dtype=np.int64))


def track_points(seeds: SeedPoints, source: TrajectorySet, mode: str = "ground_truth") -> TrajectorySet:
    """Snap every seed to the nearest source track at the seed's frame.

    Only tracks visible at that frame are candidates (all tracks if none is).
    ``ground_truth`` mode holds the position constant before ``t0``;
    ``precomputed`` returns the matched track unchanged.
    """
    if source is None or source.M == 0:
        raise NoTracksError("no tracks to snap to")
    if mode not in ("ground_truth", "gt", "precomputed", "file"):
        raise ValueError(f"unknown tracking mode {mode!r}")
    backfill = mode in ("ground_truth", "gt")
    P = source.points.astype(np.float64)
    V = source.visibility
    M, T = len(seeds), source.T
    out = np.empty((M, T, 2), dtype=np.float32)
    vis = np.empty((M, T), dtype=np.float32)
    for i in range(M):
        t0 = int(seeds.t0[i])
        if t0 < 0 or t0 >= T:
            raise NoTracksError(f"seed frame {t0} outside the {T} tracked frames")
        d = (P[:, t0, 0] - seeds.x[i]) ** 2 + (P[:, t0, 1] - seeds.y[i]) ** 2
        visible = V[:, t0] > 0
        if visible.any():
            d = np.where(visible, d, np.inf)
        j = int(np.argmin(d))
        out[i] = source.points[j]
        vis[i] = V[j]
        if backfill and t0 > 0:
            out[i, :t0] = source.points[j, t0]
            vis[i, :t0] = V[j, t0]
    return TrajectorySet(out, vis, source.frame_dims)
