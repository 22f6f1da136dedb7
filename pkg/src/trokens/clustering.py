"""Spherical k-means over all appearance tokens of a video."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

from .data import FeatureVolume
from .errors import InvalidClusterCount, InvalidShape

MAX_ITER = 50


@dataclass
class ClusterAssignment:
    labels: np.ndarray  # (H, W, T) int
    centroids: np.ndarray  # (L_eff, C), unit norm
    first_frame: List[int]
    member_counts: List[int]
    objective_trace: List[float]
    requested_L: int = 0

    @property
    def L_effective(self) -> int:
        return len(self.member_counts)

    def mask(self, l: int) -> np.ndarray:
        return self.labels == l


def _normalize(x: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(x, axis=-1, keepdims=True)
    return x / np.where(n > 0, n, 1.0)


def kmeans_pp(X: np.ndarray, k: int, rng) -> np.ndarray:
    """k-means++ seeding under cosine distance; ``X`` rows are unit vectors.

    Stops early when every remaining point coincides with a chosen centre.
    """
    n = X.shape[0]
    idx = [int(rng.integers(n))]
    d = np.maximum(1.0 - X @ X[idx[0]], 0.0)
    for _ in range(1, k):
        w = d * d
        tot = w.sum()
        if tot <= 0:
            break
        # inverse-CDF draw keeps the result independent of BLAS scheduling
        j = int(np.searchsorted(np.cumsum(w), rng.random() * tot, side="right"))
        j = min(j, n - 1)
        idx.append(j)
        d = np.minimum(d, np.maximum(1.0 - X @ X[j], 0.0))
    return X[idx].copy()


def _objective(X, C, lab):
    return float(np.sum(1.0 - np.einsum("ij,ij->i", X, C[lab])))


def assign(X: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    return np.argmax(X @ centroids.T, axis=1)


def spherical_kmeans(X: np.ndarray, k: int, rng, max_iter: int = MAX_ITER):
    """Returns ``(labels, centroids, objective_trace)`` with empty clusters kept."""
    X = _normalize(np.asarray(X, dtype=np.float64))
    # seed on a canonical (lexicographic) token order so the result does not
    # depend on how the caller laid the tokens out
    order = np.lexsort(X.T[::-1])
    C = kmeans_pp(X[order], k, rng)
    lab = assign(X, C)
    trace = [_objective(X, C, lab)]
    for _ in range(max_iter):
        sums = np.zeros_like(C)
        np.add.at(sums, lab, X)
        newC = np.where(np.linalg.norm(sums, axis=1, keepdims=True) > 0, _normalize(sums), C)
        new_lab = assign(X, newC)
        C = newC
        trace.append(_objective(X, C, new_lab))
        if np.array_equal(new_lab, lab):
            break
        lab = new_lab
    return lab, C, trace


def cluster_tokens(fv: FeatureVolume, L: int, rng_seed: int, max_iter: int = MAX_ITER) -> ClusterAssignment:
    """Cluster every ``H*W*T`` token jointly into at most ``L`` groups.

    Empty clusters are dropped and the surviving ones relabelled
    ``0..L_eff-1`` in order of their original index.
    """
    F = fv.features
    H, W, T, C = F.shape
    n = H * W * T
    if L < 1 or L > n:
        raise InvalidClusterCount(f"L={L} must lie in [1, {n}]")
    X = F.reshape(n, C)
    lab, cent, trace = spherical_kmeans(X, L, np.random.default_rng(rng_seed), max_iter)
    used = np.unique(lab)
    remap = np.full(cent.shape[0], -1)
    remap[used] = np.arange(len(used))
    lab = remap[lab].reshape(H, W, T)
    cent = cent[used]
    first, counts = [], []
    for l in range(len(used)):
        m = lab == l
        counts.append(int(m.sum()))
        first.append(int(np.nonzero(m.any(axis=(0, 1)))[0][0]))
    return ClusterAssignment(lab.astype(np.int64), cent.astype(np.float32), first, counts, trace, L)


def cluster_purity(a: ClusterAssignment, gt_masks) -> float:
    """Mean over clusters of the largest ground-truth share inside the cluster."""
    labels = a.labels if isinstance(a, ClusterAssignment) else np.asarray(a)
    gt = np.asarray(gt_masks)
    if gt.shape != labels.shape:
        raise InvalidShape(f"ground truth {gt.shape} vs labels {labels.shape}")
    lab = labels.ravel()
    g = np.unique(gt.ravel(), return_inverse=True)[1]
    out = []
    for l in np.unique(lab):
        members = g[lab == l]
        out.append(np.bincount(members).max() / members.size)
    return float(np.mean(out))


def assignment_from_labels(labels: np.ndarray) -> ClusterAssignment:
    """Rebuild an assignment from a stored ``(H, W, T)`` label map.

    Labels may arrive float-encoded; they must be whole numbers ``0..L-1``
    with every label present.  Centroids and the objective are not stored,
    so they come back empty.
    """
    lab = np.asarray(labels)
    if lab.ndim != 3:
        raise InvalidShape(f"label map must be H x W x T, got {lab.shape}")
    li = np.rint(lab).astype(np.int64)
    if not np.array_equal(li, lab) or li.min() < 0:
        raise InvalidShape("labels must be non-negative whole numbers")
    L = int(li.max()) + 1
    counts = np.bincount(li.ravel(), minlength=L)
    if np.any(counts == 0):
        raise InvalidClusterCount("label map skips cluster ids")
    first = [int(np.nonzero((li == l).any(axis=(0, 1)))[0][0]) for l in range(L)]
    return ClusterAssignment(li, np.zeros((L, 0), np.float32), first, [int(c) for c in counts], [], L)
