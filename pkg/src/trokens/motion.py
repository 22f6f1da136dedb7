"""Intra-trajectory orientation histograms and inter-trajectory offsets.

Angles follow ``atan2(dy, dx)`` on the stored normalized coordinates (``y``
down) and are mapped to ``[0, 360)``.  Bin ``b`` is centred at
``b * 360 / B``; a displacement splits its magnitude linearly between the two
centres that enclose its angle, wrapping from bin ``B-1`` back to bin 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import TrajectorySet
from .errors import ConfigError, ShapeError


@dataclass(frozen=True)
class HodConfig:
    bins: int = 32
    delta: int = 1
    degrees_span: int = 360

    def validate(self, T: int) -> None:
        if self.bins < 2:
            raise ConfigError(f"need at least 2 bins, got {self.bins}")
        if not 1 <= self.delta < T:
            raise ConfigError(f"delta={self.delta} must satisfy 1 <= delta < T={T}")


@dataclass
class LinearLayer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return linear(x, self)


def init_linear(in_dim: int, out_dim: int, rng, dtype=np.float32) -> LinearLayer:
    """Uniform init in +-1/sqrt(fan_in)."""
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    k = 1.0 / np.sqrt(in_dim)
    return LinearLayer(rng.uniform(-k, k, (out_dim, in_dim)).astype(dtype),
                       rng.uniform(-k, k, out_dim).astype(dtype))


def linear(x: np.ndarray, layer: LinearLayer) -> np.ndarray:
    if x.shape[-1] != layer.in_dim or layer.bias.shape != (layer.out_dim,):
        raise ShapeError(f"input width {x.shape[-1]} does not match layer {layer.weight.shape}")
    return x @ layer.weight.T + layer.bias


def _points(traj) -> np.ndarray:
    p = traj.points if isinstance(traj, TrajectorySet) else np.asarray(traj)
    if p.ndim != 3 or p.shape[2] != 2:
        raise ShapeError(f"trajectories must be M x T x 2, got {p.shape}")
    return p


def displacements(traj, delta: int) -> np.ndarray:
    """``(M, T, 2)`` offsets ``p_t - p_{t-delta}``, zero for ``t < delta``."""
    p = _points(traj)
    T = p.shape[1]
    if not 1 <= delta < T:
        raise ConfigError(f"delta={delta} must satisfy 1 <= delta < T={T}")
    out = np.zeros_like(p)
    out[:, delta:] = p[:, delta:] - p[:, :-delta]
    return out


def displacement_only_descriptor(traj, delta: int = 1) -> np.ndarray:
    return displacements(traj, delta)


def hod_descriptor(traj, cfg: HodConfig = HodConfig()) -> np.ndarray:
    """Magnitude-weighted, soft-binned direction histogram per time step.

    Returns ``(M, T, B)``; rows with ``t < delta`` and zero displacements are
    all zeros.  No normalization is applied, so a row sums to the
    displacement length.
    """
    p = _points(traj)
    M, T, _ = p.shape
    cfg.validate(T)
    B = cfg.bins
    d = displacements(p.astype(np.float64), cfg.delta)[:, cfg.delta:]
    mag = np.hypot(d[..., 0], d[..., 1])
    theta = np.degrees(np.arctan2(d[..., 1], d[..., 0])) % 360.0
    pos = theta / (360.0 / B)
    lo = np.floor(pos)
    w_hi = pos - lo
    lo = lo.astype(np.int64) % B
    hi = (lo + 1) % B
    hist = np.zeros((M, T - cfg.delta, B))
    mi, ti = np.meshgrid(np.arange(M), np.arange(T - cfg.delta), indexing="ij")
    hist[mi, ti, lo] = mag * (1.0 - w_hi)
    hist[mi, ti, hi] += mag * w_hi
    out = np.zeros((M, T, B), dtype=p.dtype if p.dtype == np.float64 else np.float32)
    out[:, cfg.delta:] = hist
    return out


def inter_descriptor(traj) -> np.ndarray:
    """``(M, T, 2M)`` relative positions; slot ``2m'`` / ``2m'+1`` of row
    ``m`` holds ``x_m - x_m'`` / ``y_m - y_m'``."""
    p = _points(traj)
    M, T, _ = p.shape
    if M < 1:
        raise ShapeError("need at least one trajectory")
    diff = p[:, None] - p[None, :]  # (M, M', T, 2)
    return np.ascontiguousarray(diff.transpose(0, 2, 1, 3)).reshape(M, T, 2 * M)


def project_intra(hod: np.ndarray, layer: LinearLayer) -> np.ndarray:
    if hod.ndim != 3:
        raise ShapeError(f"expected M x T x B, got {hod.shape}")
    return linear(hod, layer)


def project_inter(cross: np.ndarray, layer: LinearLayer) -> np.ndarray:
    if cross.ndim != 3 or cross.shape[2] != 2 * cross.shape[0]:
        raise ShapeError(f"expected M x T x 2M, got {cross.shape}")
    return linear(cross, layer)
