"""Sampling appearance tokens along trajectories and fusing token streams."""

from __future__ import annotations

import numpy as np

from .data import FeatureVolume, TrajectorySet
from .errors import NonFinite, ShapeError
from .motion import LinearLayer, linear


def sample_tokens(fv, traj, mode: str = "bilinear") -> np.ndarray:
    """Appearance tokens ``(M, T, C_app)`` read at each trajectory point.

    A normalized point ``(x, y)`` sits at continuous grid position
    ``(x*W - 0.5, y*H - 0.5)``, so token centres fall on integers.  Reads
    outside the grid clamp to the border tokens.
    """
    F = fv.features if isinstance(fv, FeatureVolume) else np.asarray(fv)
    P = traj.points if isinstance(traj, TrajectorySet) else np.asarray(traj)
    if F.ndim != 4 or P.ndim != 3 or P.shape[2] != 2:
        raise ShapeError(f"features {F.shape} / trajectories {P.shape}")
    H, W, T, C = F.shape
    if P.shape[1] != T:
        raise ShapeError(f"trajectories cover {P.shape[1]} frames, features {T}")
    M = P.shape[0]
    gx = P[..., 0].astype(np.float64) * W - 0.5
    gy = P[..., 1].astype(np.float64) * H - 0.5
    t = np.broadcast_to(np.arange(T), (M, T))
    if mode == "nearest":
        ix = np.clip(np.rint(gx), 0, W - 1).astype(np.int64)
        iy = np.clip(np.rint(gy), 0, H - 1).astype(np.int64)
        return F[iy, ix, t]
    if mode != "bilinear":
        raise ValueError(f"unknown sampling mode {mode!r}")
    gx = np.clip(gx, 0, W - 1)
    gy = np.clip(gy, 0, H - 1)
    x0 = np.floor(gx).astype(np.int64)
    y0 = np.floor(gy).astype(np.int64)
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    fx = (gx - x0)[..., None]
    fy = (gy - y0)[..., None]
    out = ((1 - fy) * ((1 - fx) * F[y0, x0, t] + fx * F[y0, x1, t])
           + fy * ((1 - fx) * F[y1, x0, t] + fx * F[y1, x1, t]))
    return out.astype(F.dtype)


def align_tokens(fv, traj, app_proj: LinearLayer, mode: str = "bilinear") -> np.ndarray:
    return linear(sample_tokens(fv, traj, mode), app_proj)


def fuse(appearance: np.ndarray, intra: np.ndarray, inter: np.ndarray) -> np.ndarray:
    if not (appearance.shape == intra.shape == inter.shape):
        raise ShapeError(f"cannot fuse {appearance.shape}, {intra.shape}, {inter.shape}")
    # add in value-sorted order (min + mid) + max, elementwise, so the result
    # does not depend on the argument order, bit for bit
    lo = np.minimum(appearance, intra)
    hi = np.maximum(appearance, intra)
    mid = np.maximum(lo, np.minimum(hi, inter))
    out = np.minimum(lo, inter)
    out += mid
    out += np.maximum(hi, inter)
    if not np.all(np.isfinite(out)):
        raise NonFinite("non-finite fused tokens")
    return out
