"""Numeric containers, the TROK tensor container and dataset manifests.

Tensors are plain ``numpy`` arrays (float32, or float64 on the gradient
checking path).  The TROK container is a small fixed-layout binary format::

    offset  size  field
    0       4     magic b"TROK"
    4       4     version, u32 (= 1)
    8       1     dtype code, u8 (1 = f32, 2 = f64)
    9       1     rank, u8
    10      6     reserved, zero
    16      8     payload size in bytes, u64
    24      8*r   dims, u64 each
    ...           payload, little-endian, row-major

All integers are little-endian.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    BadMagic,
    InvalidShape,
    MissingAsset,
    NonFinite,
    SplitOverlap,
    TrokensError,
    TruncatedPayload,
    UnsupportedVersion,
)

MAGIC = b"TROK"
VERSION = 1
HEADER_SIZE = 24
_HEADER = struct.Struct("<4sIBB6xQ")
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 1, np.dtype("float64"): 2}


def as_tensor(a, dtype=np.float32) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=dtype)


def check_finite(a: np.ndarray, where: str) -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise NonFinite(f"non-finite values in {where}")
    return a


def tensor_nbytes(shape: Sequence[int], dtype=np.float32) -> int:
    """Size in bytes of a TROK file holding a tensor of ``shape``."""
    return HEADER_SIZE + 8 * len(shape) + int(np.prod(shape)) * np.dtype(dtype).itemsize


def write_tensor(path, t) -> None:
    path = Path(path)
    arr = np.asarray(t)
    if arr.dtype not in _CODES:
        arr = arr.astype(np.float32)
    if arr.ndim == 0 or arr.ndim > 255:
        raise InvalidShape(f"{path}: unsupported rank {arr.ndim}")
    if any(d == 0 for d in arr.shape):
        raise InvalidShape(f"{path}: zero dimension in shape {arr.shape}")
    check_finite(arr, str(path))
    code = _CODES[arr.dtype]
    payload = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
    header = _HEADER.pack(MAGIC, VERSION, code, arr.ndim, len(payload))
    dims = struct.pack(f"<{arr.ndim}Q", *arr.shape)
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(dims)
            fh.write(payload)
    except OSError as exc:
        raise TrokensError(f"cannot write tensor to {path}: {exc}") from exc


def read_tensor(path) -> np.ndarray:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError as exc:
        raise MissingAsset(str(path)) from exc
    if raw[:4] != MAGIC:
        raise BadMagic(f"{path}: bad magic {raw[:4]!r}")
    if len(raw) < HEADER_SIZE:
        raise TruncatedPayload(f"{path}: header truncated")
    _, version, code, rank, nbytes = _HEADER.unpack_from(raw, 0)
    if version != VERSION:
        raise UnsupportedVersion(f"{path}: version {version}")
    if code not in _DTYPES:
        raise UnsupportedVersion(f"{path}: dtype code {code}")
    off = HEADER_SIZE + 8 * rank
    if len(raw) < off:
        raise TruncatedPayload(f"{path}: dims truncated")
    shape = struct.unpack_from(f"<{rank}Q", raw, HEADER_SIZE)
    dt = _DTYPES[code]
    need = int(np.prod(shape)) * dt.itemsize
    if nbytes != need or len(raw) - off < need:
        raise TruncatedPayload(f"{path}: expected {need} payload bytes, found {len(raw) - off}")
    arr = np.frombuffer(raw, dtype=dt, count=int(np.prod(shape)), offset=off)
    return arr.reshape(shape).astype(dt.newbyteorder("="))


@dataclass
class TrajectorySet:
    """``M`` point tracks over ``T`` frames in normalized [0, 1] coordinates."""

    points: np.ndarray  # (M, T, 2)
    visibility: np.ndarray  # (M, T)
    frame_dims: Tuple[int, int] = (0, 0)

    def __post_init__(self):
        self.points = as_tensor(self.points, self.points.dtype if self.points.dtype == np.float64 else np.float32)
        self.visibility = as_tensor(self.visibility)
        if self.points.ndim != 3 or self.points.shape[2] != 2:
            raise InvalidShape(f"trajectory points must be M x T x 2, got {self.points.shape}")
        M, T, _ = self.points.shape
        if M < 1 or T < 2:
            raise InvalidShape(f"need M >= 1 and T >= 2, got M={M}, T={T}")
        if self.visibility.shape != (M, T):
            raise InvalidShape(f"visibility must be {(M, T)}, got {self.visibility.shape}")
        check_finite(self.points, "trajectory points")

    @property
    def M(self) -> int:
        return self.points.shape[0]

    @property
    def T(self) -> int:
        return self.points.shape[1]

    def in_bounds(self) -> bool:
        vis = self.visibility > 0
        p = self.points[vis]
        return bool(np.all((p >= 0) & (p <= 1)))

    def to_tensor(self) -> np.ndarray:
        """Pack as an ``M x T x 3`` tensor (x, y, visibility)."""
        return np.concatenate([self.points, self.visibility[..., None].astype(self.points.dtype)], axis=2)

    @classmethod
    def from_tensor(cls, t: np.ndarray, frame_dims=(0, 0)) -> "TrajectorySet":
        t = np.asarray(t)
        if t.ndim != 3 or t.shape[2] != 3:
            raise InvalidShape(f"trajectory tensor must be M x T x 3, got {t.shape}")
        return cls(t[..., :2].copy(), t[..., 2].copy(), frame_dims)


def write_trajectories(path, traj: TrajectorySet) -> None:
    write_tensor(path, traj.to_tensor())


def read_trajectories(path) -> TrajectorySet:
    return TrajectorySet.from_tensor(read_tensor(path))


@dataclass
class FeatureVolume:
    """Appearance token grid of shape ``H x W x T x C_app``."""

    features: np.ndarray

    def __post_init__(self):
        self.features = as_tensor(self.features, self.features.dtype if self.features.dtype == np.float64 else np.float32)
        if self.features.ndim != 4 or min(self.features.shape) < 1:
            raise InvalidShape(f"feature volume must be H x W x T x C, got {self.features.shape}")

    @property
    def shape(self):
        return self.features.shape


@dataclass
class VideoRecord:
    id: str
    label: int
    feature_path: str
    trajectory_path: Optional[str] = None

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "label": self.label,
            "feature_path": self.feature_path,
            "trajectory_path": self.trajectory_path,
        }


@dataclass
class DatasetManifest:
    videos: List[VideoRecord]
    class_names: List[str]
    split: Dict[str, List[int]] = field(default_factory=dict)
    root: Optional[Path] = None

    def __post_init__(self):
        check_disjoint(self.split)

    def resolve(self, p: Optional[str]) -> Optional[Path]:
        if p is None:
            return None
        p = Path(p)
        if not p.is_absolute() and self.root is not None:
            p = self.root / p
        return p

    def videos_of(self, split: str) -> List[VideoRecord]:
        classes = set(self.split[split])
        return [v for v in self.videos if v.label in classes]

    def by_class(self, split: str) -> Dict[int, List[VideoRecord]]:
        out = {c: [] for c in self.split[split]}
        for v in self.videos:
            if v.label in out:
                out[v.label].append(v)
        return out

    def to_json(self) -> dict:
        return {
            "class_names": list(self.class_names),
            "split": {k: list(v) for k, v in self.split.items()},
            "videos": [v.to_json() for v in self.videos],
        }


def check_disjoint(split: Dict[str, List[int]]) -> None:
    names = list(split)
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            both = set(split[a]) & set(split[b])
            if both:
                raise SplitOverlap(f"classes {sorted(both)} appear in both '{a}' and '{b}'")


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise MissingAsset(str(path)) from exc
    for key in ("class_names", "split", "videos"):
        if key not in doc:
            raise TrokensError(f"{path}: manifest missing '{key}'")
    check_disjoint(doc["split"])
    videos = []
    for v in doc["videos"]:
        rec = VideoRecord(str(v["id"]), int(v["label"]), v["feature_path"], v.get("trajectory_path"))
        if rec.label < 0:
            raise TrokensError(f"{path}: negative label for video {rec.id}")
        videos.append(rec)
    m = DatasetManifest(videos, list(doc["class_names"]), {k: [int(c) for c in v] for k, v in doc["split"].items()},
                        root=path.parent)
    for rec in m.videos:
        for p in (rec.feature_path, rec.trajectory_path):
            if p is not None and not m.resolve(p).exists():
                raise MissingAsset(f"{path}: video {rec.id} references missing file {p}")
    return m


def save_manifest(path, m: DatasetManifest) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(m.to_json(), indent=1))
    os.replace(tmp, path)
