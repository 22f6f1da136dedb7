"""Deterministic synthetic videos whose classes are defined by motion.

A scene is a grid of appearance tokens with a few square blobs moving over a
static background texture.  Every blob patch centre is a ground-truth track,
so the sampler can snap seed points to tracks much as it would to the output
of a point tracker; a seed on the background snaps to the nearest blob track.

Coordinates are normalized to [0, 1] with ``y`` pointing down, i.e. screen
convention; "clockwise" therefore means increasing ``atan2(y, x)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .data import (
    DatasetManifest,
    FeatureVolume,
    TrajectorySet,
    VideoRecord,
    save_manifest,
    write_tensor,
    write_trajectories,
)
from .errors import SceneError

KINDS = (
    "translate_LR",
    "translate_RL",
    "translate_UD",
    "translate_DU",
    "circular_CW",
    "circular_CCW",
    "converge_pair",
    "diverge_pair",
    "zigzag_LR",
    "zigzag_RL",
    "zigzag_UD",
    "zigzag_DU",
    "static",
)

# class order puts the three held-out classes last
DEFAULT_CLASSES = (
    "translate_LR",
    "translate_UD",
    "circular_CW",
    "converge_pair",
    "static",
    "translate_RL",
    "circular_CCW",
    "diverge_pair",
)

# straight vs zig-zag at equal net displacement
ZIGZAG_CLASSES = (
    "translate_LR",
    "zigzag_LR",
    "translate_UD",
    "zigzag_UD",
    "translate_DU",
    "zigzag_DU",
    "translate_RL",
    "zigzag_RL",
)

BACKGROUND_SEED = 7919
NEUTRAL_SEED = 104729
BACKGROUND_TEXTURE = 0.3


@dataclass
class MotionProgram:
    class_id: int
    kind: str
    speed: float = 0.04
    noise_sigma: float = 0.1
    orbit_radius: float = 0.12

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SceneError(f"unknown motion kind {self.kind!r}")
        if self.speed < 0 or self.noise_sigma < 0:
            raise SceneError("speed and noise_sigma must be non-negative")
        if self.kind.startswith("circular") and self.orbit_radius <= 0:
            raise SceneError("orbit_radius must be positive")


@dataclass
class SceneObject:
    radius_patches: int
    appearance_seed: int
    program: MotionProgram
    start: Optional[Tuple[int, int]] = None  # (row, col) patch; random when None


@dataclass
class SceneSpec:
    grid: Tuple[int, int] = (16, 16)
    frames: int = 8
    objects: List[SceneObject] = field(default_factory=list)
    appearance_mode: str = "neutral"
    channels: int = 32
    feature_scale: float = 1.0

    def __post_init__(self):
        self.objects = [o if isinstance(o, SceneObject) else SceneObject(*o) for o in self.objects]
        if self.frames < 2:
            raise SceneError("a scene needs at least two frames")
        if self.appearance_mode not in ("neutral", "distinct"):
            raise SceneError(f"unknown appearance mode {self.appearance_mode!r}")
        if not self.objects:
            raise SceneError("a scene needs at least one object")


def motion_path(program: MotionProgram, start, T: int, phase: float = 0.0):
    """Unclamped centre path ``(T, 2)`` of an object starting at ``start``.

    For circular programs ``phase`` is the initial angle on the orbit and the
    orbit centre is returned as the second value; otherwise it is ``None``.
    """
    start = np.asarray(start, dtype=np.float64)
    t = np.arange(T, dtype=np.float64)
    s = program.speed
    kind = program.kind
    off = np.zeros((T, 2))
    center = None
    if kind == "static":
        pass
    elif kind.startswith("translate_") or kind.startswith("zigzag_"):
        axis, sign = {"LR": (0, 1.0), "RL": (0, -1.0), "UD": (1, 1.0), "DU": (1, -1.0)}[kind[-2:]]
        off[:, axis] = sign * s * t
        if kind.startswith("zigzag_"):
            # perpendicular component alternates +s, -s per frame
            off[:, 1 - axis] = -s * (t % 2)
    elif kind.startswith("circular_"):
        R = program.orbit_radius
        w = s / R if R > 0 else 0.0
        w = w if kind == "circular_CW" else -w
        center = start - R * np.array([np.cos(phase), np.sin(phase)])
        ang = phase + w * t
        return center + R * np.stack([np.cos(ang), np.sin(ang)], axis=1), center
    elif kind in ("converge_pair", "diverge_pair"):
        toward = np.sign(0.5 - start[0]) or 1.0
        off[:, 0] = (toward if kind == "converge_pair" else -toward) * s * t
    return start + off, center


def _patch_center(rc, H, W):
    return np.array([(rc[1] + 0.5) / W, (rc[0] + 0.5) / H])


def _path_fits(path, r, H, W):
    lo = np.array([(r + 0.5) / W, (r + 0.5) / H])
    hi = 1.0 - lo
    return bool(np.all(path >= lo - 1e-9) and np.all(path <= hi + 1e-9))


def _place(obj: SceneObject, spec: SceneSpec, placed, rng):
    H, W = spec.grid
    T = spec.frames
    r = obj.radius_patches
    if 2 * r + 1 > min(H, W):
        raise SceneError(f"object of radius {r} does not fit a {H}x{W} grid")

    def clear(rc):
        return all(max(abs(rc[0] - q[0]), abs(rc[1] - q[1])) > r + qr for q, qr in placed)

    phase = 0.0
    if obj.start is not None:
        if not clear(obj.start):
            raise SceneError(f"object at {obj.start} overlaps another object at t=0")
        if obj.program.kind.startswith("circular"):
            phase = float(rng.uniform(0, 2 * np.pi))
        path, center = motion_path(obj.program, _patch_center(obj.start, H, W), T, phase)
        return obj.start, path, center
    cells = [(i, j) for i in range(r, H - r) for j in range(r, W - r)]
    fallback = None
    for _ in range(200):
        rc = cells[int(rng.integers(len(cells)))]
        if obj.program.kind.startswith("circular"):
            phase = float(rng.uniform(0, 2 * np.pi))
        else:
            # rc is where the path is centred, so position carries no class cue
            path, _ = motion_path(obj.program, _patch_center(rc, H, W), T, phase)
            mid = (path.min(axis=0) + path.max(axis=0)) / 2 - path[0]
            rc = (rc[0] - int(np.rint(mid[1] * H)), rc[1] - int(np.rint(mid[0] * W)))
        if not (r <= rc[0] < H - r and r <= rc[1] < W - r) or not clear(rc):
            continue
        path, center = motion_path(obj.program, _patch_center(rc, H, W), T, phase)
        if _path_fits(path, r, H, W):
            return rc, path, center
        fallback = fallback or (rc, path, center)
    # no placement keeps the whole path on screen; the caller clamps it
    if fallback:
        return fallback
    raise SceneError(f"could not place a {obj.program.kind} object without overlap")


def _embedding(seed: int, C: int) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal(C)


def background_texture(H, W, C, texture: float = BACKGROUND_TEXTURE) -> np.ndarray:
    """Shared background embedding plus a fixed per-cell texture."""
    rng = np.random.default_rng(BACKGROUND_SEED)
    base = rng.standard_normal(C)
    return base + texture * rng.standard_normal((H, W, C))


def generate_video(spec: SceneSpec, rng_seed: int, return_masks: bool = False):
    """Render one scene.

    Returns ``(FeatureVolume, TrajectorySet, label)``; with ``return_masks``
    an ``H x W x T`` integer region map (0 = background, i+1 = object i) is
    appended.  The trajectory set holds one track per object patch, object
    by object; background patches have no tracks, so a seed on background
    snaps to the nearest object.
    """
    rng = np.random.default_rng(rng_seed)
    H, W = spec.grid
    T, C = spec.frames, spec.channels

    placed, paths = [], []
    for obj in spec.objects:
        rc, path, _ = _place(obj, spec, placed, rng)
        placed.append((rc, obj.radius_patches))
        paths.append(np.clip(path, 0.0, 1.0))

    feats = np.empty((H, W, T, C))
    feats[:] = background_texture(H, W, C)[:, :, None, :]
    masks = np.zeros((H, W, T), dtype=np.int32)
    # paint back to front so object 0 (the labelled one) ends on top
    for i in reversed(range(len(spec.objects))):
        obj = spec.objects[i]
        seed = obj.appearance_seed if spec.appearance_mode == "distinct" else NEUTRAL_SEED
        emb = _embedding(seed, C)
        r = obj.radius_patches
        for t in range(T):
            cx = min(int(paths[i][t, 0] * W), W - 1)
            cy = min(int(paths[i][t, 1] * H), H - 1)
            h0, h1 = max(cy - r, 0), min(cy + r + 1, H)
            w0, w1 = max(cx - r, 0), min(cx + r + 1, W)
            feats[h0:h1, w0:w1, t] = emb
            masks[h0:h1, w0:w1, t] = i + 1
    sigma = spec.objects[0].program.noise_sigma
    if sigma > 0:
        feats += rng.normal(0.0, sigma, size=feats.shape)

    tracks, vis = [], []
    for i, obj in enumerate(spec.objects):
        r = obj.radius_patches
        for dh in range(-r, r + 1):
            for dw in range(-r, r + 1):
                tracks.append(np.clip(paths[i] + np.array([dw / W, dh / H]), 0.0, 1.0))
                vis.append(np.ones(T))
    traj = TrajectorySet(np.stack(tracks).astype(np.float32), np.stack(vis).astype(np.float32), (W, H))
    feats *= spec.feature_scale
    out = (FeatureVolume(feats.astype(np.float32)), traj, spec.objects[0].program.class_id)
    return out + (masks,) if return_masks else out


def class_spec(class_id: int, kind: str, mode: str = "neutral", n_objects: int = 2, radius: int = 1,
               speed: float = 0.04, noise_sigma: float = 0.1, grid=(16, 16), frames: int = 8,
               channels: int = 32, feature_scale: float = 1.0) -> SceneSpec:
    """Scene for one motion class: ``n_objects`` equal blobs sharing a program."""
    prog = MotionProgram(class_id, kind, speed=speed, noise_sigma=noise_sigma)
    objs = [SceneObject(radius, 1000 + 10 * class_id + i, prog) for i in range(n_objects)]
    return SceneSpec(grid=tuple(grid), frames=frames, objects=objs, appearance_mode=mode, channels=channels,
                     feature_scale=feature_scale)


def default_specs(classes: Sequence[str] = DEFAULT_CLASSES, mode: str = "neutral", **kw) -> List[SceneSpec]:
    return [class_spec(i, k, mode, **kw) for i, k in enumerate(classes)]


def default_split(n_classes: int, n_test: int = 3) -> dict:
    n_test = min(n_test, n_classes // 2)
    ids = list(range(n_classes))
    return {"train": ids[: n_classes - n_test], "test": ids[n_classes - n_test:]}


def generate_dataset(n_per_class: int, specs: Sequence[SceneSpec], out_dir, rng_seed: int,
                     split: Optional[dict] = None, class_names: Optional[Sequence[str]] = None) -> DatasetManifest:
    """Write features, ground-truth tracks and ``manifest.json`` under ``out_dir``."""
    out_dir = Path(out_dir)
    (out_dir / "features").mkdir(parents=True, exist_ok=True)
    (out_dir / "tracks").mkdir(parents=True, exist_ok=True)
    labels = [s.objects[0].program.class_id for s in specs]
    n_classes = max(labels) + 1
    if class_names is None:
        class_names = [f"class{c}" for c in range(n_classes)]
        for s in specs:
            class_names[s.objects[0].program.class_id] = s.objects[0].program.kind
    videos = []
    for si, spec in enumerate(specs):
        for j in range(n_per_class):
            seed = int(np.random.SeedSequence([rng_seed, si, j]).generate_state(1)[0])
            fv, traj, label = generate_video(spec, seed)
            vid = f"c{label:02d}_v{j:03d}"
            fpath = f"features/{vid}.trok"
            tpath = f"tracks/{vid}.trok"
            write_tensor(out_dir / fpath, fv.features)
            write_trajectories(out_dir / tpath, traj)
            videos.append(VideoRecord(vid, label, fpath, tpath))
    m = DatasetManifest(videos, list(class_names), split or default_split(n_classes), root=out_dir)
    save_manifest(out_dir / "manifest.json", m)
    return m
