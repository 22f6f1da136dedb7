import hashlib

import numpy as np
import pytest

from trokens import synthgen
from trokens.errors import SceneError
from trokens.synthgen import MotionProgram, SceneObject, SceneSpec, generate_video, motion_path


def n_object_tracks(spec):
    return sum((2 * o.radius_patches + 1) ** 2 for o in spec.objects)


def test_static_has_zero_displacement():
    spec = synthgen.class_spec(0, "static", noise_sigma=0.0)
    _, traj, label = generate_video(spec, 1)
    assert label == 0
    assert np.all(np.diff(traj.points, axis=1) == 0)


@pytest.mark.parametrize("kind,axis,sign", [("translate_LR", 0, 1), ("translate_RL", 0, -1),
                                            ("translate_UD", 1, 1), ("translate_DU", 1, -1)])
def test_translation_steps(kind, axis, sign):
    s = 0.04
    spec = synthgen.class_spec(0, kind, speed=s, noise_sigma=0.0)
    for seed in range(5):
        _, traj, _ = generate_video(spec, seed)
        obj = traj.points[: n_object_tracks(spec)].astype(np.float64)
        d = np.diff(obj, axis=1)
        np.testing.assert_allclose(d[..., axis], sign * s, atol=1e-6)
        np.testing.assert_allclose(d[..., 1 - axis], 0.0, atol=1e-6)


def test_motion_path_unclamped():
    prog = MotionProgram(0, "translate_LR", speed=0.3)
    path, centre = motion_path(prog, (0.5, 0.5), 5)
    assert centre is None
    np.testing.assert_allclose(np.diff(path[:, 0]), 0.3)
    assert path[-1, 0] > 1.0


@pytest.mark.parametrize("kind", ["circular_CW", "circular_CCW"])
def test_circular_constant_radius(kind):
    prog = MotionProgram(0, kind, speed=0.05, orbit_radius=0.15)
    path, centre = motion_path(prog, (0.5, 0.5), 12, phase=0.7)
    r = np.linalg.norm(path - centre, axis=1)
    np.testing.assert_allclose(r, 0.15, atol=1e-6)
    # y points down, so clockwise on screen is increasing atan2(y, x)
    ang = np.unwrap(np.arctan2(path[:, 1] - centre[1], path[:, 0] - centre[0]))
    assert np.all(np.diff(ang) > 0) == (kind == "circular_CW")


def test_circular_video_tracks_orbit():
    spec = synthgen.class_spec(0, "circular_CW", noise_sigma=0.0, n_objects=1)
    _, traj, _ = generate_video(spec, 4)
    centre_track = traj.points[n_object_tracks(spec) // 2].astype(np.float64)
    # the centre patch track orbits; all its positions are equidistant from their mean-circle centre
    path, centre = motion_path(spec.objects[0].program, centre_track[0], 8, 0.0)
    assert centre is not None
    steps = np.linalg.norm(np.diff(centre_track, axis=0), axis=1)
    np.testing.assert_allclose(steps, steps[0], atol=1e-5)


def test_zigzag_same_net_displacement():
    s = 0.04
    straight, _ = motion_path(MotionProgram(0, "translate_LR", speed=s), (0.3, 0.5), 8)
    zig, _ = motion_path(MotionProgram(0, "zigzag_LR", speed=s), (0.3, 0.5), 8)
    # equal displacement along the travel axis, alternating sideways wiggle
    np.testing.assert_allclose(zig[:, 0], straight[:, 0])
    assert set(np.round(np.diff(zig[:, 1]) / s, 9)) == {-1.0, 1.0}


def test_converge_diverge_direction():
    conv, _ = motion_path(MotionProgram(0, "converge_pair", speed=0.05), (0.2, 0.5), 4)
    div, _ = motion_path(MotionProgram(0, "diverge_pair", speed=0.05), (0.2, 0.5), 4)
    assert np.all(np.diff(conv[:, 0]) > 0) and np.all(np.diff(div[:, 0]) < 0)


def test_tracks_clamped_and_labelled():
    spec = synthgen.class_spec(3, "translate_LR", speed=0.2)
    fv, traj, label = generate_video(spec, 0)
    assert label == 3
    assert fv.shape == (16, 16, 8, 32)
    assert traj.points.min() >= 0 and traj.points.max() <= 1
    assert traj.M == n_object_tracks(spec)
    assert np.all(traj.visibility == 1)


@pytest.mark.parametrize("kind", ["translate_LR", "circular_CW", "converge_pair", "zigzag_UD", "static"])
def test_every_track_sits_on_a_painted_patch(kind):
    spec = synthgen.class_spec(0, kind, noise_sigma=0.0)
    for seed in range(5):
        _, traj, _, masks = generate_video(spec, seed, return_masks=True)
        w = np.minimum((traj.points[..., 0] * 16).astype(int), 15)
        h = np.minimum((traj.points[..., 1] * 16).astype(int), 15)
        assert np.all(masks[h, w, np.arange(8)] > 0)


def test_neutral_objects_share_embedding():
    a = synthgen.class_spec(0, "static", noise_sigma=0.0, n_objects=1)
    b = synthgen.class_spec(5, "translate_LR", noise_sigma=0.0, n_objects=1)
    fa, _, _, ma = generate_video(a, 0, return_masks=True)
    fb, _, _, mb = generate_video(b, 9, return_masks=True)
    ea = fa.features[ma == 1]
    eb = fb.features[mb == 1]
    assert np.all(ea == ea[0]) and np.array_equal(ea[0], eb[0])
    # background texture is a fixed field shared by every video
    free = (ma == 0) & (mb == 0)
    assert np.array_equal(fa.features[free], fb.features[free])


def test_distinct_objects_differ():
    spec = synthgen.class_spec(0, "static", mode="distinct", noise_sigma=0.0)
    fv, _, _, masks = generate_video(spec, 0, return_masks=True)
    assert not np.array_equal(fv.features[masks == 1][0], fv.features[masks == 2][0])


def test_overlap_at_start_raises():
    prog = MotionProgram(0, "static")
    spec = SceneSpec(objects=[SceneObject(1, 1, prog, (5, 5)), SceneObject(1, 2, prog, (6, 6))])
    with pytest.raises(SceneError):
        generate_video(spec, 0)


@pytest.mark.parametrize("kwargs", [dict(kind="wobble"), dict(kind="static", speed=-1.0),
                                    dict(kind="static", noise_sigma=-0.1)])
def test_bad_program(kwargs):
    with pytest.raises(SceneError):
        MotionProgram(0, **kwargs)


def test_bad_scene():
    with pytest.raises(SceneError):
        SceneSpec(frames=1, objects=[SceneObject(1, 1, MotionProgram(0, "static"))])
    with pytest.raises(SceneError):
        SceneSpec(objects=[])


def test_placement_independent_of_direction():
    """Centre cells of left- and right-moving paths have the same spread."""
    def centres(kind):
        out = []
        for seed in range(60):
            spec = synthgen.class_spec(0, kind, n_objects=1, noise_sigma=0.0)
            _, traj, _ = generate_video(spec, seed)
            p = traj.points[4]
            out.append((p[:, 0].min() + p[:, 0].max()) / 2)
        return np.array(out)
    lr, rl = centres("translate_LR"), centres("translate_RL")
    assert abs(lr.mean() - rl.mean()) < 0.08


def _hashes(root):
    return {p.relative_to(root).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


def test_dataset_balanced_and_deterministic(tmp_path):
    m = synthgen.generate_dataset(2, synthgen.default_specs(), tmp_path / "a", rng_seed=11)
    assert len(m.videos) == 16
    assert np.bincount([v.label for v in m.videos]).tolist() == [2] * 8
    assert m.split == {"train": [0, 1, 2, 3, 4], "test": [5, 6, 7]}
    synthgen.generate_dataset(2, synthgen.default_specs(), tmp_path / "b", rng_seed=11)
    assert _hashes(tmp_path / "a") == _hashes(tmp_path / "b")
    synthgen.generate_dataset(2, synthgen.default_specs(), tmp_path / "c", rng_seed=12)
    ha, hc = _hashes(tmp_path / "a"), _hashes(tmp_path / "c")
    feats = [k for k in ha if k.startswith("features/")]
    assert all(ha[k] != hc[k] for k in feats)
