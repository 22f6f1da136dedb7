import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trokens.errors import ConfigError, InsufficientData, SplitOverlap
from trokens import synthgen
from trokens.fewshot import (
    Episode,
    episode_step,
    TrainConfig,
    assert_disjoint,
    episode_loss,
    evaluate,
    prototype_logits,
    sample_episode,
    train,
)
from trokens.model import InputCache, ModelConfig, init_model, video_seed
from trokens.net import NetConfig


def tiny_model(n_classes=5, **kw):
    return ModelConfig(points=16, clusters=4, net=NetConfig(model_dim=16, heads=2, frames=8, n_classes=n_classes), **kw)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(0, 3), st.integers(0, 2**31))
def test_episode_layout(tiny_dataset, N, K, Q, seed):
    ep = sample_episode(tiny_dataset, "train", N, K, Q, seed)
    assert ep.way == N and ep.shot == K and len(ep.query) == N * Q
    assert len(set(ep.classes)) == N
    ids = [r.id for r in ep.support_records() + ep.query_records()]
    assert len(set(ids)) == len(ids)
    for n, row in enumerate(ep.support):
        assert all(r.label == ep.classes[n] for r in row)
    for r, y in ep.query:
        assert r.label == ep.classes[y]
    again = sample_episode(tiny_dataset, "train", N, K, Q, seed)
    assert [r.id for r in again.support_records()] == [r.id for r in ep.support_records()]


def test_insufficient_data(tiny_dataset):
    with pytest.raises(InsufficientData):
        sample_episode(tiny_dataset, "test", 4, 1, 1, 0)
    with pytest.raises(InsufficientData):
        sample_episode(tiny_dataset, "train", 2, 5, 2, 0)


def test_split_overlap_is_caught(tiny_dataset):
    ep = sample_episode(tiny_dataset, "test", 2, 1, 1, 0)
    assert_disjoint(ep, tiny_dataset, "test")
    with pytest.raises(SplitOverlap):
        assert_disjoint(ep, tiny_dataset, "train")


def losses(sf, qf, lg, yq, yg, tau, way):
    rep, _ = episode_loss(sf, qf, lg, yq, yg, tau, way)
    return rep.total


def test_loss_gradients_match_finite_differences(rng):
    way, K, Q = 3, 2, 4
    sf = rng.standard_normal((way * K, 2, 3, 5))
    qf = rng.standard_normal((Q, 2, 3, 5))
    lg = rng.standard_normal((Q, 6))
    yq, yg = np.array([0, 1, 2, 1]), np.array([5, 0, 3, 0])
    _, g = episode_loss(sf, qf, lg, yq, yg, 0.2, way)
    eps = 1e-6
    for arr, grad in ((sf, g.support_final), (qf, g.query_final), (lg, g.query_logits)):
        for flat in rng.choice(arr.size, 8, replace=False):
            idx = np.unravel_index(flat, arr.shape)
            old = arr[idx]
            arr[idx] = old + eps
            up = losses(sf, qf, lg, yq, yg, 0.2, way)
            arr[idx] = old - eps
            down = losses(sf, qf, lg, yq, yg, 0.2, way)
            arr[idx] = old
            assert grad[idx] == pytest.approx((up - down) / (2 * eps), rel=1e-5, abs=1e-8)


def test_loss_oracles():
    # uniform logits and identical embeddings: both terms are log of the class count
    sf = np.ones((3, 1, 1, 4))
    qf = np.ones((2, 1, 1, 4))
    rep, _ = episode_loss(sf, qf, np.zeros((2, 7)), [0, 2], [1, 4], 0.1, 3)
    assert rep.ce == pytest.approx(math.log(7))
    assert rep.contrastive == pytest.approx(math.log(3))
    assert rep.total == pytest.approx(math.log(7) + math.log(3))
    with pytest.raises(ConfigError):
        episode_loss(sf, qf, np.zeros((2, 7)), [0, 2], [1, 4], 0.0, 3)


def test_prototypes_average_the_shots():
    s = np.array([[1.0, 0], [3.0, 0], [0, 1.0], [0, 5.0]])
    logits, _ = prototype_logits(s, np.array([[2.0, 0.1], [0.0, 1.0]]), 2, 2, 1.0)
    assert np.argmax(logits, axis=1).tolist() == [0, 1]
    np.testing.assert_allclose(logits[1], [0.0, 1.0], atol=1e-9)


def test_variants_change_the_points_only(tiny_dataset):
    cache = InputCache(tiny_dataset, tiny_model(), seed=0)
    rec = tiny_dataset.videos_of("train")[0]
    base, other = cache.get(rec, 0), cache.get(rec, 3)
    assert cache[rec] is base
    assert base.intra.shape == other.intra.shape
    assert not np.array_equal(base.trajectories.points, other.trajectories.points)
    assert video_seed(0, rec.id) == video_seed(0, rec.id, 0) != video_seed(0, rec.id, 1)


def test_patch_units_scale_hod_by_grid(tiny_dataset):
    rec = tiny_dataset.videos_of("train")[0]
    patch = InputCache(tiny_dataset, tiny_model(), 0)[rec]
    frame = InputCache(tiny_dataset, tiny_model(hod_units="frame"), 0)[rec]
    np.testing.assert_allclose(patch.intra, 16 * frame.intra, rtol=1e-5, atol=1e-6)
    assert np.array_equal(patch.cross, frame.cross)


def test_short_training_is_deterministic(tiny_dataset):
    mcfg = tiny_model()
    tcfg = TrainConfig(episodes=6, way=2, shot=1, query=1, seed=4)
    a, b = train(tiny_dataset, mcfg, tcfg), train(tiny_dataset, mcfg, tcfg)
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    assert [r.total for r in a.log] == [r.total for r in b.log]
    assert all(np.isfinite(r.total) for r in a.log)
    adam = train(tiny_dataset, mcfg, TrainConfig(episodes=6, way=2, shot=1, query=1, seed=4, optimizer="adam",
                                                 lr=1e-3))
    assert not np.array_equal(adam.params["head.w"], a.params["head.w"])


def test_train_config_errors(tiny_dataset):
    with pytest.raises(ConfigError):
        train(tiny_dataset, tiny_model(), TrainConfig(episodes=1, way=2, optimizer="rmsprop"))
    with pytest.raises(ConfigError):
        train(tiny_dataset, tiny_model(), TrainConfig(episodes=1, way=2, resample=0))
    with pytest.raises(ConfigError):
        train(tiny_dataset, tiny_model(n_classes=3), TrainConfig(episodes=1, way=2))


def test_evaluate_reports(tiny_dataset):
    mcfg = tiny_model()
    params = train(tiny_dataset, mcfg, TrainConfig(episodes=2, way=2, query=1)).params
    one = evaluate(tiny_dataset, params, mcfg, episodes=1, way=3, query=2)
    assert one.ci95 is None and one.ci_degenerate and one.queries == 6
    rep = evaluate(tiny_dataset, params, mcfg, episodes=10, way=3, query=2, seed=1)
    again = evaluate(tiny_dataset, params, mcfg, episodes=10, way=3, query=2, seed=1)
    assert rep == again
    p = rep.correct / rep.queries
    assert rep.accuracy == p and rep.ci95 == pytest.approx(1.96 * math.sqrt(p * (1 - p) / 60))


def test_episode_properties():
    ep = Episode([4, 1], [["a"], ["b"]], [("c", 1), ("d", 0)])
    assert ep.way == 2 and ep.shot == 1 and ep.query_labels().tolist() == [1, 0]


def test_contrastive_ignores_embedding_scale(rng):
    sf = rng.standard_normal((3, 2, 3, 5))
    qf = rng.standard_normal((2, 2, 3, 5))
    lg = rng.standard_normal((2, 4))
    a, _ = episode_loss(sf, qf, lg, [0, 2], [1, 3], 0.1, 3)
    b, _ = episode_loss(7.5 * sf, 7.5 * qf, lg, [0, 2], [1, 3], 0.1, 3)
    assert b.contrastive == pytest.approx(a.contrastive, abs=1e-6)


@pytest.mark.parametrize("optimizer", ["sgd", "adam"])
def test_zero_lr_leaves_params(tiny_dataset, optimizer):
    mcfg = tiny_model()
    res = train(tiny_dataset, mcfg, TrainConfig(episodes=3, way=2, query=1, lr=0.0, optimizer=optimizer))
    start = init_model(mcfg, 0)
    assert all(np.array_equal(res.params[k], start[k]) for k in start)


def test_one_episode_overfits(tiny_dataset):
    mcfg = tiny_model()
    cache = InputCache(tiny_dataset, mcfg, 0)
    ep = sample_episode(tiny_dataset, "train", 3, 1, 2, 0)
    labels = {c: i for i, c in enumerate(tiny_dataset.split["train"])}
    p = init_model(mcfg, 0)
    vel = {k: np.zeros_like(v) for k, v in p.items()}
    losses = []
    for _ in range(200):
        rep, g = episode_step(p, mcfg, cache, ep, 0.1, labels)
        losses.append(rep.total)
        for k in p:
            vel[k] = 0.9 * vel[k] + g[k]
            p[k] -= (0.01 * vel[k]).astype(p[k].dtype)
    tail = np.array(losses[-20:])
    assert np.all(np.diff(tail) <= 1e-7)
    assert tail[-1] < 0.1 * losses[0]


def test_untrained_net_is_at_chance_without_motion_labels(tmp_path):
    # every class moves the same way, so nothing separates them
    m = synthgen.generate_dataset(6, synthgen.default_specs(["translate_LR"] * 8), tmp_path, 3,
                                  split={"train": [0, 1, 2], "test": [3, 4, 5, 6, 7]})
    mcfg = tiny_model(n_classes=3)
    r = evaluate(m, init_model(mcfg, 0), mcfg, episodes=200, way=5, query=1)
    assert abs(r.accuracy - 0.2) <= 3 * math.sqrt(0.2 * 0.8 / r.queries)
