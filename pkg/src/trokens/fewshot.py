"""Episodic sampling, the two-part few-shot loss, training and evaluation."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, NamedTuple, Optional, Tuple

import numpy as np

from . import net
from .data import DatasetManifest, VideoRecord
from .errors import ConfigError, InsufficientData, NonFinite, ShapeError, SplitOverlap
from .model import InputCache, ModelConfig, init_model, model_backward, model_forward

log = logging.getLogger(__name__)

NORM_EPS = 1e-12


@dataclass
class Episode:
    classes: List[int]  # global class id of each episode class
    support: List[List[VideoRecord]]  # N x K
    query: List[Tuple[VideoRecord, int]]

    @property
    def way(self) -> int:
        return len(self.classes)

    @property
    def shot(self) -> int:
        return len(self.support[0])

    def support_records(self) -> List[VideoRecord]:
        return [r for row in self.support for r in row]

    def query_records(self) -> List[VideoRecord]:
        return [r for r, _ in self.query]

    def query_labels(self) -> np.ndarray:
        return np.array([y for _, y in self.query], dtype=np.int64)


def sample_episode(m: DatasetManifest, split: str, N: int, K: int, n_query: int, rng_seed) -> Episode:
    """N classes without replacement, then K support and ``n_query`` query
    videos per class, all distinct."""
    rng = np.random.default_rng(rng_seed)
    by_class = m.by_class(split)
    eligible = sorted(c for c, v in by_class.items() if len(v) >= K + n_query)
    if N < 1 or K < 1 or n_query < 0 or len(eligible) < N:
        raise InsufficientData(
            f"split '{split}' has {len(eligible)} classes with >= {K + n_query} videos, need {N}")
    classes = [int(c) for c in rng.choice(eligible, size=N, replace=False)]
    support, query = [], []
    for n, c in enumerate(classes):
        vids = by_class[c]
        pick = rng.permutation(len(vids))[: K + n_query]
        support.append([vids[i] for i in pick[:K]])
        query.extend((vids[i], n) for i in pick[K:])
    return Episode(classes, support, query)


def assert_disjoint(ep: Episode, m: DatasetManifest, split: str) -> None:
    other = {c for s, ids in m.split.items() if s != split for c in ids}
    leaked = other & set(ep.classes)
    if leaked:
        raise SplitOverlap(f"episode uses classes {sorted(leaked)} from another split")


class LossReport(NamedTuple):
    ce: float
    contrastive: float
    total: float
    episode_acc: float


class LossGrads(NamedTuple):
    support_final: np.ndarray
    query_final: np.ndarray
    query_logits: np.ndarray


def _log_softmax(s):
    z = s - s.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def pooled(final: np.ndarray) -> np.ndarray:
    """Mean of the final embeddings over trajectories and time: ``(V, C)``."""
    return final.mean(axis=(1, 2))


def _unit(v):
    n = np.sqrt((v * v).sum(axis=-1, keepdims=True) + NORM_EPS)
    return v / n, n


def prototype_logits(support_emb, query_emb, N, K, tau):
    """Cosine similarity of each query to each class prototype, over ``tau``."""
    protos = support_emb.reshape(N, K, -1).mean(axis=1)
    qn, qnorm = _unit(query_emb)
    pn, pnorm = _unit(protos)
    return qn @ pn.T / tau, (qn, qnorm, pn, pnorm)


def episode_loss(support_final, query_final, query_logits, query_episode_labels, query_global_labels,
                 tau: float, way: int) -> Tuple[LossReport, LossGrads]:
    """CE of the CLS logits on the global labels plus a prototype InfoNCE on
    pooled final embeddings; both terms are means over queries.

    ``support_final`` is class-major: rows ``n*K .. n*K+K-1`` belong to
    episode class ``n``.
    """
    if tau <= 0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    S, Q = support_final.shape[0], query_final.shape[0]
    if S % way or query_logits.shape[0] != Q or len(query_episode_labels) != Q:
        raise ShapeError("support/query outputs do not match the episode layout")
    K = S // way
    yq = np.asarray(query_episode_labels)
    yg = np.asarray(query_global_labels)
    rows = np.arange(Q)

    lp = _log_softmax(query_logits)
    ce = -lp[rows, yg].mean()
    d_logits = np.exp(lp)
    d_logits[rows, yg] -= 1.0
    d_logits /= Q

    es, eq = pooled(support_final), pooled(query_final)
    s, (qn, qnorm, pn, pnorm) = prototype_logits(es, eq, way, K, tau)
    ls = _log_softmax(s)
    con = -ls[rows, yq].mean()
    acc = float(np.mean(np.argmax(s, axis=1) == yq))
    ds = np.exp(ls)
    ds[rows, yq] -= 1.0
    ds /= Q * tau
    dqn = ds @ pn
    dpn = ds.T @ qn
    deq = (dqn - qn * (qn * dqn).sum(-1, keepdims=True)) / qnorm
    dproto = (dpn - pn * (pn * dpn).sum(-1, keepdims=True)) / pnorm
    des = np.repeat(dproto / K, K, axis=0)
    MT = support_final.shape[1] * support_final.shape[2]
    d_sf = np.broadcast_to((des / MT)[:, None, None, :], support_final.shape).copy()
    d_qf = np.broadcast_to((deq / MT)[:, None, None, :], query_final.shape).copy()
    total = ce + con
    if not np.isfinite(total):
        raise NonFinite("non-finite episode loss")
    return LossReport(float(ce), float(con), float(total), acc), LossGrads(d_sf, d_qf, d_logits)


# ----------------------------------------------------------------- training

@dataclass
class TrainConfig:
    episodes: int = 2000
    way: int = 5
    shot: int = 1
    query: int = 3
    lr: float = 0.01
    momentum: float = 0.9
    tau: float = 0.1
    seed: int = 0
    grad_clip: Optional[float] = 5.0
    optimizer: str = "sgd"
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    resample: int = 16  # seed-point variants per training video; 1 turns it off

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    params: net.Params
    log: List[LossReport] = field(default_factory=list)


def episode_step(params, mcfg: ModelConfig, cache: InputCache, ep: Episode, tau: float, labels: Dict[int, int],
                 variants=None):
    """Loss report and parameter gradients for one episode."""
    recs = ep.support_records() + ep.query_records()
    yg = np.array([labels[r.label] for r in ep.query_records()])
    return batch_loss(params, mcfg, cache.batch(recs, variants), len(ep.support_records()),
                      ep.query_labels(), yg, tau, ep.way)


def batch_loss(params, mcfg: ModelConfig, inputs, S: int, query_labels, global_labels, tau: float, way: int):
    """Full loss and gradients for stacked ``(intra, cross, app)`` inputs whose
    first ``S`` rows are the class-major support set."""
    out, trace = model_forward(params, mcfg, *inputs)
    rep, g = episode_loss(out.final[:S], out.final[S:], out.logits[S:], query_labels, global_labels, tau, way)
    d_final = np.concatenate([g.support_final, g.query_final])
    d_logits = np.zeros_like(out.logits)
    d_logits[S:] = g.query_logits
    return rep, model_backward(trace, params, mcfg, d_final, d_logits)


def episode_seed(seed: int, i: int, stream: int = 0) -> int:
    return int(np.random.SeedSequence([seed, stream, i]).generate_state(1)[0])


def train(m: DatasetManifest, mcfg: ModelConfig, tcfg: TrainConfig, cache: Optional[InputCache] = None,
          params: Optional[net.Params] = None, split: str = "train") -> TrainResult:
    """One optimizer step (SGD with momentum, or Adam) per training episode.

    With ``resample > 1`` every clip in an episode is drawn from one of that
    many seed-point variants, so the network cannot key on where the points
    of a particular clip happen to sit.
    """
    if cache is None:
        cache = InputCache(m, mcfg, tcfg.seed)
    labels = {c: i for i, c in enumerate(m.split[split])}
    if mcfg.net.n_classes != len(labels):
        raise ConfigError(f"classifier has {mcfg.net.n_classes} outputs but split '{split}' has {len(labels)} classes")
    if params is None:
        params = init_model(mcfg, tcfg.seed)
    params = {k: v.copy() for k, v in params.items()}
    if tcfg.optimizer not in ("sgd", "adam"):
        raise ConfigError(f"unknown optimizer {tcfg.optimizer!r}")
    if tcfg.resample < 1:
        raise ConfigError("resample must be >= 1")
    vel = {k: np.zeros_like(v) for k, v in params.items()}
    sq = {k: np.zeros_like(v) for k, v in params.items()}
    b1, b2 = tcfg.betas
    result = TrainResult(params)
    for i in range(tcfg.episodes):
        ep = sample_episode(m, split, tcfg.way, tcfg.shot, tcfg.query, episode_seed(tcfg.seed, i))
        assert_disjoint(ep, m, split)
        n_rec = len(ep.support_records()) + len(ep.query_records())
        variants = np.random.default_rng(episode_seed(tcfg.seed, i, stream=2)).integers(tcfg.resample, size=n_rec)
        try:
            rep, grads = episode_step(params, mcfg, cache, ep, tcfg.tau, labels, variants)
        except NonFinite as exc:
            raise NonFinite(f"episode {i}: {exc}") from exc
        if tcfg.grad_clip:
            gn = math.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values()))
            if gn > tcfg.grad_clip:
                grads = {k: g * (tcfg.grad_clip / gn) for k, g in grads.items()}
        if tcfg.weight_decay:
            for k in params:
                params[k] *= params[k].dtype.type(1 - tcfg.lr * tcfg.weight_decay)
        if tcfg.optimizer == "sgd":
            for k in params:
                vel[k] = tcfg.momentum * vel[k] + grads[k]
                params[k] -= (tcfg.lr * vel[k]).astype(params[k].dtype)
        else:
            c1, c2 = 1 - b1 ** (i + 1), 1 - b2 ** (i + 1)
            for k in params:
                vel[k] = b1 * vel[k] + (1 - b1) * grads[k]
                sq[k] = b2 * sq[k] + (1 - b2) * grads[k] * grads[k]
                step = tcfg.lr * (vel[k] / c1) / (np.sqrt(sq[k] / c2) + tcfg.eps)
                params[k] -= step.astype(params[k].dtype)
        if not all(np.all(np.isfinite(v)) for v in params.values()):
            raise NonFinite(f"episode {i}: parameters became non-finite")
        result.log.append(rep)
        if (i + 1) % 200 == 0:
            recent = result.log[-200:]
            log.info("episode %d loss %.4f acc %.3f", i + 1, np.mean([r.total for r in recent]),
                     np.mean([r.episode_acc for r in recent]))
    return result


# --------------------------------------------------------------- evaluation

@dataclass
class EvalReport:
    accuracy: float
    ci95: Optional[float]
    episodes: int
    queries: int
    correct: int
    way: int
    shot: int
    ci_degenerate: bool

    def to_dict(self) -> dict:
        return asdict(self)


def embed(params, mcfg: ModelConfig, cache: InputCache, recs: List[VideoRecord]) -> np.ndarray:
    intra, cross, app = cache.batch(recs)
    out, _ = model_forward(params, mcfg, intra, cross, app)
    return pooled(out.final)


def episode_correct(params, mcfg, cache, ep: Episode) -> int:
    S = len(ep.support_records())
    e = embed(params, mcfg, cache, ep.support_records() + ep.query_records())
    s, _ = prototype_logits(e[:S], e[S:], ep.way, ep.shot, 1.0)
    return int(np.sum(np.argmax(s, axis=1) == ep.query_labels()))


def evaluate(m: DatasetManifest, params: net.Params, mcfg: ModelConfig, episodes: int = 1000, way: int = 5,
             shot: int = 1, query: int = 3, seed: int = 0, cache: Optional[InputCache] = None,
             split: str = "test") -> EvalReport:
    """Nearest-prototype accuracy over ``episodes`` test episodes.

    The 95% interval is the normal approximation to the binomial over all
    query decisions; it is reported as degenerate (``None``) for fewer than
    two episodes.
    """
    if cache is None:
        cache = InputCache(m, mcfg, seed)
    correct = total = 0
    for i in range(episodes):
        ep = sample_episode(m, split, way, shot, query, episode_seed(seed, i, stream=1))
        assert_disjoint(ep, m, split)
        correct += episode_correct(params, mcfg, cache, ep)
        total += len(ep.query)
    acc = correct / total if total else float("nan")
    degenerate = episodes < 2
    ci = None if degenerate else 1.96 * math.sqrt(acc * (1 - acc) / total)
    return EvalReport(acc, ci, episodes, total, correct, way, shot, degenerate)
