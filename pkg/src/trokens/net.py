"""Decoupled space-time attention block, CLS cross-attention readout and
classifier, with hand-derived backward passes.

Tokens arrive as ``(V, M, T, C)`` for ``V`` videos (a single ``(M, T, C)``
video is accepted too).  One block computes::

    x  = tokens + pos[t]
    F  = x + TA(LN_t(x)) + SA(LN_s(x))
    F += MLP(LN_m(F))            # only with cfg.mlp

where TA attends over ``T`` inside every trajectory and SA attends over
``M`` inside every frame.  The readout is
``c = LN_c(cls + MHA(cls, F))`` and ``logits = head(c)``.

All weights are ``(out, in)`` and applied as ``x @ W.T``.  The arithmetic
runs in the dtype of the parameters, so float64 parameters give the
gradient-checking path.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, NamedTuple, Optional

import numpy as np

from .data import read_tensor, write_tensor
from .errors import ConfigError, NonFinite, ShapeError, StaleTrace

Params = Dict[str, np.ndarray]

_GELU_K = math.sqrt(2.0 / math.pi)


@dataclass(frozen=True)
class NetConfig:
    model_dim: int = 64
    heads: int = 4
    n_blocks: int = 1
    frames: int = 8
    n_classes: int = 5
    mlp: bool = False
    mlp_ratio: int = 2
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.model_dim % self.heads:
            raise ConfigError(f"model_dim {self.model_dim} not divisible by heads {self.heads}")
        if self.n_blocks < 1:
            raise ConfigError("n_blocks must be >= 1")


def init_params(cfg: NetConfig, rng, dtype=np.float32) -> Params:
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    C = cfg.model_dim

    def lin(o, i):
        k = 1.0 / np.sqrt(i)
        return rng.uniform(-k, k, (o, i))

    p = {}
    for b in range(cfg.n_blocks):
        pre = f"block{b}."
        for ln in ("ln_t", "ln_s"):
            p[pre + ln + ".g"] = np.ones(C)
            p[pre + ln + ".b"] = np.zeros(C)
        for att in ("ta", "sa"):
            for w in ("wq", "wk", "wv", "wo"):
                p[f"{pre}{att}.{w}"] = lin(C, C)
        if cfg.mlp:
            Hd = cfg.mlp_ratio * C
            p[pre + "ln_m.g"] = np.ones(C)
            p[pre + "ln_m.b"] = np.zeros(C)
            p[pre + "mlp.w1"] = lin(Hd, C)
            p[pre + "mlp.b1"] = np.zeros(Hd)
            p[pre + "mlp.w2"] = lin(C, Hd)
            p[pre + "mlp.b2"] = np.zeros(C)
    p["pos"] = 0.02 * rng.standard_normal((cfg.frames, C))
    p["cls"] = 0.02 * rng.standard_normal(C)
    for w in ("wq", "wk", "wv", "wo"):
        p["cls_attn." + w] = lin(C, C)
    p["cls_ln.g"] = np.ones(C)
    p["cls_ln.b"] = np.zeros(C)
    p["head.w"] = lin(cfg.n_classes, C)
    p["head.b"] = np.zeros(cfg.n_classes)
    return {k: v.astype(dtype) for k, v in p.items()}


def _check(a: np.ndarray, name: str) -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise NonFinite(f"non-finite activation in {name}")
    return a


# ---------------------------------------------------------------- primitives

def softmax(s: np.ndarray) -> np.ndarray:
    e = s - s.max(axis=-1, keepdims=True)
    np.exp(e, out=e)
    e /= e.sum(axis=-1, keepdims=True)
    return e


def layer_norm(x, g, b, eps):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xh = xc * rstd
    return xh * g + b, (xh, rstd, g)


def layer_norm_backward(dy, cache):
    xh, rstd, g = cache
    red = tuple(range(dy.ndim - 1))
    dg = (dy * xh).sum(axis=red)
    db = dy.sum(axis=red)
    dxh = dy * g
    dx = rstd * (dxh - dxh.mean(axis=-1, keepdims=True) - xh * (dxh * xh).mean(axis=-1, keepdims=True))
    return dx, dg, db


def _split(x, h):
    B, S, C = x.shape
    return x.reshape(B, S, h, C // h).transpose(0, 2, 1, 3)


def _merge(x):
    B, h, S, d = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, S, h * d)


def _proj(x, w):
    """``x @ w.T`` as one GEMM over all leading axes."""
    return (x.reshape(-1, x.shape[-1]) @ w.T).reshape(x.shape[:-1] + (w.shape[0],))


def mha(xq, xkv, wq, wk, wv, wo, h):
    """Multi-head attention of ``xq (B, Sq, C)`` over ``xkv (B, Sk, C)``."""
    C = xq.shape[-1]
    scale = 1.0 / math.sqrt(C // h)
    Q = _split(_proj(xq, wq * scale), h)
    K = _split(_proj(xkv, wk), h)
    Vh = _split(_proj(xkv, wv), h)
    A = softmax(Q @ K.transpose(0, 1, 3, 2))
    O = _merge(A @ Vh)
    return _proj(O, wo), (xq, xkv, Q, K, Vh, A, O, wq, wk, wv, wo, scale)


def mha_backward(dy, cache):
    xq, xkv, Q, K, Vh, A, O, wq, wk, wv, wo, scale = cache
    h = Q.shape[1]
    C = dy.shape[-1]
    fdy = dy.reshape(-1, C)
    dwo = fdy.T @ O.reshape(-1, C)
    dO = _split((fdy @ wo).reshape(dy.shape), h)
    dA = dO @ Vh.transpose(0, 1, 3, 2)
    dV = _merge(A.transpose(0, 1, 3, 2) @ dO).reshape(-1, C)
    # softmax backward, in place on dA
    dA -= (dA * A).sum(axis=-1, keepdims=True)
    dA *= A
    dQ = _merge(dA @ K).reshape(-1, C)  # gradient w.r.t. the pre-scaled queries
    dK = _merge(dA.transpose(0, 1, 3, 2) @ Q).reshape(-1, C)
    fq = xq.reshape(-1, C)
    fkv = xkv.reshape(-1, C)
    dwq = (dQ.T @ fq) * scale
    dwk = dK.T @ fkv
    dwv = dV.T @ fkv
    dxq = ((dQ @ wq) * scale).reshape(xq.shape)
    dxkv = (dK @ wk + dV @ wv).reshape(xkv.shape)
    return dxq, dxkv, dwq, dwk, dwv, dwo


def _gelu(u):
    th = np.tanh(_GELU_K * (u + 0.044715 * u ** 3))
    return 0.5 * u * (1.0 + th), th


def _gelu_backward(du, u, th):
    return du * (0.5 * (1.0 + th) + 0.5 * u * (1.0 - th * th) * _GELU_K * (1.0 + 3 * 0.044715 * u * u))


# ------------------------------------------------------------------ network

class ForwardTrace(NamedTuple):
    cfg: NetConfig
    in_shape: tuple
    squeeze: bool
    blocks: list
    cls_cache: tuple
    cls_ln: tuple
    c_cls: np.ndarray
    final: np.ndarray


class NetOutput(NamedTuple):
    final: np.ndarray  # (V, M, T, C) or (M, T, C)
    c_cls: np.ndarray  # (V, C) or (C,)
    logits: np.ndarray  # (V, n_classes) or (n_classes,)
    trace: ForwardTrace


def _block_forward(x, p, pre, cfg):
    V, M, T, C = x.shape
    h = cfg.heads
    a, ln_t = layer_norm(x, p[pre + "ln_t.g"], p[pre + "ln_t.b"], cfg.ln_eps)
    ta, ta_c = mha(a.reshape(V * M, T, C), a.reshape(V * M, T, C),
                   p[pre + "ta.wq"], p[pre + "ta.wk"], p[pre + "ta.wv"], p[pre + "ta.wo"], h)
    s, ln_s = layer_norm(x, p[pre + "ln_s.g"], p[pre + "ln_s.b"], cfg.ln_eps)
    s = np.ascontiguousarray(s.transpose(0, 2, 1, 3)).reshape(V * T, M, C)
    sa, sa_c = mha(s, s, p[pre + "sa.wq"], p[pre + "sa.wk"], p[pre + "sa.wv"], p[pre + "sa.wo"], h)
    F = x + _check(ta, pre + "ta").reshape(V, M, T, C) + \
        _check(sa, pre + "sa").reshape(V, T, M, C).transpose(0, 2, 1, 3)
    cache = {"ln_t": ln_t, "ta": ta_c, "ln_s": ln_s, "sa": sa_c}
    if cfg.mlp:
        m, ln_m = layer_norm(F, p[pre + "ln_m.g"], p[pre + "ln_m.b"], cfg.ln_eps)
        u = m @ p[pre + "mlp.w1"].T + p[pre + "mlp.b1"]
        gu, th = _gelu(u)
        F = F + _check(gu @ p[pre + "mlp.w2"].T + p[pre + "mlp.b2"], pre + "mlp")
        cache.update(ln_m=ln_m, m=m, u=u, th=th, gu=gu)
    return _check(F, pre + "out"), cache


def _block_backward(dF, cache, p, pre, cfg, grads):
    V, M, T, C = dF.shape
    if cfg.mlp:
        grads[pre + "mlp.b2"] = dF.sum(axis=(0, 1, 2))
        grads[pre + "mlp.w2"] = dF.reshape(-1, C).T @ cache["gu"].reshape(-1, cache["gu"].shape[-1])
        dgu = dF @ p[pre + "mlp.w2"]
        du = _gelu_backward(dgu, cache["u"], cache["th"])
        grads[pre + "mlp.b1"] = du.sum(axis=(0, 1, 2))
        grads[pre + "mlp.w1"] = du.reshape(-1, du.shape[-1]).T @ cache["m"].reshape(-1, C)
        dm = du @ p[pre + "mlp.w1"]
        dxm, grads[pre + "ln_m.g"], grads[pre + "ln_m.b"] = layer_norm_backward(dm, cache["ln_m"])
        dF = dF + dxm
    dx = dF.copy()
    dq, dkv, *dw = mha_backward(dF.reshape(V * M, T, C), cache["ta"])
    for k, g in zip(("wq", "wk", "wv", "wo"), dw):
        grads[f"{pre}ta.{k}"] = g
    dxa, grads[pre + "ln_t.g"], grads[pre + "ln_t.b"] = layer_norm_backward(
        (dq + dkv).reshape(V, M, T, C), cache["ln_t"])
    dx += dxa
    dsa = np.ascontiguousarray(dF.transpose(0, 2, 1, 3)).reshape(V * T, M, C)
    dq, dkv, *dw = mha_backward(dsa, cache["sa"])
    for k, g in zip(("wq", "wk", "wv", "wo"), dw):
        grads[f"{pre}sa.{k}"] = g
    ds = (dq + dkv).reshape(V, T, M, C).transpose(0, 2, 1, 3)
    dxs, grads[pre + "ln_s.g"], grads[pre + "ln_s.b"] = layer_norm_backward(ds, cache["ln_s"])
    return dx + dxs


def forward(tokens: np.ndarray, params: Params, cfg: NetConfig) -> NetOutput:
    """Run the block stack and the CLS readout on ``(V,) M x T x C`` tokens."""
    squeeze = tokens.ndim == 3
    x = tokens[None] if squeeze else tokens
    if x.ndim != 4 or x.shape[-1] != cfg.model_dim or x.shape[2] != params["pos"].shape[0]:
        raise ShapeError(f"tokens {tokens.shape} do not match T={params['pos'].shape[0]}, C={cfg.model_dim}")
    dtype = params["pos"].dtype
    x = _check(x.astype(dtype, copy=False), "tokens") + params["pos"][None, None]
    V, M, T, C = x.shape
    blocks = []
    for b in range(cfg.n_blocks):
        x, cache = _block_forward(x, params, f"block{b}.", cfg)
        blocks.append(cache)
    final = x
    q = np.broadcast_to(params["cls"], (V, 1, C))
    att, cls_cache = mha(q, final.reshape(V, M * T, C), params["cls_attn.wq"], params["cls_attn.wk"],
                         params["cls_attn.wv"], params["cls_attn.wo"], cfg.heads)
    z = params["cls"] + _check(att, "cls_attn")[:, 0]
    c, cls_ln = layer_norm(z, params["cls_ln.g"], params["cls_ln.b"], cfg.ln_eps)
    logits = _check(c @ params["head.w"].T + params["head.b"], "head")
    trace = ForwardTrace(cfg, tokens.shape, squeeze, blocks, cls_cache, cls_ln, c, final)
    if squeeze:
        return NetOutput(final[0], c[0], logits[0], trace)
    return NetOutput(final, c, logits, trace)


def backward(trace: ForwardTrace, params: Params, d_final: Optional[np.ndarray] = None,
             d_logits: Optional[np.ndarray] = None, d_cls: Optional[np.ndarray] = None):
    """Gradients of a scalar loss given its gradients w.r.t. the outputs.

    Returns ``(param_grads, d_tokens)``; any missing upstream gradient is
    treated as zero.
    """
    cfg = trace.cfg
    final = trace.final
    V, M, T, C = final.shape
    n = params["head.b"].shape[0]

    def lift(g, shape, name):
        if g is None:
            return np.zeros(shape, dtype=final.dtype)
        g = np.asarray(g, dtype=final.dtype)
        if trace.squeeze:
            g = g[None]
        if g.shape != shape:
            raise StaleTrace(f"{name} gradient has shape {g.shape}, trace expects {shape}")
        return g

    dF = lift(d_final, (V, M, T, C), "final").copy()
    dlog = lift(d_logits, (V, n), "logits")
    dc = lift(d_cls, (V, C), "cls")
    grads: Params = {}
    grads["head.w"] = dlog.T @ trace.c_cls
    grads["head.b"] = dlog.sum(axis=0)
    dc = dc + dlog @ params["head.w"]
    dz, grads["cls_ln.g"], grads["cls_ln.b"] = layer_norm_backward(dc, trace.cls_ln)
    dq, dkv, *dw = mha_backward(dz[:, None], trace.cls_cache)
    for k, g in zip(("wq", "wk", "wv", "wo"), dw):
        grads["cls_attn." + k] = g
    grads["cls"] = dz.sum(axis=0) + dq.sum(axis=(0, 1))
    dF += dkv.reshape(V, M, T, C)
    for b in reversed(range(cfg.n_blocks)):
        dF = _block_backward(dF, trace.blocks[b], params, f"block{b}.", cfg, grads)
    grads["pos"] = dF.sum(axis=(0, 1))
    d_tokens = dF[0] if trace.squeeze else dF
    return {k: grads[k] for k in params if k in grads}, d_tokens


# -------------------------------------------------------------- checkpoints

def save_checkpoint(directory, params: Params, config: dict) -> None:
    """One ``<name>.trok`` per tensor plus ``config.json`` listing them."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for k, v in params.items():
        write_tensor(d / f"{k}.trok", v)
    doc = dict(config)
    doc["tensors"] = {k: list(v.shape) for k, v in params.items()}
    (d / "config.json").write_text(json.dumps(doc, indent=1, sort_keys=True))


def load_checkpoint(directory):
    d = Path(directory)
    doc = json.loads((d / "config.json").read_text())
    params = {k: read_tensor(d / f"{k}.trok") for k in doc["tensors"]}
    for k, shape in doc["tensors"].items():
        if list(params[k].shape) != shape:
            raise ShapeError(f"checkpoint tensor {k} has shape {params[k].shape}, expected {shape}")
    return params, doc


def net_config_dict(cfg: NetConfig) -> dict:
    return asdict(cfg)
