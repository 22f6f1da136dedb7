"""Wall-time scaling of the descriptor, alignment and attention kernels."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass
from typing import Callable, Dict, List, Sequence

import numpy as np

from .align import sample_tokens
from .data import FeatureVolume
from .errors import ConfigError
from .motion import HodConfig, hod_descriptor, inter_descriptor
from .net import NetConfig, forward, init_params

KERNELS = ("hod", "inter", "align", "attention")


@dataclass
class BenchRow:
    kernel: str
    M: int
    T: int
    repeats: int
    median_s: float
    ns_per_op: float
    elements_per_s: float


def _case(kernel: str, M: int, T: int, bins: int, rng) -> tuple:
    """Returns ``(fn, element_count)``; the work is set up outside the timer."""
    pts = rng.random((M, T, 2)).astype(np.float32)
    if kernel == "hod":
        cfg = HodConfig(bins, 1)
        return (lambda: hod_descriptor(pts, cfg)), M * T * bins
    if kernel == "inter":
        return (lambda: inter_descriptor(pts)), M * T * 2 * M
    if kernel == "align":
        fv = FeatureVolume(rng.standard_normal((16, 16, T, 32)).astype(np.float32))
        return (lambda: sample_tokens(fv, pts)), M * T * 32
    if kernel == "attention":
        cfg = NetConfig(model_dim=32, heads=4, frames=T, n_classes=5)
        params = init_params(cfg, rng)
        x = rng.standard_normal((M, T, 32)).astype(np.float32)
        return (lambda: forward(x, params, cfg)), M * T * 32
    raise ConfigError(f"unknown kernel {kernel!r}; choose from {', '.join(KERNELS)}")


def time_call(fn: Callable[[], object], repeats: int) -> float:
    """Median wall time of ``repeats`` calls after one warm-up call."""
    fn()
    ts = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t0)
    return float(np.median(ts))


def bench(kernel: str, sizes: Sequence[int], T: int = 8, repeats: int = 10, bins: int = 32,
          seed: int = 0) -> List[BenchRow]:
    """One row per point count in ``sizes``; ``repeats=0`` is a dry run."""
    if kernel not in KERNELS:
        raise ConfigError(f"unknown kernel {kernel!r}; choose from {', '.join(KERNELS)}")
    if any(int(s) < 1 for s in sizes) or T < 1:
        raise ConfigError("sizes and T must be positive")
    if repeats <= 0:
        return []
    rng = np.random.default_rng(seed)
    rows = []
    for M in sizes:
        fn, n = _case(kernel, int(M), T, bins, rng)
        med = time_call(fn, repeats)
        rows.append(BenchRow(kernel, int(M), T, repeats, med, 1e9 * med / n, n / med if med > 0 else float("inf")))
    return rows


def loglog_slope(rows: Sequence[BenchRow]) -> float:
    """Least-squares slope of log(time) against log(M)."""
    if len(rows) < 2:
        return float("nan")
    x = np.log([r.M for r in rows])
    y = np.log([r.median_s for r in rows])
    return float(np.polyfit(x, y, 1)[0])


def table(rows: Sequence[BenchRow]) -> List[Dict]:
    return [asdict(r) for r in rows]


def format_table(rows: Sequence[BenchRow]) -> str:
    head = f"{'kernel':<10}{'M':>6}{'T':>6}{'median ms':>12}{'ns/op':>10}{'elem/s':>12}"
    lines = [head]
    for r in rows:
        lines.append(f"{r.kernel:<10}{r.M:>6}{r.T:>6}{1e3 * r.median_s:>12.3f}{r.ns_per_op:>10.2f}"
                     f"{r.elements_per_s:>12.3g}")
    return "\n".join(lines)
