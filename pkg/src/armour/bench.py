"""Forward-pass micro-benchmarks across attention variants.

Timings are relative, same-process comparisons: inputs and weights are
built before the timed region, BLAS is pinned to one thread, and when
several variants are compared their iterations are interleaved so slow
drift in machine load hits all of them alike.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .analysis import FlopReport, attention_arch, levit_block_macs, model_flop_count
from .attention import AttentionConfig, AttentionVariant, attention, init_weights
from .levit import LevitBlockConfig, init_block_weights, levit_block_forward
from .tensor_core import Tensor, transpose

MIN_WARMUP = 5
MIN_ITERS = 30


@dataclass
class BenchReport:
    target: str
    variant: str
    dims: dict
    warmup: int
    iters: int
    median: float
    p10: float
    p90: float
    macs: dict
    transpose_median: float | None = None
    times: list[float] = field(default_factory=list, repr=False)
    kind: str = "bench"

    def to_dict(self, include_times: bool = False) -> dict:
        d = asdict(self)
        if not include_times:
            d.pop("times")
        return d


def _macs(report: FlopReport) -> dict:
    b = report.blocks[0]
    return {"projection": b.projection_macs, "attention": b.attention_macs,
            "output": b.output_macs, "total": report.total}


def macs_for(cfg: AttentionConfig | LevitBlockConfig) -> dict:
    if isinstance(cfg, LevitBlockConfig):
        return _macs(levit_block_macs(cfg))
    return _macs(model_flop_count(attention_arch(cfg), cfg.seq_len))


def _prepare(cfg, seed: int) -> tuple[Callable[[], Tensor], dict, str]:
    rng = np.random.default_rng(seed)
    if isinstance(cfg, LevitBlockConfig):
        w = init_block_weights(cfg, rng)
        x = Tensor(rng.standard_normal((cfg.tokens, cfg.in_channels)))
        dims = {"N": cfg.heads, "D": cfg.key_dim, "H": cfg.height, "W": cfg.width, "C": cfg.in_channels}
        return (lambda: levit_block_forward(x, w, cfg)), dims, "levit_block"
    w = init_weights(cfg, rng)
    x = Tensor(rng.standard_normal((cfg.seq_len, cfg.model_dim)))
    dims = {"L": cfg.seq_len, "d": cfg.model_dim, "h": cfg.heads}
    return (lambda: attention(x, w, cfg)), dims, "attention"


def _transpose_probe(cfg: AttentionConfig, seed: int) -> Callable[[], Tensor]:
    # the K^T copy a shared K/V layout pays on top of reusing K untransposed
    rng = np.random.default_rng(seed + 1)
    k = Tensor(rng.standard_normal((cfg.seq_len, cfg.head_dim)))
    return lambda: transpose(k)


def _summarize(times: Sequence[float]) -> tuple[float, float, float]:
    arr = np.asarray(times)
    return float(np.median(arr)), float(np.percentile(arr, 10)), float(np.percentile(arr, 90))


def compare(cfgs: Sequence[AttentionConfig | LevitBlockConfig], iters: int = MIN_ITERS,
            seed: int = 0, warmup: int = MIN_WARMUP) -> list[BenchReport]:
    """Benchmark several configs with interleaved iterations; one report each."""
    iters = max(iters, MIN_ITERS)
    warmup = max(warmup, MIN_WARMUP)
    jobs = [_prepare(cfg, seed) for cfg in cfgs]
    probes = {i: _transpose_probe(cfg, seed) for i, cfg in enumerate(cfgs)
              if isinstance(cfg, AttentionConfig) and cfg.variant is AttentionVariant.KV_SHARED}
    times = [[] for _ in cfgs]
    ptimes = {i: [] for i in probes}
    clock = time.perf_counter
    with threadpool_limits(limits=1):
        for _ in range(warmup):
            for fn, _, _ in jobs:
                fn()
            for p in probes.values():
                p()
        for _ in range(iters):
            for i, (fn, _, _) in enumerate(jobs):
                t0 = clock()
                fn()
                times[i].append(clock() - t0)
            for i, p in probes.items():
                t0 = clock()
                p()
                ptimes[i].append(clock() - t0)
    reports = []
    for i, cfg in enumerate(cfgs):
        med, p10, p90 = _summarize(times[i])
        _, dims, target = jobs[i]
        reports.append(BenchReport(
            target, cfg.variant.value, dims, warmup, iters, med, p10, p90, macs_for(cfg),
            transpose_median=_summarize(ptimes[i])[0] if i in probes else None,
            times=times[i],
        ))
    return reports


def run_bench(cfg: AttentionConfig | LevitBlockConfig, iters: int = MIN_ITERS, seed: int = 0,
              warmup: int = MIN_WARMUP) -> BenchReport:
    return compare([cfg], iters, seed, warmup)[0]
