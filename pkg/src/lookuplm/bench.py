"""Single-threaded latency benchmarking: per-token inference cost and selection scaling."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from .memory import DictConfig, LookupDictionary, sequence_indices
from .model import TransformerLM
from .training import pad_batch


@dataclass
class BenchReport:
    base_median: float
    base_p95: float
    aug_median: float
    aug_p95: float
    overhead: float
    reliable: bool

    def to_dict(self) -> dict:
        return {
            "base_median_s_per_token": self.base_median,
            "base_p95_s_per_token": self.base_p95,
            "aug_median_s_per_token": self.aug_median,
            "aug_p95_s_per_token": self.aug_p95,
            "relative_overhead": self.overhead,
            "reliable": self.reliable,
        }


def _forward_once(
    model: TransformerLM,
    dictionary: LookupDictionary | None,
    batch: torch.Tensor,
    n_tokens: int,
) -> float:
    """Per-token wall time of one evaluation-mode forward pass."""
    t0 = time.perf_counter()
    c = model(batch)
    if dictionary is not None:
        idx = torch.from_numpy(
            sequence_indices(batch.numpy(), dictionary.cfg.N, dictionary.cfg.U)
        )
        c, _ = dictionary.select(c, idx)
    model.logits(c)
    return (time.perf_counter() - t0) / n_tokens


def latency_benchmark(
    model_base: TransformerLM,
    model_aug: TransformerLM,
    dictionary: LookupDictionary,
    sentences: Sequence[Sequence[int]],
    reps: int = 30,
    warmup: int = 5,
) -> BenchReport:
    """Median/p95 per-token latency for baseline vs dictionary-augmented inference.

    Baseline and augmented passes are interleaved rep-for-rep so that slow
    drift in machine load biases both paths equally.
    """
    torch.set_num_threads(1)
    batch = torch.from_numpy(pad_batch(sentences))
    model_base.eval()
    model_aug.eval()
    n_tokens = int((batch != 0).sum())  # PAD id is 0
    base: list[float] = []
    aug: list[float] = []
    with torch.no_grad():
        for r in range(warmup + reps):
            tb = _forward_once(model_base, None, batch, n_tokens)
            ta = _forward_once(model_aug, dictionary, batch, n_tokens)
            if r >= warmup:
                base.append(tb)
                aug.append(ta)
    base_med, base_p95 = float(np.median(base)), float(np.percentile(base, 95))
    aug_med, aug_p95 = float(np.median(aug)), float(np.percentile(aug, 95))
    reliable = base_p95 / base_med <= 2.0 and aug_p95 / aug_med <= 2.0
    return BenchReport(
        base_median=base_med,
        base_p95=base_p95,
        aug_median=aug_med,
        aug_p95=aug_p95,
        overhead=(aug_med - base_med) / base_med,
        reliable=reliable,
    )


def selection_cost(
    m_values: Sequence[int],
    d_emb: int = 64,
    n_queries: int = 2048,
    reps: int = 30,
    seed: int = 0,
) -> dict[int, float]:
    """Median wall time of one batched select() per memory size M."""
    torch.set_num_threads(1)
    rng = np.random.default_rng(seed)
    costs: dict[int, float] = {}
    for m in m_values:
        cfg = DictConfig(U=512, M=m, N=2, seed=seed)
        d = LookupDictionary(cfg, d_emb)
        c = torch.from_numpy(rng.normal(size=(n_queries, d_emb)).astype(np.float32))
        idx = torch.from_numpy(rng.integers(0, cfg.U, size=n_queries))
        times = []
        with torch.no_grad():
            for r in range(5 + reps):
                t0 = time.perf_counter()
                d.select(c, idx)
                if r >= 5:
                    times.append(time.perf_counter() - t0)
        costs[m] = float(np.median(times))
    return costs
