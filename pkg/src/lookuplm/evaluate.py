"""Perplexity with tail buckets, attention entropy / information gain, gradient attribution."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .corpus import BOS_ID, PAD_ID, TailSet
from .memory import DictConfig, LookupDictionary, sequence_indices
from .model import TransformerLM
from .training import pad_batch


@dataclass
class EvalReport:
    overall_ppl: float
    overall_count: int
    tail1_ppl: float | None = None
    tail1_count: int = 0
    tail2_ppl: float | None = None
    tail2_count: int = 0

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)


def _sentence_nll(
    model: TransformerLM, dictionary: LookupDictionary | None, batch: torch.Tensor
) -> torch.Tensor:
    """Per-position negative log-likelihood of targets, (B, T-1); PAD targets get NaN."""
    c = model(batch)
    if dictionary is not None:
        idx = torch.from_numpy(
            sequence_indices(batch.numpy(), dictionary.cfg.N, dictionary.cfg.U)
        )
        c_tilde, _ = dictionary.select(c, idx)
        c = torch.where((batch == PAD_ID).unsqueeze(-1), c, c_tilde)
    logp = F.log_softmax(model.logits(c), dim=-1)
    targets = batch[:, 1:]
    nll = -logp[:, :-1].gather(-1, targets.clamp_min(0).unsqueeze(-1)).squeeze(-1)
    return torch.where(targets == PAD_ID, torch.full_like(nll, float("nan")), nll)


def perplexity(
    model: TransformerLM,
    dictionary: LookupDictionary | None,
    sentences: Sequence[Sequence[int]],
    tail1: TailSet | None = None,
    tail2: TailSet | None = None,
    batch_size: int = 64,
) -> EvalReport:
    """Exp of mean NLL over all non-PAD targets, plus tail-restricted buckets.

    A target position falls in a tail bucket when the n-gram of target tokens
    ending at it is a tail member. Empty buckets report None.
    """
    model.eval()
    sums = {"overall": 0.0, "tail1": 0.0, "tail2": 0.0}
    counts = {"overall": 0, "tail1": 0, "tail2": 0}
    with torch.no_grad():
        for lo in range(0, len(sentences), batch_size):
            chunk = sentences[lo : lo + batch_size]
            batch = torch.from_numpy(pad_batch(chunk))
            nll = _sentence_nll(model, dictionary, batch)
            for b, sent in enumerate(chunk):
                body = [t for t in sent[1:] if t != PAD_ID]
                for j, _ in enumerate(body):
                    v = float(nll[b, j])
                    sums["overall"] += v
                    counts["overall"] += 1
                    if tail1 is not None and tail1.contains_position(body, j):
                        sums["tail1"] += v
                        counts["tail1"] += 1
                    if tail2 is not None and tail2.contains_position(body, j):
                        sums["tail2"] += v
                        counts["tail2"] += 1
    def ppl(key: str) -> float | None:
        return math.exp(sums[key] / counts[key]) if counts[key] else None

    return EvalReport(
        overall_ppl=ppl("overall") or float("nan"),
        overall_count=counts["overall"],
        tail1_ppl=ppl("tail1"),
        tail1_count=counts["tail1"],
        tail2_ppl=ppl("tail2"),
        tail2_count=counts["tail2"],
    )


def sequence_logprob(
    model: TransformerLM, dictionary: LookupDictionary | None, tokens: Sequence[int]
) -> float:
    """Total log-probability of the sequence body (EOS included), given BOS framing."""
    model.eval()
    with torch.no_grad():
        batch = torch.from_numpy(np.asarray([list(tokens)], dtype=np.int64))
        nll = _sentence_nll(model, dictionary, batch)
        mask = batch[:, 1:] != PAD_ID
        return -float(nll[mask].sum())


def attention_entropy(weights: np.ndarray | torch.Tensor) -> float:
    """Shannon entropy -sum w ln w of one attention weight vector; 0 ln 0 := 0."""
    w = np.asarray(weights, dtype=np.float64)
    nz = w[w > 0]
    return float(-(nz * np.log(nz)).sum())


def mean_attention_entropy(
    model: TransformerLM,
    dictionary: LookupDictionary,
    sentences: Sequence[Sequence[int]],
    batch_size: int = 64,
) -> float:
    """Mean selection-weight entropy over all non-PAD positions."""
    model.eval()
    total, n = 0.0, 0
    with torch.no_grad():
        for lo in range(0, len(sentences), batch_size):
            batch = torch.from_numpy(pad_batch(sentences[lo : lo + batch_size]))
            c = model(batch)
            idx = torch.from_numpy(
                sequence_indices(batch.numpy(), dictionary.cfg.N, dictionary.cfg.U)
            )
            _, weights = dictionary.select(c, idx)
            w = weights.numpy()
            logw = np.where(w > 0, np.log(np.maximum(w, 1e-300)), 0.0)
            h = -(w * logw).sum(axis=-1)
            mask = batch.numpy() != PAD_ID
            total += float(h[mask].sum())
            n += int(mask.sum())
    return total / max(n, 1)


def information_gain(
    model: TransformerLM,
    dictionary: LookupDictionary,
    sentences: Sequence[Sequence[int]],
    random_seed: int | None = None,
) -> float:
    """Mean attention entropy under re-seeded random memory minus under trained memory."""
    h_trained = mean_attention_entropy(model, dictionary, sentences)
    cfg = dataclasses.replace(
        dictionary.cfg,
        seed=dictionary.cfg.seed if random_seed is None else random_seed,
    )
    random_dict = LookupDictionary(
        cfg, dictionary.d_emb, init_std=dictionary.init_std,
        dtype=dictionary.memory.dtype,
    )
    random_dict.freeze()
    h_random = mean_attention_entropy(model, random_dict, sentences)
    return h_random - h_trained


def gradient_attribution(
    model: TransformerLM, dictionary: LookupDictionary, tokens: torch.Tensor
) -> dict[str, float]:
    """Loss-gradient magnitudes for the memory tensor and the embedding table.

    Analysis only: the memory gradient is materialized through a differentiable
    copy and never applied. Reports the Frobenius norm and the per-element
    (norm / sqrt(numel)) statistic for both tensors.
    """
    model.eval()
    mem = dictionary.memory.clone().requires_grad_(True)
    c = model(tokens)
    idx = torch.from_numpy(
        sequence_indices(tokens.numpy(), dictionary.cfg.N, dictionary.cfg.U)
    )
    c_tilde, _ = dictionary.select(c, idx, memory=mem)
    c_used = torch.where((tokens == PAD_ID).unsqueeze(-1), c, c_tilde)
    scores = model.logits(c_used)
    targets = tokens[:, 1:].reshape(-1)
    loss = F.cross_entropy(
        scores[:, :-1].reshape(-1, model.cfg.V), targets, ignore_index=PAD_ID
    )
    g_mem, g_emb = torch.autograd.grad(loss, [mem, model.embedding])
    out = {
        "memory_grad_norm": float(g_mem.norm()),
        "memory_grad_per_element": float(g_mem.norm()) / math.sqrt(g_mem.numel()),
        "embedding_grad_norm": float(g_emb.norm()),
        "embedding_grad_per_element": float(g_emb.norm()) / math.sqrt(g_emb.numel()),
    }
    return out
