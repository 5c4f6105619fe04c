"""Training loop: batching, one fused forward/select/update step, LR schedule."""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .config import RunConfig, TrainConfig
from .corpus import PAD_ID, TokenFrequencyTable
from .memory import LookupDictionary, sequence_indices
from .model import TransformerLM


class NumericError(RuntimeError):
    """Raised when training produces a non-finite loss."""


def lr_at(step: int, base_lr: float, warmup: int) -> float:
    """Linear warmup to base_lr, then inverse-sqrt decay."""
    step = max(step, 1)
    if warmup < 1:
        return base_lr / math.sqrt(step)
    return base_lr * min(step / warmup, math.sqrt(warmup / step))


def make_optimizer(model: TransformerLM, cfg: TrainConfig) -> torch.optim.AdamW:
    return torch.optim.AdamW(
        model.parameters(), lr=cfg.base_lr, betas=(0.9, 0.98), weight_decay=0.01
    )


def pad_batch(sentences: Sequence[Sequence[int]]) -> np.ndarray:
    width = max(len(s) for s in sentences)
    out = np.full((len(sentences), width), PAD_ID, dtype=np.int64)
    for i, s in enumerate(sentences):
        out[i, : len(s)] = s
    return out


def sample_batch(
    sentences: Sequence[Sequence[int]], step: int, cfg: TrainConfig
) -> np.ndarray:
    """Deterministic per-step batch with a fixed token budget.

    Seeded by (data_seed, step) so a resumed run draws identical batches.
    """
    rng = np.random.default_rng([cfg.data_seed, step])
    picked: list[Sequence[int]] = []
    budget = cfg.batch_tokens
    while budget > 0:
        sent = sentences[int(rng.integers(len(sentences)))]
        picked.append(sent)
        budget -= len(sent)
    return pad_batch(picked)


def masked_lm_loss(
    model: TransformerLM, dictionary: LookupDictionary | None, tokens: torch.Tensor
) -> tuple[torch.Tensor, torch.Tensor | None]:
    """Next-token cross-entropy over non-PAD targets; returns (loss, attention weights)."""
    c = model(tokens)
    weights = None
    if dictionary is not None:
        idx = torch.from_numpy(sequence_indices(tokens.numpy(), dictionary.cfg.N, dictionary.cfg.U))
        c_tilde, weights = dictionary.select(c, idx)
        pad = (tokens == PAD_ID).unsqueeze(-1)
        c = torch.where(pad, c, c_tilde)  # PAD positions bypass selection
    scores = model.logits(c)
    targets = tokens[:, 1:].reshape(-1)
    loss = F.cross_entropy(
        scores[:, :-1].reshape(-1, model.cfg.V), targets, ignore_index=PAD_ID
    )
    return loss, weights


def train_step(
    model: TransformerLM,
    dictionary: LookupDictionary | None,
    optimizer: torch.optim.Optimizer,
    tokens: torch.Tensor,
    freq: TokenFrequencyTable | None,
    cfg: TrainConfig,
    step: int,
) -> tuple[float, int]:
    """One update: forward, context selection, loss, backward, Adam, then dictionary update.

    The dictionary update runs after the optimizer step so memory pulls toward
    the freshly updated embedding rows. Returns (loss, dictionary update count).
    """
    lr = lr_at(step, cfg.base_lr, cfg.lr_warmup_steps)
    for group in optimizer.param_groups:
        group["lr"] = lr
    model.train()
    loss, _ = masked_lm_loss(model, dictionary, tokens)
    if not torch.isfinite(loss):
        raise NumericError(f"non-finite loss at step {step}: {loss.item()}")
    optimizer.zero_grad()
    loss.backward()
    if cfg.grad_clip > 0:
        torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
    optimizer.step()
    applied = 0
    if dictionary is not None:
        arr = tokens.numpy()
        idx = sequence_indices(arr, dictionary.cfg.N, dictionary.cfg.U)
        emb = model.embedding.detach().to(dictionary.memory.dtype).numpy()
        applied = dictionary.apply_batch(arr, idx, emb, freq)
    return float(loss.item()), applied


def run_training(
    run_cfg: RunConfig,
    sentences: Sequence[Sequence[int]],
    freq: TokenFrequencyTable,
    model: TransformerLM | None = None,
    dictionary: LookupDictionary | None = None,
    optimizer: torch.optim.Optimizer | None = None,
    start_step: int = 0,
    log_fn: Callable[[dict], None] | None = None,
) -> tuple[TransformerLM, LookupDictionary | None, list[dict]]:
    """Train from scratch (or resume) for run_cfg.train.max_steps; single-threaded."""
    torch.set_num_threads(1)
    torch.manual_seed(run_cfg.model.seed)
    if model is None:
        model = TransformerLM(run_cfg.model)
    if dictionary is None and run_cfg.use_dict:
        dictionary = LookupDictionary(
            run_cfg.memory, run_cfg.model.d_emb, init_std=model.init_std
        )
    if optimizer is None:
        optimizer = make_optimizer(model, run_cfg.train)
    history: list[dict] = []
    for step in range(start_step + 1, run_cfg.train.max_steps + 1):
        batch = torch.from_numpy(sample_batch(sentences, step, run_cfg.train))
        loss, applied = train_step(
            model, dictionary, optimizer, batch, freq, run_cfg.train, step
        )
        record = {
            "step": step,
            "loss": loss,
            "lr": lr_at(step, run_cfg.train.base_lr, run_cfg.train.lr_warmup_steps),
            "dict_updates": applied,
        }
        history.append(record)
        if log_fn is not None:
            log_fn(record)
    return model, dictionary, history
