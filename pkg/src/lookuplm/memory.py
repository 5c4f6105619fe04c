"""Hashed lookup-dictionary memory: modular n-gram indexing, frequency-weighted
stochastic EMA updates, and single-head attention context selection."""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from .corpus import BOS_ID, PAD_ID, ConfigError, TokenFrequencyTable

MEMORY_MAGIC = b"LUTMEM01"


@dataclass
class DictConfig:
    U: int = 5000
    M: int = 64
    N: int = 2
    alpha: float = 0.5
    warmup_steps: int = 1000
    p_floor: float = 0.05
    p_ceil: float = 1.0
    seed: int = 0
    # "freq" uses the 1/ln(count) rule; a float fixes the update probability.
    ratio_policy: str | float = "freq"
    residual: bool = False

    def __post_init__(self):
        if self.U < 1 or self.M < 1 or self.N < 1:
            raise ConfigError("U, M, N must all be >= 1")
        if not (0.0 <= self.alpha <= 1.0):
            raise ConfigError(f"alpha must be in [0,1], got {self.alpha}")
        if not (0.0 < self.p_floor <= self.p_ceil <= 1.0):
            raise ConfigError("require 0 < p_floor <= p_ceil <= 1")
        if isinstance(self.ratio_policy, str) and self.ratio_policy != "freq":
            raise ConfigError(f"unknown ratio policy {self.ratio_policy!r}")


def index(window: Sequence[int], n: int, u: int) -> int:
    """Dictionary index for the n-gram ending the window: sum of the last n ids, mod u."""
    if len(window) < n:
        raise ValueError(f"window of {len(window)} ids is shorter than n={n}")
    return sum(window[-n:]) % u


def sequence_indices(tokens: np.ndarray, n: int, u: int) -> np.ndarray:
    """Per-position indices for a (..., T) id array, left-padding windows with BOS."""
    arr = np.asarray(tokens, dtype=np.int64)
    padded = np.concatenate(
        [np.full(arr.shape[:-1] + (n - 1,), BOS_ID, dtype=np.int64), arr], axis=-1
    )
    windows = np.stack([padded[..., k : k + arr.shape[-1]] for k in range(n)], axis=-1)
    return windows.sum(axis=-1) % u


def update_ratio(count: int, p_floor: float = 0.05, p_ceil: float = 1.0) -> float:
    """Update probability 1/ln(count), clamped to [p_floor, p_ceil]; count <= 2 -> p_ceil."""
    if count < 0:
        raise ValueError(f"count must be >= 0, got {count}")
    if count <= 2:
        return p_ceil
    return min(max(1.0 / math.log(count), p_floor), p_ceil)


class LookupDictionary:
    """U x M x d_emb memory tensor with training/frozen modes and a seeded PRNG.

    The memory is never touched by the optimizer; it changes only through the
    stochastic EMA update, and only in training mode after the warmup period.
    """

    def __init__(
        self,
        cfg: DictConfig,
        d_emb: int,
        init_std: float = 0.02,
        dtype: torch.dtype = torch.float32,
    ):
        self.cfg = cfg
        self.d_emb = d_emb
        self.init_std = init_std
        self.rng = np.random.default_rng(cfg.seed)
        init = self.rng.normal(0.0, init_std, size=(cfg.U, cfg.M, d_emb))
        self.memory = torch.from_numpy(init).to(dtype)
        self.mode = "training"
        self.step = 0

    def freeze(self) -> None:
        self.mode = "frozen"

    def unfreeze(self) -> None:
        self.mode = "training"

    @property
    def updates_enabled(self) -> bool:
        return self.mode == "training" and self.step > self.cfg.warmup_steps

    def ratio_for(self, count: int) -> float:
        if isinstance(self.cfg.ratio_policy, str):
            return update_ratio(count, self.cfg.p_floor, self.cfg.p_ceil)
        return float(self.cfg.ratio_policy)

    def checksum(self) -> str:
        return hashlib.sha256(self.memory.numpy().tobytes()).hexdigest()

    def select(
        self, c: torch.Tensor, idx: torch.Tensor, memory: torch.Tensor | None = None
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Attend from queries c (..., d) into memory rows at idx (...,).

        Returns (c_tilde, weights): weights = softmax(D_i c / sqrt(d)),
        c_tilde = weights^T D_i. Gradients flow to c only unless an explicit
        differentiable memory override is supplied (analysis mode).
        """
        mem = self.memory if memory is None else memory
        rows = mem[idx]  # (..., M, d)
        scores = (rows @ c.unsqueeze(-1)).squeeze(-1) / math.sqrt(self.d_emb)
        weights = torch.softmax(scores, dim=-1)
        c_tilde = (weights.unsqueeze(-2) @ rows).squeeze(-2)
        if self.cfg.residual:
            c_tilde = c_tilde + c
        return c_tilde, weights

    def update(self, i: int, e_next: np.ndarray, p: float) -> None:
        """Stochastic EMA pull of memory row block i toward e_next.

        Each of the M vectors draws its own Bernoulli(p); selected vectors move
        to alpha * d + (1 - alpha) * e_next. Silent no-op in frozen mode or warmup.
        """
        if not self.updates_enabled:
            return
        draws = self.rng.random(self.cfg.M) < p
        if draws.any():
            mem = self.memory.numpy()
            a = self.cfg.alpha
            mem[i, draws] = a * mem[i, draws] + (1.0 - a) * e_next

    def apply_batch(
        self,
        tokens: np.ndarray,
        indices: np.ndarray,
        embedding: np.ndarray,
        freq: TokenFrequencyTable | None,
    ) -> int:
        """Update pass over a padded (B, T) batch; sentence-major, left-to-right.

        Position k updates row block indices[b, k] toward the embedding of token
        k+1 (EOS allowed, PAD not). Advances the step counter once per batch in
        training mode. Returns the number of positions that performed an update.
        """
        applied = 0
        if self.mode != "training":
            return applied
        self.step += 1
        if self.step <= self.cfg.warmup_steps:
            return applied
        B, T = tokens.shape
        for b in range(B):
            for k in range(T - 1):
                cur, nxt = tokens[b, k], tokens[b, k + 1]
                if cur == PAD_ID or nxt == PAD_ID:
                    break
                count = freq.count(int(nxt)) if freq is not None else 0
                self.update(int(indices[b, k]), embedding[nxt], self.ratio_for(count))
                applied += 1
        return applied

    # ---- standalone binary export: header (U, M, d_emb, step, seed), then
    # U*M*d_emb little-endian float32 values, row-major (u, m, d) ----

    def export_bytes(self) -> bytes:
        header = MEMORY_MAGIC + struct.pack(
            "<qqqqq", self.cfg.U, self.cfg.M, self.d_emb, self.step, self.cfg.seed
        )
        body = self.memory.to(torch.float32).numpy().astype("<f4").tobytes()
        return header + body

    @classmethod
    def from_bytes(cls, blob: bytes, cfg: DictConfig | None = None) -> "LookupDictionary":
        if blob[:8] != MEMORY_MAGIC:
            raise ValueError("bad memory block magic")
        u, m, d, step, seed = struct.unpack("<qqqqq", blob[8:48])
        if cfg is None:
            cfg = DictConfig(U=u, M=m, seed=seed)
        if (cfg.U, cfg.M) != (u, m):
            raise ValueError("memory block shape does not match config")
        inst = cls(cfg, d)
        data = np.frombuffer(blob[48:], dtype="<f4").reshape(u, m, d)
        inst.memory = torch.from_numpy(data.copy())
        inst.step = step
        return inst
