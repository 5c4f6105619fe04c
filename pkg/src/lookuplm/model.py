"""Tied-embedding causal Transformer exposing last-layer contextualized embeddings."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .corpus import ConfigError


@dataclass
class ModelConfig:
    V: int
    d_emb: int = 384
    L: int = 4
    H: int = 4
    d_ff: int = 1536
    max_len: int = 256
    dropout: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.V < 1 or self.d_emb < 1 or self.L < 0 or self.H < 1 or self.d_ff < 1:
            raise ConfigError("model dimensions must be >= 1 (L >= 0)")
        if self.d_emb % self.H != 0:
            raise ConfigError(f"d_emb={self.d_emb} not divisible by H={self.H}")
        if not (0.0 <= self.dropout < 1.0):
            raise ConfigError(f"dropout must be in [0,1), got {self.dropout}")


class CausalSelfAttention(nn.Module):
    def __init__(self, d_emb: int, n_heads: int, dropout: float):
        super().__init__()
        self.n_heads = n_heads
        self.d_head = d_emb // n_heads
        self.qkv = nn.Linear(d_emb, 3 * d_emb)
        self.proj = nn.Linear(d_emb, d_emb)
        self.drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        B, T, D = x.shape
        q, k, v = self.qkv(x).split(D, dim=-1)
        q = q.view(B, T, self.n_heads, self.d_head).transpose(1, 2)
        k = k.view(B, T, self.n_heads, self.d_head).transpose(1, 2)
        v = v.view(B, T, self.n_heads, self.d_head).transpose(1, 2)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.d_head)
        mask = torch.triu(torch.ones(T, T, dtype=torch.bool, device=x.device), 1)
        scores = scores.masked_fill(mask, float("-inf"))
        att = self.drop(torch.softmax(scores, dim=-1))
        out = (att @ v).transpose(1, 2).reshape(B, T, D)
        return self.proj(out)


class Block(nn.Module):
    """Pre-norm Transformer block: LN -> attention -> residual, LN -> FF -> residual."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.ln1 = nn.LayerNorm(cfg.d_emb)
        self.attn = CausalSelfAttention(cfg.d_emb, cfg.H, cfg.dropout)
        self.ln2 = nn.LayerNorm(cfg.d_emb)
        self.ff = nn.Sequential(
            nn.Linear(cfg.d_emb, cfg.d_ff),
            nn.GELU(),
            nn.Linear(cfg.d_ff, cfg.d_emb),
        )
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.drop(self.attn(self.ln1(x)))
        x = x + self.drop(self.ff(self.ln2(x)))
        return x


class TransformerLM(nn.Module):
    """Causal LM with one embedding matrix shared between input lookup and output logits."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        gen = torch.Generator().manual_seed(cfg.seed)
        self.embedding = nn.Parameter(torch.empty(cfg.V, cfg.d_emb).normal_(0.0, 0.02, generator=gen))
        self.pos_embedding = nn.Parameter(torch.empty(cfg.max_len, cfg.d_emb).normal_(0.0, 0.02, generator=gen))
        self.blocks = nn.ModuleList(Block(cfg) for _ in range(cfg.L))
        self.final_norm = nn.LayerNorm(cfg.d_emb)
        self.drop = nn.Dropout(cfg.dropout)
        # re-init linear layers from the same generator so construction is seed-deterministic
        for mod in self.modules():
            if isinstance(mod, nn.Linear):
                mod.weight.data.normal_(0.0, 0.02, generator=gen)
                mod.bias.data.zero_()

    @property
    def init_std(self) -> float:
        return 0.02

    def embed(self, tokens: torch.Tensor) -> torch.Tensor:
        """Token embedding plus learned positional embedding; tokens is (B, T) or (T,)."""
        if int(tokens.max()) >= self.cfg.V or int(tokens.min()) < 0:
            raise ValueError("token id out of range")
        T = tokens.shape[-1]
        if T > self.cfg.max_len:
            raise ValueError(f"sequence length {T} exceeds max_len {self.cfg.max_len}")
        return self.embedding[tokens] + self.pos_embedding[:T]

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        """Contextualized embeddings C; with L=0 blocks this is the identity stack (C = E)."""
        x = self.embed(tokens)
        if self.cfg.L == 0:
            return x
        x = self.drop(x)
        for block in self.blocks:
            x = block(x)
        return self.final_norm(x)

    def logits(self, c: torch.Tensor) -> torch.Tensor:
        """Output scores via the tied embedding table: c @ embedding^T."""
        return c @ self.embedding.t()
