"""LM sequence scoring and N-best rescoring with weighted log-score combination."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .corpus import ConfigError, Vocabulary, tokenize
from .evaluate import sequence_logprob
from .memory import LookupDictionary
from .model import TransformerLM


@dataclass
class Hypothesis:
    tokens: list[int]  # framed BOS ... EOS
    base_score: float
    rank: int = 0

    def __post_init__(self):
        if not math.isfinite(self.base_score):
            raise ValueError(f"non-finite base score: {self.base_score}")


@dataclass
class ScoredHypothesis:
    hypothesis: Hypothesis
    lm_score: float
    combined: float


@dataclass
class FusionConfig:
    lambda_sf: float = 0.0
    lambda_res: float = 0.1
    lambda_ilme: float = 0.0  # reserved; internal-LM estimation is not supported here

    def __post_init__(self):
        if self.lambda_sf < 0 or self.lambda_res < 0:
            raise ConfigError("fusion weights must be >= 0")
        if self.lambda_ilme != 0.0:
            raise ConfigError(
                "lambda_ilme is reserved: internal-LM estimation needs the ASR model "
                "and is not available in this package"
            )

    def weight(self, mode: str) -> float:
        if mode == "rescoring":
            return self.lambda_res
        if mode == "fusion":
            return self.lambda_sf
        raise ConfigError(f"unknown combination mode {mode!r}")


def score_sequence(
    model: TransformerLM, dictionary: LookupDictionary | None, tokens: Sequence[int]
) -> float:
    """Sum of log p(token_{k+1} | prefix) over the body, EOS included."""
    return sequence_logprob(model, dictionary, tokens)


def rescore(
    hypotheses: Sequence[Hypothesis],
    lm_scores: Sequence[float],
    cfg: FusionConfig,
    mode: str = "rescoring",
) -> list[ScoredHypothesis]:
    """Rank by base_score + lambda * lm_score, descending; ties keep original order."""
    if not hypotheses:
        raise ValueError("empty hypothesis list")
    if len(lm_scores) != len(hypotheses):
        raise ValueError("one LM score per hypothesis required")
    lam = cfg.weight(mode)
    scored = [
        ScoredHypothesis(h, lm, h.base_score + lam * lm)
        for h, lm in zip(hypotheses, lm_scores)
    ]
    return sorted(scored, key=lambda s: -s.combined)  # stable: ties keep input order


def rescore_with_model(
    model: TransformerLM,
    dictionary: LookupDictionary | None,
    hypotheses: Sequence[Hypothesis],
    cfg: FusionConfig,
    mode: str = "rescoring",
) -> list[ScoredHypothesis]:
    lm_scores = [score_sequence(model, dictionary, h.tokens) for h in hypotheses]
    return rescore(hypotheses, lm_scores, cfg, mode)


# ---- N-best file format: blank-line separated utterance blocks, each line
# `rank<TAB>base_score<TAB>space-separated tokens` ----


def read_nbest(path: str | Path) -> list[list[tuple[int, float, list[str]]]]:
    blocks: list[list[tuple[int, float, list[str]]]] = []
    current: list[tuple[int, float, list[str]]] = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            if current:
                blocks.append(current)
                current = []
            continue
        rank_s, score_s, text = line.split("\t", 2)
        current.append((int(rank_s), float(score_s), text.split()))
    if current:
        blocks.append(current)
    return blocks


def nbest_to_hypotheses(
    block: Sequence[tuple[int, float, list[str]]], vocab: Vocabulary
) -> list[Hypothesis]:
    return [
        Hypothesis(tokens=tokenize(" ".join(words), vocab, "whitespace"),
                   base_score=score, rank=rank)
        for rank, score, words in block
    ]


def write_rescored(
    path: str | Path,
    blocks: Sequence[tuple[Sequence[tuple[int, float, list[str]]], Sequence[ScoredHypothesis]]],
) -> None:
    """Mirror the input format with lm_score and combined columns appended."""
    lines: list[str] = []
    for block, scored in blocks:
        by_rank = {s.hypothesis.rank: s for s in scored}
        order = sorted(scored, key=lambda s: -s.combined)
        for pos, s in enumerate(order):
            rank, base, words = next(e for e in block if e[0] == s.hypothesis.rank)
            lines.append(
                f"{rank}\t{base}\t{' '.join(words)}\t{s.lm_score:.6f}\t{s.combined:.6f}"
            )
        lines.append("")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
