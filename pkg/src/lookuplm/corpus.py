"""Tokenization, vocabulary/frequency statistics, tail extraction, tail error rate."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

PAD_ID = 0
BOS_ID = 1
EOS_ID = 2
UNK_ID = 3
NUM_SPECIALS = 4
SPECIAL_TOKENS = ("<pad>", "<bos>", "<eos>", "<unk>")


class ConfigError(ValueError):
    """Raised for invalid configuration values."""


def split_line(line: str, mode: str) -> list[str]:
    """Split one line of raw text into surface tokens.

    ``whitespace`` splits on runs of whitespace; ``char`` treats every
    non-whitespace character as a token.
    """
    if mode == "whitespace":
        return line.split()
    if mode == "char":
        return [ch for ch in line if not ch.isspace()]
    raise ConfigError(f"unknown tokenize mode: {mode!r}")


class Vocabulary:
    """Bijective token<->id map with fixed reserved ids for PAD/BOS/EOS/UNK."""

    def __init__(self, tokens: Sequence[str]):
        self.tokens: list[str] = list(SPECIAL_TOKENS) + list(tokens)
        self.id_of: dict[str, int] = {t: i for i, t in enumerate(self.tokens)}
        if len(self.id_of) != len(self.tokens):
            raise ConfigError("duplicate tokens in vocabulary")

    @property
    def size(self) -> int:
        return len(self.tokens)

    def lookup(self, token: str) -> int:
        return self.id_of.get(token, UNK_ID)

    def token(self, idx: int) -> str:
        return self.tokens[idx]

    @classmethod
    def build(cls, lines: Iterable[str], mode: str) -> "Vocabulary":
        """Collect all surface tokens from the corpus; ids assigned in sorted order."""
        seen: set[str] = set()
        for line in lines:
            seen.update(split_line(line, mode))
        seen -= set(SPECIAL_TOKENS)
        return cls(sorted(seen))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            "".join(f"{t}\n" for t in self.tokens[NUM_SPECIALS:]), encoding="utf-8"
        )

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(lines)


def tokenize(text: str, vocab: Vocabulary, mode: str) -> list[int]:
    """Map raw text to an id sequence framed as BOS ... EOS; OOV symbols become UNK."""
    return [BOS_ID] + [vocab.lookup(t) for t in split_line(text, mode)] + [EOS_ID]


@dataclass
class TokenFrequencyTable:
    """Per-token occurrence counts over the training corpus body (EOS counted, BOS/PAD not)."""

    counts: dict[int, int]

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def count(self, token_id: int) -> int:
        return self.counts.get(token_id, 0)

    def save(self, path: str | Path) -> None:
        lines = [f"{tid}\t{c}" for tid, c in sorted(self.counts.items())]
        lines.append(f"#TOTAL\t{self.total}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "TokenFrequencyTable":
        counts: dict[int, int] = {}
        total = None
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            key, val = line.split("\t")
            if key == "#TOTAL":
                total = int(val)
            else:
                counts[int(key)] = int(val)
        table = cls(counts)
        if total is not None and total != table.total:
            raise ValueError(f"frequency table total mismatch: {total} != {table.total}")
        return table


def build_frequency_table(corpus: Iterable[Sequence[int]]) -> TokenFrequencyTable:
    """Count token occurrences over tokenized sentences, excluding BOS and PAD."""
    counts: Counter[int] = Counter()
    for sent in corpus:
        counts.update(t for t in sent if t not in (BOS_ID, PAD_ID))
    return TokenFrequencyTable(dict(counts))


def ngram_counts(corpus: Iterable[Sequence[int]], n: int) -> dict[tuple[int, ...], int]:
    """Counts of n-gram id tuples over sentence bodies (BOS/PAD stripped, EOS kept)."""
    counts: Counter[tuple[int, ...]] = Counter()
    for sent in corpus:
        body = [t for t in sent if t not in (BOS_ID, PAD_ID)]
        for k in range(len(body) - n + 1):
            counts[tuple(body[k : k + n])] += 1
    return dict(counts)


@dataclass(frozen=True)
class TailSet:
    """Least-frequent n-grams whose cumulative mass stays within the threshold."""

    threshold: float
    n: int
    members: frozenset[tuple[int, ...]]

    def contains_position(self, seq: Sequence[int], k: int) -> bool:
        """True when the n-gram ending at position k is a tail member."""
        if k - self.n + 1 < 0:
            return False
        return tuple(seq[k - self.n + 1 : k + 1]) in self.members


def extract_tail(
    freq: TokenFrequencyTable | Mapping[tuple[int, ...], int],
    threshold: float,
    n: int = 1,
) -> TailSet:
    """Select n-grams from least frequent upward while cumulative mass <= threshold * total.

    Ties in count are broken by ascending id tuple.
    """
    if not (0.0 < threshold < 1.0):
        raise ConfigError(f"tail threshold must be in (0,1), got {threshold}")
    if isinstance(freq, TokenFrequencyTable):
        items: list[tuple[tuple[int, ...], int]] = [
            ((tid,), c) for tid, c in freq.counts.items()
        ]
    else:
        items = list(freq.items())
    total = sum(c for _, c in items)
    budget = threshold * total
    members: set[tuple[int, ...]] = set()
    mass = 0
    for key, c in sorted(items, key=lambda kv: (kv[1], kv[0])):
        if mass + c > budget:
            break
        mass += c
        members.add(key)
    return TailSet(threshold=threshold, n=n, members=frozenset(members))


# Alignment ops, in backtrace preference order.
_MATCH, _SUB, _DEL, _INS = "match", "sub", "del", "ins"


def align(ref: Sequence[int], hyp: Sequence[int]) -> list[tuple[str, int, int]]:
    """Minimal-cost edit alignment as (op, ref_pos, hyp_pos) steps.

    Unit costs; ties resolved preferring match > substitution > deletion >
    insertion during backtrace. ref_pos/hyp_pos are the consumed indices
    (-1 when the side is not consumed by the step).
    """
    R, H = len(ref), len(hyp)
    dist = [[0] * (H + 1) for _ in range(R + 1)]
    for i in range(1, R + 1):
        dist[i][0] = i
    for j in range(1, H + 1):
        dist[0][j] = j
    for i in range(1, R + 1):
        for j in range(1, H + 1):
            diag = dist[i - 1][j - 1] + (0 if ref[i - 1] == hyp[j - 1] else 1)
            dist[i][j] = min(diag, dist[i - 1][j] + 1, dist[i][j - 1] + 1)
    steps: list[tuple[str, int, int]] = []
    i, j = R, H
    while i > 0 or j > 0:
        if i > 0 and j > 0 and ref[i - 1] == hyp[j - 1] and dist[i][j] == dist[i - 1][j - 1]:
            steps.append((_MATCH, i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i > 0 and j > 0 and dist[i][j] == dist[i - 1][j - 1] + 1:
            steps.append((_SUB, i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i > 0 and dist[i][j] == dist[i - 1][j] + 1:
            steps.append((_DEL, i - 1, -1))
            i -= 1
        else:
            steps.append((_INS, i, j - 1))  # attributed to the following ref position
            j -= 1
    steps.reverse()
    return steps


def tail_error_rate(
    ref: Sequence[int], hyp: Sequence[int], tail: TailSet
) -> float:
    """Edit error rate over tail reference positions only.

    Substitutions/deletions count at their reference position; insertions are
    attributed to the following reference position (dropped when past the end).
    Denominator is the number of tail reference positions; 0/0 -> 0.0.
    """
    tail_pos = [k for k in range(len(ref)) if tail.contains_position(ref, k)]
    denom = len(tail_pos)
    if denom == 0:
        return 0.0
    tail_mask = set(tail_pos)
    errors = 0
    for op, rpos, _ in align(ref, hyp):
        if op == _MATCH:
            continue
        if rpos in tail_mask and rpos < len(ref):
            errors += 1
    return errors / denom
