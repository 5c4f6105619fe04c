"""Hyper-parameter sweep driver: (U, N, M, ratio policy) grid with seed medians."""

from __future__ import annotations

import dataclasses
import json
import statistics
import traceback
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .config import RunConfig
from .corpus import TailSet, TokenFrequencyTable
from .evaluate import EvalReport, information_gain, perplexity
from .training import run_training


@dataclass
class SweepCell:
    U: int
    N: int
    M: int
    ratio_policy: str | float


@dataclass
class CellResult:
    cell: SweepCell
    seed: int
    report: EvalReport | None
    info_gain: float | None = None
    error: str | None = None


@dataclass
class SweepResult:
    results: list[CellResult] = field(default_factory=list)

    def median(self, cell: SweepCell, metric: str = "tail1_ppl") -> float | None:
        vals = [
            getattr(r.report, metric)
            for r in self.results
            if r.cell == cell and r.report is not None and getattr(r.report, metric) is not None
        ]
        return statistics.median(vals) if vals else None

    def median_info_gain(self, cell: SweepCell) -> float | None:
        vals = [r.info_gain for r in self.results if r.cell == cell and r.info_gain is not None]
        return statistics.median(vals) if vals else None

    def to_records(self) -> list[dict]:
        out = []
        for r in self.results:
            rec = {
                "U": r.cell.U, "N": r.cell.N, "M": r.cell.M,
                "ratio_policy": str(r.cell.ratio_policy), "seed": r.seed,
                "error": r.error, "info_gain": r.info_gain,
            }
            if r.report is not None:
                rec.update(json.loads(r.report.to_json()))
            out.append(rec)
        return out

    def write_jsonl(self, path: str | Path) -> None:
        Path(path).write_text(
            "".join(json.dumps(rec, sort_keys=True) + "\n" for rec in self.to_records()),
            encoding="utf-8",
        )

    def write_tsv(self, path: str | Path) -> None:
        records = self.to_records()
        cols = ["U", "N", "M", "ratio_policy", "seed", "overall_ppl",
                "tail1_ppl", "tail2_ppl", "info_gain", "error"]
        lines = ["\t".join(cols)]
        for rec in records:
            lines.append("\t".join(str(rec.get(c, "")) for c in cols))
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def run_cell(
    base_cfg: RunConfig,
    cell: SweepCell,
    seed: int,
    train_sentences: Sequence[Sequence[int]],
    freq: TokenFrequencyTable,
    eval_sentences: Sequence[Sequence[int]],
    tail1: TailSet | None,
    tail2: TailSet | None,
    with_info_gain: bool = False,
) -> CellResult:
    cfg = dataclasses.replace(
        base_cfg,
        model=dataclasses.replace(base_cfg.model, seed=seed),
        memory=dataclasses.replace(
            base_cfg.memory, U=cell.U, N=cell.N, M=cell.M,
            ratio_policy=cell.ratio_policy, seed=seed,
        ),
        train=dataclasses.replace(base_cfg.train, data_seed=seed),
    )
    model, dictionary, _ = run_training(cfg, train_sentences, freq)
    dictionary.freeze()
    report = perplexity(model, dictionary, eval_sentences, tail1, tail2)
    ig = None
    if with_info_gain:
        ig = information_gain(model, dictionary, eval_sentences,
                              random_seed=seed + 10_000)
    return CellResult(cell=cell, seed=seed, report=report, info_gain=ig)


def sweep(
    base_cfg: RunConfig,
    cells: Sequence[SweepCell],
    seeds: Sequence[int],
    train_sentences: Sequence[Sequence[int]],
    freq: TokenFrequencyTable,
    eval_sentences: Sequence[Sequence[int]],
    tail1: TailSet | None = None,
    tail2: TailSet | None = None,
    with_info_gain: bool = False,
    log_fn=None,
) -> SweepResult:
    """Run every (cell, seed) with an identical training budget; failures are recorded."""
    out = SweepResult()
    for cell in cells:
        for seed in seeds:
            try:
                res = run_cell(
                    base_cfg, cell, seed, train_sentences, freq,
                    eval_sentences, tail1, tail2, with_info_gain,
                )
            except Exception:
                res = CellResult(cell=cell, seed=seed, report=None,
                                 error=traceback.format_exc(limit=3))
            out.results.append(res)
            if log_fn is not None:
                log_fn(res)
    return out
