"""Run configuration: the single source of provenance for every artifact."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .memory import DictConfig
from .model import ModelConfig


@dataclass
class TrainConfig:
    base_lr: float = 1e-3
    lr_warmup_steps: int = 100
    max_steps: int = 1000
    batch_tokens: int = 2048
    data_seed: int = 0
    checkpoint_every: int = 0
    grad_clip: float = 1.0


@dataclass
class RunConfig:
    model: ModelConfig
    memory: DictConfig = field(default_factory=DictConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    use_dict: bool = True
    tokenize_mode: str = "whitespace"
    tail_threshold: float = 0.05
    train_path: str = ""
    eval_path: str = ""
    out_dir: str = "run"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        model = ModelConfig(**d.pop("model"))
        memory = DictConfig(**d.pop("memory", {}))
        train = TrainConfig(**d.pop("train", {}))
        return cls(model=model, memory=memory, train=train, **d)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
