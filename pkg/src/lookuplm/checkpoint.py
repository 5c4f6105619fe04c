"""Versioned binary checkpoint: config header, raw tensors, integrity trailer.

Layout: 8-byte magic, u32 little-endian header length, UTF-8 JSON header
(config, config hash, tensor manifest, RNG states, counters), raw
little-endian tensor payloads in manifest order, 32-byte SHA-256 trailer over
everything preceding it.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .config import RunConfig
from .corpus import TokenFrequencyTable
from .memory import LookupDictionary
from .model import TransformerLM
from .training import make_optimizer

MAGIC = b"LKPLM001"
VERSION = 1

_DTYPES = {torch.float32: "<f4", torch.float64: "<f8"}
_TORCH_DTYPES = {"<f4": torch.float32, "<f8": torch.float64}


class CheckpointError(ValueError):
    """Raised for corrupt, mismatched, or unsupported checkpoint files."""


@dataclass
class Checkpoint:
    config: RunConfig
    model: TransformerLM
    dictionary: LookupDictionary | None
    optimizer: torch.optim.Optimizer
    freq: TokenFrequencyTable
    step: int


def _tensor_entries(
    model: TransformerLM,
    dictionary: LookupDictionary | None,
    optimizer: torch.optim.Optimizer,
) -> list[tuple[str, torch.Tensor]]:
    entries = [(f"model.{name}", t) for name, t in model.state_dict().items()]
    if dictionary is not None:
        entries.append(("dict.memory", dictionary.memory))
    params = list(model.parameters())
    state = optimizer.state_dict()["state"]
    for i in range(len(params)):
        if i in state:
            entries.append((f"opt.{i}.exp_avg", state[i]["exp_avg"]))
            entries.append((f"opt.{i}.exp_avg_sq", state[i]["exp_avg_sq"]))
    return entries


def save_checkpoint(
    path: str | Path,
    config: RunConfig,
    model: TransformerLM,
    dictionary: LookupDictionary | None,
    optimizer: torch.optim.Optimizer,
    freq: TokenFrequencyTable,
    step: int,
) -> None:
    entries = _tensor_entries(model, dictionary, optimizer)
    opt_state = optimizer.state_dict()["state"]
    header = {
        "version": VERSION,
        "config": config.to_dict(),
        "config_hash": config.hash(),
        "step": step,
        "opt_steps": {str(i): int(s["step"]) for i, s in opt_state.items()},
        "torch_rng": torch.get_rng_state().numpy().tobytes().hex(),
        "dict_step": dictionary.step if dictionary is not None else 0,
        "dict_rng": json.dumps(dictionary.rng.bit_generator.state) if dictionary is not None else "",
        "dict_mode": dictionary.mode if dictionary is not None else "",
        "freq": {str(k): v for k, v in sorted(freq.counts.items())},
        "tensors": [
            [name, _DTYPES[t.dtype], list(t.shape)] for name, t in entries
        ],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", len(blob))
    out += blob
    for name, t in entries:
        out += t.detach().numpy().astype(_DTYPES[t.dtype]).tobytes()
    out += hashlib.sha256(out).digest()
    Path(path).write_bytes(out)


def load_checkpoint(path: str | Path, expect_hash: str | None = None) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < 44 or raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    body, trailer = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != trailer:
        raise CheckpointError(f"{path}: checksum mismatch")
    (hlen,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12 : 12 + hlen].decode("utf-8"))
    if header["version"] != VERSION:
        raise CheckpointError(f"{path}: unsupported version {header['version']}")
    config = RunConfig.from_dict(header["config"])
    if header["config_hash"] != config.hash():
        raise CheckpointError(f"{path}: embedded config hash mismatch")
    if expect_hash is not None and expect_hash != header["config_hash"]:
        raise CheckpointError(
            f"{path}: config hash {header['config_hash']} does not match expected {expect_hash}"
        )

    tensors: dict[str, torch.Tensor] = {}
    offset = 12 + hlen
    for name, dtype, shape in header["tensors"]:
        n = int(np.prod(shape)) if shape else 1
        nbytes = n * np.dtype(dtype).itemsize
        arr = np.frombuffer(body, dtype=dtype, count=n, offset=offset).reshape(shape)
        tensors[name] = torch.from_numpy(arr.copy()).to(_TORCH_DTYPES[dtype])
        offset += nbytes

    model = TransformerLM(config.model)
    model.load_state_dict(
        {k[len("model."):]: v for k, v in tensors.items() if k.startswith("model.")}
    )
    dictionary = None
    if "dict.memory" in tensors:
        dictionary = LookupDictionary(config.memory, config.model.d_emb)
        dictionary.memory = tensors["dict.memory"]
        dictionary.step = header["dict_step"]
        dictionary.mode = header["dict_mode"] or "training"
        if header["dict_rng"]:
            dictionary.rng.bit_generator.state = json.loads(header["dict_rng"])
    optimizer = make_optimizer(model, config.train)
    params = list(model.parameters())
    opt_state = {}
    for key, opt_step in header["opt_steps"].items():
        i = int(key)
        opt_state[i] = {
            "step": torch.tensor(float(opt_step)),
            "exp_avg": tensors[f"opt.{i}.exp_avg"],
            "exp_avg_sq": tensors[f"opt.{i}.exp_avg_sq"],
        }
    if opt_state:
        sd = optimizer.state_dict()
        sd["state"] = opt_state
        sd["param_groups"][0]["params"] = list(range(len(params)))
        optimizer.load_state_dict(sd)
    torch.set_rng_state(torch.from_numpy(
        np.frombuffer(bytes.fromhex(header["torch_rng"]), dtype=np.uint8).copy()
    ))
    freq = TokenFrequencyTable({int(k): v for k, v in header["freq"].items()})
    return Checkpoint(
        config=config,
        model=model,
        dictionary=dictionary,
        optimizer=optimizer,
        freq=freq,
        step=header["step"],
    )
