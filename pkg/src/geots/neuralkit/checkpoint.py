"""Portable JSON checkpoints.

Layout::

    {"format": "geots-checkpoint", "version": 1, "arch": ..., "config": {...},
     "n_in": C, "n_out": C, "kan_ranges": [[lo, hi], ...],
     "params": {name: {"shape": [...], "data": [...]}}, "extra": {...}}

Floats are written with ``repr`` so a reload is bit-exact.
"""
from __future__ import annotations

import json
from pathlib import Path

import torch

from .engine import DTYPE
from .models import Forecaster, ModelConfig

FORMAT = "geots-checkpoint"
VERSION = 1


def checkpoint_dict(model: Forecaster, extra: dict | None = None) -> dict:
    params = {name: {"shape": list(p.shape), "data": p.detach().reshape(-1).tolist()}
              for name, p in model.named_parameters()}
    return {"format": FORMAT, "version": VERSION, "arch": model.config.arch,
            "config": model.config.model_dump(), "n_in": model.n_in, "n_out": model.n_out,
            "kan_ranges": [[l.lo, l.hi] for l in model.kan_layers()],
            "params": params, "extra": extra or {}}


def save_checkpoint(path: str | Path, model: Forecaster, extra: dict | None = None) -> None:
    Path(path).write_text(json.dumps(checkpoint_dict(model, extra), indent=1), encoding="utf-8")


def load_checkpoint(path: str | Path) -> tuple[Forecaster, dict]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != FORMAT:
        raise ValueError(f"{path}: not a {FORMAT} file")
    if doc.get("version") != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    model = Forecaster(ModelConfig(**doc["config"]), doc["n_in"], doc["n_out"])
    for layer, (lo, hi) in zip(model.kan_layers(), doc["kan_ranges"]):
        layer.set_range(lo, hi)
    named = dict(model.named_parameters())
    if set(named) != set(doc["params"]):
        raise ValueError(f"{path}: parameter names do not match architecture {doc['arch']}")
    with torch.no_grad():
        for name, p in named.items():
            entry = doc["params"][name]
            if list(p.shape) != entry["shape"]:
                raise ValueError(f"{path}: shape mismatch for {name}")
            p.copy_(torch.tensor(entry["data"], dtype=DTYPE).reshape(p.shape))
    return model, doc["extra"]
