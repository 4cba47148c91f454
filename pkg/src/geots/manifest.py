"""Run manifests: what went in, what came out, and with which versions.

No timestamps or absolute paths are recorded, so two identical runs produce
identical manifests.
"""
from __future__ import annotations

import hashlib
import json
import platform
from pathlib import Path
from typing import Iterable

import numpy as np
import pydantic
import scipy
import torch

from . import __version__


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def sha256_json(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


def versions() -> dict[str, str]:
    return {"geots": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "torch": torch.__version__,
            "pydantic": pydantic.__version__}


def directory_outputs(out_dir: str | Path) -> list[Path]:
    """Every file under ``out_dir`` except manifests."""
    return [p for p in sorted(Path(out_dir).rglob("*"))
            if p.is_file() and not (p.name.startswith("manifest") and p.suffix == ".json")]


def write_manifest(path: str | Path, command: str, config: dict | None, seeds: dict,
                   inputs: Iterable[str | Path], outputs: Iterable[str | Path],
                   root: str | Path | None = None, extra: dict | None = None) -> Path:
    """Record digests of inputs and outputs; output names are relative to ``root``."""
    path = Path(path)
    root = Path(root) if root is not None else path.parent

    def rel(p: Path) -> str:
        try:
            return p.relative_to(root).as_posix()
        except ValueError:
            return p.name

    doc = {
        "command": command,
        "config_sha256": sha256_json(config) if config is not None else None,
        "config": config,
        "seeds": seeds,
        "versions": versions(),
        "inputs": {Path(p).name: sha256_file(p) for p in inputs},
        "outputs": {rel(Path(p)): sha256_file(p) for p in outputs},
    }
    if extra:
        doc["extra"] = extra
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
