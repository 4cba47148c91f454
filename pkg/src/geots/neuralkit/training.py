"""Minibatch Adam on MSE with chronological early stopping."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .engine import DTYPE, NonFiniteError, backward, make_adam


@dataclass(frozen=True)
class TrainSettings:
    epochs: int = 100
    batch_size: int = 64
    lr: float = 1e-3
    patience: int = 20
    seed: int = 0
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8


@dataclass
class TrainResult:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    def write_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_loss"])
            for i, tl in enumerate(self.train_loss):
                vl = self.val_loss[i] if i < len(self.val_loss) else float("nan")
                w.writerow([i + 1, repr(tl), repr(vl)])


def _mse(model, x, y) -> torch.Tensor:
    return ((model(x) - y) ** 2).mean()


def train(model: torch.nn.Module, windows, targets, settings: TrainSettings = TrainSettings(),
          val: tuple | None = None) -> TrainResult:
    """Fit ``model`` in place; with ``val`` the best-validation parameters are restored."""
    x = torch.as_tensor(np.asarray(windows), dtype=DTYPE)
    y = torch.as_tensor(np.asarray(targets), dtype=DTYPE)
    if x.shape[0] < 1:
        raise ValueError("need at least one training window")
    if not torch.isfinite(y).all() or not torch.isfinite(x).all():
        raise ValueError("training data must be finite")
    if val is not None:
        xv = torch.as_tensor(np.asarray(val[0]), dtype=DTYPE)
        yv = torch.as_tensor(np.asarray(val[1]), dtype=DTYPE)
        if xv.shape[0] == 0:
            val = None
    params = [p for p in model.parameters() if p.requires_grad]
    opt = make_adam(params, lr=settings.lr, betas=settings.betas, eps=settings.eps)
    rng = np.random.default_rng(settings.seed)
    result = TrainResult()
    best = float("inf")
    best_state = [p.detach().clone() for p in params]
    since_best = 0
    n = x.shape[0]
    for epoch in range(1, settings.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, settings.batch_size):
            idx = torch.as_tensor(order[start:start + settings.batch_size])
            opt.zero_grad()
            loss = _mse(model, x[idx], y[idx])
            try:
                backward(loss)
            except NonFiniteError as exc:
                raise NonFiniteError(f"epoch {epoch}, batch at {start}: {exc}") from None
            opt.step()
            total += float(loss.detach()) * idx.numel()
        result.train_loss.append(total / n)
        if val is None:
            continue
        with torch.no_grad():
            vl = float(_mse(model, xv, yv))
        result.val_loss.append(vl)
        if vl < best:
            best, result.best_epoch, since_best = vl, epoch, 0
            best_state = [p.detach().clone() for p in params]
        else:
            since_best += 1
            if since_best >= settings.patience:
                result.stopped_early = True
                break
    if val is not None and result.val_loss:
        with torch.no_grad():
            for p, b in zip(params, best_state):
                p.copy_(b)
    else:
        result.best_epoch = len(result.train_loss)
    return result


def predict(model: torch.nn.Module, windows) -> np.ndarray:
    with torch.no_grad():
        return model(torch.as_tensor(np.asarray(windows), dtype=DTYPE)).numpy()
