"""Reverse-mode gradients and the Adam optimiser.

Backed by ``torch.autograd``; this module adds the finiteness checks and the
fixed optimiser defaults the rest of the package relies on.
"""
from __future__ import annotations

from typing import Iterable, Sequence

import torch

DTYPE = torch.float64


class NonFiniteError(FloatingPointError):
    pass


def backward(loss: torch.Tensor, params: Sequence[torch.Tensor] | None = None) -> list[torch.Tensor] | None:
    """Accumulate gradients of a scalar ``loss``.

    With ``params`` given, returns their gradients (zeros for parameters the
    loss does not reach).  Raises :class:`NonFiniteError` naming the first
    parameter index whose gradient is not finite.
    """
    if loss.numel() != 1:
        raise ValueError("loss must be a scalar")
    if not torch.isfinite(loss).all():
        raise NonFiniteError(f"loss is not finite ({float(loss.detach())})")
    loss.backward()
    if params is None:
        return None
    grads = []
    for i, p in enumerate(params):
        g = torch.zeros_like(p) if p.grad is None else p.grad
        if not torch.isfinite(g).all():
            raise NonFiniteError(f"non-finite gradient for parameter {i}")
        grads.append(g)
    return grads


def make_adam(params: Iterable[torch.Tensor], lr: float = 1e-3, betas=(0.9, 0.999),
              eps: float = 1e-8) -> torch.optim.Adam:
    return torch.optim.Adam(list(params), lr=lr, betas=betas, eps=eps)
