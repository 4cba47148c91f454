"""B-spline Kolmogorov-Arnold layer.

Each edge (q, p) carries ``spline_qp(x_p) + base_qp * silu(x_p)`` where the
spline is a degree-``order`` B-spline on a uniform grid of ``grid`` intervals
spanning ``[lo, hi]``; outputs sum over inputs.  Outside ``[lo, hi]`` the
spline continues linearly with its boundary slope.
"""
from __future__ import annotations

import math

import torch
from torch import nn
import torch.nn.functional as F

from .engine import DTYPE


def knot_vector(lo: float, hi: float, grid: int, order: int) -> torch.Tensor:
    """Uniform knots extended by ``order`` steps on both sides: grid + 2*order + 1 values."""
    h = (hi - lo) / grid
    return lo + h * torch.arange(-order, grid + order + 1, dtype=DTYPE)


def bspline_basis(x: torch.Tensor, knots: torch.Tensor, order: int, lo: float, hi: float) -> torch.Tensor:
    """Cox-de Boor recursion; ``x`` [...] inside [lo, hi] -> [..., grid + order]."""
    x = x.unsqueeze(-1)
    t = knots
    B = ((x >= t[:-1]) & (x < t[1:])).to(x.dtype)
    # close the last in-grid interval so x == hi keeps a full partition of unity
    n_int = t.numel() - 1
    last = n_int - order - 1
    at_hi = (x[..., 0] == hi).to(x.dtype)
    B = B.clone()
    B[..., last] = B[..., last] + at_hi
    if last + 1 < B.shape[-1]:
        B[..., last + 1] = B[..., last + 1] * (1 - at_hi)
    for k in range(1, order + 1):
        left = (x - t[:-(k + 1)]) / (t[k:-1] - t[:-(k + 1)])
        right = (t[k + 1:] - x) / (t[k + 1:] - t[1:-k])
        B = left * B[..., :-1] + right * B[..., 1:]
    return B


def bspline_basis_derivative(x: torch.Tensor, knots: torch.Tensor, order: int, lo: float, hi: float) -> torch.Tensor:
    lower = bspline_basis(x, knots[1:-1], order - 1, lo, hi) if order > 0 else None
    if lower is None:
        return torch.zeros(*x.shape, knots.numel() - 1, dtype=x.dtype)
    h = float(knots[1] - knots[0])
    # B'_{i,k} = (B_{i,k-1} - B_{i+1,k-1}) / h on a uniform grid
    pad = torch.zeros(*x.shape, 1, dtype=x.dtype)
    lo_ = torch.cat([pad, lower], dim=-1)
    hi_ = torch.cat([lower, pad], dim=-1)
    return (lo_ - hi_) / h


class KanLayer(nn.Module):
    def __init__(self, n_in: int, n_out: int, grid: int = 5, order: int = 3,
                 lo: float = -1.0, hi: float = 1.0, generator: torch.Generator | None = None):
        super().__init__()
        self.n_in, self.n_out, self.grid, self.order = n_in, n_out, grid, order
        self.coef = nn.Parameter(0.1 * torch.randn(n_out, n_in, grid + order, generator=generator, dtype=DTYPE))
        bound = 1.0 / math.sqrt(n_in)
        self.base = nn.Parameter((torch.rand(n_out, n_in, generator=generator, dtype=DTYPE) * 2 - 1) * bound)
        self.set_range(lo, hi)

    def set_range(self, lo: float, hi: float) -> None:
        if not hi > lo:
            raise ValueError("KAN grid needs hi > lo")
        self.lo, self.hi = float(lo), float(hi)
        self.register_buffer("knots", knot_vector(self.lo, self.hi, self.grid, self.order), persistent=False)

    def spline(self, x: torch.Tensor) -> torch.Tensor:
        """Per-edge spline values [batch, n_out, n_in] with linear extrapolation."""
        xc = x.clamp(self.lo, self.hi)
        B = bspline_basis(xc, self.knots, self.order, self.lo, self.hi)  # [b, n_in, G+k]
        val = torch.einsum("bik,oik->boi", B, self.coef)
        outside = x - xc
        if bool((outside != 0).any()):
            dB = bspline_basis_derivative(xc, self.knots, self.order, self.lo, self.hi)
            slope = torch.einsum("bik,oik->boi", dB, self.coef)
            val = val + slope * outside.unsqueeze(1)
        return val

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        shape = x.shape
        x = x.reshape(-1, self.n_in)
        out = self.spline(x).sum(-1) + F.silu(x) @ self.base.T
        return out.reshape(*shape[:-1], self.n_out)


class Kan(nn.Module):
    """Stack of KAN layers with widths ``[n_in, hidden..., n_out]``."""

    def __init__(self, widths, grid: int = 5, order: int = 3, lo: float = -1.0, hi: float = 1.0,
                 generator: torch.Generator | None = None):
        super().__init__()
        self.layers = nn.ModuleList(KanLayer(a, b, grid, order, lo, hi, generator)
                                    for a, b in zip(widths, widths[1:]))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for layer in self.layers:
            x = layer(x)
        return x
