"""Sequence and dense layers written against plain tensors.

Recurrent layers take ``[batch, time, features]`` and return the full
hidden sequence.  All parameters are float64.
"""
from __future__ import annotations

import math

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .engine import DTYPE


def _uniform(gen: torch.Generator | None, *shape: int, bound: float) -> nn.Parameter:
    return nn.Parameter((torch.rand(*shape, generator=gen, dtype=DTYPE) * 2 - 1) * bound)


class Dense(nn.Module):
    def __init__(self, n_in: int, n_out: int, generator: torch.Generator | None = None):
        super().__init__()
        b = 1.0 / math.sqrt(n_in)
        self.weight = _uniform(generator, n_out, n_in, bound=b)
        self.bias = _uniform(generator, n_out, bound=b)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x @ self.weight.T + self.bias


class LSTM(nn.Module):
    """Single-layer LSTM; gate order (input, forget, cell, output)."""

    def __init__(self, n_in: int, hidden: int, generator: torch.Generator | None = None):
        super().__init__()
        self.hidden = hidden
        b = 1.0 / math.sqrt(hidden)
        self.w_x = _uniform(generator, 4 * hidden, n_in, bound=b)
        self.w_h = _uniform(generator, 4 * hidden, hidden, bound=b)
        bias = (torch.rand(4 * hidden, generator=generator, dtype=DTYPE) * 2 - 1) * b
        bias[hidden:2 * hidden] += 1.0
        self.bias = nn.Parameter(bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        B, T, _ = x.shape
        H = self.hidden
        h = x.new_zeros(B, H)
        c = x.new_zeros(B, H)
        xw = x @ self.w_x.T + self.bias
        out = []
        for t in range(T):
            g = xw[:, t] + h @ self.w_h.T
            i = torch.sigmoid(g[:, :H])
            f = torch.sigmoid(g[:, H:2 * H])
            u = torch.tanh(g[:, 2 * H:3 * H])
            o = torch.sigmoid(g[:, 3 * H:])
            c = f * c + i * u
            h = o * torch.tanh(c)
            out.append(h)
        return torch.stack(out, dim=1)


class GRU(nn.Module):
    """Single-layer GRU (reset gate applied to the recurrent candidate term)."""

    def __init__(self, n_in: int, hidden: int, generator: torch.Generator | None = None):
        super().__init__()
        self.hidden = hidden
        b = 1.0 / math.sqrt(hidden)
        self.w_x = _uniform(generator, 3 * hidden, n_in, bound=b)
        self.w_h = _uniform(generator, 3 * hidden, hidden, bound=b)
        self.b_x = _uniform(generator, 3 * hidden, bound=b)
        self.b_h = _uniform(generator, 3 * hidden, bound=b)

    def step(self, xw: torch.Tensor, h: torch.Tensor) -> torch.Tensor:
        H = self.hidden
        hw = h @ self.w_h.T + self.b_h
        r = torch.sigmoid(xw[:, :H] + hw[:, :H])
        z = torch.sigmoid(xw[:, H:2 * H] + hw[:, H:2 * H])
        n = torch.tanh(xw[:, 2 * H:] + r * hw[:, 2 * H:])
        return (1 - z) * n + z * h

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        B, T, _ = x.shape
        h = x.new_zeros(B, self.hidden)
        xw = x @ self.w_x.T + self.b_x
        out = []
        for t in range(T):
            h = self.step(xw[:, t], h)
            out.append(h)
        return torch.stack(out, dim=1)


class BiLSTM(nn.Module):
    """Forward and time-reversed LSTMs; the summary concatenates both final states."""

    def __init__(self, n_in: int, hidden: int, generator: torch.Generator | None = None):
        super().__init__()
        self.fwd = LSTM(n_in, hidden, generator)
        self.bwd = LSTM(n_in, hidden, generator)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        hf = self.fwd(x)
        hb = self.bwd(x.flip(1)).flip(1)
        return torch.cat([hf, hb], dim=-1)

    def summary(self, x: torch.Tensor) -> torch.Tensor:
        seq = self(x)
        H = self.fwd.hidden
        return torch.cat([seq[:, -1, :H], seq[:, 0, H:]], dim=-1)


class CausalConv(nn.Module):
    def __init__(self, n_in: int, n_out: int, kernel: int, dilation: int,
                 generator: torch.Generator | None = None):
        super().__init__()
        self.pad = (kernel - 1) * dilation
        self.dilation = dilation
        b = 1.0 / math.sqrt(n_in * kernel)
        self.weight = _uniform(generator, n_out, n_in, kernel, bound=b)
        self.bias = _uniform(generator, n_out, bound=b)

    def forward(self, x: torch.Tensor) -> torch.Tensor:  # [B, C, T]
        return F.conv1d(F.pad(x, (self.pad, 0)), self.weight, self.bias, dilation=self.dilation)


class TCN(nn.Module):
    """Residual blocks of two causal dilated convolutions; dilation doubles per level."""

    def __init__(self, n_in: int, channels: int, levels: int = 3, kernel: int = 3,
                 generator: torch.Generator | None = None):
        super().__init__()
        self.blocks = nn.ModuleList()
        self.skips = nn.ModuleList()
        c_in = n_in
        for level in range(levels):
            d = 2 ** level
            self.blocks.append(nn.ModuleList([CausalConv(c_in, channels, kernel, d, generator),
                                              CausalConv(channels, channels, kernel, d, generator)]))
            self.skips.append(CausalConv(c_in, channels, 1, 1, generator) if c_in != channels else nn.Identity())
            c_in = channels

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = x.transpose(1, 2)
        for (c1, c2), skip in zip(self.blocks, self.skips):
            h = torch.relu(c2(torch.relu(c1(y))))
            y = torch.relu(h + skip(y))
        return y.transpose(1, 2)


def sinusoidal_positions(length: int, width: int) -> torch.Tensor:
    pos = np.arange(length)[:, None]
    i = np.arange(width)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / width)
    pe = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return torch.as_tensor(pe, dtype=DTYPE)


class LayerNorm(nn.Module):
    def __init__(self, width: int, eps: float = 1e-5):
        super().__init__()
        self.gain = nn.Parameter(torch.ones(width, dtype=DTYPE))
        self.shift = nn.Parameter(torch.zeros(width, dtype=DTYPE))
        self.eps = eps

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        mu = x.mean(-1, keepdim=True)
        var = ((x - mu) ** 2).mean(-1, keepdim=True)
        return (x - mu) / torch.sqrt(var + self.eps) * self.gain + self.shift


class EncoderBlock(nn.Module):
    """Single-head self-attention + position-wise feed-forward, post-norm residuals."""

    def __init__(self, n_in: int, width: int, ff: int | None = None,
                 generator: torch.Generator | None = None):
        super().__init__()
        self.width = width
        self.embed = Dense(n_in, width, generator)
        self.q = Dense(width, width, generator)
        self.k = Dense(width, width, generator)
        self.v = Dense(width, width, generator)
        self.o = Dense(width, width, generator)
        self.norm1 = LayerNorm(width)
        self.ff1 = Dense(width, ff or 2 * width, generator)
        self.ff2 = Dense(ff or 2 * width, width, generator)
        self.norm2 = LayerNorm(width)

    def attention(self, x: torch.Tensor) -> torch.Tensor:
        scores = self.q(x) @ self.k(x).transpose(1, 2) / math.sqrt(self.width)
        return torch.softmax(scores, dim=-1) @ self.v(x)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.embed(x) + sinusoidal_positions(x.shape[1], self.width)
        h = self.norm1(h + self.o(self.attention(h)))
        return self.norm2(h + self.ff2(torch.relu(self.ff1(h))))


def normalize_adjacency(adj) -> torch.Tensor:
    """Row-normalise non-negative weights; all-zero rows stay zero."""
    a = torch.as_tensor(np.asarray(adj, dtype=float), dtype=DTYPE)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("adjacency must be square")
    if bool((a < 0).any()):
        raise ValueError("adjacency weights must be >= 0")
    s = a.sum(1, keepdim=True)
    return torch.where(s > 0, a / torch.where(s > 0, s, torch.ones_like(s)), torch.zeros_like(a))


class GraphAggregation(nn.Module):
    """Neighbourhood mean over nodes: ``x_t <- A x_t`` with row-normalised ``A``.

    Isolated nodes (all-zero rows) pass their own features through.
    """

    def __init__(self, adjacency):
        super().__init__()
        a = normalize_adjacency(adjacency)
        isolated = a.sum(1) == 0
        a = a + torch.diag(isolated.to(DTYPE))
        self.register_buffer("adjacency", a)

    def forward(self, x: torch.Tensor) -> torch.Tensor:  # [B, T, N]
        return x @ self.adjacency.T
