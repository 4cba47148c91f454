"""Forecaster construction for every supported architecture tag.

A forecaster maps a window ``[batch, W, C_in]`` to ``[batch, horizon, C_out]``.
``*_ekan`` tags reuse the backbone of the plain tag and swap the dense output
head for a two-layer KAN.
"""
from __future__ import annotations

from typing import Literal

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, Field, model_validator
from torch import nn

from .kan import Kan, KanLayer
from .layers import GRU, LSTM, TCN, BiLSTM, Dense, EncoderBlock, GraphAggregation

ARCHITECTURES = ("MLP", "KAN", "LSTM", "LSTM_ekan", "GRU", "TCN", "TCN_ekan", "BiLSTM",
                 "BiLSTM_ekan", "Transformer", "Transformer_ekan", "GRUGNN")
Architecture = Literal["MLP", "KAN", "LSTM", "LSTM_ekan", "GRU", "TCN", "TCN_ekan", "BiLSTM",
                       "BiLSTM_ekan", "Transformer", "Transformer_ekan", "GRUGNN"]


class ModelConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    arch: Architecture
    name: str | None = None
    window: int = Field(24, ge=1)
    horizon: int = Field(1, ge=1)
    strategy: Literal["iterated", "direct"] = "iterated"
    hidden: int = Field(32, ge=1)
    mlp_hidden: list[int] = Field(default_factory=lambda: [64])
    kan_hidden: int = Field(16, ge=1)
    kan_grid: int = Field(5, ge=1)
    kan_order: int = Field(3, ge=0)
    tcn_levels: int = Field(3, ge=1)
    tcn_kernel: int = Field(3, ge=1)
    d_model: int = Field(32, ge=1)
    adjacency: list[list[float]] | None = None
    epochs: int = Field(100, ge=0)
    batch_size: int = Field(64, ge=1)
    lr: float = Field(1e-3, ge=0)
    patience: int = Field(20, ge=1)
    seed: int = 0

    @model_validator(mode="after")
    def _check(self):
        if self.name is None:
            self.name = self.arch
        if self.strategy == "iterated" and self.horizon != 1:
            raise ValueError("iterated strategy needs horizon=1 (one-step head)")
        return self

    @property
    def is_ekan(self) -> bool:
        return self.arch.endswith("_ekan")

    @property
    def backbone(self) -> str:
        return self.arch.removesuffix("_ekan")


def default_adjacency(n: int) -> np.ndarray:
    """Half weight on the node itself, the rest spread over the other nodes."""
    if n == 1:
        return np.ones((1, 1))
    a = np.full((n, n), 0.5 / (n - 1))
    np.fill_diagonal(a, 0.5)
    return a


class Forecaster(nn.Module):
    def __init__(self, config: ModelConfig, n_in: int, n_out: int | None = None):
        super().__init__()
        self.config = config
        self.n_in = n_in
        self.n_out = n_in if n_out is None else n_out
        gen = torch.Generator().manual_seed(config.seed)
        c = config
        out_width = c.horizon * self.n_out
        arch = c.backbone
        self.graph = None
        if arch == "MLP":
            widths = [c.window * n_in, *c.mlp_hidden]
            self.body = nn.ModuleList(Dense(a, b, gen) for a, b in zip(widths, widths[1:]))
            width = widths[-1]
        elif arch == "KAN":
            self.body = None
            width = c.window * n_in
        elif arch == "LSTM":
            self.body = LSTM(n_in, c.hidden, gen)
            width = c.hidden
        elif arch == "GRU":
            self.body = GRU(n_in, c.hidden, gen)
            width = c.hidden
        elif arch == "GRUGNN":
            adj = default_adjacency(n_in) if c.adjacency is None else np.asarray(c.adjacency)
            if adj.shape != (n_in, n_in):
                raise ValueError(f"adjacency must be {n_in}x{n_in}")
            self.graph = GraphAggregation(adj)
            self.body = GRU(n_in, c.hidden, gen)
            width = c.hidden
        elif arch == "BiLSTM":
            self.body = BiLSTM(n_in, c.hidden, gen)
            width = 2 * c.hidden
        elif arch == "TCN":
            self.body = TCN(n_in, c.hidden, c.tcn_levels, c.tcn_kernel, gen)
            width = c.hidden
        elif arch == "Transformer":
            self.body = EncoderBlock(n_in, c.d_model, generator=gen)
            width = c.d_model
        else:
            raise ValueError(f"unknown architecture {c.arch!r}")
        self.feature_width = width
        if arch == "KAN":
            self.head = Kan([width, c.kan_hidden, out_width], c.kan_grid, c.kan_order, generator=gen)
        elif c.is_ekan:
            self.head = Kan([width, c.kan_hidden, out_width], c.kan_grid, c.kan_order, generator=gen)
        else:
            self.head = Dense(width, out_width, gen)

    def features(self, x: torch.Tensor) -> torch.Tensor:
        arch = self.config.backbone
        if arch == "MLP":
            h = x.reshape(x.shape[0], -1)
            for i, layer in enumerate(self.body):
                h = torch.tanh(layer(h))
            return h
        if arch == "KAN":
            return x.reshape(x.shape[0], -1)
        if arch == "BiLSTM":
            return self.body.summary(x)
        if self.graph is not None:
            x = self.graph(x)
        return self.body(x)[:, -1]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = self.head(self.features(x))
        return y.reshape(x.shape[0], self.config.horizon, self.n_out)

    def kan_layers(self) -> list[KanLayer]:
        return [m for m in self.modules() if isinstance(m, KanLayer)]

    @torch.no_grad()
    def calibrate_grids(self, x: torch.Tensor, q=(0.01, 0.99)) -> None:
        """Set each KAN layer's grid to the [1%, 99%] quantiles of its inputs on ``x``."""
        h = self.features(x)
        for layer in self.kan_layers():
            lo, hi = torch.quantile(h.flatten(), torch.tensor(q, dtype=h.dtype)).tolist()
            if not hi > lo:
                lo, hi = lo - 1.0, hi + 1.0
            layer.set_range(lo, hi)
            h = layer(h)

    def parameter_count(self, part: str = "all") -> int:
        mods = {"all": [self], "head": [self.head], "body": [self.body] if self.body is not None else []}[part]
        return sum(p.numel() for m in mods for p in m.parameters())


def build_model(config: ModelConfig | dict, n_in: int = 1, n_out: int | None = None) -> Forecaster:
    if isinstance(config, dict):
        config = ModelConfig(**config)
    return Forecaster(config, n_in, n_out)
