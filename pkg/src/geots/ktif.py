"""Kalman-smoothing gap filler with attention correction and gated fusion.

Pipeline for one channel, all in z-scored units:

1. fit a structural state-space model (EM for Q, R) and RTS-smooth it;
2. correct the smoothed baseline at a missing step with an attention-weighted
   average of nearby observed residuals, where the attention logits carry a
   transition-matrix decay ``-lam * ||F^lag - I||_F``;
3. carry smoothed states backwards through gaps with ``F^-1``;
4. blend a forward branch (corrected baseline plus a small MLP on the
   smoothed state) with a backward branch (attention over the recent
   back-propagated states, each carried forward to the target step) through
   a sigmoid gate on ``[x_s, x_inv]``.

Training is self-supervised: each epoch hides a random fraction of the
observed points, rebuilds the smoother without them and minimises recovery
MSE plus a hinge on the chi-square consistency distance.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Mapping

import numpy as np
import torch
from torch import nn

from .neuralkit.engine import DTYPE, NonFiniteError, backward, make_adam
from .series import TimeSeries
from .statespace import (
    DEFAULT_PERIODS,
    StateSpaceModel,
    build_structural_model,
    chi2_threshold,
    fit_em,
    inverse_transition,
    smooth,
)

log = logging.getLogger(__name__)

ANNUAL = 365.25


class KtifError(ValueError):
    pass


@dataclass
class KtifConfig:
    periods: tuple[float, ...] = DEFAULT_PERIODS
    trend: bool = True
    # initial noise std in z-scored units; a zero keeps that component noise-free
    sigma_trend: float = 0.05
    sigma_slope: float = 0.0
    sigma_seasonal: float = 0.005
    sigma_obs: float = 0.3
    em: bool = True
    em_max_iter: int = 100
    em_tol: float = 1e-6
    half_width: int = 30
    decay: float = 0.1
    key_width: int = 8
    mlp_hidden: int = 32
    history: int = 64
    mask_fraction: float = 0.05
    penalty: float = 1.0
    alpha: float = 0.05
    # initial gate logit; 3.0 starts at gamma ~ 0.95 on the forward branch
    gate_bias: float = 3.0
    lr: float = 0.01
    epochs: int = 30
    steps_per_epoch: int = 5
    min_observed: int = 50
    seed: int = 0

    def __post_init__(self):
        self.periods = tuple(float(p) for p in self.periods)
        if self.half_width < 1 or self.history < 1:
            raise KtifError("half_width and history must be >= 1")
        if not self.decay > 0:
            raise KtifError("decay must be > 0")
        if not 0 < self.mask_fraction < 1:
            raise KtifError("mask_fraction must lie in (0, 1)")
        if self.penalty < 0:
            raise KtifError("penalty must be >= 0")


def transition_decay(F: np.ndarray, decay: float, max_lag: int) -> np.ndarray:
    """``log p_F(lag) = -decay * ||F^lag - I||_F`` for lag = 0..max_lag."""
    n = F.shape[0]
    out = np.empty(max_lag + 1)
    P = np.eye(n)
    for lag in range(max_lag + 1):
        out[lag] = -decay * np.linalg.norm(P - np.eye(n), "fro")
        P = P @ F
    return out


def observation_powers(H: np.ndarray, F: np.ndarray, max_lag: int) -> np.ndarray:
    """Rows ``H F^lag`` for lag = 0..max_lag (first observation row)."""
    out = np.empty((max_lag + 1, F.shape[0]))
    P = np.eye(F.shape[0])
    for lag in range(max_lag + 1):
        out[lag] = H[0] @ P
        P = F @ P
    return out


def _param(rng: torch.Generator, *shape: int, scale: float) -> nn.Parameter:
    return nn.Parameter(torch.randn(*shape, generator=rng, dtype=DTYPE) * scale)


class AttentionImputer(nn.Module):
    """Query/key projections of per-step features plus the transition decay."""

    def __init__(self, n_features: int, key_width: int, half_width: int, decay: float,
                 rng: torch.Generator):
        super().__init__()
        self.key_width = key_width
        self.half_width = half_width
        self.decay = decay
        s = 1.0 / math.sqrt(n_features)
        self.query = _param(rng, key_width, n_features, scale=s)
        self.key = _param(rng, key_width, n_features, scale=s)

    def logits(self, f_target: torch.Tensor, f_keys: torch.Tensor, log_decay: torch.Tensor) -> torch.Tensor:
        q = f_target @ self.query.T  # [M, k]
        k = f_keys @ self.key.T  # [M, J, k]
        return torch.einsum("mk,mjk->mj", q, k) / math.sqrt(self.key_width) + log_decay


class FusionGate(nn.Module):
    """Sigmoid gate between the forward (MLP) and backward (attention) branches."""

    def __init__(self, n_state: int, hidden: int, key_width: int, rng: torch.Generator,
                 bias: float = 0.0):
        super().__init__()
        self.key_width = key_width
        self.w = nn.Parameter(torch.zeros(2 * n_state, dtype=DTYPE))
        self.bias = nn.Parameter(torch.tensor(float(bias), dtype=DTYPE))
        self.mlp_in = _param(rng, hidden, n_state, scale=1.0 / math.sqrt(n_state))
        self.mlp_in_bias = nn.Parameter(torch.zeros(hidden, dtype=DTYPE))
        # output layer starts at zero so the forward branch begins as the corrected baseline
        self.mlp_out = nn.Parameter(torch.zeros(hidden, dtype=DTYPE))
        self.mlp_out_bias = nn.Parameter(torch.zeros((), dtype=DTYPE))
        s = 1.0 / math.sqrt(n_state)
        self.hist_query = _param(rng, key_width, n_state, scale=s)
        self.hist_key = _param(rng, key_width, n_state, scale=s)

    def gate(self, s_now: torch.Tensor, b_now: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(torch.cat([s_now, b_now], dim=-1) @ self.w + self.bias)

    def forward_branch(self, s_now: torch.Tensor, base: torch.Tensor) -> torch.Tensor:
        return base + torch.tanh(s_now @ self.mlp_in.T + self.mlp_in_bias) @ self.mlp_out + self.mlp_out_bias

    def backward_branch(self, b_now: torch.Tensor, b_hist: torch.Tensor, hist_values: torch.Tensor,
                        log_decay: torch.Tensor, valid: torch.Tensor) -> torch.Tensor:
        q = b_now @ self.hist_query.T
        k = b_hist @ self.hist_key.T
        logits = torch.einsum("mk,mjk->mj", q, k) / math.sqrt(self.key_width) + log_decay
        a = torch.softmax(logits.masked_fill(~valid, -math.inf), dim=-1)
        return (a * hist_values).sum(-1)


@dataclass
class KtifModel:
    """Trained (or freshly initialised) gap filler for one channel."""

    config: KtifConfig
    ssm: StateSpaceModel | None = None
    imputer: AttentionImputer | None = None
    gate: FusionGate | None = None
    offset: float = 0.0
    scale: float = 1.0
    feat_mean: np.ndarray | None = None
    feat_std: np.ndarray | None = None
    state_mean: np.ndarray | None = None
    state_std: np.ndarray | None = None
    channel: str = ""
    log_decay: np.ndarray | None = field(default=None, repr=False)
    obs_powers: np.ndarray | None = field(default=None, repr=False)
    obs_noise: np.ndarray | None = field(default=None, repr=False)

    @property
    def trained(self) -> bool:
        return self.ssm is not None

    def parameter_groups(self) -> dict[str, list[nn.Parameter]]:
        g = self.gate
        return {
            "projections": [self.imputer.query, self.imputer.key],
            "gate": [g.w, g.bias],
            "mlp": [g.mlp_in, g.mlp_in_bias, g.mlp_out, g.mlp_out_bias],
            "summarizer": [g.hist_query, g.hist_key],
        }

    def parameters(self) -> list[nn.Parameter]:
        return [p for ps in self.parameter_groups().values() for p in ps]

    def state_vector(self) -> np.ndarray:
        return np.concatenate([p.detach().numpy().ravel() for p in self.parameters()])


@dataclass
class _Context:
    """Numpy quantities for one observation mask (z-scored units)."""

    mask: np.ndarray
    z: np.ndarray
    base: np.ndarray
    std: np.ndarray
    resid: np.ndarray
    pred: np.ndarray
    S: np.ndarray
    feats: np.ndarray
    xs: np.ndarray
    xb: np.ndarray
    Pb: np.ndarray
    z_true: np.ndarray | None = None


def _phase_features(epochs: np.ndarray) -> np.ndarray:
    a = 2 * np.pi * epochs / ANNUAL
    return np.column_stack([np.sin(a), np.cos(a)])


def inverse_states(ssm: StateSpaceModel, x_anchor: np.ndarray, P_anchor: np.ndarray,
                   mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Backward-propagated states and covariances.

    Observed steps keep the anchor state (the smoothed state, which is free
    of the filter's diffuse start).  Inside a gap the next observed anchor is
    carried back with ``F^-1``, adding ``F^-1 Q F^-T`` per step.  Steps after
    the last observation keep their anchor.
    """
    Fi = inverse_transition(ssm)
    noise = Fi @ ssm.Q @ Fi.T
    T = mask.size
    xb = np.array(x_anchor, dtype=float)
    Pb = np.array(P_anchor, dtype=float)
    have_next = False
    for t in range(T - 1, -1, -1):
        if mask[t]:
            have_next = True
        elif have_next:
            xb[t] = Fi @ xb[t + 1]
            Pb[t] = Fi @ Pb[t + 1] @ Fi.T + noise
    return xb, Pb


def _context(model: KtifModel, z: np.ndarray, mask: np.ndarray, epochs: np.ndarray) -> _Context:
    ssm = model.ssm
    fwd, sm = smooth(ssm, z, mask)
    h = ssm.H[0]
    base = sm.x_smooth @ h
    std = sm.observation_std(ssm)[:, 0]
    resid = np.where(mask, np.nan_to_num(z) - base, 0.0)
    pred = fwd.x_pred @ h
    S = fwd.S[:, 0, 0]
    feats = np.column_stack([sm.x_smooth, std, _phase_features(epochs)])
    xb, Pb = inverse_states(ssm, sm.x_smooth, sm.P_smooth, mask)
    return _Context(mask, z, base, std, resid, pred, S, feats, sm.x_smooth, xb, Pb)


SCALE_FLOOR = 0.1
CLIP = 5.0


def _normalise(x: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    return np.clip((x - mean) / std, -CLIP, CLIP)


def _scale(x: np.ndarray) -> np.ndarray:
    # near-constant states (e.g. a flat tidal level) would otherwise be blown up
    return np.maximum(x.std(0), SCALE_FLOOR)


def _t(a) -> torch.Tensor:
    return torch.as_tensor(np.asarray(a), dtype=DTYPE)


def _predict(model: KtifModel, ctx: _Context, targets: np.ndarray) -> dict[str, torch.Tensor]:
    """Vectorised imputation at ``targets`` (indices); returns tensors incl. branch outputs."""
    cfg = model.config
    T = ctx.mask.size
    h, L = cfg.half_width, cfg.history
    decay = _t(model.log_decay)

    # neighbourhood attention around each target, observed keys only
    offs = np.concatenate([np.arange(-h, 0), np.arange(1, h + 1)])
    J = targets[:, None] + offs[None, :]
    inside = (J >= 0) & (J < T)
    Jc = np.clip(J, 0, T - 1)
    valid = inside & ctx.mask[Jc]
    has_nb = valid.any(axis=1)
    f = _normalise(ctx.feats, model.feat_mean, model.feat_std)
    logits = model.imputer.logits(_t(f[targets]), _t(f[Jc]), decay[np.abs(offs)])
    valid_t = torch.as_tensor(valid | ~has_nb[:, None])
    A = torch.softmax(logits.masked_fill(~valid_t, -math.inf), dim=-1)
    A = A * _t(has_nb.astype(float))[:, None]
    corrected = _t(ctx.base[targets]) + (A * _t(ctx.resid[Jc])).sum(-1)

    s = _normalise(ctx.xs, model.state_mean, model.state_std)
    b = _normalise(ctx.xb, model.state_mean, model.state_std)
    s_now, b_now = _t(s[targets]), _t(b[targets])
    fwd_out = model.gate.forward_branch(s_now, corrected)

    lags = np.arange(L)
    Jh = targets[:, None] - lags[None, :]
    hvalid = Jh >= 0
    Jhc = np.clip(Jh, 0, T - 1)
    hist_vals = np.einsum("ln,mln->ml", model.obs_powers, ctx.xb[Jhc])
    # predictive variance of each carried-forward state, as a precision prior on the logits
    hist_var = np.einsum("ln,mlnk,lk->ml", model.obs_powers, ctx.Pb[Jhc], model.obs_powers) + model.obs_noise[None, :]
    prior = decay[lags] - _t(np.log(np.maximum(hist_var, 1e-300)))
    bwd_out = model.gate.backward_branch(b_now, _t(b[Jhc]), _t(hist_vals), prior,
                                         torch.as_tensor(hvalid))
    gamma = model.gate.gate(s_now, b_now)
    fused = gamma * fwd_out + (1 - gamma) * bwd_out
    d2 = (fused - _t(ctx.pred[targets])) ** 2 / _t(ctx.S[targets])
    return {"value": fused, "d2": d2, "gamma": gamma, "forward": fwd_out, "backward": bwd_out,
            "corrected": corrected, "weights": A, "has_neighbors": torch.as_tensor(has_nb)}


def _attach_tables(model: KtifModel) -> None:
    cfg = model.config
    lag_max = max(2 * cfg.half_width, cfg.history)
    model.log_decay = transition_decay(model.ssm.F, cfg.decay, lag_max)
    model.obs_powers = observation_powers(model.ssm.H, model.ssm.F, cfg.history - 1)
    # process noise accumulated when carrying a state forward by lag steps
    q = np.einsum("ln,nk,lk->l", model.obs_powers, model.ssm.Q, model.obs_powers)
    model.obs_noise = np.concatenate([[0.0], np.cumsum(q)[:-1]])


def attention_weights(imputer: AttentionImputer, features, t: int, F, observed=None,
                      feat_mean=None, feat_std=None) -> tuple[np.ndarray, np.ndarray]:
    """Softmax weights over observed steps within ``half_width`` of ``t`` (excluding ``t``).

    Returns ``(indices, weights)``.
    """
    features = np.asarray(features, dtype=float)
    T = features.shape[0]
    observed = np.ones(T, dtype=bool) if observed is None else np.asarray(observed, dtype=bool)
    h = imputer.half_width
    idx = np.array([j for j in range(max(0, t - h), min(T, t + h + 1)) if j != t and observed[j]])
    if idx.size == 0:
        raise KtifError(f"no observed step within {h} steps of {t}; widen half_width "
                        "or fall back to the smoothing baseline")
    if feat_mean is not None:
        features = _normalise(features, feat_mean, feat_std)
    log_decay = transition_decay(np.atleast_2d(np.asarray(F, dtype=float)), imputer.decay, h)
    with torch.no_grad():
        logits = imputer.logits(_t(features[t])[None], _t(features[idx])[None],
                                _t(log_decay[np.abs(idx - t)]))[0]
        w = torch.softmax(logits, dim=-1).numpy()
    return idx, w


def impute_step(base: np.ndarray, resid: np.ndarray, idx: np.ndarray, weights: np.ndarray, t: int) -> float:
    """Smoothed baseline at ``t`` plus the attention-weighted neighbour residuals."""
    return float(base[t] + np.dot(weights, np.asarray(resid)[idx]))


def fuse(gate: FusionGate, x_s, x_inv_hist, forward_base: float = 0.0, hist_values=None,
         log_decay=None) -> float:
    """Gated blend of the two branches at the last step of ``x_inv_hist``.

    ``x_s`` and the rows of ``x_inv_hist`` are normalised state vectors;
    ``hist_values`` are the observation-space values carried by each
    history row (defaults to zeros).
    """
    x_s = _t(x_s)[None]
    hist = _t(np.atleast_2d(x_inv_hist))
    if x_s.shape[-1] * 2 != gate.w.numel() or hist.shape[-1] != x_s.shape[-1]:
        raise KtifError("state dimensions do not match the gate")
    L = hist.shape[0]
    b_now = hist[-1][None]
    b_hist = hist.flip(0)[None]
    vals = torch.zeros(1, L, dtype=DTYPE) if hist_values is None else _t(hist_values).flip(0)[None]
    ld = torch.zeros(L, dtype=DTYPE) if log_decay is None else _t(log_decay)[:L]
    with torch.no_grad():
        f = gate.forward_branch(x_s, _t([forward_base]))
        b = gate.backward_branch(b_now, b_hist, vals, ld, torch.ones(1, L, dtype=torch.bool))
        g = gate.gate(x_s, b_now)
        return float((g * f + (1 - g) * b)[0])


@dataclass
class TrainingLog:
    epochs: list[dict] = field(default_factory=list)
    em_iterations: int = 0
    em_loglik: float = float("nan")
    best_epoch: int = 0
    baseline_val_rmse: float = float("nan")
    best_val_rmse: float = float("nan")


def _standardise(values: np.ndarray, mask: np.ndarray) -> tuple[np.ndarray, float, float]:
    obs = values[mask]
    offset = float(obs.mean())
    scale = float(obs.std()) or 1.0
    z = np.where(mask, (np.nan_to_num(values) - offset) / scale, np.nan)
    return z, offset, scale


def _fit_ssm(cfg: KtifConfig, z: np.ndarray, mask: np.ndarray, dt: float) -> tuple[StateSpaceModel, int, float]:
    first = float(z[mask][0])
    x0 = np.zeros(2 * int(cfg.trend) + 2 * len(cfg.periods))
    if cfg.trend:
        x0[0] = first
    ssm = build_structural_model(cfg.periods, cfg.sigma_trend, cfg.sigma_seasonal, cfg.sigma_obs,
                                 dt=dt, trend=cfg.trend, sigma_slope=cfg.sigma_slope, x0=x0, p0=1e4)
    if not cfg.em:
        return ssm, 0, float("nan")
    res = fit_em(ssm, z, mask, max_iter=cfg.em_max_iter, tol=cfg.em_tol)
    return res.model, res.n_iter, res.loglik[-1]


def _channel_data(series: TimeSeries, channel: str | int):
    values, mask = series.channel(channel)
    return np.asarray(values, dtype=float), np.asarray(mask, dtype=bool)


def prepare(model: KtifModel, series: TimeSeries, channel: str | int = 0) -> tuple[KtifModel, np.ndarray, np.ndarray, int, float]:
    """Fit the state-space stage and initialise the learnable parameters."""
    cfg = model.config
    values, mask = _channel_data(series, channel)
    if mask.sum() < cfg.min_observed:
        raise KtifError(f"channel has {int(mask.sum())} observed points, need {cfg.min_observed}")
    dt = series.spacing()
    z, offset, scale = _standardise(values, mask)
    ssm, n_iter, ll = _fit_ssm(cfg, z, mask, dt)
    rng = torch.Generator().manual_seed(cfg.seed)
    n = ssm.n_state
    m = KtifModel(cfg, ssm, AttentionImputer(n + 3, cfg.key_width, cfg.half_width, cfg.decay, rng),
                  FusionGate(n, cfg.mlp_hidden, cfg.key_width, rng, cfg.gate_bias), offset, scale,
                  channel=series.channels[series.channel_index(channel)])
    _attach_tables(m)
    ctx = _context(m, z, mask, series.epochs)
    m.feat_mean = ctx.feats.mean(0)
    m.feat_std = _scale(ctx.feats)
    m.state_mean = ctx.xs.mean(0)
    m.state_std = _scale(ctx.xs)
    return m, z, mask, n_iter, ll


def _hide(rng: np.random.Generator, mask: np.ndarray, fraction: float) -> np.ndarray:
    obs = np.flatnonzero(mask)
    count = max(1, math.floor(fraction * obs.size))
    return np.sort(rng.choice(obs, size=count, replace=False))


def training_loss(model: KtifModel, ctx: _Context, targets: np.ndarray) -> torch.Tensor:
    out = _predict(model, ctx, targets)
    truth = _t(ctx.z_true[targets])
    mse = ((out["value"] - truth) ** 2).mean()
    thr = chi2_threshold(1, model.config.alpha)
    hinge = torch.relu(out["d2"] - thr).mean()
    return mse + model.config.penalty * hinge


def masked_context(model: KtifModel, z: np.ndarray, mask: np.ndarray, epochs: np.ndarray,
                   hidden: np.ndarray) -> _Context:
    m = mask.copy()
    m[hidden] = False
    ctx = _context(model, np.where(m, z, np.nan), m, epochs)
    ctx.z_true = z
    return ctx


def train_ktif(model: KtifModel, series: TimeSeries, channel: str | int = 0) -> tuple[KtifModel, TrainingLog]:
    """Fit the state-space stage, then train attention/gate parameters self-supervised."""
    cfg = model.config
    trained, z, mask, n_iter, ll = prepare(model, series, channel)
    tlog = TrainingLog(em_iterations=n_iter, em_loglik=ll)
    epochs = series.epochs
    rng = np.random.default_rng(cfg.seed)

    val_hidden = _hide(np.random.default_rng([cfg.seed, 1]), mask, cfg.mask_fraction)
    val_ctx = masked_context(trained, z, mask, epochs, val_hidden)

    def val_rmse() -> float:
        with torch.no_grad():
            v = _predict(trained, val_ctx, val_hidden)["value"].numpy()
        return float(np.sqrt(np.mean((v - z[val_hidden]) ** 2)))

    tlog.baseline_val_rmse = float(np.sqrt(np.mean((val_ctx.base[val_hidden] - z[val_hidden]) ** 2)))
    best = val_rmse()
    params = trained.parameters()
    best_state = [p.detach().clone() for p in params]
    tlog.best_val_rmse = best
    opt = make_adam(params, lr=cfg.lr)
    train_mask = mask.copy()
    train_mask[val_hidden] = False
    for epoch in range(1, cfg.epochs + 1):
        hidden = _hide(rng, train_mask, cfg.mask_fraction)
        ctx = masked_context(trained, z, train_mask, epochs, hidden)
        losses = []
        for _ in range(cfg.steps_per_epoch):
            opt.zero_grad()
            loss = training_loss(trained, ctx, hidden)
            try:
                backward(loss)
            except NonFiniteError as exc:
                raise KtifError(f"non-finite training loss at epoch {epoch}: {exc}") from None
            opt.step()
            losses.append(float(loss.detach()))
        v = val_rmse()
        tlog.epochs.append({"epoch": epoch, "loss": float(np.mean(losses)), "val_rmse": v})
        if v < best:
            best, tlog.best_epoch = v, epoch
            best_state = [p.detach().clone() for p in params]
    with torch.no_grad():
        for p, q in zip(params, best_state):
            p.copy_(q)
    tlog.best_val_rmse = best
    log.info("ktif %s: val rmse %.4g (baseline %.4g), best epoch %d", trained.channel, best,
             tlog.baseline_val_rmse, tlog.best_epoch)
    return trained, tlog


@dataclass
class ImputationReport:
    rows: list[dict] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    COLUMNS = ("epoch", "channel", "value", "std", "distance2", "threshold", "accepted")

    def write_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.COLUMNS)
            for r in self.rows:
                w.writerow([repr(r["epoch"]), r["channel"], repr(r["value"]), repr(r["std"]),
                            repr(r["distance2"]), repr(r["threshold"]), int(r["accepted"])])


def impute_channel(model: KtifModel, series: TimeSeries, channel: str | int | None = None):
    """Imputed values (original units) at the missing steps of one channel."""
    if not model.trained:
        raise KtifError("model is not trained")
    channel = model.channel if channel is None else channel
    values, mask = _channel_data(series, channel)
    missing = np.flatnonzero(~mask)
    if missing.size == 0:
        return missing, np.empty(0), {}
    if mask.sum() == 0:
        raise KtifError("channel has no observations")
    z = np.where(mask, (np.nan_to_num(values) - model.offset) / model.scale, np.nan)
    ctx = _context(model, z, mask, series.epochs)
    with torch.no_grad():
        out = _predict(model, ctx, missing)
    value = out["value"].numpy() * model.scale + model.offset
    extra = {"std": ctx.std[missing] * model.scale, "d2": out["d2"].numpy(),
             "gamma": out["gamma"].numpy(), "baseline": ctx.base[missing] * model.scale + model.offset}
    return missing, value, extra


def fill_gaps(models: KtifModel | Mapping[str, KtifModel], series: TimeSeries) -> tuple[TimeSeries, ImputationReport]:
    """Fill every missing entry; observed entries are copied untouched."""
    if isinstance(models, KtifModel):
        models = {models.channel: models}
    unknown = [c for c in series.channels if c not in models and not series.mask[:, series.channel_index(c)].all()]
    if unknown:
        raise KtifError(f"no trained model for channel(s) {unknown}")
    values = series.values.copy()
    mask = series.mask.copy()
    report = ImputationReport()
    for c, name in enumerate(series.channels):
        if mask[:, c].all():
            continue
        model = models[name]
        thr = chi2_threshold(1, model.config.alpha)
        idx, v, extra = impute_channel(model, series, name)
        values[idx, c] = v
        mask[idx, c] = True
        for k, t in enumerate(idx):
            d2 = float(extra["d2"][k])
            report.rows.append({"epoch": float(series.epochs[t]), "channel": name, "index": int(t),
                                "value": float(v[k]), "std": float(extra["std"][k]),
                                "distance2": d2, "threshold": thr, "accepted": d2 <= thr})
    report.rows.sort(key=lambda r: (r["epoch"], series.channel_index(r["channel"])))
    return series.replace(values=values, mask=mask), report


def train_all(series: TimeSeries, config: KtifConfig) -> tuple[dict[str, KtifModel], dict[str, TrainingLog]]:
    """One model per gappy channel, seeds spawned from ``config.seed``."""
    children = np.random.SeedSequence(config.seed).spawn(series.n_channels)
    models, logs = {}, {}
    for c, name in enumerate(series.channels):
        if series.mask[:, c].all():
            continue
        seed = int(children[c].generate_state(1)[0])
        cfg = KtifConfig(**{**asdict(config), "seed": seed})
        models[name], logs[name] = train_ktif(KtifModel(cfg), series, c)
    return models, logs
