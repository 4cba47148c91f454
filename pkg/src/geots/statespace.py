"""Linear-Gaussian state-space models.

    x_t = F x_{t-1} + w_t,   w_t ~ N(0, Q)
    z_t = H x_t + v_t,       v_t ~ N(0, R)

The prior ``(x0, P0)`` is the predicted state at the first step, so with no
observations the filtered mean at step ``t`` is ``F^t x0``.  Missing
observations skip the update; partially observed vectors drop the missing
rows of ``H`` and ``R``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import special


LOG_2PI = np.log(2 * np.pi)
DEFAULT_PERIODS = (365.25, 182.625)


class StateSpaceError(ValueError):
    pass


def _sym(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


@dataclass(frozen=True, eq=False)
class StateSpaceModel:
    F: np.ndarray
    H: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    x0: np.ndarray
    P0: np.ndarray
    # states sharing a label share one process variance during EM
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        F = np.atleast_2d(np.asarray(self.F, dtype=float))
        n = F.shape[0]
        H = np.asarray(self.H, dtype=float).reshape(-1, n)
        Q = np.asarray(self.Q, dtype=float).reshape(n, n)
        d = H.shape[0]
        R = np.asarray(self.R, dtype=float).reshape(d, d)
        x0 = np.asarray(self.x0, dtype=float).reshape(n)
        P0 = np.asarray(self.P0, dtype=float).reshape(n, n)
        if F.shape != (n, n):
            raise StateSpaceError(f"F must be square, got {F.shape}")
        for name, M in (("Q", Q), ("R", R), ("P0", P0)):
            if not np.allclose(M, M.T, atol=1e-10 * max(1.0, np.abs(M).max())):
                raise StateSpaceError(f"{name} must be symmetric")
            if np.linalg.eigvalsh(_sym(M)).min() < -1e-10 * max(1.0, np.abs(M).max()):
                raise StateSpaceError(f"{name} must be positive semidefinite")
        if np.linalg.eigvalsh(_sym(R)).min() <= 0:
            raise StateSpaceError("R must be positive definite")
        labels = tuple(self.labels) or tuple(f"s{i}" for i in range(n))
        if len(labels) != n:
            raise StateSpaceError("labels must name every state")
        for k, v in (("F", F), ("H", H), ("Q", _sym(Q)), ("R", _sym(R)), ("x0", x0), ("P0", _sym(P0))):
            v = v.copy()
            v.setflags(write=False)
            object.__setattr__(self, k, v)
        object.__setattr__(self, "labels", labels)

    @property
    def n_state(self) -> int:
        return self.F.shape[0]

    @property
    def n_obs(self) -> int:
        return self.H.shape[0]

    def with_noise(self, Q=None, R=None) -> "StateSpaceModel":
        return replace(self, Q=self.Q if Q is None else Q, R=self.R if R is None else R)


def build_structural_model(
    periods: Sequence[float] = DEFAULT_PERIODS,
    sigma_trend: float = 0.0,
    sigma_seasonal: float = 0.0,
    sigma_obs: float = 1.0,
    dt: float = 1.0,
    trend: bool = True,
    sigma_slope: float = 0.0,
    x0: Sequence[float] | None = None,
    p0: float = 1e6,
) -> StateSpaceModel:
    """Local linear trend plus one rotating 2-state block per harmonic period.

    The trend block is ``[[1, dt], [0, 1]]`` (level, slope); each harmonic
    block rotates by ``2*pi*dt/period``.  ``H`` reads the level and the
    cosine state of every harmonic.  Process noise is diagonal: level
    ``sigma_trend**2``, slope ``sigma_slope**2`` and ``sigma_seasonal**2`` on
    both states of every harmonic.
    """
    periods = tuple(float(p) for p in periods)
    if not trend and not periods:
        raise StateSpaceError("structural model needs at least one component")
    if any(p == 0 or not np.isfinite(p) for p in periods):
        raise StateSpaceError("harmonic period must be finite and non-zero")
    if min(sigma_trend, sigma_seasonal, sigma_slope) < 0:
        raise StateSpaceError("noise standard deviations must be >= 0")
    if not sigma_obs > 0:
        raise StateSpaceError("sigma_obs must be > 0")
    if not dt > 0:
        raise StateSpaceError("dt must be > 0")

    blocks_F, q_diag, h, labels = [], [], [], []
    if trend:
        blocks_F.append(np.array([[1.0, dt], [0.0, 1.0]]))
        q_diag += [sigma_trend ** 2, sigma_slope ** 2]
        h += [1.0, 0.0]
        labels += ["level", "slope"]
    for p in periods:
        a = 2 * np.pi * dt / p
        c, s = np.cos(a), np.sin(a)
        blocks_F.append(np.array([[c, -s], [s, c]]))
        q_diag += [sigma_seasonal ** 2] * 2
        h += [1.0, 0.0]
        labels += ["seasonal", "seasonal"]
    n = len(h)
    F = np.zeros((n, n))
    i = 0
    for b in blocks_F:
        F[i:i + 2, i:i + 2] = b
        i += 2
    # exact zeros where the rotation hits multiples of pi/2
    F[np.abs(F) < 1e-15] = 0.0
    return StateSpaceModel(F, np.array([h]), np.diag(q_diag), np.array([[sigma_obs ** 2]]),
                           np.zeros(n) if x0 is None else x0, p0 * np.eye(n), tuple(labels))


@dataclass(frozen=True, eq=False)
class FilterResult:
    x_pred: np.ndarray  # [T, n]
    P_pred: np.ndarray  # [T, n, n]
    x_filt: np.ndarray
    P_filt: np.ndarray
    innovation: np.ndarray  # [T, d], NaN where missing
    S: np.ndarray  # [T, d, d] innovation covariance of the full observation vector
    observed: np.ndarray  # [T, d] bool
    loglik: float

    @property
    def n_steps(self) -> int:
        return self.x_filt.shape[0]


@dataclass(frozen=True, eq=False)
class SmootherResult:
    x_smooth: np.ndarray  # [T, n]
    P_smooth: np.ndarray  # [T, n, n]
    gain: np.ndarray  # [T-1, n, n]
    lag_cov: np.ndarray = field(repr=False)  # [T-1, n, n]: Cov(x_{t+1}, x_t | all)

    def observation_mean(self, model: StateSpaceModel) -> np.ndarray:
        return self.x_smooth @ model.H.T

    def observation_std(self, model: StateSpaceModel) -> np.ndarray:
        var = np.einsum("ij,tjk,ik->ti", model.H, self.P_smooth, model.H)
        return np.sqrt(np.maximum(var, 0.0))


def _as_obs(model: StateSpaceModel, values, mask):
    z = np.asarray(values, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    if z.shape[1] != model.n_obs:
        raise StateSpaceError(f"observations have {z.shape[1]} columns, model expects {model.n_obs}")
    m = np.isfinite(z) if mask is None else np.asarray(mask, dtype=bool).reshape(z.shape)
    if np.any(~np.isfinite(z[m])):
        raise StateSpaceError("observed values must be finite")
    return z, m


def check_uniform(epochs, rtol: float = 1e-6) -> float:
    epochs = np.asarray(epochs, dtype=float)
    if epochs.size < 2:
        return 1.0
    steps = np.diff(epochs)
    dt = float(np.median(steps))
    if np.max(np.abs(steps - dt)) > rtol * abs(dt):
        raise StateSpaceError("epochs must be uniformly spaced; encode gaps in the mask")
    return dt


def kalman_forward(model: StateSpaceModel, values, mask=None, epochs=None) -> FilterResult:
    """Kalman filter with Joseph-form updates.

    ``values`` is [T] or [T x d]; ``mask`` marks observed entries (defaults
    to the finite ones).
    """
    if epochs is not None:
        check_uniform(epochs)
    z, m = _as_obs(model, values, mask)
    T, d = z.shape
    n = model.n_state
    F, H, Q, R = model.F, model.H, model.Q, model.R
    eye = np.eye(n)

    x_pred = np.empty((T, n))
    P_pred = np.empty((T, n, n))
    x_filt = np.empty((T, n))
    P_filt = np.empty((T, n, n))
    innov = np.full((T, d), np.nan)
    S_all = np.empty((T, d, d))
    loglik = 0.0

    x, P = model.x0.copy(), model.P0.copy()
    for t in range(T):
        if t > 0:
            x = F @ x
            P = _sym(F @ P @ F.T + Q)
        x_pred[t], P_pred[t] = x, P
        S_all[t] = H @ P @ H.T + R
        obs = m[t]
        if obs.any():
            if obs.all():
                Ht, Rt = H, R
            else:
                Ht, Rt = H[obs], R[np.ix_(obs, obs)]
            v = z[t, obs] - Ht @ x
            S = Ht @ P @ Ht.T + Rt
            PHt = P @ Ht.T
            try:
                cho = np.linalg.cholesky(S)
            except np.linalg.LinAlgError:
                raise StateSpaceError(f"innovation covariance not positive definite at step {t}") from None
            K = np.linalg.solve(S, PHt.T).T
            x = x + K @ v
            A = eye - K @ Ht
            P = _sym(A @ P @ A.T + K @ Rt @ K.T)
            innov[t, obs] = v
            w = np.linalg.solve(cho, v)
            loglik -= 0.5 * (obs.sum() * LOG_2PI + 2 * np.log(np.diag(cho)).sum() + w @ w)
        x_filt[t], P_filt[t] = x, P
    return FilterResult(x_pred, P_pred, x_filt, P_filt, innov, S_all, m, float(loglik))


def rts_smooth(model: StateSpaceModel, fwd: FilterResult) -> SmootherResult:
    """Rauch-Tung-Striebel backward pass.

    J_t = P_t^f F' (F P_t^f F' + Q)^-1
    x_t^s = x_t^f + J_t (x_{t+1}^s - F x_t^f)
    P_t^s = P_t^f + J_t (P_{t+1}^s - P_{t+1}^pred) J_t'
    """
    T, n = fwd.x_filt.shape
    F = model.F
    xs = np.empty((T, n))
    Ps = np.empty((T, n, n))
    J = np.empty((max(T - 1, 0), n, n))
    lag = np.empty((max(T - 1, 0), n, n))
    xs[-1], Ps[-1] = fwd.x_filt[-1], fwd.P_filt[-1]
    for t in range(T - 2, -1, -1):
        Pp = fwd.P_pred[t + 1]
        try:
            if np.linalg.cond(Pp) > 1e14:
                raise np.linalg.LinAlgError
            # Pp symmetric: J = P_f F' Pp^-1 = (Pp^-1 F P_f)'
            Jt = np.linalg.solve(Pp, F @ fwd.P_filt[t]).T
        except np.linalg.LinAlgError:
            raise StateSpaceError(f"predicted covariance singular at step {t + 1}") from None
        J[t] = Jt
        xs[t] = fwd.x_filt[t] + Jt @ (xs[t + 1] - fwd.x_pred[t + 1])
        Ps[t] = _sym(fwd.P_filt[t] + Jt @ (Ps[t + 1] - Pp) @ Jt.T)
        lag[t] = Ps[t + 1] @ Jt.T
    return SmootherResult(xs, Ps, J, lag)


def smooth(model: StateSpaceModel, values, mask=None, epochs=None) -> tuple[FilterResult, SmootherResult]:
    fwd = kalman_forward(model, values, mask, epochs)
    return fwd, rts_smooth(model, fwd)


@dataclass(frozen=True)
class EMResult:
    model: StateSpaceModel
    loglik: tuple[float, ...]
    converged: bool

    @property
    def n_iter(self) -> int:
        return len(self.loglik)


def fit_em(model: StateSpaceModel, values, mask=None, max_iter: int = 100, tol: float = 1e-6,
           estimate_q: bool = True, estimate_r: bool = True, r_floor: float = 1e-10) -> EMResult:
    """Maximum-likelihood Q and R by expectation-maximisation.

    Q stays diagonal with one variance per state label; states whose initial
    variance is exactly zero stay deterministic.  R is estimated diagonal.
    Iteration stops when the log-likelihood gain drops below ``tol``.
    """
    z, m = _as_obs(model, values, mask)
    T, d = z.shape
    if T < 2:
        raise StateSpaceError("EM needs at least two steps")
    labels = model.labels
    groups = {lab: [i for i, l in enumerate(labels) if l == lab] for lab in dict.fromkeys(labels)}
    free = np.diag(model.Q) > 0
    history: list[float] = []
    converged = False
    current = prev = model
    for it in range(max_iter):
        fwd, sm = smooth(current, z, m)
        history.append(fwd.loglik)
        if it > 0 and history[-1] - history[-2] < tol:
            converged = True
            if history[-1] < history[-2]:
                current = prev
                history[-1] = history[-2]
            break
        prev = current
        xs, Ps, F, H = sm.x_smooth, sm.P_smooth, current.F, current.H
        Q, R = current.Q, current.R
        if estimate_q and free.any():
            S11 = Ps[1:].sum(0) + xs[1:].T @ xs[1:]
            S00 = Ps[:-1].sum(0) + xs[:-1].T @ xs[:-1]
            C = sm.lag_cov.sum(0) + xs[1:].T @ xs[:-1]
            Qfull = (S11 - C @ F.T - F @ C.T + F @ S00 @ F.T) / (T - 1)
            qd = np.zeros(current.n_state)
            for idx in groups.values():
                idx = [i for i in idx if free[i]]
                if idx:
                    qd[idx] = max(float(np.mean(np.diag(Qfull)[idx])), 0.0)
            Q = np.diag(qd)
        if estimate_r:
            rd = np.diag(current.R).copy()
            for k in range(d):
                rows = m[:, k]
                if rows.any():
                    hk = H[k]
                    resid = z[rows, k] - xs[rows] @ hk
                    var = np.einsum("i,tij,j->t", hk, Ps[rows], hk)
                    rd[k] = max(float(np.mean(resid ** 2 + var)), r_floor)
            R = np.diag(rd)
        current = current.with_noise(Q=Q, R=R)
    else:
        history.append(kalman_forward(current, z, m).loglik)
    return EMResult(current, tuple(history), converged)


@dataclass(frozen=True, eq=False)
class InverseEstimate:
    """Backward-propagated means/covariances; index 0 is the terminal step."""

    means: np.ndarray  # [steps + 1, n]
    covs: np.ndarray  # [steps + 1, n, n]
    noise_cov: np.ndarray  # F^-1 Q F^-T
    F_inv: np.ndarray


def inverse_transition(model: StateSpaceModel, max_cond: float = 1e8,
                       regularize: bool = False, eps: float = 1e-8) -> np.ndarray:
    F = model.F
    if regularize:
        F = F + eps * np.eye(model.n_state)
    cond = np.linalg.cond(F)
    if not np.isfinite(cond) or cond > max_cond:
        hint = "" if regularize else "; enable regularize=True to use F + eps*I"
        raise StateSpaceError(f"transition matrix is numerically singular (cond {cond:.3g}){hint}")
    return np.linalg.inv(F)


def inverse_propagate(model: StateSpaceModel, mean, cov, steps: int, max_cond: float = 1e8,
                      regularize: bool = False, eps: float = 1e-8) -> InverseEstimate:
    """Propagate a state backwards: x_{t-1} = F^-1 x_t + xi, xi ~ N(0, F^-1 Q F^-T)."""
    if steps < 0:
        raise StateSpaceError("steps must be >= 0")
    Fi = inverse_transition(model, max_cond, regularize, eps)
    noise = _sym(Fi @ model.Q @ Fi.T)
    n = model.n_state
    means = np.empty((steps + 1, n))
    covs = np.empty((steps + 1, n, n))
    means[0] = np.asarray(mean, dtype=float).reshape(n)
    covs[0] = np.asarray(cov, dtype=float).reshape(n, n)
    for k in range(1, steps + 1):
        means[k] = Fi @ means[k - 1]
        covs[k] = _sym(Fi @ covs[k - 1] @ Fi.T + noise)
    return InverseEstimate(means, covs, noise, Fi)


def chi2_threshold(d: int, alpha: float) -> float:
    """Upper-alpha quantile of the chi-square distribution with ``d`` dof."""
    if not 0 < alpha < 1:
        raise StateSpaceError("alpha must lie in (0, 1)")
    if d < 1:
        raise StateSpaceError("dimension must be >= 1")
    return float(special.chdtri(d, alpha))


@dataclass(frozen=True)
class GateResult:
    accepted: bool
    distance2: float
    threshold: float


def consistency_gate(candidate, prediction, S, alpha: float = 0.05) -> GateResult:
    """Squared Mahalanobis distance of ``candidate`` from ``prediction`` vs chi-square."""
    diff = np.atleast_1d(np.asarray(candidate, dtype=float) - np.asarray(prediction, dtype=float))
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if S.shape != (diff.size, diff.size):
        raise StateSpaceError("innovation covariance does not match candidate dimension")
    try:
        cho = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        raise StateSpaceError("innovation covariance must be positive definite") from None
    w = np.linalg.solve(cho, diff)
    d2 = float(w @ w)
    thr = chi2_threshold(diff.size, alpha)
    return GateResult(d2 <= thr, d2, thr)


def write_smoother_csv(path: str | Path, epochs, model: StateSpaceModel, sm: SmootherResult,
                       scale: float = 1.0, offset: float = 0.0) -> None:
    """Export ``epoch, mean, std`` of the smoothed observation (first observation row)."""
    mean = sm.observation_mean(model)[:, 0] * scale + offset
    std = sm.observation_std(model)[:, 0] * abs(scale)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "mean", "std"])
        for e, mu, s in zip(np.asarray(epochs, dtype=float), mean, std):
            w.writerow([repr(float(e)), repr(float(mu)), repr(float(s))])
