"""Independent reference implementations used only by the tests."""
from __future__ import annotations

import math

import mpmath as mp
import numpy as np
import torch


def joint_gaussian_smoother(F, H, Q, R, x0, P0, z, mask, digits: int = 50) -> np.ndarray:
    """Posterior state means by conditioning the stacked joint Gaussian directly.

    Every state is a linear map of the independent draws
    (x_0 - x0, w_1, ..., w_{T-1}); the observed entries are conditioned on in
    ``digits``-digit arithmetic, because explosive random dynamics make the
    joint covariance too ill-conditioned for float64.
    """
    T, d = z.shape
    n = F.shape[0]
    with mp.workdps(digits):
        Fm = mp.matrix(F.tolist())
        powers = [mp.eye(n)]
        for _ in range(T):
            powers.append(Fm * powers[-1])
        N = T * n
        A = mp.zeros(N, N)
        E = mp.zeros(N, N)
        mean = mp.zeros(N, 1)
        x0m = mp.matrix(np.asarray(x0, dtype=float).tolist())
        for t in range(T):
            mt = powers[t] * x0m
            for a in range(n):
                mean[t * n + a] = mt[a]
                for s in range(t + 1):
                    for b in range(n):
                        A[t * n + a, s * n + b] = powers[t - s][a, b]
            cov = P0 if t == 0 else Q
            for a in range(n):
                for b in range(n):
                    E[t * n + a, t * n + b] = cov[a, b]
        rows = [(t, k) for t in range(T) for k in range(d) if mask[t, k]]
        if not rows:
            return np.array([float(v) for v in mean]).reshape(T, n)
        Hs = mp.zeros(len(rows), N)
        y = mp.zeros(len(rows), 1)
        Rs = mp.zeros(len(rows), len(rows))
        for r, (t, k) in enumerate(rows):
            for a in range(n):
                Hs[r, t * n + a] = H[k, a]
            y[r] = z[t, k]
            for c, (t2, k2) in enumerate(rows):
                if t2 == t:
                    Rs[r, c] = R[k, k2]
        Sxx = A * E * A.T
        Sxy = Sxx * Hs.T
        Syy = Hs * Sxy + Rs
        post = mean + Sxy * mp.lu_solve(Syy, y - Hs * mean)
        return np.array([float(v) for v in post]).reshape(T, n)


def _regularized_lower_gamma(a: float, x: float) -> float:
    """P(a, x) by its power series (converges for all x, used here at moderate x)."""
    if x <= 0:
        return 0.0
    term = 1.0 / a
    total = term
    k = 1
    while abs(term) > 1e-17 * abs(total):
        term *= x / (a + k)
        total += term
        k += 1
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * total


def chi2_upper_quantile(d: int, alpha: float) -> float:
    """Bisection on the chi-square CDF built from the incomplete-gamma series."""
    lo, hi = 0.0, 10.0 * d + 100.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if 1.0 - _regularized_lower_gamma(d / 2.0, mid / 2.0) > alpha:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def cox_de_boor(x: float, knots: np.ndarray, i: int, k: int) -> float:
    """Textbook recursion; half-open support intervals."""
    if k == 0:
        return 1.0 if knots[i] <= x < knots[i + 1] else 0.0
    left = 0.0
    if knots[i + k] != knots[i]:
        left = (x - knots[i]) / (knots[i + k] - knots[i]) * cox_de_boor(x, knots, i, k - 1)
    right = 0.0
    if knots[i + k + 1] != knots[i + 1]:
        right = (knots[i + k + 1] - x) / (knots[i + k + 1] - knots[i + 1]) * cox_de_boor(x, knots, i + 1, k - 1)
    return left + right


def finite_difference_check(loss_fn, params, n_probe: int = 6, h: float = 1e-6,
                            rng: np.random.Generator | None = None) -> float:
    """Max relative error between autograd and central differences on sampled coordinates.

    The error is measured against the gradient scale of each tensor so that
    coordinates with near-zero gradient do not dominate.  That scale is floored
    at ``1e-4 * max(1, |loss|)``: a tensor whose true gradient is identically
    zero (a key bias under softmax shift invariance) would otherwise divide
    round-off by round-off.
    """
    rng = rng or np.random.default_rng(0)
    for p in params:
        p.grad = None
    loss = loss_fn()
    floor = 1e-4 * max(1.0, abs(float(loss.detach())))
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    worst = 0.0
    with torch.no_grad():
        for p, g in zip(params, grads):
            g = torch.zeros_like(p) if g is None else g
            flat = p.view(-1)
            scale = max(float(g.abs().max()), floor)
            picks = rng.choice(flat.numel(), size=min(n_probe, flat.numel()), replace=False)
            for i in picks:
                old = float(flat[i])
                flat[i] = old + h
                up = float(loss_fn())
                flat[i] = old - h
                down = float(loss_fn())
                flat[i] = old
                fd = (up - down) / (2 * h)
                worst = max(worst, abs(fd - float(g.reshape(-1)[i])) / scale)
    return worst
