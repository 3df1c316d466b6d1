"""Shared numerical primitives: graph-convolution normalization, kernel
density control limits, and finite-difference gradient verification."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, ndtr

from .autodiff import Tensor


def sigmoid(x):
    """Logistic function, elementwise; saturates instead of overflowing."""
    return expit(np.asarray(x, dtype=np.float64)) if np.ndim(x) else float(expit(x))


def tanh(x):
    return np.tanh(np.asarray(x, dtype=np.float64)) if np.ndim(x) else float(np.tanh(x))


def sym_normalize(adjacency):
    """Symmetric propagation matrix D^{-1/2} (A + I) D^{-1/2}.

    ``adjacency`` is a non-negative square matrix; the added self-loop keeps
    every degree strictly positive.  D is the diagonal row-degree matrix of
    A + I.
    """
    a = np.asarray(adjacency, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"adjacency must be square, got shape {a.shape}")
    if np.any(a < 0):
        raise ValueError("adjacency entries must be non-negative")
    a_loop = a + np.eye(a.shape[0])
    d_inv_sqrt = 1.0 / np.sqrt(a_loop.sum(axis=1))
    return d_inv_sqrt[:, None] * a_loop * d_inv_sqrt[None, :]


def sym_normalize_tensor(adjacency: Tensor) -> Tensor:
    """Differentiable ``sym_normalize``; accepts (..., n, n) batches."""
    n = adjacency.shape[-1]
    a_loop = adjacency + np.eye(n)
    d_inv_sqrt = a_loop.sum(axis=-1) ** -0.5
    rows = d_inv_sqrt.reshape(d_inv_sqrt.shape + (1,))
    cols = d_inv_sqrt.reshape(d_inv_sqrt.shape[:-1] + (1, n))
    return a_loop * rows * cols


def silverman_bandwidth(samples) -> float:
    """Rule-of-thumb Gaussian-KDE bandwidth, with a floor for degenerate
    (near-constant) samples."""
    s = np.asarray(samples, dtype=np.float64)
    spread = min(s.std(ddof=1) if s.size > 1 else 0.0,
                 (np.percentile(s, 75) - np.percentile(s, 25)) / 1.34)
    h = 0.9 * spread * s.size ** (-0.2)
    if h <= 0.0:
        h = 1e-3 * max(1.0, float(np.abs(s).max()))
    return float(h)


@dataclass
class KdeEstimate:
    """Gaussian-mixture density over observed statistic samples."""

    samples: np.ndarray
    bandwidth: float
    significance: float

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).ravel()
        if self.samples.size == 0:
            raise ValueError("KDE requires at least one sample")
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive")
        if not 0.0 < self.significance < 1.0:
            raise ValueError("significance must be in (0, 1)")

    @classmethod
    def from_samples(cls, samples, significance):
        samples = np.asarray(samples, dtype=np.float64).ravel()
        if samples.size == 0:
            raise ValueError("KDE requires at least one sample")
        return cls(samples, silverman_bandwidth(samples), significance)

    def cdf(self, x: float) -> float:
        return float(ndtr((x - self.samples) / self.bandwidth).mean())


def kde_control_limit(est: KdeEstimate) -> float:
    """Smallest x with mixture CDF(x) >= 1 - significance, by bisection.

    This is the upper control limit of the statistic whose normal-operation
    samples back the estimate.
    """
    target = 1.0 - est.significance
    lo = float(est.samples.min())
    hi = float(est.samples.max()) + 4.0 * est.bandwidth
    while est.cdf(hi) < target:
        hi += 4.0 * est.bandwidth
    # lo is below the target quantile for any significance < 0.5
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if est.cdf(mid) >= target:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-8 * max(1.0, abs(hi)):
            break
    return hi


def grad_check(f, params, eps=1e-5) -> float:
    """Max relative error between backward-pass gradients and central
    finite differences of the scalar ``f()`` over every coordinate of
    ``params``.

    The analytic side comes from the autodiff tape; the numeric side from
    (f(p + eps) - f(p - eps)) / (2 eps) per coordinate, so the two routes
    share no code.
    """
    if not 1e-6 <= eps <= 1e-3:
        raise ValueError("eps must lie in [1e-6, 1e-3]")
    params = list(params)
    for p in params:
        if not np.all(np.isfinite(p.data)):
            raise ValueError("parameters must be finite")
        p.zero_grad()
    loss = f()
    if not np.all(np.isfinite(loss.data)):
        raise ArithmeticError("non-finite loss at the evaluation point")
    loss.backward()
    analytic = [p.grad.copy() for p in params]

    worst = 0.0
    for p, grads in zip(params, analytic):
        flat = p.data.reshape(-1)
        flat_grad = grads.reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + eps
            up = float(f().data)
            flat[i] = saved - eps
            down = float(f().data)
            flat[i] = saved
            if not (np.isfinite(up) and np.isfinite(down)):
                raise ArithmeticError("non-finite loss while probing gradients")
            numeric = (up - down) / (2.0 * eps)
            rel = abs(flat_grad[i] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, rel)
    return worst
