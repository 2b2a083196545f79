"""One-dimensional weighted walks: partition function and exponential martingales.

A path of length ``n`` on the integers carries weight ``mu e^gamma`` per right
step and ``mu e^-gamma`` per left step, so the generating function in the
length is geometric in ``w = 2 mu cosh(gamma)``.
"""

import itertools
from dataclasses import dataclass

import numpy as np

from .rng import StreamRNG


class DivergenceError(ValueError):
    """The weighted path sum diverges (``w >= 1``)."""


@dataclass(frozen=True)
class ToyParams:
    mu: float
    gamma: float = 0.0

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError("mu must be positive")

    @property
    def w(self):
        return 2 * self.mu * np.cosh(self.gamma)

    @property
    def v(self):
        return 2 * self.mu * np.sinh(self.gamma)

    @property
    def critical(self):
        return np.isclose(self.w, 1.0)


def toy_partition(params):
    """``(Z, mean_length, endpoint_variance)`` in closed form.

    ``Z = 1/(1-w)``, the length-weighted sum ``sum_paths n * weight =
    w/(1-w)^2`` (reported as the mean length; dividing by ``Z`` gives the
    normalised mean ``w/(1-w)``) and the second cumulant of the end point
    ``(w - w^2 + v^2)/(1-w)^2``.
    """
    w, v = params.w, params.v
    if w >= 1:
        raise DivergenceError(f"w = {w} >= 1")
    q = 1 - w
    return 1 / q, w / q ** 2, (w - w * w + v * v) / q ** 2


def toy_partition_bruteforce(params, max_len):
    """Direct sum over all step sequences up to ``max_len``.

    Returns ``(Z, mean_length, endpoint_variance, tail_bound)`` with the same
    conventions as :func:`toy_partition`, where
    ``tail_bound = w^(max_len+1) / (1-w)`` bounds the omitted weight.
    Paths of each length are grouped by their number of right steps, so the
    cost is quadratic in ``max_len``; ``max_len <= 12`` additionally walks
    every sequence explicitly.
    """
    w = params.w
    if w >= 1:
        raise DivergenceError(f"w = {w} >= 1")
    a = params.mu * np.exp(params.gamma)
    b = params.mu * np.exp(-params.gamma)
    Z = L = X = X2 = 0.0
    for n in range(max_len + 1):
        if n <= 12:
            for steps in itertools.product((1, -1), repeat=n):
                r = steps.count(1)
                wt = a ** r * b ** (n - r)
                s = sum(steps)
                Z += wt
                L += n * wt
                X += s * wt
                X2 += s * s * wt
        else:
            from math import comb
            for r in range(n + 1):
                wt = comb(n, r) * a ** r * b ** (n - r)
                s = 2 * r - n
                Z += wt
                L += n * wt
                X += s * wt
                X2 += s * s * wt
    mean_x = X / Z
    return Z, L, X2 / Z - mean_x ** 2, w ** (max_len + 1) / (1 - w)


@dataclass
class MCMean:
    n: int
    mean: float
    se: float

    @property
    def z(self):
        return (self.mean - 1.0) / self.se if self.se > 0 else 0.0


def _walk_positions(n_steps, n_samples, rng):
    """``S_n`` of ``n_samples`` simple symmetric walks at every ``n <= n_steps``."""
    u = rng.uniform(n_samples * n_steps).reshape(n_samples, n_steps)
    steps = np.where(u < 0.5, 1, -1)
    return np.cumsum(steps, axis=1)


def toy_martingale_means(gamma, ns, n_samples, seed, stream=0):
    """MC means of ``Q_n = e^(gamma S_n) cosh(gamma)^-n`` at each ``n`` in ``ns``."""
    rng = StreamRNG(seed, stream)
    S = _walk_positions(max(ns), n_samples, rng)
    out = []
    for n in ns:
        q = np.exp(gamma * S[:, n - 1] - n * np.log(np.cosh(gamma)))
        out.append(MCMean(n, float(q.mean()), float(q.std(ddof=1) / np.sqrt(n_samples))))
    return out


def toy_martingale_check(gamma=0.1, n_steps=(1, 10, 100), n_samples=100_000, seed=0, stream=0):
    """``(max |E[Q_n] - 1|, max |z|)`` over ``n_steps``."""
    res = toy_martingale_means(gamma, n_steps, n_samples, seed, stream)
    return max(abs(r.mean - 1) for r in res), max(abs(r.z) for r in res)


def one_step_identity(gamma):
    """``E[Q_{n+1} / Q_n | S_n]``, which equals one exactly."""
    return (np.exp(gamma) + np.exp(-gamma)) / (2 * np.cosh(gamma))


def dressed_drift(gamma, n, n_samples, seed, stream=0):
    """MC ``E[S_n Q_n]`` with its SE; the exact value is ``n tanh(gamma)``."""
    rng = StreamRNG(seed, stream)
    S = _walk_positions(n, n_samples, rng)[:, -1]
    x = S * np.exp(gamma * S - n * np.log(np.cosh(gamma)))
    return float(x.mean()), float(x.std(ddof=1) / np.sqrt(n_samples))


def brownian_martingale_mean(g, t, n_steps, n_samples, seed, stream=0):
    """MC mean of ``exp(g X_t - g^2 t / 2)`` on Euler-discretised Brownian paths."""
    rng = StreamRNG(seed, stream)
    dt = t / n_steps
    x = np.sqrt(dt) * rng.normal(n_samples * n_steps).reshape(n_samples, n_steps).sum(axis=1)
    m = np.exp(g * x - 0.5 * g * g * t)
    return MCMean(n_steps, float(m.mean()), float(m.std(ddof=1) / np.sqrt(n_samples)))
