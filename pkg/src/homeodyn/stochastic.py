"""Random parameter forcing.

A :class:`NoiseProcess` replaces one model parameter by a piecewise-constant
path: on every refresh interval a fresh value is drawn from a normal or a
folded-normal distribution.  All randomness comes from numpy's ``PCG64``
bit generator seeded explicitly, so a given seed reproduces the same stream on
every platform.  Draws are taken in blocks with ``Generator.standard_normal``,
whose output sequence does not depend on the block size.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import erf

DISTRIBUTIONS = ("normal", "folded-normal")


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed)))


def point_seed(base_seed: int, index: int) -> int:
    """Seed for sweep point ``index``: ``base_seed XOR index``."""
    return int(base_seed) ^ int(index)


def _check_sigma(sigma):
    if sigma < 0:
        raise ValueError(f"sigma must be nonnegative, got {sigma}")


def sample_normal(mean: float, sigma: float, rng: np.random.Generator, size=None):
    """Draw from ``N(mean, sigma)``; ``sigma == 0`` returns ``mean`` exactly."""
    _check_sigma(sigma)
    if sigma == 0:
        return float(mean) if size is None else np.full(size, float(mean))
    return mean + sigma * rng.standard_normal(size)


def sample_folded_normal(mean: float, sigma: float, rng: np.random.Generator, size=None):
    """Draw ``|X|`` with ``X ~ N(mean, sigma)``."""
    _check_sigma(sigma)
    if sigma == 0:
        return abs(float(mean)) if size is None else np.full(size, abs(float(mean)))
    return np.abs(mean + sigma * rng.standard_normal(size))


def normal_cdf(x):
    """Standard normal CDF, ``0.5 * (1 + erf(x / sqrt(2)))``."""
    return 0.5 * (1.0 + erf(np.asarray(x, dtype=float) / math.sqrt(2.0)))


def normal_sf(x):
    """Standard normal survival function, ``0.5 * (1 - erf(x / sqrt(2)))``."""
    return 0.5 * (1.0 - erf(np.asarray(x, dtype=float) / math.sqrt(2.0)))


@dataclass(frozen=True)
class FoldedNormalMoments:
    mean_f: float
    sigma_f: float


def folded_normal_moments(mean: float, sigma: float) -> FoldedNormalMoments:
    """Mean and standard deviation of ``|X|``, ``X ~ N(mean, sigma)``::

        mean_f  = sqrt(2/pi) sigma exp(-mean^2 / (2 sigma^2)) + mean (1 - 2 Phi(-mean/sigma))
        sigma_f = sqrt(mean^2 + sigma^2 - mean_f^2)

    ``Phi`` is the standard normal CDF (:func:`normal_cdf`).  Substituting the
    survival function instead flips the sign of the second term and gives a
    negative mean for ``mean >> sigma``; the Monte-Carlo tests guard this.
    ``sigma == 0`` returns the limit ``(|mean|, 0)``.
    """
    _check_sigma(sigma)
    mean = float(mean)
    if sigma == 0:
        return FoldedNormalMoments(abs(mean), 0.0)
    mean_f = (math.sqrt(2.0 / math.pi) * sigma * math.exp(-mean * mean / (2.0 * sigma * sigma))
              + mean * (1.0 - 2.0 * float(normal_cdf(-mean / sigma))))
    var = mean * mean + sigma * sigma - mean_f * mean_f
    return FoldedNormalMoments(mean_f, math.sqrt(max(var, 0.0)))


def folded_normal_cdf(x, mean: float, sigma: float):
    """``P(|X| <= x)`` for ``X ~ N(mean, sigma)``."""
    x = np.asarray(x, dtype=float)
    s2 = sigma * math.sqrt(2.0)
    val = 0.5 * (erf((x + mean) / s2) + erf((x - mean) / s2))
    return np.where(x < 0, 0.0, val)


@dataclass(frozen=True)
class NoiseProcess:
    """Piecewise-constant random replacement of parameter ``target``."""

    target: str
    distribution: str = "normal"
    mean: float = 0.0
    sigma: float = 0.0
    refresh_interval: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.distribution not in DISTRIBUTIONS:
            raise ValueError(f"unknown distribution {self.distribution!r}")
        _check_sigma(self.sigma)
        if not self.refresh_interval > 0:
            raise ValueError("refresh_interval must be positive")

    def with_mean(self, mean: float) -> "NoiseProcess":
        return NoiseProcess(self.target, self.distribution, float(mean), self.sigma,
                            self.refresh_interval, self.seed)

    def with_seed(self, seed: int) -> "NoiseProcess":
        return NoiseProcess(self.target, self.distribution, self.mean, self.sigma,
                            self.refresh_interval, int(seed))

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.distribution == "normal":
            return sample_normal(self.mean, self.sigma, rng, size=n)
        return sample_folded_normal(self.mean, self.sigma, rng, size=n)

    def effective_mean(self) -> float:
        """Expected value of the injected parameter."""
        if self.distribution == "normal":
            return self.mean
        return folded_normal_moments(self.mean, self.sigma).mean_f

    def refresh_steps(self, dt: float) -> int:
        if self.refresh_interval < dt * (1 - 1e-9):
            raise ValueError(
                f"refresh interval {self.refresh_interval} shorter than step {dt}"
            )
        return max(1, int(round(self.refresh_interval / dt)))

    def stream(self, dt: float) -> "NoiseStream":
        return NoiseStream(self, self.refresh_steps(dt), make_rng(self.seed))


class NoiseStream:
    """Sequential source of per-interval values for one integration."""

    def __init__(self, process: NoiseProcess, refresh_steps: int, rng):
        self.process = process
        self.refresh_steps = refresh_steps
        self._rng = rng

    def next(self, n: int) -> np.ndarray:
        return np.ascontiguousarray(self.process.draw(self._rng, n), dtype=float)


@dataclass(frozen=True)
class NoisePath:
    """Realised schedule: ``values[k]`` holds on ``[k*T, (k+1)*T)``."""

    dt: float
    refresh_steps: int
    values: np.ndarray

    @property
    def interval(self) -> float:
        return self.refresh_steps * self.dt

    def value_at(self, t):
        k = np.floor(np.asarray(t, dtype=float) / self.interval + 1e-9).astype(int)
        return self.values[np.clip(k, 0, len(self.values) - 1)]


def noise_schedule(process: NoiseProcess, t_end: float, dt: float) -> NoisePath:
    """The path :func:`homeodyn.ode.integrate` would apply over ``[0, t_end]``."""
    from .ode import n_steps

    stream = process.stream(dt)
    total = n_steps(t_end, dt)
    n_int = -(-total // stream.refresh_steps)
    return NoisePath(dt, stream.refresh_steps, stream.next(n_int))


def folded_mean_for(target: float, sigma: float) -> float:
    """Nonnegative normal mean whose folded distribution has expected value ``target``."""
    _check_sigma(sigma)
    if sigma == 0:
        return float(target)
    floor = sigma * math.sqrt(2.0 / math.pi)
    if target < floor:
        raise ValueError(f"folded mean {target} below the half-normal floor {floor:.6g}")
    if target == floor:
        return 0.0
    # mean_f(m) >= m, so the root lies in [0, target]
    return float(brentq(lambda m: folded_normal_moments(m, sigma).mean_f - target,
                        0.0, float(target), xtol=1e-15, rtol=1e-15))
