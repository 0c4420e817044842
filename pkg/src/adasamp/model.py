"""Stochastic problem abstraction, reproducible sampling, and sample-average
objective/gradient evaluation.

Random draws come from counter-based Philox streams keyed by
(base_seed, stream tag, iteration). Each iteration therefore gets a fresh
i.i.d. sample set that is independent of every previous set, and realization
``i`` of a set is a deterministic function of (base_seed, iteration, i): a set
of size ``m > n`` drawn from the same stream starts with exactly the same
``n`` realizations (prefix stability), which is what makes runs reproducible
and makes within-iteration sample augmentation an exact append.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

__all__ = [
    "StochasticProblem",
    "SeedInfo",
    "SampleSet",
    "GradientStats",
    "stream_rng",
    "draw_samples",
    "batch_values",
    "batch_grads",
    "sample_objective",
    "sample_gradient",
]

# Stream tags keep sample draws and frozen problem-parameter draws on
# disjoint Philox keys even when they share a base seed.
STREAM_SAMPLES = 0
STREAM_PARAMS = 1


def stream_rng(base_seed: int, *stream: int) -> np.random.Generator:
    """A Philox generator on the stream keyed by (base_seed, *stream)."""
    if base_seed < 0:
        raise ValueError("base_seed must be non-negative")
    ss = np.random.SeedSequence(entropy=int(base_seed), spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class StochasticProblem:
    """Evaluator bundle for min F(x) = R[f(x; xi)].

    ``sampler(rng, n)`` must return an (n, xi_dim) array and draw in a
    prefix-stable way (one vectorized call, row i depending only on the
    first i+1 blocks of the stream). ``value``/``grad`` evaluate one
    realization; the optional ``value_many``/``grad_many`` evaluate a whole
    set at once and must agree with the per-sample versions.
    """

    dim: int
    sampler: Callable[[np.random.Generator, int], np.ndarray]
    value: Callable[[np.ndarray, np.ndarray], float]
    grad: Callable[[np.ndarray, np.ndarray], np.ndarray]
    value_many: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    grad_many: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    known_optimum: Optional[np.ndarray] = None
    known_optimal_value: Optional[float] = None
    params: Optional[dict] = None


@dataclass(frozen=True)
class SeedInfo:
    """Provenance of a sample set; regenerating from it reproduces the set."""

    base_seed: int
    iteration: int
    sample_indices: np.ndarray


@dataclass(frozen=True)
class SampleSet:
    """An ordered collection of realizations with their provenance."""

    realizations: np.ndarray
    seed_info: SeedInfo

    def __len__(self) -> int:
        return self.realizations.shape[0]

    def regenerate(self, problem) -> "SampleSet":
        return draw_samples(
            problem, len(self), self.seed_info.iteration, self.seed_info.base_seed
        )


@dataclass(frozen=True)
class GradientStats:
    """Sample-average gradient and the unbiased per-estimator variance
    statistic sum_i ||g_i - mean||^2 / ((n - 1) n).

    ``variance_stat`` is NaN when n < 2 (undefined)."""

    mean_grad: np.ndarray
    variance_stat: float
    n: int


def draw_samples(problem, n: int, iteration: int, base_seed: int) -> SampleSet:
    """Draw n i.i.d. realizations on the stream keyed by (base_seed, iteration)."""
    if n < 1:
        raise ValueError("sample size must be >= 1")
    rng = stream_rng(base_seed, STREAM_SAMPLES, iteration)
    xis = np.asarray(problem.sampler(rng, n), dtype=float)
    if xis.ndim == 1:
        xis = xis[:, None]
    if xis.shape[0] != n:
        raise ValueError(f"sampler returned {xis.shape[0]} realizations, expected {n}")
    info = SeedInfo(int(base_seed), int(iteration), np.arange(n))
    return SampleSet(xis, info)


def batch_values(problem, x: np.ndarray, xis: np.ndarray) -> np.ndarray:
    """Per-sample objective values f(x; xi_i), vectorized when the problem
    provides ``value_many``."""
    many = getattr(problem, "value_many", None)
    if many is not None:
        return np.asarray(many(x, xis), dtype=float)
    return np.array([problem.value(x, xi) for xi in xis], dtype=float)


def batch_grads(problem, x: np.ndarray, xis: np.ndarray) -> np.ndarray:
    """Per-sample gradients, shape (n, dim)."""
    many = getattr(problem, "grad_many", None)
    if many is not None:
        return np.asarray(many(x, xis), dtype=float)
    return np.array([problem.grad(x, xi) for xi in xis], dtype=float)


def sample_objective(problem, x, sample_set: SampleSet) -> float:
    """Sample-average objective (1/|S|) sum_i f(x; xi_i)."""
    if len(sample_set) == 0:
        raise ValueError("empty sample set")
    x = np.asarray(x, dtype=float)
    return float(np.mean(batch_values(problem, x, sample_set.realizations)))


def gradient_stats(grads: np.ndarray) -> GradientStats:
    """Statistics of a stack of per-sample gradients (index-ordered reduction,
    so the result is bit-stable)."""
    n = grads.shape[0]
    mean = grads.mean(axis=0)
    if n < 2:
        variance_stat = math.nan
    elif np.all(grads == grads[0]):
        # identical rows must give exactly zero, not summation fuzz
        variance_stat = 0.0
    else:
        dev = grads - mean
        variance_stat = float(np.einsum("ij,ij->", dev, dev) / ((n - 1) * n))
    return GradientStats(mean, variance_stat, n)


def sample_gradient(problem, x, sample_set: SampleSet) -> GradientStats:
    """Sample-average gradient with its variance statistic.

    One gradient evaluation is spent per realization; callers account for
    cost by adding len(sample_set) to their cumulative counter.
    """
    if len(sample_set) == 0:
        raise ValueError("empty sample set")
    x = np.asarray(x, dtype=float)
    grads = batch_grads(problem, x, sample_set.realizations)
    return gradient_stats(grads)
