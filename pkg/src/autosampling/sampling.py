"""Estimating, smoothing and drawing from sampling distributions."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .core import SamplingDistribution, SamplingSchedule, as_generator


@dataclass(frozen=True)
class SmoothingParams:
    """Log smoothing offset ``beta`` and the number of uniform mixture components."""

    beta: float = 1.0
    n_uniform: int = 3

    def __post_init__(self):
        if not np.isfinite(self.beta) or self.beta < 1.0:
            raise ValueError(f"beta must be >= 1, got {self.beta}")
        if int(self.n_uniform) != self.n_uniform or self.n_uniform < 0:
            raise ValueError(f"n_uniform must be a non-negative integer, got {self.n_uniform}")


def estimate_distribution(schedule: SamplingSchedule, dataset_size: int | None = None) -> SamplingDistribution:
    """Relative appearance frequency of every sample id in ``schedule``."""
    if dataset_size is None:
        dataset_size = schedule.dataset_size
    if dataset_size < 1:
        raise ValueError("dataset_size must be at least 1")
    flat = schedule.flat()
    if flat.size == 0:
        raise ValueError("cannot estimate a distribution from an empty schedule")
    if flat.max() >= dataset_size:
        raise ValueError(f"schedule references id {int(flat.max())} >= dataset_size {dataset_size}")
    counts = np.bincount(flat, minlength=dataset_size)
    return SamplingDistribution(counts / counts.sum())


def log_smoothed(p: SamplingDistribution, beta: float) -> np.ndarray:
    """``log(p + beta)`` renormalised to sum to one."""
    w = np.log(p.probs + beta)
    total = w.sum()
    if not total > 0:
        raise ValueError("log(p + beta) sums to zero; the smoothed distribution is undefined")
    return w / total


def smooth_distribution(p: SamplingDistribution, params: SmoothingParams) -> SamplingDistribution:
    """Log-smooth ``p`` and mix it with ``n_uniform`` uniform components.

    The log component gets weight ``1/(n_uniform+1)`` and the uniform part the
    rest, so every sample keeps probability at least
    ``n_uniform / ((n_uniform+1) * |D|)``.
    """
    q = log_smoothed(p, params.beta)
    nu = int(params.n_uniform)
    if nu == 0 and np.any(q == 0):
        warnings.warn("n_uniform=0 leaves zero-probability samples in the smoothed distribution",
                      RuntimeWarning, stacklevel=2)
    out = q / (nu + 1) + nu / ((nu + 1) * p.size)
    return SamplingDistribution(out / out.sum())


def _check_sizes(num_batches: int, batch_size: int) -> None:
    if num_batches < 1 or batch_size < 1:
        raise ValueError("num_batches and batch_size must be >= 1")


def _inverse_cdf(probs: np.ndarray, n: int, gen: np.random.Generator) -> np.ndarray:
    cdf = np.cumsum(probs)
    cdf /= cdf[-1]
    idx = np.searchsorted(cdf, gen.random(n), side="right")
    return np.minimum(idx, probs.size - 1)


def draw_schedule(p: SamplingDistribution, num_batches: int, batch_size: int, rng,
                  tag: int = 0) -> SamplingSchedule:
    """Draw ``num_batches * batch_size`` ids i.i.d. (with replacement) from ``p``."""
    _check_sizes(num_batches, batch_size)
    gen = as_generator(rng)
    ids = _inverse_cdf(p.probs, num_batches * batch_size, gen)
    return SamplingSchedule(ids.reshape(num_batches, batch_size), np.full(num_batches, tag, np.int32), p.size)


def _epochs(dataset_size: int, n: int, gen: np.random.Generator) -> np.ndarray:
    n_epochs = -(-n // dataset_size)
    return np.concatenate([gen.permutation(dataset_size) for _ in range(n_epochs)])[:n]


def draw_uniform_epoch_schedule(dataset_size: int, num_batches: int, batch_size: int, rng,
                                tag: int = 0) -> SamplingSchedule:
    """Concatenate shuffled passes over the dataset and cut them into batches.

    Batches may straddle epoch boundaries; only the final partial batch of the
    requested length is discarded.
    """
    _check_sizes(num_batches, batch_size)
    if dataset_size < batch_size:
        raise ValueError(f"dataset_size {dataset_size} is smaller than batch_size {batch_size}")
    flat = _epochs(dataset_size, num_batches * batch_size, as_generator(rng))
    return SamplingSchedule(flat.reshape(num_batches, batch_size), np.full(num_batches, tag, np.int32),
                            dataset_size)


def draw_union_schedule(p: SamplingDistribution, params: SmoothingParams, num_batches: int,
                        batch_size: int, rng, tag: int = 0) -> SamplingSchedule:
    """Union-of-epochs alternative to i.i.d. draws from the smoothed mixture.

    Each block holds one epoch-sized draw from the log-smoothed ``p`` together
    with ``n_uniform`` shuffled epochs, and is shuffled as a whole. Blocks are
    generated until enough ids exist for the requested batches.
    """
    _check_sizes(num_batches, batch_size)
    gen = as_generator(rng)
    q = log_smoothed(p, params.beta)
    size = p.size
    need = num_batches * batch_size
    blocks, have = [], 0
    while have < need:
        parts = [_inverse_cdf(q, size, gen)] + [gen.permutation(size) for _ in range(int(params.n_uniform))]
        block = gen.permutation(np.concatenate(parts))
        blocks.append(block)
        have += block.size
    flat = np.concatenate(blocks)[:need]
    return SamplingSchedule(flat.reshape(num_batches, batch_size), np.full(num_batches, tag, np.int32), size)
