"""Post-hoc analysis: segment histograms, frequency/loss tables, static
replays, cross-architecture transfer and condition comparisons."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .core import (
    PROVENANCE_STATIC,
    PURPOSE_INIT,
    PURPOSE_STATIC,
    Dataset,
    RngStream,
    SamplingDistribution,
    SamplingSchedule,
    sample_counts,
)
from .sampling import draw_schedule, estimate_distribution
from .search import SearchConfig, plain_sgd_baseline, run_autosampling
from .trainer import Architecture, TrainHyper, evaluate, init_model, train_on_schedule


@dataclass(frozen=True, eq=False)
class SegmentHistogram:
    """Total appearance counts per contiguous block of sample ids.

    ``ordering`` is a display permutation: row ``r`` of an export shows
    segment ``ordering[r]``. It never changes ``counts``.
    """

    num_segments: int
    counts: np.ndarray
    ordering: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def reordered(self, ordering) -> "SegmentHistogram":
        ordering = np.asarray(ordering, dtype=np.int64)
        if sorted(ordering.tolist()) != list(range(self.num_segments)):
            raise ValueError("ordering must be a permutation of the segment indices")
        return SegmentHistogram(self.num_segments, self.counts, ordering)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["rank", "segment", "count"])
            for r, s in enumerate(self.ordering):
                w.writerow([r, int(s), int(self.counts[s])])


def segment_histogram(schedule: SamplingSchedule, dataset_size: int, num_segments: int) -> SegmentHistogram:
    if num_segments < 1 or dataset_size % num_segments:
        raise ValueError(f"num_segments={num_segments} must divide dataset_size={dataset_size}")
    width = dataset_size // num_segments
    flat = schedule.flat()
    if flat.size and flat.max() >= dataset_size:
        raise ValueError("schedule references ids beyond dataset_size")
    counts = np.bincount(flat // width, minlength=num_segments).astype(np.int64)
    return SegmentHistogram(num_segments, counts, np.arange(num_segments))


def rank_ordering(hist: SegmentHistogram) -> np.ndarray:
    """Segments sorted by descending count (stable on ties)."""
    return np.argsort(-hist.counts, kind="stable")


def stage_histograms(schedule: SamplingSchedule, num_segments: int,
                     reference: int | None = None) -> dict[int, SegmentHistogram]:
    """One histogram per provenance segment, all displayed in the count ranking
    of the ``reference`` stage (the last stage by default)."""
    hists = {tag: segment_histogram(part, schedule.dataset_size, num_segments)
             for tag, part in schedule.segments().items()}
    if not hists:
        return {}
    ref = hists[max(hists) if reference is None else reference]
    order = rank_ordering(ref)
    return {tag: h.reordered(order) for tag, h in hists.items()}


@dataclass(frozen=True, eq=False)
class FreqLossTable:
    ids: np.ndarray
    frequencies: np.ndarray
    losses: np.ndarray
    correlation: float | None  # None when either column has zero variance

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sample_id", "frequency", "loss"])
            for i, f, l in zip(self.ids, self.frequencies, self.losses):
                w.writerow([int(i), int(f), repr(float(l))])


def pearson(x, y) -> float | None:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    xc, yc = x - x.mean(), y - y.mean()
    sx, sy = np.sqrt((xc * xc).sum()), np.sqrt((yc * yc).sum())
    if sx == 0 or sy == 0:
        return None
    return float(np.clip((xc * yc).sum() / (sx * sy), -1.0, 1.0))


def frequency_loss_table(schedule: SamplingSchedule, losses, ids=None) -> FreqLossTable:
    """Appearance count and loss per sample, with their Pearson correlation.

    ``ids`` restricts the table to a subset of samples (e.g. 500 random ones).
    """
    losses = np.asarray(losses, dtype=np.float64)
    if losses.shape != (schedule.dataset_size,):
        raise ValueError(f"expected {schedule.dataset_size} losses, got {losses.shape}")
    freq = sample_counts(schedule)
    ids = np.arange(schedule.dataset_size) if ids is None else np.asarray(ids, dtype=np.int64)
    return FreqLossTable(ids, freq[ids], losses[ids], pearson(freq[ids], losses[ids]))


def make_static_schedule(p: SamplingDistribution, total_batches: int, batch_size: int, rng) -> SamplingSchedule:
    """A whole-run schedule drawn i.i.d. from one fixed distribution."""
    return draw_schedule(p, total_batches, batch_size, rng, tag=PROVENANCE_STATIC)


def _as_arch(arch, dataset: Dataset) -> Architecture:
    if isinstance(arch, Architecture):
        return arch
    return Architecture(dataset.feature_dim, arch, dataset.num_classes)


def replay_run(schedule: SamplingSchedule, arch, hyper: TrainHyper, dataset: Dataset, seed: int):
    """Plain SGD over a fixed schedule from the seed's initial weights.

    ``arch`` is an :class:`Architecture` or a hidden width (``None`` for
    softmax regression). With the same seed and architecture as a search run,
    replaying its winning schedule reproduces the search's final model.
    """
    arch = _as_arch(arch, dataset)
    model = init_model(arch, RngStream(seed, 0, 0, PURPOSE_INIT))
    model = train_on_schedule(model, schedule, dataset, hyper)
    return model, evaluate(model, dataset)


def transfer_run(p: SamplingDistribution, arch, hyper: TrainHyper, dataset: Dataset, seed: int,
                 total_batches: int, batch_size: int):
    """Train ``arch`` on a static schedule drawn from a distribution learned elsewhere."""
    sched = make_static_schedule(p, total_batches, batch_size, RngStream(seed, 0, 0, PURPOSE_STATIC))
    return replay_run(sched, arch, hyper, dataset, seed)


def static_distribution(schedule: SamplingSchedule, final_only: bool = False) -> SamplingDistribution:
    """Distribution estimated from the whole winning schedule, or from its last alternation."""
    if final_only:
        segs = schedule.segments()
        schedule = segs[max(segs)]
    return estimate_distribution(schedule)


@dataclass(frozen=True, eq=False)
class ComparisonTable:
    conditions: tuple
    seeds: tuple
    metrics: np.ndarray  # (len(conditions), len(seeds))
    samples: np.ndarray  # training samples consumed, same shape

    @property
    def mean(self) -> np.ndarray:
        return self.metrics.mean(axis=1)

    @property
    def std(self) -> np.ndarray:
        return self.metrics.std(axis=1, ddof=1) if len(self.seeds) > 1 else np.zeros(len(self.conditions))

    def row(self, condition: str) -> np.ndarray:
        return self.metrics[self.conditions.index(condition)]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["condition"] + [f"seed_{s}" for s in self.seeds] + ["mean", "std"])
            for c, vals, m, s in zip(self.conditions, self.metrics, self.mean, self.std):
                w.writerow([c] + [repr(float(v)) for v in vals] + [repr(float(m)), repr(float(s))])

    def __str__(self):
        lines = [f"{'condition':<10} {'mean':>8} {'std':>8}  (n={len(self.seeds)})"]
        for c, m, s in zip(self.conditions, self.mean, self.std):
            lines.append(f"{c:<10} {100 * m:8.2f} {100 * s:8.2f}")
        return "\n".join(lines)


DatasetSource = Dataset | Callable[[int], Dataset]


def _dataset_for(source: DatasetSource, seed: int) -> Dataset:
    return source(seed) if callable(source) else source


def compare_conditions(config: SearchConfig, dataset: DatasetSource, seeds: Sequence[int],
                       final_only: bool = False, n_jobs: int = 1) -> ComparisonTable:
    """UNIFORM / STATIC / DYNAMIC validation accuracy over several seeds.

    DYNAMIC is the search itself; STATIC replays a schedule drawn from the
    distribution estimated on the search's winning schedule; UNIFORM is plain
    SGD on shuffled epochs. All three consume the same number of samples.
    ``dataset`` may be a callable mapping a seed to a dataset.
    """
    seeds = tuple(int(s) for s in seeds)
    if len(seeds) < 2:
        raise ValueError("compare_conditions needs at least two seeds")
    conds = ("UNIFORM", "STATIC", "DYNAMIC")
    metrics = np.zeros((3, len(seeds)))
    samples = np.zeros((3, len(seeds)), dtype=np.int64)
    for j, seed in enumerate(seeds):
        ds = _dataset_for(dataset, seed)
        cfg = replace(config, seed=seed)
        dyn = run_autosampling(cfg, ds, n_jobs=n_jobs)
        p = static_distribution(dyn.schedule, final_only)
        static = make_static_schedule(p, cfg.total_batches, cfg.batch_size, RngStream(seed, 0, 0, PURPOSE_STATIC))
        _, static_eval = replay_run(static, cfg.hidden_dim, cfg.hyper, ds, seed)
        _, uni_sched, uni_eval = plain_sgd_baseline(replace(cfg, exploration_type="uniform"), ds)
        metrics[:, j] = (uni_eval.metric, static_eval.metric, dyn.final_eval.metric)
        samples[:, j] = (uni_sched.num_samples, static.num_samples, dyn.schedule.num_samples)
    return ComparisonTable(conds, seeds, metrics, samples)


def exploration_ablation(config: SearchConfig, dataset: DatasetSource, seeds: Sequence[int],
                         variants: dict | None = None, n_jobs: int = 1) -> ComparisonTable:
    """Final accuracy of several configuration variants across seeds.

    ``variants`` maps a row name to keyword overrides of ``config``; the
    default compares the three exploration types.
    """
    if variants is None:
        variants = {t: {"exploration_type": t} for t in ("uniform", "random", "mixture")}
    seeds = tuple(int(s) for s in seeds)
    names = tuple(variants)
    metrics = np.zeros((len(names), len(seeds)))
    samples = np.zeros((len(names), len(seeds)), dtype=np.int64)
    for j, seed in enumerate(seeds):
        ds = _dataset_for(dataset, seed)
        for i, name in enumerate(names):
            res = run_autosampling(replace(config, seed=seed, **variants[name]), ds, n_jobs=n_jobs)
            metrics[i, j] = res.final_eval.metric
            samples[i, j] = res.schedule.num_samples
    return ComparisonTable(names, seeds, metrics, samples)


def artifact_name(experiment_id: str, condition: str, seed: int | None, kind: str, ext: str = "csv") -> str:
    seed_part = "all" if seed is None else f"s{seed}"
    return f"{experiment_id}__{condition}__{seed_part}__{kind}.{ext}"
