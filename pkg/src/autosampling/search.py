"""Population search over data sampling schedules.

A run alternates two phases. During multi-exploitation every child trains on
its own schedule for ``T`` intervals of ``N_s`` batches; after each interval
all children are evaluated, the best child's sub-schedule is appended to the
winning schedule and its full training state is copied to every child. During
exploration the winning schedule is turned into a sampling distribution,
smoothed, and used to draw fresh per-child schedules for the next round.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from concurrent.futures import Executor, ThreadPoolExecutor
from contextlib import nullcontext
from dataclasses import asdict, dataclass, replace

import numpy as np

from .core import (
    PURPOSE_EVAL,
    PURPOSE_INIT,
    PURPOSE_SCHEDULE,
    PURPOSE_UNIFORM,
    Dataset,
    RngStream,
    SamplingDistribution,
    SamplingSchedule,
    concat_schedules,
)
from .sampling import (
    SmoothingParams,
    draw_schedule,
    draw_uniform_epoch_schedule,
    draw_union_schedule,
    estimate_distribution,
    smooth_distribution,
)
from .trainer import (
    EvalResult,
    ModelState,
    TrainHyper,
    arch_for,
    evaluate,
    init_model,
    train_on_schedule,
    train_step,
)

logger = logging.getLogger(__name__)

EXPLORATION_TYPES = ("uniform", "random", "mixture")


class SearchError(RuntimeError):
    """A failure inside the search loop, tagged with where it happened."""

    def __init__(self, message: str, alternation: int, interval: int | None = None):
        where = f"alternation {alternation}" + (f", interval {interval}" if interval is not None else "")
        super().__init__(f"{where}: {message}")
        self.alternation = alternation
        self.interval = interval


@dataclass(frozen=True)
class SearchConfig:
    """Every knob of a search run.

    One multi-exploitation step consumes
    ``intervals_per_exploitation * interval_len * batch_size`` samples per
    child. To explore once every ``n_uniform + 1`` epochs, choose the interval
    count so that product equals ``(n_uniform + 1) * |D|``.
    """

    population_size: int = 20
    intervals_per_exploitation: int = 10
    interval_len: int = 20
    batch_size: int = 128
    beta: float = 1.0
    n_uniform: int = 3
    exploration_type: str = "mixture"
    warmup_batches: int = 0
    total_alternations: int = 1
    seed: int = 0
    eval_subset: int | None = None
    hidden_dim: int | None = None
    union_mode: bool = False
    base_lr: float = 0.1
    momentum: float = 0.9
    lr_schedule: str = "step"
    decay_factor: float = 0.1
    boundaries: tuple = ()
    total_steps: int = 0

    def __post_init__(self):
        for name in ("population_size", "intervals_per_exploitation", "interval_len", "batch_size",
                     "total_alternations"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"{name} must be an integer >= 1, got {v!r}")
        if self.exploration_type not in EXPLORATION_TYPES:
            raise ValueError(f"exploration_type must be one of {EXPLORATION_TYPES}, got {self.exploration_type!r}")
        if self.warmup_batches < 0:
            raise ValueError("warmup_batches must be >= 0")
        if self.eval_subset is not None and self.eval_subset < 1:
            raise ValueError("eval_subset must be positive or None")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a non-negative 64-bit integer")
        object.__setattr__(self, "boundaries", tuple(int(b) for b in self.boundaries))
        # field-level validation of the nested parameter groups
        self.smoothing
        self.hyper

    @property
    def smoothing(self) -> SmoothingParams:
        return SmoothingParams(self.beta, self.n_uniform)

    @property
    def hyper(self) -> TrainHyper:
        return TrainHyper(self.base_lr, self.momentum, self.lr_schedule, self.decay_factor,
                          self.boundaries, self.total_steps)

    @property
    def effective_population(self) -> int:
        return 1 if self.exploration_type == "uniform" else self.population_size

    @property
    def batches_per_exploitation(self) -> int:
        return self.intervals_per_exploitation * self.interval_len

    @property
    def samples_per_exploitation(self) -> int:
        return self.batches_per_exploitation * self.batch_size

    @property
    def total_batches(self) -> int:
        return self.total_alternations * self.batches_per_exploitation

    def to_dict(self) -> dict:
        d = asdict(self)
        d["boundaries"] = list(self.boundaries)
        return d


@dataclass(frozen=True, eq=False)
class ChildState:
    worker: int
    model: ModelState
    schedule: SamplingSchedule
    rng: RngStream | None = None


@dataclass(frozen=True, eq=False)
class ExploitRecord:
    alternation: int
    interval: int
    winner: int
    winner_metric: float
    metrics: tuple
    losses: tuple
    schedule: SamplingSchedule
    child_digests: tuple = ()  # sha256 of each child's serialized state after broadcast

    def to_json(self, timestamp: float | None = None) -> str:
        rec = {
            "alternation": self.alternation,
            "interval": self.interval,
            "winner": self.winner,
            "winner_metric": self.winner_metric,
            "metrics": list(self.metrics),
            "losses": list(self.losses),
            "child_digests": list(self.child_digests),
        }
        if timestamp is not None:
            rec["timestamp"] = round(timestamp, 6)
        return json.dumps(rec, sort_keys=True)


@dataclass(frozen=True, eq=False)
class ExploreResult:
    schedules: list
    distribution: SamplingDistribution
    smoothed: SamplingDistribution
    mode: str


@dataclass(eq=False)
class SearchResult:
    schedule: SamplingSchedule
    distribution: SamplingDistribution
    smoothed_distribution: SamplingDistribution
    model: ModelState
    records: list
    final_eval: EvalResult
    config: SearchConfig


# ---------------------------------------------------------------------------
# Exploitation
# ---------------------------------------------------------------------------


def run_interval(child: ChildState, dataset: Dataset, hyper: TrainHyper) -> ChildState:
    """Train ``child`` on every batch of its current sub-schedule, in order."""
    model = child.model
    for batch in child.schedule:
        model = train_step(model, batch, dataset, hyper)
    return replace(child, model=model)


def exploit(population: list, dataset: Dataset, eval_subset: int | None = None, eval_rng=None,
            alternation: int = 0, interval: int = 0):
    """Evaluate every child, pick the best and copy its state to all children.

    Ties go to the lowest worker index. The full :class:`ModelState` (weights,
    momentum buffer, step counter) is broadcast.
    """
    results = []
    for child in population:
        try:
            results.append(evaluate(child.model, dataset, eval_subset, eval_rng))
        except Exception as exc:
            raise SearchError(f"evaluation of child {child.worker} failed: {exc}", alternation, interval) from exc
    metrics = tuple(r.metric for r in results)
    win = int(np.argmax(metrics))
    winner = population[win]
    population = [replace(c, model=winner.model) for c in population]
    digests = tuple(hashlib.sha256(c.model.to_bytes()).hexdigest() for c in population)
    record = ExploitRecord(alternation, interval, winner.worker, metrics[win], metrics,
                           tuple(r.loss for r in results), winner.schedule, digests)
    return record, population


def _map(executor: Executor | None, fn, items):
    if executor is None:
        return [fn(x) for x in items]
    return list(executor.map(fn, items))


def multi_exploitation(population: list, config: SearchConfig, dataset: Dataset, alternation: int = 0,
                       executor: Executor | None = None):
    """Run ``T`` exploit intervals over the children's full schedules.

    Each child must hold ``T * N_s`` batches. Returns the winning schedule,
    the final population (all children share the last winner's state) and
    one :class:`ExploitRecord` per interval.
    """
    T = config.intervals_per_exploitation
    parts = []
    for child in population:
        if child.schedule.num_batches != config.batches_per_exploitation:
            raise SearchError(f"child {child.worker} holds {child.schedule.num_batches} batches, "
                              f"expected {config.batches_per_exploitation}", alternation)
        parts.append(child.schedule.split(T))
    hyper = config.hyper
    records = []
    for t in range(T):
        current = [replace(c, schedule=parts[i][t]) for i, c in enumerate(population)]
        try:
            current = _map(executor, lambda c: run_interval(c, dataset, hyper), current)
        except Exception as exc:
            raise SearchError(str(exc), alternation, t) from exc
        eval_rng = None
        if config.eval_subset is not None:
            eval_rng = RngStream(config.seed, 0, alternation * T + t, PURPOSE_EVAL)
        record, current = exploit(current, dataset, config.eval_subset, eval_rng, alternation, t)
        records.append(record)
        population = current
    winning = concat_schedules([r.schedule for r in records])
    return winning, population, records


# ---------------------------------------------------------------------------
# Exploration
# ---------------------------------------------------------------------------


def uniform_run_schedule(config: SearchConfig, dataset_size: int) -> SamplingSchedule:
    """The whole-run epoch schedule shared by uniform search and the plain baseline."""
    rng = RngStream(config.seed, 0, 0, PURPOSE_UNIFORM)
    return draw_uniform_epoch_schedule(dataset_size, config.total_batches, config.batch_size, rng)


def in_warmup(config: SearchConfig, alternation: int) -> bool:
    return alternation == 0 or alternation * config.batches_per_exploitation < config.warmup_batches


def explore(winning: SamplingSchedule | None, config: SearchConfig, dataset_size: int,
            alternation: int = 0) -> ExploreResult:
    """Build each child's schedule for the next multi-exploitation step.

    ``mixture`` estimates a distribution from ``winning``, smooths it and
    draws per-child i.i.d. schedules; ``random`` draws per-child shuffled
    epochs and ignores ``winning``; ``uniform`` slices one run-long epoch
    schedule for a single child. Mixture behaves like ``random`` until the
    warm-up has elapsed.
    """
    nb, bs = config.batches_per_exploitation, config.batch_size
    uniform = SamplingDistribution.uniform(dataset_size)
    if config.exploration_type == "uniform":
        sched = uniform_run_schedule(config, dataset_size)[alternation * nb:(alternation + 1) * nb]
        return ExploreResult([sched.with_provenance(alternation)], uniform, uniform, "uniform")

    streams = [RngStream(config.seed, i, alternation, PURPOSE_SCHEDULE) for i in range(config.population_size)]
    if config.exploration_type == "random" or in_warmup(config, alternation):
        scheds = [draw_uniform_epoch_schedule(dataset_size, nb, bs, s, tag=alternation) for s in streams]
        return ExploreResult(scheds, uniform, uniform, "random")

    if winning is None or winning.num_samples == 0:
        raise SearchError("mixture exploration needs a non-empty winning schedule", alternation)
    p = estimate_distribution(winning, dataset_size)
    if config.union_mode:
        scheds = [draw_union_schedule(p, config.smoothing, nb, bs, s, tag=alternation) for s in streams]
        smoothed = smooth_distribution(p, config.smoothing)
    else:
        smoothed = smooth_distribution(p, config.smoothing)
        scheds = [draw_schedule(smoothed, nb, bs, s, tag=alternation) for s in streams]
    return ExploreResult(scheds, p, smoothed, "mixture")


# ---------------------------------------------------------------------------
# Outer loop
# ---------------------------------------------------------------------------


def initial_model(config: SearchConfig, dataset: Dataset) -> ModelState:
    return init_model(arch_for(dataset, config.hidden_dim), RngStream(config.seed, 0, 0, PURPOSE_INIT))


def run_autosampling(config: SearchConfig, dataset: Dataset, n_jobs: int = 1,
                     executor: Executor | None = None, callback=None) -> SearchResult:
    """Alternate exploration and multi-exploitation ``total_alternations`` times.

    Results depend only on ``config`` and ``dataset``; ``n_jobs`` (or an
    explicit ``executor``) only changes how children are scheduled. ``callback``
    receives each :class:`ExploitRecord` as soon as it is produced.
    """
    if config.batch_size > dataset.num_samples:
        raise ValueError(f"batch_size {config.batch_size} exceeds the {dataset.num_samples} training samples")
    n_children = config.effective_population
    if executor is None and n_jobs > 1:
        ctx = ThreadPoolExecutor(max_workers=min(n_jobs, n_children))
    else:
        ctx = nullcontext(executor)

    model = initial_model(config, dataset)
    winning = None
    segments, records = [], []
    with ctx as pool:
        for a in range(config.total_alternations):
            try:
                ex = explore(winning, config, dataset.num_samples, a)
            except SearchError:
                raise
            except ValueError as exc:
                raise SearchError(f"exploration failed: {exc}", a) from exc
            population = [ChildState(i, model, s, RngStream(config.seed, i, a, PURPOSE_SCHEDULE))
                          for i, s in enumerate(ex.schedules[:n_children])]
            winning, population, recs = multi_exploitation(population, config, dataset, a, pool)
            winning = winning.with_provenance(a)
            model = population[0].model
            segments.append(winning)
            records.extend(recs)
            if callback is not None:
                for r in recs:
                    callback(r)
            logger.debug("alternation %d (%s): last winner %d metric %.4f", a, ex.mode,
                         recs[-1].winner, recs[-1].winner_metric)

    p_final = estimate_distribution(winning, dataset.num_samples)
    smoothed_final = smooth_distribution(p_final, config.smoothing)
    return SearchResult(
        schedule=concat_schedules(segments, dataset.num_samples),
        distribution=p_final,
        smoothed_distribution=smoothed_final,
        model=model,
        records=records,
        final_eval=evaluate(model, dataset),
        config=config,
    )


def plain_sgd_baseline(config: SearchConfig, dataset: Dataset):
    """Train one model on the run-long uniform epoch schedule; no search."""
    sched = uniform_run_schedule(config, dataset.num_samples)
    model = train_on_schedule(initial_model(config, dataset), sched, dataset, config.hyper)
    return model, sched, evaluate(model, dataset)


def write_run_log(records, path, clock=time.time) -> None:
    """One JSON object per line; only the ``timestamp`` field varies between runs."""
    with open(path, "w") as fh:
        for r in records:
            fh.write(r.to_json(clock()) + "\n")


def read_run_log(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
