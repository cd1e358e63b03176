"""Desk-scale learners with hand-written gradients, SGD with momentum, and
synthetic clustered datasets with duplication and label noise.

Parameters of every model live in a single flat float64 vector. The layout is
``W (d x c), b (c)`` for softmax regression and ``W1 (d x h), b1 (h),
W2 (h x c), b2 (c)`` for the one-hidden-layer ReLU network.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Dataset, as_generator, _frozen


class TrainingError(RuntimeError):
    def __init__(self, message: str, step: int):
        super().__init__(f"step {step}: {message}")
        self.step = step


@dataclass(frozen=True)
class Architecture:
    feature_dim: int
    hidden_dim: int | None
    num_classes: int

    def __post_init__(self):
        if self.feature_dim < 1 or self.num_classes < 1:
            raise ValueError("feature_dim and num_classes must be positive")
        if self.hidden_dim is not None and self.hidden_dim < 1:
            raise ValueError("hidden_dim must be positive or None")

    @property
    def num_params(self) -> int:
        d, h, c = self.feature_dim, self.hidden_dim, self.num_classes
        if h is None:
            return d * c + c
        return d * h + h + h * c + c

    def unpack(self, theta: np.ndarray):
        d, h, c = self.feature_dim, self.hidden_dim, self.num_classes
        if h is None:
            return theta[: d * c].reshape(d, c), theta[d * c:]
        o = 0
        W1 = theta[o:o + d * h].reshape(d, h); o += d * h
        b1 = theta[o:o + h]; o += h
        W2 = theta[o:o + h * c].reshape(h, c); o += h * c
        return W1, b1, W2, theta[o:]


@dataclass(frozen=True, eq=False)
class ModelState:
    """Weights, momentum buffer and global step of one learner."""

    weights: np.ndarray
    velocity: np.ndarray
    step: int
    arch: Architecture

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        v = np.asarray(self.velocity, dtype=np.float64).reshape(-1)
        if w.size != self.arch.num_params or v.size != w.size:
            raise ValueError(f"expected {self.arch.num_params} weights and momentum entries, "
                             f"got {w.size} and {v.size}")
        if self.step < 0:
            raise ValueError("step must be non-negative")
        object.__setattr__(self, "weights", _frozen(w))
        object.__setattr__(self, "velocity", _frozen(v))
        object.__setattr__(self, "step", int(self.step))

    def to_bytes(self) -> bytes:
        from .core import model_to_bytes
        return model_to_bytes(self)

    def __eq__(self, other):
        if not isinstance(other, ModelState):
            return NotImplemented
        return self.to_bytes() == other.to_bytes()

    __hash__ = None


@dataclass(frozen=True)
class TrainHyper:
    """Learning-rate schedule and momentum.

    ``lr_schedule`` is ``"constant"``, ``"step"`` (multiply by ``decay_factor``
    at each step count in ``boundaries``) or ``"cosine"`` (anneal over
    ``total_steps`` down to ``min_lr_ratio * base_lr``).
    """

    base_lr: float = 0.1
    momentum: float = 0.9
    lr_schedule: str = "step"
    decay_factor: float = 0.1
    boundaries: tuple = ()
    total_steps: int = 0
    min_lr_ratio: float = 1e-3

    def __post_init__(self):
        # base_lr == 0 is accepted as a frozen-weights schedule
        if not self.base_lr >= 0 or not math.isfinite(self.base_lr):
            raise ValueError("base_lr must be a finite non-negative number")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.lr_schedule not in ("constant", "step", "cosine"):
            raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")
        if self.lr_schedule == "step" and not 0 < self.decay_factor <= 1:
            raise ValueError("decay_factor must lie in (0, 1]")
        if self.lr_schedule == "cosine" and (self.total_steps < 1 or not 0 < self.min_lr_ratio <= 1):
            raise ValueError("cosine schedule needs total_steps >= 1 and min_lr_ratio in (0, 1]")
        object.__setattr__(self, "boundaries", tuple(sorted(int(b) for b in self.boundaries)))

    def lr_at(self, step: int) -> float:
        if self.lr_schedule == "step":
            n = sum(1 for b in self.boundaries if step >= b)
            return self.base_lr * self.decay_factor ** n
        if self.lr_schedule == "cosine":
            frac = min(step, self.total_steps) / self.total_steps
            lo = self.min_lr_ratio
            return self.base_lr * (lo + (1 - lo) * 0.5 * (1 + math.cos(math.pi * frac)))
        return self.base_lr


@dataclass(frozen=True)
class EvalResult:
    metric: float
    loss: float
    num_eval_samples: int


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------


def _logits(theta, arch, X):
    if arch.hidden_dim is None:
        W, b = arch.unpack(theta)
        return X @ W + b, None
    W1, b1, W2, b2 = arch.unpack(theta)
    a = X @ W1 + b1
    h = np.maximum(a, 0.0)
    return h @ W2 + b2, (a, h)


def _log_softmax(z):
    m = z.max(axis=1, keepdims=True)
    s = z - m
    return s - np.log(np.exp(s).sum(axis=1, keepdims=True))


def softmax(z: np.ndarray) -> np.ndarray:
    return np.exp(_log_softmax(z))


def losses_for(theta: np.ndarray, arch: Architecture, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per-row cross-entropy of the model with parameters ``theta``."""
    z, _ = _logits(theta, arch, X)
    return -_log_softmax(z)[np.arange(len(y)), y]


def loss_and_grad(theta: np.ndarray, arch: Architecture, X: np.ndarray, y: np.ndarray):
    """Mean cross-entropy over the rows of ``X`` and its gradient w.r.t. ``theta``."""
    n = X.shape[0]
    z, cache = _logits(theta, arch, X)
    logp = _log_softmax(z)
    loss = -logp[np.arange(n), y].mean()
    dz = np.exp(logp)
    dz[np.arange(n), y] -= 1.0
    dz /= n
    if arch.hidden_dim is None:
        return loss, np.concatenate([(X.T @ dz).ravel(), dz.sum(axis=0)])
    a, h = cache
    _, _, W2, _ = arch.unpack(theta)
    dh = dz @ W2.T
    da = dh * (a > 0)
    return loss, np.concatenate([(X.T @ da).ravel(), da.sum(axis=0), (h.T @ dz).ravel(), dz.sum(axis=0)])


# ---------------------------------------------------------------------------
# Model operations
# ---------------------------------------------------------------------------


def init_model(arch: Architecture, rng) -> ModelState:
    """Weight matrices ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases zero."""
    gen = as_generator(rng)
    d, h, c = arch.feature_dim, arch.hidden_dim, arch.num_classes
    if h is None:
        parts = [gen.uniform(-1, 1, d * c) / math.sqrt(d), np.zeros(c)]
    else:
        parts = [gen.uniform(-1, 1, d * h) / math.sqrt(d), np.zeros(h),
                 gen.uniform(-1, 1, h * c) / math.sqrt(h), np.zeros(c)]
    w = np.concatenate(parts)
    return ModelState(w, np.zeros_like(w), 0, arch)


def arch_for(dataset: Dataset, hidden_dim: int | None = None) -> Architecture:
    return Architecture(dataset.feature_dim, hidden_dim, dataset.num_classes)


def train_step(model: ModelState, batch, dataset: Dataset, hyper: TrainHyper) -> ModelState:
    """One SGD-with-momentum update on the mean cross-entropy of ``batch``."""
    ids = np.asarray(batch, dtype=np.int64)
    if model.arch.feature_dim != dataset.feature_dim or model.arch.num_classes != dataset.num_classes:
        raise ValueError("model architecture does not match dataset dimensions")
    loss, grad = loss_and_grad(model.weights, model.arch, dataset.features[ids], dataset.labels[ids])
    if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
        raise TrainingError("non-finite loss or gradient", model.step)
    lr = hyper.lr_at(model.step)
    v = hyper.momentum * model.velocity + grad
    w = model.weights - lr * v
    return ModelState(w, v, model.step + 1, model.arch)


def train_on_schedule(model: ModelState, schedule, dataset: Dataset, hyper: TrainHyper) -> ModelState:
    for batch in schedule:
        model = train_step(model, batch, dataset, hyper)
    return model


def evaluate(model: ModelState, dataset: Dataset, eval_subset: int | None = None, rng=None) -> EvalResult:
    """Top-1 accuracy and mean loss on the validation split.

    With ``eval_subset`` smaller than the split, a subsample of that size is
    drawn without replacement from ``rng``.
    """
    n = dataset.num_val
    if n == 0:
        raise ValueError("validation split is empty")
    X, y = dataset.val_features, dataset.val_labels
    if eval_subset is not None and eval_subset < n:
        if eval_subset < 1:
            raise ValueError("eval_subset must be positive")
        if rng is None:
            raise ValueError("a subsampled evaluation needs an rng")
        idx = np.sort(as_generator(rng).choice(n, size=eval_subset, replace=False))
        X, y = X[idx], y[idx]
    z, _ = _logits(model.weights, model.arch, X)
    correct = int(np.count_nonzero(z.argmax(axis=1) == y))
    loss = float(-_log_softmax(z)[np.arange(len(y)), y].mean())
    return EvalResult(correct / len(y), loss, len(y))


def per_sample_losses(model: ModelState, dataset: Dataset) -> np.ndarray:
    return losses_for(model.weights, model.arch, dataset.features, dataset.labels)


def predict_proba(model: ModelState, X: np.ndarray) -> np.ndarray:
    z, _ = _logits(model.weights, model.arch, np.asarray(X, dtype=np.float64))
    return softmax(z)


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    """Gaussian clusters, one class per cluster.

    Each of the ``samples_per_cluster`` base points is repeated
    ``redundancy_factor`` times with ``jitter``-sized perturbations, then an
    exact ``floor(label_noise_fraction * n_train)`` training labels are flipped
    to a different class. Validation points are fresh draws and never flipped;
    their count is chosen so they make up ``val_fraction`` of all samples.
    """

    num_clusters: int = 5
    samples_per_cluster: int = 100
    feature_dim: int = 10
    separation: float = 3.0
    redundancy_factor: int = 1
    label_noise_fraction: float = 0.0
    val_fraction: float = 0.2
    cluster_std: float = 1.0
    jitter: float = 1e-2

    def __post_init__(self):
        if min(self.num_clusters, self.samples_per_cluster, self.feature_dim, self.redundancy_factor) < 1:
            raise ValueError("cluster counts, dimensions and redundancy_factor must be positive")
        if self.num_clusters < 2 and self.label_noise_fraction > 0:
            raise ValueError("label noise needs at least two clusters")
        if not self.separation > 0 or not self.cluster_std > 0 or self.jitter < 0:
            raise ValueError("separation and cluster_std must be positive, jitter non-negative")
        if not 0.0 <= self.label_noise_fraction < 1.0:
            raise ValueError("label_noise_fraction must lie in [0, 1)")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in (0, 1)")

    @property
    def num_train(self) -> int:
        return self.num_clusters * self.samples_per_cluster * self.redundancy_factor

    @property
    def num_val(self) -> int:
        return max(1, round(self.num_train * self.val_fraction / (1.0 - self.val_fraction)))


@dataclass(frozen=True, eq=False)
class SyntheticData:
    dataset: Dataset
    noisy_ids: np.ndarray
    clean_labels: np.ndarray
    base_ids: np.ndarray


def gen_synthetic_dataset(spec: SyntheticSpec, rng) -> SyntheticData:
    gen = as_generator(rng)
    k, d = spec.num_clusters, spec.feature_dim
    centers = gen.normal(size=(k, d))
    centers *= spec.separation / np.linalg.norm(centers, axis=1, keepdims=True)

    n_base = k * spec.samples_per_cluster
    base_y = np.repeat(np.arange(k), spec.samples_per_cluster)
    base_X = centers[base_y] + spec.cluster_std * gen.normal(size=(n_base, d))
    base_ids = np.repeat(np.arange(n_base), spec.redundancy_factor)
    X = base_X[base_ids] + spec.jitter * gen.normal(size=(base_ids.size, d))
    y = base_y[base_ids]

    order = gen.permutation(X.shape[0])
    X, y, base_ids = X[order], y[order], base_ids[order]

    n_noisy = int(math.floor(spec.label_noise_fraction * X.shape[0]))
    noisy = np.sort(gen.choice(X.shape[0], size=n_noisy, replace=False))
    noisy_y = y.copy()
    noisy_y[noisy] = (y[noisy] + gen.integers(1, k, size=n_noisy)) % k if n_noisy else y[noisy]

    val_y = np.arange(spec.num_val) % k
    val_X = centers[val_y] + spec.cluster_std * gen.normal(size=(spec.num_val, d))

    ds = Dataset(X, noisy_y, val_X, val_y, k)
    return SyntheticData(ds, _frozen(noisy), _frozen(y), _frozen(base_ids))
