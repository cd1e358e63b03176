"""Domain types, RNG streams and binary serialization shared across the package."""

from __future__ import annotations

import csv
import os
import struct
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

FORMAT_VERSION = 1

# Provenance tags below zero mark schedules that did not come out of a search
# alternation; non-negative tags are alternation indices.
PROVENANCE_STATIC = -1
PROVENANCE_UNIFORM = -2
PROVENANCE_REPLAY = -3

_SCHEDULE_MAGIC = b"ASCH"
_DISTRIBUTION_MAGIC = b"ADST"
_MODEL_MAGIC = b"AMDL"

# magic, version, dataset_size, batch_size, num_batches
_SCHEDULE_HEADER = struct.Struct("<4sHQIQ")
# magic, version, size
_DISTRIBUTION_HEADER = struct.Struct("<4sHQ")
# magic, version, feature_dim, hidden_dim (0 = none), num_classes, step, num_params
_MODEL_HEADER = struct.Struct("<4sHIIIQQ")


class FormatError(ValueError):
    """Raised when a serialized artifact is malformed."""

    def __init__(self, message: str, path=None, offset: int | None = None):
        where = f"{path}: " if path is not None else ""
        at = f" (byte offset {offset})" if offset is not None else ""
        super().__init__(f"{where}{message}{at}")
        self.path = path
        self.offset = offset


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


# ---------------------------------------------------------------------------
# RNG streams
# ---------------------------------------------------------------------------

# Purpose codes keep streams used for different jobs apart even when they share
# a (worker, alternation) coordinate.
PURPOSE_SCHEDULE = 0
PURPOSE_INIT = 1
PURPOSE_EVAL = 2
PURPOSE_DATA = 3
PURPOSE_STATIC = 4
PURPOSE_UNIFORM = 5


@dataclass(frozen=True)
class RngStream:
    """A reproducible random stream addressed by ``(seed, worker, alternation)``.

    The stream is derived with :class:`numpy.random.SeedSequence` using the
    coordinates as spawn key, so distinct ids give independent streams and the
    same id always replays the same draws. Each call to :meth:`generator`
    returns a fresh generator positioned at the start of the stream.
    """

    seed: int
    worker: int = 0
    alternation: int = 0
    purpose: int = PURPOSE_SCHEDULE

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError(f"seed must fit in 64 unsigned bits, got {self.seed}")
        if self.worker < 0 or self.alternation < 0 or self.purpose < 0:
            raise ValueError("stream coordinates must be non-negative")

    @property
    def stream_id(self) -> tuple[int, int]:
        return (self.worker, self.alternation)

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(
            entropy=int(self.seed),
            spawn_key=(int(self.purpose), int(self.worker), int(self.alternation)),
        )
        return np.random.Generator(np.random.PCG64(ss))

    def child(self, worker: int, alternation: int, purpose: int | None = None) -> "RngStream":
        return RngStream(
            self.seed, worker, alternation, self.purpose if purpose is None else purpose
        )


def as_generator(rng) -> np.random.Generator:
    """Accept an RngStream, a Generator, an int seed or None."""
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


# ---------------------------------------------------------------------------
# Dataset
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Dataset:
    """Train split plus a held-out validation split.

    Train sample ids are the row indices of ``features``; validation rows live
    in their own index space and are never scheduled.
    """

    features: np.ndarray
    labels: np.ndarray
    val_features: np.ndarray
    val_labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        Xv = np.asarray(self.val_features, dtype=np.float64)
        yv = np.asarray(self.val_labels, dtype=np.int64)
        if X.ndim != 2 or X.shape[0] < 1:
            raise ValueError("features must be a non-empty 2-D array")
        if y.shape != (X.shape[0],):
            raise ValueError("labels must have one entry per training sample")
        if Xv.ndim != 2 or Xv.shape[1] != X.shape[1]:
            raise ValueError("val_features must be 2-D with the training feature_dim")
        if yv.shape != (Xv.shape[0],):
            raise ValueError("val_labels must have one entry per validation sample")
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")
        for name, lab in (("labels", y), ("val_labels", yv)):
            if lab.size and (lab.min() < 0 or lab.max() >= self.num_classes):
                raise ValueError(f"{name} must lie in [0, num_classes)")
        object.__setattr__(self, "features", _frozen(X))
        object.__setattr__(self, "labels", _frozen(y))
        object.__setattr__(self, "val_features", _frozen(Xv))
        object.__setattr__(self, "val_labels", _frozen(yv))
        object.__setattr__(self, "num_classes", int(self.num_classes))

    @property
    def num_samples(self) -> int:
        return self.features.shape[0]

    @property
    def num_val(self) -> int:
        return self.val_features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]


def save_dataset_csv(dataset: Dataset, path) -> None:
    """Write ``id,split,label,f0,...`` rows; ids restart at 0 for each split."""
    d = dataset.feature_dim
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "split", "label"] + [f"f{j}" for j in range(d)])
        for split, X, y in (("train", dataset.features, dataset.labels),
                            ("val", dataset.val_features, dataset.val_labels)):
            for i in range(X.shape[0]):
                w.writerow([i, split, int(y[i])] + [repr(float(v)) for v in X[i]])


def load_dataset_csv(path, num_classes: int | None = None) -> Dataset:
    rows = {"train": [], "val": []}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:3] != ["id", "split", "label"]:
            raise FormatError("expected header starting with id,split,label", path)
        for lineno, row in enumerate(reader, start=2):
            if row[1] not in rows:
                raise FormatError(f"line {lineno}: unknown split {row[1]!r}", path)
            rows[row[1]].append((int(row[0]), int(row[2]), [float(v) for v in row[3:]]))

    def unpack(items):
        items.sort(key=lambda r: r[0])
        if [r[0] for r in items] != list(range(len(items))):
            raise FormatError("ids within a split must be dense from 0", path)
        X = np.array([r[2] for r in items], dtype=np.float64).reshape(len(items), len(header) - 3)
        y = np.array([r[1] for r in items], dtype=np.int64)
        return X, y

    X, y = unpack(rows["train"])
    Xv, yv = unpack(rows["val"])
    if num_classes is None:
        num_classes = int(max(y.max(initial=0), yv.max(initial=0))) + 1
    return Dataset(X, y, Xv, yv, num_classes)


# ---------------------------------------------------------------------------
# Schedules and distributions
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SamplingSchedule:
    """An ordered sequence of equally sized mini-batches of sample ids.

    ``ids`` has shape ``(num_batches, batch_size)``; ``provenance`` holds one
    tag per batch (the alternation that produced it, or a negative constant
    such as :data:`PROVENANCE_STATIC`).
    """

    ids: np.ndarray
    provenance: np.ndarray
    dataset_size: int

    def __post_init__(self):
        ids = np.asarray(self.ids, dtype=np.int64)
        if ids.ndim != 2:
            raise ValueError("ids must be 2-D (num_batches, batch_size)")
        prov = np.asarray(self.provenance, dtype=np.int32).reshape(-1)
        if prov.shape[0] != ids.shape[0]:
            raise ValueError("provenance needs one tag per batch")
        if self.dataset_size < 1:
            raise ValueError("dataset_size must be at least 1")
        if ids.size and (ids.min() < 0 or ids.max() >= self.dataset_size):
            raise ValueError(f"sample ids must lie in [0, {self.dataset_size})")
        object.__setattr__(self, "ids", _frozen(ids))
        object.__setattr__(self, "provenance", _frozen(prov))
        object.__setattr__(self, "dataset_size", int(self.dataset_size))

    @classmethod
    def empty(cls, dataset_size: int, batch_size: int = 0) -> "SamplingSchedule":
        return cls(np.zeros((0, batch_size), dtype=np.int64), np.zeros(0, np.int32), dataset_size)

    @classmethod
    def from_flat(cls, flat, batch_size: int, dataset_size: int, tag: int = 0) -> "SamplingSchedule":
        """Chop a flat id sequence into batches, dropping a partial tail."""
        flat = np.asarray(flat, dtype=np.int64).reshape(-1)
        n = flat.size // batch_size
        return cls(flat[: n * batch_size].reshape(n, batch_size), np.full(n, tag, np.int32), dataset_size)

    @property
    def num_batches(self) -> int:
        return self.ids.shape[0]

    @property
    def batch_size(self) -> int:
        return self.ids.shape[1]

    @property
    def num_samples(self) -> int:
        return self.ids.size

    def __len__(self) -> int:
        return self.num_batches

    def __iter__(self):
        return iter(self.ids)

    def flat(self) -> np.ndarray:
        return self.ids.reshape(-1)

    def __getitem__(self, key) -> "SamplingSchedule":
        if not isinstance(key, slice):
            raise TypeError("schedules are sliced by batch ranges; index .ids for a single batch")
        return SamplingSchedule(self.ids[key], self.provenance[key], self.dataset_size)

    def split(self, num_parts: int) -> list["SamplingSchedule"]:
        if num_parts < 1 or self.num_batches % num_parts:
            raise ValueError(f"cannot split {self.num_batches} batches into {num_parts} equal parts")
        k = self.num_batches // num_parts
        return [self[i * k:(i + 1) * k] for i in range(num_parts)]

    def with_provenance(self, tag: int) -> "SamplingSchedule":
        return SamplingSchedule(self.ids, np.full(self.num_batches, tag, np.int32), self.dataset_size)

    def segments(self) -> dict[int, "SamplingSchedule"]:
        """Group batches by provenance tag, preserving order within each tag."""
        out = {}
        for tag in dict.fromkeys(self.provenance.tolist()):
            mask = self.provenance == tag
            out[tag] = SamplingSchedule(self.ids[mask], self.provenance[mask], self.dataset_size)
        return out

    def __eq__(self, other):
        if not isinstance(other, SamplingSchedule):
            return NotImplemented
        return (
            self.dataset_size == other.dataset_size
            and self.ids.shape == other.ids.shape
            and np.array_equal(self.ids, other.ids)
            and np.array_equal(self.provenance, other.provenance)
        )

    __hash__ = None

    def __repr__(self):
        return (f"SamplingSchedule(num_batches={self.num_batches}, batch_size={self.batch_size}, "
                f"dataset_size={self.dataset_size})")


def concat_schedules(parts: Sequence[SamplingSchedule], dataset_size: int | None = None) -> SamplingSchedule:
    parts = list(parts)
    if not parts:
        if dataset_size is None:
            raise ValueError("dataset_size is required to concatenate zero schedules")
        return SamplingSchedule.empty(dataset_size)
    sizes = {p.dataset_size for p in parts}
    widths = {p.batch_size for p in parts if p.num_batches}
    if len(sizes) != 1 or len(widths) > 1:
        raise ValueError("schedules must share dataset_size and batch_size to be concatenated")
    width = widths.pop() if widths else parts[0].batch_size
    ids = np.concatenate([p.ids.reshape(-1, width) for p in parts], axis=0)
    prov = np.concatenate([p.provenance for p in parts])
    return SamplingSchedule(ids, prov, sizes.pop())


@dataclass(frozen=True, eq=False)
class SamplingDistribution:
    """A multinomial distribution over training sample ids."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64).reshape(-1)
        if p.size < 1:
            raise ValueError("distribution must cover at least one sample")
        if not np.all(np.isfinite(p)) or p.min() < 0:
            raise ValueError("probabilities must be finite and non-negative")
        if abs(p.sum() - 1.0) > 1e-9:
            raise ValueError(f"probabilities must sum to 1 (got {p.sum()!r})")
        object.__setattr__(self, "probs", _frozen(p))

    @classmethod
    def uniform(cls, size: int) -> "SamplingDistribution":
        return cls(np.full(size, 1.0 / size))

    @property
    def size(self) -> int:
        return self.probs.size

    def __len__(self):
        return self.size

    def __eq__(self, other):
        if not isinstance(other, SamplingDistribution):
            return NotImplemented
        return self.probs.shape == other.probs.shape and self.probs.tobytes() == other.probs.tobytes()

    __hash__ = None


# ---------------------------------------------------------------------------
# Binary I/O
# ---------------------------------------------------------------------------


def _write_atomic(path, chunks: Iterable[bytes]) -> None:
    path = os.fspath(path)
    parent = os.path.dirname(path) or "."
    if not os.path.isdir(parent):
        raise FileNotFoundError(f"{path}: parent directory {parent!r} does not exist")
    tmp = path + ".tmp"
    try:
        with open(tmp, "wb") as fh:
            for c in chunks:
                fh.write(c)
        os.replace(tmp, path)
    except OSError as exc:
        raise OSError(f"failed to write {path}: {exc}") from exc


def _read(path) -> bytes:
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError as exc:
        raise OSError(f"failed to read {path}: {exc}") from exc


def _take(buf: bytes, offset: int, nbytes: int, what: str, path) -> bytes:
    if offset + nbytes > len(buf):
        raise FormatError(f"truncated while reading {what}: need {nbytes} bytes, "
                          f"{len(buf) - offset} left", path, offset)
    return buf[offset:offset + nbytes]


def _check_magic(magic: bytes, version: int, expected: bytes, path) -> None:
    if magic != expected:
        raise FormatError(f"bad magic {magic!r}, expected {expected!r}", path, 0)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}", path, 4)


def schedule_to_bytes(schedule: SamplingSchedule) -> bytes:
    header = _SCHEDULE_HEADER.pack(_SCHEDULE_MAGIC, FORMAT_VERSION, schedule.dataset_size,
                                   schedule.batch_size, schedule.num_batches)
    return header + schedule.provenance.astype("<i4").tobytes() + schedule.ids.astype("<i8").tobytes()


def schedule_from_bytes(buf: bytes, path=None) -> SamplingSchedule:
    hs = _SCHEDULE_HEADER.size
    magic, version, dsize, bsize, nb = _SCHEDULE_HEADER.unpack(_take(buf, 0, hs, "header", path))
    _check_magic(magic, version, _SCHEDULE_MAGIC, path)
    if dsize < 1:
        raise FormatError("dataset size in header must be at least 1", path, 6)
    off = hs
    prov = np.frombuffer(_take(buf, off, 4 * nb, "provenance tags", path), dtype="<i4")
    off += 4 * nb
    n_ids = nb * bsize
    payload = len(buf) - off
    if payload != 8 * n_ids:
        if payload < 8 * n_ids:
            raise FormatError(f"truncated id payload: header declares {nb} batches of {bsize} "
                              f"({8 * n_ids} bytes) but {payload} bytes remain", path, off)
        raise FormatError(f"id payload of {payload} bytes does not match header batch size "
                          f"{bsize} x {nb} batches", path, off)
    ids = np.frombuffer(buf, dtype="<i8", count=n_ids, offset=off).reshape(nb, bsize)
    if ids.size:
        bad = np.flatnonzero((ids.reshape(-1) < 0) | (ids.reshape(-1) >= dsize))
        if bad.size:
            raise FormatError(f"sample id {int(ids.reshape(-1)[bad[0]])} outside [0, {dsize})",
                              path, off + 8 * int(bad[0]))
    return SamplingSchedule(ids.astype(np.int64), prov.astype(np.int32), int(dsize))


def save_schedule(schedule: SamplingSchedule, path) -> None:
    _write_atomic(path, [schedule_to_bytes(schedule)])


def load_schedule(path) -> SamplingSchedule:
    return schedule_from_bytes(_read(path), path)


def distribution_to_bytes(dist: SamplingDistribution) -> bytes:
    return (_DISTRIBUTION_HEADER.pack(_DISTRIBUTION_MAGIC, FORMAT_VERSION, dist.size)
            + dist.probs.astype("<f8").tobytes())


def save_distribution(dist: SamplingDistribution, path) -> None:
    _write_atomic(path, [distribution_to_bytes(dist)])


def load_distribution(path) -> SamplingDistribution:
    buf = _read(path)
    hs = _DISTRIBUTION_HEADER.size
    magic, version, n = _DISTRIBUTION_HEADER.unpack(_take(buf, 0, hs, "header", path))
    _check_magic(magic, version, _DISTRIBUTION_MAGIC, path)
    body = _take(buf, hs, 8 * n, "probabilities", path)
    if len(buf) != hs + 8 * n:
        raise FormatError("trailing bytes after probabilities", path, hs + 8 * n)
    try:
        return SamplingDistribution(np.frombuffer(body, dtype="<f8").astype(np.float64))
    except ValueError as exc:
        raise FormatError(str(exc), path, hs) from exc


def model_to_bytes(model) -> bytes:
    arch = model.arch
    header = _MODEL_HEADER.pack(_MODEL_MAGIC, FORMAT_VERSION, arch.feature_dim, arch.hidden_dim or 0,
                                arch.num_classes, model.step, model.weights.size)
    return header + model.weights.astype("<f8").tobytes() + model.velocity.astype("<f8").tobytes()


def model_from_bytes(buf: bytes, path=None):
    from .trainer import Architecture, ModelState

    hs = _MODEL_HEADER.size
    magic, version, fdim, hdim, ncls, step, npar = _MODEL_HEADER.unpack(_take(buf, 0, hs, "header", path))
    _check_magic(magic, version, _MODEL_MAGIC, path)
    arch = Architecture(fdim, hdim or None, ncls)
    if arch.num_params != npar:
        raise FormatError(f"parameter count {npar} does not match architecture ({arch.num_params})", path, hs)
    w = np.frombuffer(_take(buf, hs, 8 * npar, "weights", path), dtype="<f8")
    v = np.frombuffer(_take(buf, hs + 8 * npar, 8 * npar, "momentum buffer", path), dtype="<f8")
    if len(buf) != hs + 16 * npar:
        raise FormatError("trailing bytes after momentum buffer", path, hs + 16 * npar)
    return ModelState(w.astype(np.float64), v.astype(np.float64), int(step), arch)


def save_model(model, path) -> None:
    _write_atomic(path, [model_to_bytes(model)])


def load_model(path):
    return model_from_bytes(_read(path), path)


# ---------------------------------------------------------------------------
# CSV exports
# ---------------------------------------------------------------------------


def sample_counts(schedule: SamplingSchedule) -> np.ndarray:
    return np.bincount(schedule.flat(), minlength=schedule.dataset_size)


def export_counts_csv(schedule: SamplingSchedule, path) -> None:
    counts = sample_counts(schedule)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "count"])
        w.writerows((i, int(c)) for i, c in enumerate(counts))


def export_distribution_csv(dist: SamplingDistribution, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "probability"])
        w.writerows((i, repr(float(p))) for i, p in enumerate(dist.probs))
