"""Sample records, CSV persistence, splitting and weak-label corruption.

A dataset is an immutable ordered collection of :class:`Sample`. Every
operation returns a new dataset. Label quality enums are bookkeeping for
evaluation; the trainer only looks at whether a label is present.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from ._fileio import write_atomic
from .errors import ParseError, SchemaError

CIR_LENGTH = 152

META_COLUMNS = (
    "id",
    "env_label",
    "env_quality",
    "err_label",
    "err_quality",
    "true_err",
    "measured_distance_m",
)
CSV_HEADER = META_COLUMNS + tuple(f"cir_{i}" for i in range(CIR_LENGTH))


class EnvQuality(str, Enum):
    CLEAN = "clean"
    FLIPPED = "flipped"
    SUBSTITUTED = "substituted"
    MISSING = "missing"


class ErrQuality(str, Enum):
    CLEAN = "clean"
    NOISY = "noisy"
    SUBSTITUTED = "substituted"
    MISSING = "missing"


ENV_MODES = ("delete", "flip", "substitute")
ERR_MODES = ("delete", "noise", "substitute")


@dataclass(frozen=True, eq=False)
class Sample:
    id: int
    cir: np.ndarray
    env_label: Optional[int] = None
    env_quality: EnvQuality = EnvQuality.MISSING
    err_label: Optional[float] = None
    err_quality: ErrQuality = ErrQuality.MISSING
    true_err: Optional[float] = None
    measured_distance_m: Optional[float] = None

    def __post_init__(self):
        cir = np.asarray(self.cir, dtype=np.float64)
        if cir.shape != (CIR_LENGTH,):
            raise SchemaError(f"sample {self.id}: cir must have {CIR_LENGTH} entries, got {cir.size}")
        if np.any(cir < 0) or not np.all(np.isfinite(cir)):
            raise ValueError(f"sample {self.id}: cir entries must be finite and nonnegative")
        cir.setflags(write=False)
        object.__setattr__(self, "cir", cir)
        object.__setattr__(self, "env_quality", EnvQuality(self.env_quality))
        object.__setattr__(self, "err_quality", ErrQuality(self.err_quality))
        if (self.env_quality is EnvQuality.MISSING) != (self.env_label is None):
            raise ValueError(f"sample {self.id}: env_quality=missing iff env_label is absent")
        if (self.err_quality is ErrQuality.MISSING) != (self.err_label is None):
            raise ValueError(f"sample {self.id}: err_quality=missing iff err_label is absent")

    @property
    def is_clean(self) -> bool:
        return self.env_quality is EnvQuality.CLEAN and self.err_quality is ErrQuality.CLEAN

    def __eq__(self, other):
        if not isinstance(other, Sample):
            return NotImplemented
        return (
            self.id == other.id
            and np.array_equal(self.cir, other.cir)
            and self.env_label == other.env_label
            and self.env_quality is other.env_quality
            and self.err_label == other.err_label
            and self.err_quality is other.err_quality
            and self.true_err == other.true_err
            and self.measured_distance_m == other.measured_distance_m
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Dataset:
    samples: tuple = ()
    k_classes: int = 2

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        if self.k_classes < 2:
            raise ValueError("k_classes must be at least 2")
        ids = [s.id for s in self.samples]
        if len(set(ids)) != len(ids):
            raise ValueError("sample ids must be unique")
        for s in self.samples:
            if s.env_label is not None and not 0 <= s.env_label < self.k_classes:
                raise ValueError(f"sample {s.id}: env_label {s.env_label} outside 0..{self.k_classes - 1}")

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.k_classes == other.k_classes and self.samples == other.samples

    __hash__ = None

    @property
    def ids(self) -> list[int]:
        return [s.id for s in self.samples]

    def cir_matrix(self) -> np.ndarray:
        """Stack all CIRs into an ``(n, 152)`` array."""
        if not self.samples:
            return np.zeros((0, CIR_LENGTH))
        return np.stack([s.cir for s in self.samples])

    def with_samples(self, samples: Iterable[Sample]) -> "Dataset":
        return Dataset(tuple(samples), self.k_classes)


# ---------------------------------------------------------------------------
# CSV persistence

def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return format(float(x), ".9g")


def save_csv(dataset: Dataset, path) -> None:
    """Write ``dataset`` to ``path`` (atomically) using the documented schema.

    Floats carry 9 significant digits; absent optional fields are empty strings.
    """

    def write(fh):
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for s in dataset.samples:
            writer.writerow(
                [
                    s.id,
                    _fmt(s.env_label),
                    s.env_quality.value,
                    _fmt(s.err_label),
                    s.err_quality.value,
                    _fmt(s.true_err),
                    _fmt(s.measured_distance_m),
                    *(format(v, ".9g") for v in s.cir),
                ]
            )

    write_atomic(Path(path), write)


def _opt(value: str, cast, row: int, name: str):
    if value == "":
        return None
    try:
        return cast(value)
    except ValueError:
        raise ParseError(row, f"bad value {value!r} for {name}") from None


def load_csv(path, k_classes: int = 2) -> Dataset:
    """Read a dataset written by :func:`save_csv` (or an adapter producing the same columns)."""
    samples = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise SchemaError("empty file: missing header row")
        if tuple(header[: len(META_COLUMNS)]) != META_COLUMNS:
            raise SchemaError(f"header must start with {','.join(META_COLUMNS)}")
        if len(header) != len(CSV_HEADER):
            raise SchemaError(f"header has {len(header) - len(META_COLUMNS)} CIR columns, expected {CIR_LENGTH}")
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(CSV_HEADER):
                raise SchemaError(
                    f"row {row_no}: expected {CIR_LENGTH} CIR columns, got {len(row) - len(META_COLUMNS)}"
                )
            try:
                cir = np.array([float(v) for v in row[len(META_COLUMNS):]])
                sample = Sample(
                    id=int(row[0]),
                    cir=cir,
                    env_label=_opt(row[1], int, row_no, "env_label"),
                    env_quality=EnvQuality(row[2]),
                    err_label=_opt(row[3], float, row_no, "err_label"),
                    err_quality=ErrQuality(row[4]),
                    true_err=_opt(row[5], float, row_no, "true_err"),
                    measured_distance_m=_opt(row[6], float, row_no, "measured_distance_m"),
                )
            except ParseError:
                raise
            except ValueError as exc:
                raise ParseError(row_no, str(exc)) from None
            samples.append(sample)
    try:
        return Dataset(tuple(samples), k_classes)
    except ValueError as exc:
        raise ParseError(0, str(exc)) from None


# ---------------------------------------------------------------------------
# splitting

def _split_at(dataset: Dataset, n_train: int, seed: int) -> tuple[Dataset, Dataset]:
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(dataset))
    train = [dataset.samples[i] for i in order[:n_train]]
    test = [dataset.samples[i] for i in order[n_train:]]
    return dataset.with_samples(train), dataset.with_samples(test)


def split(dataset: Dataset, train_fraction: float = 0.8, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Seeded shuffle; the first ``floor(train_fraction * n)`` samples go to train."""
    if len(dataset) == 0:
        raise ValueError("cannot split an empty dataset")
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie in (0, 1)")
    return _split_at(dataset, math.floor(train_fraction * len(dataset)), seed)


def split_counts(dataset: Dataset, n_train: int, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Like :func:`split` but with an explicit training-set size."""
    if not 0 <= n_train <= len(dataset):
        raise ValueError("n_train must lie in [0, len(dataset)]")
    return _split_at(dataset, n_train, seed)


# ---------------------------------------------------------------------------
# weak-label corruption

@dataclass(frozen=True)
class WeakLabelConfig:
    eta_k: float = 1.0
    eta_e: float = 1.0
    env_modes: tuple = ENV_MODES
    err_modes: tuple = ERR_MODES
    err_noise_std_m: float = 0.3
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "env_modes", tuple(self.env_modes))
        object.__setattr__(self, "err_modes", tuple(self.err_modes))
        for name in ("eta_k", "eta_e"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if not self.env_modes or set(self.env_modes) - set(ENV_MODES):
            raise ValueError(f"env_modes must be a nonempty subset of {ENV_MODES}")
        if not self.err_modes or set(self.err_modes) - set(ERR_MODES):
            raise ValueError(f"err_modes must be a nonempty subset of {ERR_MODES}")
        if "noise" in self.err_modes and not self.err_noise_std_m > 0:
            raise ValueError("err_noise_std_m must be positive when noise mode is enabled")


def n_clean(eta: float, n: int) -> int:
    """Number of samples that keep a clean label: round(eta * n), halves rounded up."""
    return int(math.floor(eta * n + 0.5))


def _pick_other(rng, n: int, i: int) -> int:
    j = int(rng.integers(n - 1))
    return j + 1 if j >= i else j


def corrupt_labels(dataset: Dataset, config: WeakLabelConfig) -> Dataset:
    """Pollute labels so that exactly ``round(eta * n)`` of each kind stay clean.

    The clean subsets for environment and error labels are drawn independently.
    Each polluted label gets a mode drawn uniformly from the enabled modes.
    ``true_err`` is never touched.
    """
    for s in dataset.samples:
        if not s.is_clean:
            raise ValueError(f"sample {s.id} already carries non-clean labels; corruption is applied once")
    n = len(dataset)
    if n == 0:
        return dataset
    rng = np.random.default_rng(config.seed)
    env_rng, err_rng = (np.random.default_rng(s) for s in rng.bit_generator.seed_seq.spawn(2))
    K = dataset.k_classes
    src = dataset.samples
    fields = [{} for _ in range(n)]

    polluted = env_rng.permutation(n)[n_clean(config.eta_k, n):]
    for i in sorted(polluted):
        mode = config.env_modes[int(env_rng.integers(len(config.env_modes)))]
        if mode == "delete":
            fields[i].update(env_label=None, env_quality=EnvQuality.MISSING)
        elif mode == "flip":
            fields[i].update(env_label=(src[i].env_label + 1) % K, env_quality=EnvQuality.FLIPPED)
        elif n > 1:
            j = _pick_other(env_rng, n, i)
            fields[i].update(env_label=src[j].env_label, env_quality=EnvQuality.SUBSTITUTED)
        else:
            fields[i].update(env_label=None, env_quality=EnvQuality.MISSING)

    polluted = err_rng.permutation(n)[n_clean(config.eta_e, n):]
    for i in sorted(polluted):
        mode = config.err_modes[int(err_rng.integers(len(config.err_modes)))]
        if mode == "delete":
            fields[i].update(err_label=None, err_quality=ErrQuality.MISSING)
        elif mode == "noise":
            noisy = src[i].err_label + float(err_rng.normal(0.0, config.err_noise_std_m))
            fields[i].update(err_label=noisy, err_quality=ErrQuality.NOISY)
        elif n > 1:
            j = _pick_other(err_rng, n, i)
            fields[i].update(err_label=src[j].err_label, err_quality=ErrQuality.SUBSTITUTED)
        else:
            fields[i].update(err_label=None, err_quality=ErrQuality.MISSING)

    return dataset.with_samples(replace(s, **f) if f else s for s, f in zip(src, fields))


# ---------------------------------------------------------------------------
# normalization

NORM_SCHEMES = ("per_sample_max", "per_sample_energy", "none")


@dataclass(frozen=True)
class NormStats:
    """Preprocessing recipe replayed at inference time.

    ``align_bin`` optionally shifts every CIR so that its leading edge (first
    bin reaching ``align_threshold`` of the peak) lands on that bin; bins
    shifted in from outside the window are zero.
    """

    scheme: str = "per_sample_max"
    align_bin: Optional[int] = None
    align_threshold: float = 0.2

    def __post_init__(self):
        if self.scheme not in NORM_SCHEMES:
            raise ValueError(f"unknown normalization scheme {self.scheme!r}")
        if self.align_bin is not None and not 0 <= self.align_bin < CIR_LENGTH:
            raise ValueError("align_bin must index into the CIR")

    def apply(self, cirs: np.ndarray) -> np.ndarray:
        """Normalize one CIR (1-D) or a stack of CIRs (2-D, one per row)."""
        x = np.array(cirs, dtype=np.float64)
        single = x.ndim == 1
        x = np.atleast_2d(x)
        if self.align_bin is not None:
            x = align_leading_edge(x, self.align_bin, self.align_threshold)
        if self.scheme == "per_sample_max":
            scale = x.max(axis=1)
        elif self.scheme == "per_sample_energy":
            scale = np.sqrt(np.sum(x * x, axis=1))
        else:
            scale = np.ones(len(x))
        scale = np.where(scale > 0, scale, 1.0)
        x = x / scale[:, None]
        return x[0] if single else x


def align_leading_edge(cirs: np.ndarray, target_bin: int, threshold: float = 0.2) -> np.ndarray:
    """Shift each row so its first bin at or above ``threshold * max`` sits at ``target_bin``."""
    cirs = np.atleast_2d(cirs)
    out = np.zeros_like(cirs)
    n = cirs.shape[1]
    peaks = cirs.max(axis=1)
    for r, (row, peak) in enumerate(zip(cirs, peaks)):
        if peak <= 0:
            out[r] = row
            continue
        edge = int(np.argmax(row >= threshold * peak))
        shift = target_bin - edge
        if shift >= 0:
            out[r, shift:] = row[: n - shift]
        else:
            out[r, : n + shift] = row[-shift:]
    return out


def normalize_cirs(dataset: Dataset, scheme: str = "per_sample_max", stats: Optional[NormStats] = None):
    """Return ``(normalized dataset, stats, flagged ids)``.

    ``flagged`` lists samples whose all-zero CIR was left unchanged.
    """
    stats = stats or NormStats(scheme)
    if len(dataset) == 0:
        return dataset, stats, []
    x = stats.apply(dataset.cir_matrix())
    flagged = [s.id for s in dataset.samples if not np.any(s.cir)]
    out = dataset.with_samples(replace(s, cir=row) for s, row in zip(dataset.samples, x))
    return out, stats, flagged


def labels_arrays(samples: Sequence[Sample], k_classes: int):
    """Training view of a batch: (env one-hot, env mask, err target, err mask)."""
    n = len(samples)
    onehot = np.zeros((n, k_classes))
    env_mask = np.zeros(n)
    target = np.zeros(n)
    err_mask = np.zeros(n)
    for i, s in enumerate(samples):
        if s.env_label is not None:
            onehot[i, s.env_label] = 1.0
            env_mask[i] = 1.0
        if s.err_label is not None:
            target[i] = s.err_label
            err_mask[i] = 1.0
    return onehot, env_mask, target, err_mask
