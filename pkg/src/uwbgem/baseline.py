"""Handcrafted waveform features with a Gaussian-kernel ridge regressor.

This is the fully supervised comparison method. Kernel ridge regression
stands in for a support vector regressor: same feature pipeline, closed-form
fit.
"""

from __future__ import annotations

import json
from dataclasses import astuple, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

from ._fileio import write_atomic
from .dataset import Dataset, NormStats
from .errors import InvalidStateError, NoSignalError

FEATURE_NAMES = ("energy", "max_amplitude", "rise_time_s", "mean_excess_delay_s", "rms_delay_spread_s", "kurtosis")


@dataclass(frozen=True)
class FeatureVector:
    energy: float
    max_amplitude: float
    rise_time_s: float
    mean_excess_delay_s: float
    rms_delay_spread_s: float
    kurtosis: float

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self))


def extract_features(cir: np.ndarray, bin_duration_s: float = 1e-9, rise_threshold: float = 0.1) -> FeatureVector:
    """Six classic features of a CIR magnitude.

    Delays are measured from bin 0. Kurtosis is the plain fourth standardized
    moment of the amplitude sequence (3 for a Gaussian), 0 when the sequence
    is constant.
    """
    r = np.asarray(cir, dtype=np.float64)
    if r.size == 0:
        raise ValueError("empty CIR")
    peak = r.max()
    if not peak > 0:
        raise NoSignalError("CIR carries no signal")
    power = r * r
    total = power.sum()
    t = np.arange(r.size) * bin_duration_s
    w = power / total
    med = float(np.sum(t * w))
    rms = float(np.sqrt(np.sum((t - med) ** 2 * w)))
    first = int(np.argmax(r >= rise_threshold * peak))
    rise = (int(np.argmax(r)) - first) * bin_duration_s
    centered = r - r.mean()
    var = np.mean(centered**2)
    kurt = float(np.mean(centered**4) / var**2) if var > 0 else 0.0
    return FeatureVector(float(total * bin_duration_s), float(peak), float(rise), med, rms, kurt)


def feature_matrix(cirs: np.ndarray, bin_duration_s: float = 1e-9) -> np.ndarray:
    return np.stack([extract_features(c, bin_duration_s).as_array() for c in np.atleast_2d(cirs)])


def gaussian_kernel(a: np.ndarray, b: np.ndarray, gamma: float) -> np.ndarray:
    sq = np.sum(a * a, axis=1)[:, None] + np.sum(b * b, axis=1)[None, :] - 2.0 * a @ b.T
    return np.exp(-gamma * np.maximum(sq, 0.0))


@dataclass
class BaselineModel:
    gamma: float
    ridge: float
    support: Optional[np.ndarray] = None  # standardized feature rows
    dual_coef: Optional[np.ndarray] = None
    feature_mean: Optional[np.ndarray] = None
    feature_std: Optional[np.ndarray] = None
    bin_duration_s: float = 1e-9
    norm_stats: NormStats = NormStats("none", 20)

    @property
    def fitted(self) -> bool:
        return self.dual_coef is not None

    def standardize(self, features: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(features) - self.feature_mean) / self.feature_std


def fit_baseline(features: np.ndarray, err_labels: np.ndarray, gamma: Optional[float] = None,
                 ridge: float = 1e-3, **model_kwargs) -> BaselineModel:
    """Solve ``(K + ridge I) a = y`` on standardized features.

    ``gamma`` defaults to ``1 / (2 * n_features)``.
    """
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    y = np.asarray(err_labels, dtype=np.float64)
    if len(x) < 2:
        raise ValueError("need at least two training samples")
    if len(y) != len(x):
        raise ValueError("one label per feature row required")
    if gamma is None:
        gamma = 1.0 / (2.0 * x.shape[1])
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    z = (x - mean) / std
    k = gaussian_kernel(z, z, gamma)
    k[np.diag_indices_from(k)] += ridge
    try:
        a = scipy.linalg.solve(k, y, assume_a="pos")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise np.linalg.LinAlgError(f"kernel system is singular: {exc}") from None
    if not np.all(np.isfinite(a)):
        raise np.linalg.LinAlgError("kernel solve produced non-finite coefficients")
    return BaselineModel(gamma, ridge, z, a, mean, std, **model_kwargs)


def predict_baseline(model: BaselineModel, features) -> np.ndarray | float:
    """Kernel expansion ``sum_i a_i k(x, x_i)``; accepts one feature vector or rows."""
    if not model.fitted:
        raise InvalidStateError("baseline model is not fitted")
    single = isinstance(features, FeatureVector) or np.ndim(features) == 1
    x = features.as_array() if isinstance(features, FeatureVector) else np.asarray(features, dtype=np.float64)
    pred = gaussian_kernel(model.standardize(x), model.support, model.gamma) @ model.dual_coef
    return float(pred[0]) if single else pred


def fit_baseline_dataset(dataset: Dataset, gamma: Optional[float] = None, ridge: float = 1e-3,
                         bin_duration_s: float = 1e-9, norm_stats: NormStats = NormStats("none", 20)) -> BaselineModel:
    """Fit on the clean error labels of ``dataset`` (weak labels are skipped)."""
    rows = [s for s in dataset.samples if s.err_quality.value == "clean"]
    cirs = norm_stats.apply(np.stack([s.cir for s in rows])) if rows else np.zeros((0, 0))
    feats = feature_matrix(cirs, bin_duration_s) if rows else np.zeros((0, len(FEATURE_NAMES)))
    return fit_baseline(feats, [s.err_label for s in rows], gamma, ridge,
                        bin_duration_s=bin_duration_s, norm_stats=norm_stats)


def predict_cirs(model: BaselineModel, cirs: np.ndarray) -> np.ndarray:
    """Error estimates for raw CIRs, one per row."""
    x = model.norm_stats.apply(np.atleast_2d(cirs))
    return predict_baseline(model, feature_matrix(x, model.bin_duration_s))


def save_baseline(model: BaselineModel, path) -> None:
    if not model.fitted:
        raise InvalidStateError("baseline model is not fitted")
    ns = model.norm_stats
    doc = {
        "format": "uwbgem.baseline/1",
        "gamma": model.gamma,
        "ridge": model.ridge,
        "bin_duration_s": model.bin_duration_s,
        "norm_stats": {"scheme": ns.scheme, "align_bin": ns.align_bin, "align_threshold": ns.align_threshold},
        "feature_mean": model.feature_mean.tolist(),
        "feature_std": model.feature_std.tolist(),
        "support": model.support.tolist(),
        "dual_coef": model.dual_coef.tolist(),
    }
    write_atomic(path, lambda fh: json.dump(doc, fh))


def load_baseline(path) -> BaselineModel:
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    if d.get("format") != "uwbgem.baseline/1":
        raise ValueError("not a baseline checkpoint")
    support = np.array(d["support"], dtype=np.float64)
    coef = np.array(d["dual_coef"], dtype=np.float64)
    if len(support) != len(coef):
        raise ValueError("checkpoint has mismatched support rows and coefficients")
    return BaselineModel(
        d["gamma"], d["ridge"], support, coef,
        np.array(d["feature_mean"]), np.array(d["feature_std"]), d["bin_duration_s"], NormStats(**d["norm_stats"]),
    )
