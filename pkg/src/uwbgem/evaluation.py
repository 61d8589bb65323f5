"""Residual metrics, empirical CDFs and supervision-rate sweeps."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np

from . import baseline as bl
from . import gem
from ._fileio import write_atomic
from .dataset import Dataset, WeakLabelConfig, corrupt_labels

log = logging.getLogger(__name__)

UNMITIGATED = "unmitigated"
Method = Union[str, gem.GemModel, bl.BaselineModel, Callable[[np.ndarray], np.ndarray]]


def _true_errors(test_set: Dataset) -> np.ndarray:
    out = []
    for s in test_set.samples:
        if s.true_err is None:
            raise ValueError(f"sample {s.id} has no ground-truth ranging error")
        out.append(s.true_err)
    return np.array(out, dtype=np.float64)


def predict(method: Method, cirs: np.ndarray) -> np.ndarray:
    """Ranging-error estimates from any supported method."""
    if isinstance(method, gem.GemModel):
        return gem.predict_errors(method, cirs)
    if isinstance(method, bl.BaselineModel):
        return bl.predict_cirs(method, cirs)
    if callable(method):
        return np.asarray(method(cirs), dtype=np.float64)
    raise TypeError(f"unsupported method {method!r}")


def residuals(method: Method, test_set: Dataset) -> np.ndarray:
    """Per-sample residuals: ``true_err`` when unmitigated, else ``estimate - true_err``."""
    truth = _true_errors(test_set)
    if isinstance(method, str):
        if method != UNMITIGATED:
            raise ValueError(f"unknown method name {method!r}")
        return truth
    if len(test_set) == 0:
        return truth
    return predict(method, test_set.cir_matrix()) - truth


def rmse(res: Sequence[float]) -> float:
    r = np.asarray(res, dtype=np.float64)
    if r.size == 0:
        raise ValueError("rmse of an empty residual vector")
    return float(np.sqrt(np.mean(r * r)))


def mae(res: Sequence[float]) -> float:
    r = np.asarray(res, dtype=np.float64)
    if r.size == 0:
        raise ValueError("mae of an empty residual vector")
    return float(np.mean(np.abs(r)))


def residual_cdf(res: Sequence[float]) -> list[tuple[float, float]]:
    """Empirical CDF of ``|residual|`` at each distinct magnitude."""
    r = np.abs(np.asarray(res, dtype=np.float64))
    if r.size == 0:
        raise ValueError("CDF of an empty residual vector")
    values, counts = np.unique(r, return_counts=True)
    cdf = np.cumsum(counts) / r.size
    cdf[-1] = 1.0
    return [(float(v), float(c)) for v, c in zip(values, cdf)]


def cdf_at(cdf: Sequence[tuple[float, float]], x: float) -> float:
    """Evaluate a step CDF from :func:`residual_cdf` at magnitude ``x``."""
    value = 0.0
    for mag, p in cdf:
        if mag > x:
            break
        value = p
    return value


def benchmark_inference(model: Method, samples: Sequence, repetitions: int = 1) -> float:
    """Mean wall-clock milliseconds to mitigate one sample."""
    if repetitions < 1:
        raise ValueError("repetitions must be at least 1")
    samples = list(samples)
    if not samples:
        raise ValueError("no samples to time")
    start = time.perf_counter()
    for _ in range(repetitions):
        for s in samples:
            d_m = s.measured_distance_m or 0.0
            if isinstance(model, gem.GemModel):
                gem.mitigate(model, s.cir, d_m)
            else:
                d_m - float(predict(model, s.cir[None, :])[0])
    elapsed = time.perf_counter() - start
    return max(elapsed * 1e3 / (repetitions * len(samples)), 1e-9)


# ---------------------------------------------------------------------------
# reports

@dataclass
class ReportRow:
    method: str
    eta_k: Optional[float]
    eta_e: Optional[float]
    rmse_m: float
    mae_m: float
    time_ms: Optional[float] = None
    n_seeds: int = 1
    failed: bool = False

    @property
    def tag(self) -> str:
        if self.eta_k is None:
            return self.method
        return f"{self.method}_k{self.eta_k:g}_e{self.eta_e:g}"


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)
    cdfs: dict = field(default_factory=dict)
    per_seed: dict = field(default_factory=dict)  # tag -> list of per-seed rmse
    failures: list = field(default_factory=list)

    def row(self, method: str, eta_k=None, eta_e=None) -> ReportRow:
        for r in self.rows:
            if r.method == method and r.eta_k == eta_k and r.eta_e == eta_e:
                return r
        raise KeyError((method, eta_k, eta_e))

    def save(self, report_dir) -> None:
        """``report.csv`` plus one ``cdf_<tag>.csv`` per row that has a CDF."""
        out = Path(report_dir)
        out.mkdir(parents=True, exist_ok=True)

        def write(fh):
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["method", "eta_k", "eta_e", "rmse_m", "mae_m", "time_ms"])
            for r in self.rows:
                w.writerow([
                    r.method,
                    "" if r.eta_k is None else f"{r.eta_k:g}",
                    "" if r.eta_e is None else f"{r.eta_e:g}",
                    _num(r.rmse_m),
                    _num(r.mae_m),
                    "" if r.time_ms is None else f"{r.time_ms:.6g}",
                ])

        write_atomic(out / "report.csv", write)
        for tag, cdf in self.cdfs.items():
            write_atomic(out / f"cdf_{tag}.csv", lambda fh, cdf=cdf: _write_cdf(fh, cdf))


def _num(x: float) -> str:
    return "nan" if x is None or math.isnan(x) else format(x, ".9g")


def _write_cdf(fh, cdf) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["abs_residual_m", "cdf"])
    for mag, p in cdf:
        w.writerow([format(mag, ".9g"), format(p, ".9g")])


def load_report(report_dir) -> list[dict]:
    with open(Path(report_dir) / "report.csv", newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _row(method, res, eta_k=None, eta_e=None, time_ms=None, n_seeds=1) -> ReportRow:
    return ReportRow(method, eta_k, eta_e, rmse(res), mae(res), time_ms, n_seeds)


def evaluate(methods: dict, test_set: Dataset, timing_samples: int = 0) -> EvalReport:
    """Score named methods (plus the unmitigated reference) on one test set."""
    report = EvalReport()
    named = {UNMITIGATED: UNMITIGATED, **methods}
    for name, method in named.items():
        res = residuals(method, test_set)
        t = None
        if timing_samples and not isinstance(method, str):
            t = benchmark_inference(method, test_set.samples[:timing_samples])
        row = _row(name, res, time_ms=t)
        report.rows.append(row)
        report.cdfs[row.tag] = residual_cdf(res)
    return report


def sweep_supervision(train_set: Dataset, test_set: Dataset, eta_k: Sequence[float], eta_e: Sequence[float],
                      train_config: gem.TrainConfig = gem.TrainConfig(), seeds: Sequence[int] = (0,),
                      hidden: Sequence[int] = (64, 32), weak_kwargs: Optional[dict] = None,
                      baseline_model: Optional[bl.BaselineModel] = None, timing_samples: int = 50,
                      cells: Optional[Sequence[tuple]] = None) -> EvalReport:
    """Corrupt, train and score GEM for every (eta_k, eta_e, seed).

    Without ``cells`` the grid is the cross product of ``eta_k`` and
    ``eta_e``; pass a single frozen value in one list to mirror a one-rate
    sweep. Each grid cell also gets an unmitigated and a fully supervised
    baseline row. Metrics are means over seeds; the CDF pools residuals of
    all seeds. A cell whose training raises is recorded as failed.
    """
    if cells is None:
        if not eta_k or not eta_e:
            raise ValueError("eta lists must be non-empty")
        cells = [(k, e) for k in eta_k for e in eta_e]
    if not seeds:
        raise ValueError("need at least one seed")
    weak_kwargs = weak_kwargs or {}
    truth_res = residuals(UNMITIGATED, test_set)
    if baseline_model is None:
        baseline_model = bl.fit_baseline_dataset(train_set)
    base_res = residuals(baseline_model, test_set)
    base_time = benchmark_inference(baseline_model, test_set.samples[:timing_samples]) if timing_samples else None

    report = EvalReport()
    for k, e in cells:
        k, e = float(k), float(e)
        for name, res, t in ((UNMITIGATED, truth_res, None), ("baseline", base_res, base_time)):
            row = _row(name, res, k, e, t)
            report.rows.append(row)
            report.cdfs[row.tag] = residual_cdf(res)

        seed_rmse, seed_mae, pooled, times = [], [], [], []
        for seed in seeds:
            try:
                weak = corrupt_labels(train_set, WeakLabelConfig(k, e, seed=seed, **weak_kwargs))
                model = gem.init_model(train_set.k_classes, hidden, seed=seed)
                cfg = gem.TrainConfig(**{**train_config.__dict__, "seed": seed})
                model, _ = gem.train(model, weak, cfg)
                res = residuals(model, test_set)
            except Exception as exc:  # noqa: BLE001 - failed cells are reported, not fatal
                log.warning("cell eta_k=%g eta_e=%g seed=%d failed: %s", k, e, seed, exc)
                report.failures.append((k, e, seed, repr(exc)))
                continue
            seed_rmse.append(rmse(res))
            seed_mae.append(mae(res))
            pooled.append(res)
            if timing_samples:
                times.append(benchmark_inference(model, test_set.samples[:timing_samples]))
        if not seed_rmse:
            report.rows.append(ReportRow("gem", k, e, float("nan"), float("nan"), None, 0, failed=True))
            continue
        row = ReportRow("gem", k, e, float(np.mean(seed_rmse)), float(np.mean(seed_mae)),
                        float(np.mean(times)) if times else None, len(seed_rmse))
        report.rows.append(row)
        report.per_seed[row.tag] = seed_rmse
        report.cdfs[row.tag] = residual_cdf(np.concatenate(pooled))
    return report
