import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uwbgem import evaluation as ev
from uwbgem import gem
from uwbgem.dataset import Dataset, Sample
from uwbgem.signal_model import GeneratorConfig, generate_dataset


def test_rmse_mae_example():
    assert ev.rmse([0.3, -0.4]) == pytest.approx(math.sqrt(0.125), rel=1e-15)
    assert ev.rmse([0.3, -0.4]) == pytest.approx(0.353553, abs=1e-6)
    assert ev.mae([0.3, -0.4]) == pytest.approx(0.35, rel=1e-15)


def test_rmse_degenerate():
    assert ev.rmse([0.0, 0.0]) == 0.0
    assert ev.rmse([-0.2]) == pytest.approx(0.2)
    assert ev.mae([-0.2]) == pytest.approx(0.2)
    with pytest.raises(ValueError):
        ev.rmse([])
    with pytest.raises(ValueError):
        ev.mae([])


def test_cdf_examples():
    assert ev.residual_cdf([0.1]) == [(0.1, 1.0)]
    assert ev.residual_cdf([0.1, -0.2]) == [(0.1, 0.5), (0.2, 1.0)]
    assert ev.residual_cdf([0.1, -0.1, 0.3]) == [(0.1, pytest.approx(2 / 3)), (0.3, 1.0)]
    with pytest.raises(ValueError):
        ev.residual_cdf([])


def test_cdf_at():
    cdf = ev.residual_cdf([0.1, 0.2, 0.3, 0.4])
    assert ev.cdf_at(cdf, 0.05) == 0.0
    assert ev.cdf_at(cdf, 0.2) == 0.5
    assert ev.cdf_at(cdf, 10.0) == 1.0


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-100, 100, allow_nan=False), min_size=1, max_size=50))
def test_rmse_dominates_mae_and_cdf_is_monotone(res):
    assert ev.rmse(res) >= ev.mae(res) - 1e-12
    cdf = ev.residual_cdf(res)
    mags = [m for m, _ in cdf]
    probs = [p for _, p in cdf]
    assert mags == sorted(mags)
    assert all(a <= b for a, b in zip(probs, probs[1:]))
    assert probs[-1] == 1.0


@pytest.fixture(scope="module")
def tiny():
    return generate_dataset(GeneratorConfig(n_samples=60, seed=3))


def test_residuals_for_reference_methods(tiny):
    truth = np.array([s.true_err for s in tiny.samples])
    np.testing.assert_array_equal(ev.residuals(ev.UNMITIGATED, tiny), truth)
    assert np.all(ev.residuals(lambda c: truth.copy(), tiny) == 0.0)
    np.testing.assert_array_equal(ev.residuals(gem.init_model(seed=0), tiny), -truth)


def test_residuals_need_ground_truth(tiny):
    s = tiny.samples[0]
    bare = Sample(s.id, s.cir, env_label=None, env_quality="missing", err_label=None, err_quality="missing")
    with pytest.raises(ValueError):
        ev.residuals(ev.UNMITIGATED, Dataset((bare,)))


def test_benchmark_inference_positive(tiny):
    assert ev.benchmark_inference(gem.init_model(seed=0), tiny.samples[:5]) > 0


def test_sweep_is_deterministic_and_shares_reference(tiny):
    train, test = Dataset(tiny.samples[:40]), Dataset(tiny.samples[40:])
    cfg = gem.TrainConfig(epochs=2, batch_size=16)
    kw = dict(train_config=cfg, seeds=(0, 1), hidden=(8,), timing_samples=0)
    a = ev.sweep_supervision(train, test, [1.0, 0.5], [0.5], **kw)
    b = ev.sweep_supervision(train, test, [1.0, 0.5], [0.5], **kw)
    assert [(r.method, r.eta_k, r.eta_e, r.rmse_m) for r in a.rows] == [
        (r.method, r.eta_k, r.eta_e, r.rmse_m) for r in b.rows]
    assert a.row(ev.UNMITIGATED, 1.0, 0.5).rmse_m == a.row(ev.UNMITIGATED, 0.5, 0.5).rmse_m
    assert len(a.per_seed["gem_k1_e0.5"]) == 2
    assert a.row("gem", 1.0, 0.5).rmse_m == pytest.approx(np.mean(a.per_seed["gem_k1_e0.5"]))


def test_sweep_records_failed_cells(tiny):
    train, test = Dataset(tiny.samples[:40]), Dataset(tiny.samples[40:])
    rep = ev.sweep_supervision(train, test, [1.5], [1.0], gem.TrainConfig(epochs=1), hidden=(4,), timing_samples=0)
    row = rep.row("gem", 1.5, 1.0)
    assert row.failed and math.isnan(row.rmse_m)
    assert rep.failures and rep.failures[0][:2] == (1.5, 1.0)


def test_report_save_format(tmp_path, tiny):
    rep = ev.evaluate({"gem": gem.init_model(seed=0)}, tiny, timing_samples=3)
    rep.save(tmp_path)
    lines = (tmp_path / "report.csv").read_text().splitlines()
    assert lines[0] == "method,eta_k,eta_e,rmse_m,mae_m,time_ms"
    assert [l.split(",")[0] for l in lines[1:]] == ["unmitigated", "gem"]
    rows = ev.load_report(tmp_path)
    assert float(rows[0]["rmse_m"]) == pytest.approx(rep.rows[0].rmse_m, rel=1e-8)
    cdf_lines = (tmp_path / "cdf_gem.csv").read_text().splitlines()
    assert cdf_lines[0] == "abs_residual_m,cdf"
    assert float(cdf_lines[-1].split(",")[1]) == 1.0
