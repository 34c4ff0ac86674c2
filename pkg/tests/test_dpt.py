import numpy as np
import pytest

from pt_estimation.data import GroundTruthEntry, GroundTruthTable
from pt_estimation.dpt import (
    DifferentialSeries,
    bootstrap_ci,
    differentials,
    directional_accuracy,
    estimator_means,
    fisher_z_test,
    pearson,
    run_dpt,
)
from pt_estimation.errors import UndefinedCorrelationError


def _series(delta_star, delta_hat) -> DifferentialSeries:
    ids = tuple(f"x{i}" for i in range(len(delta_star)))
    return DifferentialSeries(
        "women", "men", ids, np.asarray(delta_star, float), np.asarray(delta_hat, float)
    )


def test_differentials_use_items_present_everywhere():
    truth = GroundTruthTable(
        {
            ("x1", "g1"): GroundTruthEntry(0.8, 5),
            ("x1", "g2"): GroundTruthEntry(0.2, 5),
            ("x2", "g1"): GroundTruthEntry(0.5, 5),
            ("x2", "g2"): GroundTruthEntry(0.6, 5),
            ("x3", "g1"): GroundTruthEntry(0.1, 5),
            ("x3", "g2"): GroundTruthEntry(0.1, 5),
            ("x4", "g1"): GroundTruthEntry(0.9, 5),
        }
    )
    pools = {
        ("x1", "g1", "llm"): [0.7, 0.9],
        ("x1", "g2", "llm"): [0.3],
        ("x2", "g1", "llm"): [0.4],
        ("x2", "g2", "llm"): [0.5],
        ("x3", "g1", "llm"): [0.2],
        ("x4", "g1", "llm"): [0.9],
        ("x4", "g2", "llm"): [0.1],
        ("x1", "g1", "other"): [0.0],
    }
    series = differentials(truth, estimator_means(pools, "llm"), "g1", "g2")
    assert series.item_ids == ("x1", "x2")
    np.testing.assert_allclose(series.delta_star, [0.6, -0.1])
    np.testing.assert_allclose(series.delta_hat, [0.5, -0.1])
    assert directional_accuracy(series) == 1.0


def test_identical_series_are_perfectly_aligned():
    d = [0.3, -0.2, 0.1, 0.05, -0.4]
    s = _series(d, d)
    assert pearson(s) == pytest.approx(1.0)
    assert directional_accuracy(s) == 1.0


def test_pearson_matches_numpy():
    rng = np.random.default_rng(0)
    x = rng.normal(size=40)
    y = 0.5 * x + rng.normal(size=40)
    assert pearson(_series(x, y)) == pytest.approx(np.corrcoef(x, y)[0, 1], abs=1e-12)


def test_pearson_three_point_example():
    # 5 / sqrt(2 * 114 / 9)
    assert pearson(_series([1, 2, 3], [2, 4, 7])) == pytest.approx(0.9934, abs=1e-4)


def test_constant_or_short_series_have_no_correlation():
    flat = _series([0.1, -0.2, 0.3, 0.0], [0.2, 0.2, 0.2, 0.2])
    with pytest.raises(UndefinedCorrelationError):
        pearson(flat)
    with pytest.raises(UndefinedCorrelationError):
        pearson(_series([0.1, 0.2], [0.1, 0.3]))

    report = run_dpt(flat, "flat", B=100)
    assert report.rho is None
    assert report.ci_low is None
    assert report.error is not None
    assert report.directional_accuracy == 0.5


def test_directional_accuracy_with_zero_tolerance():
    s = _series([0.3, -0.2, 0.0, 0.01], [0.1, 0.2, 0.005, -0.004])
    assert directional_accuracy(s) == 0.25
    # |v| <= 0.01 counts as no disagreement
    assert directional_accuracy(s, zero_tol=0.01) == 0.75


def test_fisher_z_examples():
    greater = fisher_z_test(0.312, 120, 0.053, 120, sided="greater")
    assert greater.z_stat == pytest.approx(2.063, abs=1e-3)
    assert greater.p_value == pytest.approx(0.020, abs=1e-3)

    two = fisher_z_test(0.312, 120, 0.053, 120)
    assert two.p_value == pytest.approx(0.039, abs=1e-3)

    less = fisher_z_test(0.312, 120, 0.053, 120, sided="less")
    assert less.p_value == pytest.approx(1.0 - greater.p_value)

    with pytest.raises(ValueError):
        fisher_z_test(0.3, 3, 0.1, 50)
    with pytest.raises(UndefinedCorrelationError):
        fisher_z_test(1.0, 50, 0.1, 50)


def test_bootstrap_ci_contains_rho_and_is_deterministic():
    rng = np.random.default_rng(1)
    x = rng.normal(size=30)
    s = _series(x, x + rng.normal(size=30))
    rho = pearson(s)
    low, high, _ = bootstrap_ci(s, B=500, seed=4)
    assert low <= rho <= high
    assert bootstrap_ci(s, B=500, seed=4) == (low, high, _)
    with pytest.raises(ValueError):
        bootstrap_ci(s, B=0)


def test_bootstrap_ci_redraws_constant_resamples():
    s = _series([1.0, 0.0, 0.0, 0.0, 0.0, 0.0], [0.5, 0.1, 0.0, 0.2, 0.1, 0.0])
    low, high, redrawn = bootstrap_ci(s, B=200, seed=0)
    # about a third of resamples miss x0, leaving delta_star constant
    assert redrawn > 0
    assert -1.0 <= low <= high <= 1.0


@pytest.mark.slow
def test_bootstrap_ci_coverage():
    rho_true = 0.3
    cov = np.array([[1.0, rho_true], [rho_true, 1.0]])
    rng = np.random.default_rng(2)
    trials = 2000
    hits = 0
    for t in range(trials):
        xy = rng.multivariate_normal(np.zeros(2), cov, size=120)
        low, high, _ = bootstrap_ci(_series(xy[:, 0], xy[:, 1]), B=2000, seed=t)
        hits += low <= rho_true <= high
    assert hits / trials == pytest.approx(0.95, abs=0.02)


def test_run_dpt_report():
    rng = np.random.default_rng(3)
    x = rng.normal(size=25)
    s = _series(x, 0.8 * x + 0.1 * rng.normal(size=25))
    report = run_dpt(s, "llm", B=300, seed=1)
    assert report.error is None
    assert report.rho == pytest.approx(pearson(s))
    assert report.ci_low <= report.rho <= report.ci_high
    assert report.n_items == 25
    assert report.sigma_delta_star == pytest.approx(float(np.std(x, ddof=1)))
    assert report.to_dict()["estimator_id"] == "llm"
