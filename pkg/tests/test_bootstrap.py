import json
import tempfile
from pathlib import Path

import numpy as np
import pytest

from pt_estimation import bootstrap
from pt_estimation.annotator import AnnotatorSpec, sample_panels
from pt_estimation.bootstrap import (
    bootstrap_metrics,
    budget_curve,
    fit_spec,
    mix_estimators,
)
from pt_estimation.data import (
    GroundTruthEntry,
    GroundTruthTable,
    PredictionRecord,
    PredictionTable,
)
from pt_estimation.errors import (
    InsufficientPairsError,
    MissingGroundTruthError,
    UndefinedCorrelationError,
)


def _truth(**f_stars: float) -> GroundTruthTable:
    return GroundTruthTable(
        {(item, "g"): GroundTruthEntry(f, 10) for item, f in f_stars.items()}
    )


def _table(pools):
    return PredictionTable.from_records(
        PredictionRecord(item, "g", estimator, i, float(v))
        for (item, estimator), values in pools.items()
        for i, v in enumerate(values)
    )


def test_exhaustive_two_point_pool():
    report = bootstrap_metrics({("x1", "g", "llm"): [0.5, 0.9]}, _truth(x1=0.75), k=1)
    (item,) = report.items
    assert item.exact
    assert item.mse == pytest.approx(0.0425)
    assert item.bias == pytest.approx(-0.05)
    assert item.variance == pytest.approx(0.04)
    assert item.mse_se == 0.0


def test_singleton_and_perfect_pools():
    truth = _truth(x1=0.3, x2=0.6)
    report = bootstrap_metrics(
        {("x1", "g", "llm"): [0.5], ("x2", "g", "llm"): [0.6, 0.6, 0.6]}, truth, k=3
    )
    by_item = {it.item_id: it for it in report.items}
    assert by_item["x1"].variance == pytest.approx(0.0, abs=1e-15)
    assert by_item["x1"].mse == pytest.approx(0.04)
    assert by_item["x2"].mse == pytest.approx(0.0, abs=1e-15)


def test_sampled_mode_keeps_the_identity():
    rng = np.random.default_rng(0)
    pools = {("x1", "g", "llm"): rng.uniform(0, 1, size=50)}
    report = bootstrap_metrics(pools, _truth(x1=0.4), k=5, B=500, exhaustive_limit=0)
    (item,) = report.items
    assert not item.exact
    assert item.mse == pytest.approx(item.bias**2 + item.variance, rel=1e-9)
    assert item.mse_se > 0.0


def test_sampled_mode_agrees_with_enumeration():
    pools = {("x1", "g", "llm"): [0.1, 0.35, 0.5, 0.8, 0.95]}
    truth = _truth(x1=0.45)
    (exact,) = bootstrap_metrics(pools, truth, k=3).items
    (sampled,) = bootstrap_metrics(
        pools, truth, k=3, B=100_000, seed=11, exhaustive_limit=0
    ).items
    assert exact.exact and not sampled.exact
    assert abs(sampled.mse - exact.mse) < 3.0 * sampled.mse_se


def test_resampling_in_row_blocks(monkeypatch):
    monkeypatch.setattr(bootstrap, "RESAMPLE_CHUNK", 16)
    pools = {("x1", "g", "llm"): [0.0, 1.0]}
    (item,) = bootstrap_metrics(pools, _truth(x1=0.5), k=50, B=4000, seed=5).items
    assert not item.exact
    # mean of 50 fair coin flips: MSE = 0.25 / 50
    assert abs(item.mse - 0.005) < 4.0 * item.mse_se


def test_very_large_budget_is_resampled():
    pools = {("x1", "g", "llm"): [0.0, 1.0]}
    (item,) = bootstrap_metrics(pools, _truth(x1=0.5), k=1_000_000, B=3).items
    assert not item.exact
    assert item.mse < 1e-5
    (single,) = bootstrap_metrics(
        {("x1", "g", "llm"): [0.3]}, _truth(x1=0.5), k=1_000_000, B=3
    ).items
    assert single.exact
    assert single.mse == pytest.approx(0.04)


@pytest.mark.parametrize("k", [1, 2, 3, 4, 6])
def test_enumerated_variance_shrinks_as_one_over_k(k):
    report = bootstrap_metrics({("x1", "g", "llm"): [0.45, 0.65]}, _truth(x1=0.5), k=k)
    (agg,) = report.aggregates
    assert agg.mean_sq_bias == pytest.approx(0.0025)
    assert agg.mean_variance == pytest.approx(0.01 / k)
    assert agg.mean_mse == pytest.approx(0.0025 + 0.01 / k)


def test_single_budget_curve_matches_bootstrap_metrics():
    rng = np.random.default_rng(1)
    pools = {(f"x{i}", "g", "llm"): rng.uniform(0, 1, size=40) for i in range(3)}
    truth = _truth(x0=0.2, x1=0.5, x2=0.9)
    curve = budget_curve(pools, truth, k_range=[4], B=200, seed=7)
    single = bootstrap_metrics(pools, truth, k=4, B=200, seed=7)
    assert curve.items == single.items
    assert curve.aggregates == single.aggregates


def test_input_errors():
    truth = _truth(x1=0.5)
    pools = {("x1", "g", "llm"): [0.5]}
    with pytest.raises(ValueError):
        bootstrap_metrics(pools, truth, k=1, B=0)
    with pytest.raises(ValueError):
        bootstrap_metrics(pools, truth, k=0)
    with pytest.raises(MissingGroundTruthError):
        bootstrap_metrics({("x9", "g", "llm"): [0.5]}, truth, k=1)
    with pytest.raises(ValueError, match="empty"):
        bootstrap_metrics({("x1", "g", "llm"): []}, truth, k=1)
    with pytest.raises(ValueError):
        budget_curve(pools, truth, k_range=[])


def test_same_seed_gives_identical_reports():
    rng = np.random.default_rng(2)
    pools = {("x1", "g", "llm"): rng.uniform(0, 1, size=30)}
    truth = _truth(x1=0.5)
    a = budget_curve(pools, truth, k_range=range(1, 6), B=100, seed=3)
    b = budget_curve(pools, truth, k_range=range(1, 6), B=100, seed=3)
    assert a.to_dict() == b.to_dict()


def test_flat_and_exact_curves_raise_no_flags():
    truth = _truth(x1=0.5, x2=0.5)
    pools = {
        ("x1", "g", "flat"): [0.7] * 20,
        ("x2", "g", "flat"): [0.4] * 20,
        ("x1", "g", "spread"): [0.1, 0.6, 0.9],
    }
    report = budget_curve(pools, truth, k_range=range(1, 6), B=50, seed=0)
    assert report.flags == []
    spread = [a.mean_mse for a in report.curve("g", "spread")]
    assert all(a > b for a, b in zip(spread, spread[1:]))


def test_report_outputs():
    report = budget_curve(
        {("x1", "g", "llm"): [0.5, 0.9]}, _truth(x1=0.75), k_range=[1, 2]
    )
    with tempfile.TemporaryDirectory() as tmp_dir:
        report.write_json(str(Path(tmp_dir) / "metrics.json"))
        loaded = json.loads((Path(tmp_dir) / "metrics.json").read_text())
        items_path = Path(tmp_dir) / "items.csv"
        report.write_csv(str(items_path), str(Path(tmp_dir) / "aggregates.csv"))
        n_lines = len(items_path.read_text().splitlines())

    assert loaded["aggregates"]["g"]["llm"]["1"]["mean_mse"] == pytest.approx(0.0425)
    assert loaded["aggregates"]["g"]["llm"]["2"]["n_items"] == 1
    assert n_lines == 3


def test_mixing_a_single_member_reproduces_it():
    preds = _table({("x1", "llm"): [0.2, 0.35, 0.9]})
    mixed = mix_estimators(preds, ["llm"], name="same")
    np.testing.assert_allclose(
        mixed.table.pools()[("x1", "g", "same")], preds.pools()[("x1", "g", "llm")]
    )


def test_mix_averages_aligned_samples_and_reports_truncation():
    preds = _table(
        {
            ("x1", "a"): [0.2, 0.2, 0.2],
            ("x1", "b"): [0.6, 0.6],
            ("x2", "a"): [0.1],
        }
    )
    mixed = mix_estimators(preds, ["a", "b"])
    assert mixed.estimator_id == "mix(a+b)"
    np.testing.assert_allclose(mixed.table.pools()[("x1", "g", "mix(a+b)")], [0.4, 0.4])
    assert mixed.truncations == [
        {"item_id": "x1", "group_id": "g", "sizes": {"a": 3, "b": 2}, "used": 2}
    ]
    assert mixed.skipped == [("x2", "g")]

    weighted = mix_estimators(preds, ["a", "b"], weights={"a": 3.0, "b": 1.0})
    key = ("x1", "g", weighted.estimator_id)
    np.testing.assert_allclose(weighted.table.pools()[key], [0.3, 0.3])

    with pytest.raises(ValueError):
        mix_estimators(preds, ["a", "zzz"])
    with pytest.raises(ValueError):
        mix_estimators(preds, ["a", "b"], weights={"a": -1.0, "b": 1.0})


def test_mix_is_never_worse_than_its_members_on_average_at_k1():
    rng = np.random.default_rng(4)
    pools = {}
    f_stars = {}
    for i in range(20):
        pools[(f"x{i}", "a")] = rng.uniform(0, 1, size=8)
        pools[(f"x{i}", "b")] = rng.uniform(0, 1, size=8)
        f_stars[f"x{i}"] = float(rng.uniform(0, 1))
    preds = _table(pools)
    mixed = mix_estimators(preds, ["a", "b"])
    truth = _truth(**f_stars)
    report = bootstrap_metrics(preds.merged(mixed.table), truth, k=1)
    mse = {a.estimator_id: a.mean_mse for a in report.aggregates}
    assert mse["mix(a+b)"] <= (mse["a"] + mse["b"]) / 2 + 1e-12


def _fit_once(seed: int, a: AnnotatorSpec, n_items: int = 500, k: int = 8):
    rng = np.random.default_rng(seed)
    f_stars = rng.uniform(0.2, 0.8, size=n_items)
    panels = sample_panels(a, 0.0, k, n_items, rng) + f_stars[:, None]
    pools = {(f"x{i}", "g", "llm"): panels[i] for i in range(n_items)}
    truth = GroundTruthTable(
        {(f"x{i}", "g"): GroundTruthEntry(float(f), 10) for i, f in enumerate(f_stars)}
    )
    return fit_spec(pools, truth)[("g", "llm")]


def test_fit_spec_recovers_known_moments():
    a = AnnotatorSpec.from_moments(mu=0.05, v=0.04, gamma=0.5)
    fits = [_fit_once(seed, a) for seed in range(100)]
    # mu_hat carries each panel's shared draw, sd about 0.0067 here
    mu_ok = sum(abs(f.mu_hat - 0.05) <= 0.02 for f in fits)
    v_ok = sum(abs(f.v_hat - 0.04) <= 0.005 for f in fits)
    gamma_ok = sum(
        f.gamma_hat is not None and abs(f.gamma_hat - 0.5) <= 0.05 for f in fits
    )
    assert mu_ok >= 95
    assert v_ok >= 95
    assert gamma_ok >= 95
    assert fits[0].n_items == 500
    assert fits[0].n_pair_items == 500
    assert not fits[0].gamma_flagged
    assert fits[0].to_annotator_spec().gamma == pytest.approx(fits[0].gamma_hat)


def test_fit_spec_degenerate_pools():
    truth = _truth(x1=0.5, x2=0.5)
    constant = {("x1", "g", "llm"): [0.5, 0.5], ("x2", "g", "llm"): [0.5, 0.5]}
    with pytest.raises(UndefinedCorrelationError):
        fit_spec(constant, truth)
    lenient = fit_spec(constant, truth, require_gamma=False)[("g", "llm")]
    assert lenient.gamma_hat is None
    assert lenient.v_hat == 0.0

    single = {("x1", "g", "h"): [0.4], ("x2", "g", "h"): [0.7]}
    with pytest.raises(InsufficientPairsError):
        fit_spec(single, truth)
    with pytest.raises(MissingGroundTruthError):
        fit_spec({("x9", "g", "h"): [0.4]}, truth)
