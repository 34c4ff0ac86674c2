import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pt_estimation.annotator import (
    AnnotatorSpec,
    Panel,
    aggregate,
    exchangeable_correlation,
    sample_components,
    sample_panel,
    sample_panels,
    total_bias,
    total_variance,
)
from pt_estimation.errors import InvalidSpecError


def test_total_bias_examples():
    assert total_bias(AnnotatorSpec(mu_w=0.1, mu_c=-0.1)) == 0.0
    assert total_bias(AnnotatorSpec(mu_w=-0.05, mu_c=-0.03)) == pytest.approx(-0.08)
    assert total_bias(AnnotatorSpec()) == 0.0


def test_total_variance_includes_coupling():
    base = dict(var_w=0.01, var_c=0.01, var_eps=0.02)
    assert total_variance(AnnotatorSpec(**base)) == pytest.approx(0.04)
    assert total_variance(AnnotatorSpec(**base, cov_wc=0.01)) == pytest.approx(0.06)
    assert total_variance(AnnotatorSpec(**base, cov_wc=-0.01)) == pytest.approx(0.02)


@pytest.mark.parametrize(
    "fields",
    [
        {"var_w": -0.01},
        {"var_w": 0.01, "var_c": 0.01, "cov_wc": 0.02},
        {"gamma": 1.0},
        {"gamma": -0.1},
        {"mu_w": float("nan")},
    ],
)
def test_invalid_specs_are_rejected(fields):
    with pytest.raises(InvalidSpecError):
        AnnotatorSpec(**fields)


def test_spec_dict_form():
    a = AnnotatorSpec(mu_w=0.1, var_eps=0.02, gamma=0.3)
    assert AnnotatorSpec.from_dict(a.to_dict()) == a
    with pytest.raises(InvalidSpecError, match="unknown"):
        AnnotatorSpec.from_dict({"mu": 0.1})
    with pytest.raises(InvalidSpecError):
        AnnotatorSpec.from_dict({"mu_w": "lots"})


def test_from_moments():
    a = AnnotatorSpec.from_moments(mu=0.05, v=0.04, gamma=0.5)
    assert total_bias(a) == 0.05
    assert total_variance(a) == 0.04
    assert a.gamma == 0.5


def test_zero_variance_panel_is_constant():
    a = AnnotatorSpec(mu_w=0.1, gamma=0.7)
    panels = sample_panels(a, 0.4, 5, 10, np.random.default_rng(0))
    assert panels.shape == (10, 5)
    np.testing.assert_allclose(panels, 0.5)


def test_panel_moments_match_the_exchangeable_model():
    a = AnnotatorSpec.from_moments(mu=0.0, v=0.04, gamma=0.5)
    panels = sample_panels(a, 0.5, 2, 1_000_000, np.random.default_rng(1))
    corr = np.corrcoef(panels[:, 0], panels[:, 1])[0, 1]
    assert abs(corr - 0.5) < 0.005
    assert abs(float(np.var(panels[:, 0])) - 0.04) < 0.001


def test_panel_mean_is_shifted_by_total_bias():
    a = AnnotatorSpec.from_moments(mu=0.05, v=0.01, gamma=0.0)
    panels = sample_panels(a, 0.3, 1, 1_000_000, np.random.default_rng(2))
    assert abs(float(panels.mean()) - 0.35) < 0.0005


@pytest.mark.parametrize("method", ["pooled", "components"])
def test_aggregate_variance_matches_closed_form(method):
    a = AnnotatorSpec(
        mu_w=0.02,
        mu_c=-0.01,
        var_w=0.01,
        var_c=0.02,
        cov_wc=0.005,
        var_eps=0.03,
        gamma=0.3,
    )
    k = 4
    panels = sample_panels(a, 0.5, k, 200_000, np.random.default_rng(3), method=method)
    agg = panels.mean(axis=1)
    v = total_variance(a)
    expected = a.gamma * v + (1.0 - a.gamma) * v / k
    assert abs(float(np.var(agg)) - expected) / expected < 0.02
    se = math.sqrt(expected / agg.size)
    assert abs(float(agg.mean()) - 0.5 - total_bias(a)) < 4.0 * se


def test_clipped_panels_stay_in_unit_interval():
    a = AnnotatorSpec.from_moments(mu=0.3, v=0.2, gamma=0.1)
    panels = sample_panels(a, 0.9, 3, 1000, np.random.default_rng(4), clip=True)
    assert panels.min() >= 0.0 and panels.max() <= 1.0


def test_panel_errors():
    a = AnnotatorSpec.from_moments(mu=0.0, v=0.01)
    with pytest.raises(ValueError):
        sample_panel(a, 0.5, 0, np.random.default_rng(0))
    with pytest.raises(ValueError):
        rng = np.random.default_rng(0)
        sample_panels(a, 0.5, 2, 5, rng, method="bogus")  # type: ignore[arg-type]
    with pytest.raises(ValueError):
        Panel(np.array([]))


def test_sample_panel_returns_k_predictions():
    a = AnnotatorSpec.from_moments(mu=0.0, v=0.01, gamma=0.2)
    p = sample_panel(a, 0.5, 7, np.random.default_rng(5))
    assert p.k == 7


def test_aggregate_examples():
    assert aggregate(Panel(np.array([0.5]))) == 0.5
    assert aggregate(Panel(np.array([0.0, 1.0]))) == 0.5
    assert aggregate(Panel(np.array([0.2, 0.4, 0.9]))) == pytest.approx(0.5)


@settings(max_examples=200, deadline=None)
@given(st.integers(min_value=1, max_value=60), st.floats(0.0, 0.999))
def test_exchangeable_correlation_is_psd(k, gamma):
    eig = np.linalg.eigvalsh(exchangeable_correlation(k, gamma))
    assert eig.min() >= -1e-12


def test_bias_draws_are_orthogonal_to_noise():
    a = AnnotatorSpec(mu_w=0.1, var_w=0.02, var_c=0.01, cov_wc=0.01, var_eps=0.05)
    n = 500_000
    comp = sample_components(a, n, np.random.default_rng(6))
    b = comp["b_w"] + comp["b_c"]
    assert abs(float(np.corrcoef(b, comp["eps"])[0, 1])) < 5.0 / math.sqrt(n)
    assert abs(float(np.cov(comp["b_w"], comp["b_c"])[0, 1]) - 0.01) < 0.0005
    assert abs(float(comp["b_w"].mean()) - 0.1) < 0.001
