import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pt_estimation.errors import InvalidSpecError, SupportViolationError
from pt_estimation.mixture import (
    InternalMixture,
    MixtureSpec,
    aligned_mixture,
    check_repr_bound,
    chi2_divergence,
    population_spread,
    random_internal_mixture,
    random_mixture,
    repr_bias,
    sample_direct_labels,
    skewed_mixture,
    target_mean,
    v_hetero,
)

seeds = st.integers(min_value=0, max_value=2**32 - 1)
sizes = st.integers(min_value=1, max_value=7)


def test_target_mean_and_heterogeneity_examples():
    m = MixtureSpec.from_communities([(0.5, 0.0), (0.5, 1.0)])
    assert target_mean(m) == 0.5
    assert v_hetero(m) == 0.25

    single = MixtureSpec.from_communities([(1.0, 0.3)])
    assert target_mean(single) == 0.3
    assert v_hetero(single) == 0.0


def test_invalid_mixtures_are_rejected():
    with pytest.raises(InvalidSpecError):
        MixtureSpec((0.5, 0.4), (0.1, 0.2))
    with pytest.raises(InvalidSpecError):
        MixtureSpec((0.5, 0.5), (0.1, 1.2))
    with pytest.raises(InvalidSpecError):
        MixtureSpec((1.0,), (0.1, 0.2))
    with pytest.raises(InvalidSpecError):
        MixtureSpec((1.0,), (0.1,), within_community_model="poisson")  # type: ignore[arg-type]


def test_population_spread_under_both_label_models():
    m = MixtureSpec.from_communities([(0.5, 0.2), (0.5, 0.6)])
    assert v_hetero(m) == pytest.approx(0.04)
    # 0.04 + 0.5 * 0.16 + 0.5 * 0.24
    assert population_spread(m) == pytest.approx(0.24)

    det = MixtureSpec.from_communities([(0.3, 0.0), (0.7, 1.0)], "deterministic")
    assert population_spread(det) == pytest.approx(v_hetero(det))
    assert population_spread(det) == pytest.approx(0.21)


def test_repr_bias_example_and_forms_agree():
    m = MixtureSpec.from_communities([(0.6, 0.2), (0.4, 0.7)])
    q = InternalMixture((0.3, 0.7))
    # (0.3 - 0.6) * 0.2 + (0.7 - 0.4) * 0.7
    assert repr_bias(m, q) == pytest.approx(0.15)
    assert repr_bias(m, q, centered=True) == pytest.approx(0.15)
    assert repr_bias(m, InternalMixture(m.weights)) == 0.0


def test_internal_weight_off_support_is_unbounded():
    m = MixtureSpec.from_communities([(1.0, 0.2), (0.0, 0.9)])
    q = InternalMixture((0.5, 0.5))
    with pytest.raises(SupportViolationError, match="unbounded-divergence"):
        chi2_divergence(q, m)
    with pytest.raises(SupportViolationError):
        check_repr_bound(m, q)


def test_chi2_skips_zero_weight_communities():
    m = MixtureSpec.from_communities([(0.5, 0.2), (0.5, 0.4), (0.0, 0.9)])
    q = InternalMixture((0.25, 0.75, 0.0))
    assert chi2_divergence(q, m) == pytest.approx(0.25)


@settings(max_examples=300, deadline=None)
@given(seeds, sizes)
def test_repr_bias_never_exceeds_bound(seed, n):
    rng = np.random.default_rng(seed)
    m = random_mixture(rng, n, zero_weight_prob=0.3)
    q = random_internal_mixture(rng, m)
    c = check_repr_bound(m, q)
    assert c.holds
    assert c.lhs <= c.rhs + 1e-12
    assert repr_bias(m, q) == pytest.approx(repr_bias(m, q, centered=True), abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(seeds, st.integers(min_value=2, max_value=7), st.floats(0.0, 0.99))
def test_aligned_mixture_makes_the_bound_tight(seed, n, frac):
    rng = np.random.default_rng(seed)
    m = random_mixture(rng, n)
    f_star = target_mean(m)
    # lam below the largest value keeping every weight non-negative
    below = [f_star - f for f in m.means if f < f_star]
    lam = frac * min(1.0 / max(below), 50.0) if below else 0.0
    c = check_repr_bound(m, aligned_mixture(m, lam))
    assert abs(c.slack) < 1e-12


def test_aligned_mixture_rejects_negative_weights():
    m = MixtureSpec.from_communities([(0.5, 0.0), (0.5, 1.0)])
    with pytest.raises(InvalidSpecError):
        aligned_mixture(m, 3.0)


@settings(max_examples=100, deadline=None)
@given(seeds, sizes)
def test_heterogeneity_is_at_most_a_quarter(seed, n):
    m = random_mixture(np.random.default_rng(seed), n)
    assert 0.0 <= v_hetero(m) <= 0.25
    support = [f for w, f in zip(m.weights, m.means) if w > 0.0]
    assert min(support) - 1e-12 <= target_mean(m) <= max(support) + 1e-12


def test_skewing_toward_a_community_grows_divergence_and_bias():
    m = MixtureSpec.from_communities([(0.85, 0.2), (0.15, 0.8)])
    strengths = [0.0, 0.2, 0.4, 0.6, 0.8]
    chi2 = [chi2_divergence(skewed_mixture(m, 1, t), m) for t in strengths]
    bias = [abs(repr_bias(m, skewed_mixture(m, 1, t))) for t in strengths]
    assert chi2[0] == pytest.approx(0.0, abs=1e-20)
    assert all(a < b for a, b in zip(chi2, chi2[1:]))
    assert all(a < b for a, b in zip(bias, bias[1:]))

    with pytest.raises(InvalidSpecError):
        skewed_mixture(m, 2, 0.5)
    with pytest.raises(InvalidSpecError):
        skewed_mixture(m, 0, 1.5)


def test_direct_label_variance_matches_population_spread():
    m = MixtureSpec.from_communities([(0.3, 0.1), (0.5, 0.5), (0.2, 0.9)])
    y = sample_direct_labels(m, 1_000_000, np.random.default_rng(7))
    assert set(np.unique(y)) <= {0, 1}
    assert abs(float(np.var(y)) - population_spread(m)) < 0.003
    assert abs(float(np.mean(y)) - target_mean(m)) < 0.003


def test_deterministic_labels_need_binary_means():
    m = MixtureSpec.from_communities([(0.5, 0.2), (0.5, 1.0)], "deterministic")
    with pytest.raises(InvalidSpecError):
        sample_direct_labels(m, 10, np.random.default_rng(0))


def test_mixture_dict_form():
    m = MixtureSpec.from_communities([(0.25, 0.1), (0.75, 0.6)])
    assert MixtureSpec.from_dict(m.to_dict()) == m
    with pytest.raises(InvalidSpecError):
        MixtureSpec.from_dict({"weights": [1.0]})
