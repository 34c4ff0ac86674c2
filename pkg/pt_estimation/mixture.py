"""
Latent subcommunity mixture model of a group's judgment of one item.

A group g is a mixture of subcommunities c with population weights w_c and
mean judgments f*_c; the group target is f* = sum_c w_c f*_c. An estimator
reasons about g through its own internal weights q_c, and misweighting the
subcommunities produces the representation (Wide Lens) bias
b_W = sum_c (q_c - w_c) f*_c.
"""

import math
from dataclasses import dataclass
from typing import Any, Dict, Literal, Sequence, Tuple

import numpy as np

from pt_estimation.errors import InvalidSpecError, SupportViolationError

WEIGHT_TOL = 1e-12
BOUND_TOL = 1e-12

WithinCommunityModel = Literal["bernoulli", "deterministic"]


def _check_weights(weights: Sequence[float], what: str) -> None:
    if len(weights) == 0:
        raise InvalidSpecError(f"{what}: at least one community is required")
    for w in weights:
        if not math.isfinite(w) or w < 0.0:
            raise InvalidSpecError(f"{what}: weight {w} is not a non-negative number")
    total = math.fsum(weights)
    if abs(total - 1.0) > WEIGHT_TOL:
        raise InvalidSpecError(f"{what}: weights sum to {total!r}, expected 1")


@dataclass(frozen=True)
class MixtureSpec:
    weights: Tuple[float, ...]
    means: Tuple[float, ...]
    within_community_model: WithinCommunityModel = "bernoulli"

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        object.__setattr__(self, "means", tuple(float(f) for f in self.means))
        if len(self.weights) != len(self.means):
            raise InvalidSpecError(
                f"{len(self.weights)} weights but {len(self.means)} community means"
            )
        _check_weights(self.weights, "MixtureSpec")
        for f in self.means:
            if not (math.isfinite(f) and 0.0 <= f <= 1.0):
                raise InvalidSpecError(f"community mean {f} outside [0, 1]")
        if self.within_community_model not in ("bernoulli", "deterministic"):
            raise InvalidSpecError(
                f"unknown within_community_model {self.within_community_model!r}"
            )

    @classmethod
    def from_communities(
        cls,
        communities: Sequence[Tuple[float, float]],
        within_community_model: WithinCommunityModel = "bernoulli",
    ) -> "MixtureSpec":
        return cls(
            tuple(w for w, _ in communities),
            tuple(f for _, f in communities),
            within_community_model,
        )

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "MixtureSpec":
        try:
            communities = [(float(w), float(f)) for w, f in d["communities"]]
        except (KeyError, TypeError, ValueError) as e:
            raise InvalidSpecError(f"malformed mixture {d!r}: {e}") from e
        return cls.from_communities(
            communities, d.get("within_community_model", "bernoulli")
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "communities": [[w, f] for w, f in zip(self.weights, self.means)],
            "within_community_model": self.within_community_model,
        }

    @property
    def n_communities(self) -> int:
        return len(self.weights)


@dataclass(frozen=True)
class InternalMixture:
    weights: Tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(q) for q in self.weights))
        _check_weights(self.weights, "InternalMixture")


@dataclass(frozen=True)
class ReprBoundCheck:
    lhs: float  # b_W^2
    rhs: float  # V_hetero * chi^2
    holds: bool
    slack: float  # rhs - lhs


def target_mean(m: MixtureSpec) -> float:
    return math.fsum(w * f for w, f in zip(m.weights, m.means))


def v_hetero(m: MixtureSpec) -> float:
    """Between-community variance of the subcommunity means."""
    f_star = target_mean(m)
    return math.fsum(w * (f - f_star) ** 2 for w, f in zip(m.weights, m.means))


def population_spread(m: MixtureSpec) -> float:
    """
    Variance of a single direct label Y_h, i.e. the MSE of one direct annotation.

    Bernoulli labels add the within-community term sum_c w_c f*_c (1 - f*_c) to
    v_hetero; deterministic labels (binary community means) add nothing.
    """
    within = 0.0
    if m.within_community_model == "bernoulli":
        within = math.fsum(w * f * (1.0 - f) for w, f in zip(m.weights, m.means))
    return v_hetero(m) + within


def _check_support(m: MixtureSpec, q: InternalMixture) -> None:
    if len(q.weights) != m.n_communities:
        raise InvalidSpecError(
            f"internal mixture has {len(q.weights)} weights, mixture has {m.n_communities}"
        )
    for c, (qc, wc) in enumerate(zip(q.weights, m.weights)):
        if qc > 0.0 and wc == 0.0:
            raise SupportViolationError(
                f"unbounded-divergence: internal weight {qc} on community {c} "
                "which has zero population weight"
            )


def repr_bias(m: MixtureSpec, q: InternalMixture, centered: bool = False) -> float:
    _check_support(m, q)
    if centered:
        f_star = target_mean(m)
        return math.fsum(
            (qc - wc) * (f - f_star) for qc, wc, f in zip(q.weights, m.weights, m.means)
        )
    return math.fsum((qc - wc) * f for qc, wc, f in zip(q.weights, m.weights, m.means))


def chi2_divergence(q: InternalMixture, m: MixtureSpec) -> float:
    _check_support(m, q)
    return math.fsum(
        (qc - wc) ** 2 / wc for qc, wc in zip(q.weights, m.weights) if wc > 0.0
    )


def check_repr_bound(m: MixtureSpec, q: InternalMixture) -> ReprBoundCheck:
    """b_W^2 <= V_hetero * chi^2(q || w), with equality iff q - w is proportional to w (f - f*)."""
    lhs = repr_bias(m, q) ** 2
    rhs = v_hetero(m) * chi2_divergence(q, m)
    return ReprBoundCheck(lhs=lhs, rhs=rhs, holds=lhs <= rhs + BOUND_TOL, slack=rhs - lhs)


def skewed_mixture(m: MixtureSpec, community: int, strength: float) -> InternalMixture:
    """q = (1 - t) w + t e_c: mass moved toward one supported community."""
    if not 0.0 <= strength <= 1.0:
        raise InvalidSpecError(f"strength {strength} outside [0, 1]")
    if not 0 <= community < m.n_communities or m.weights[community] == 0.0:
        raise InvalidSpecError(f"community {community} is not a supported community")
    q = [(1.0 - strength) * w for w in m.weights]
    q[community] += strength
    # renormalise away the last-ulp drift of the affine combination
    total = math.fsum(q)
    return InternalMixture(tuple(x / total for x in q))


def aligned_mixture(m: MixtureSpec, lam: float) -> InternalMixture:
    """q_c = w_c (1 + lam (f*_c - f*)), the family on which the bias bound is tight."""
    f_star = target_mean(m)
    q = [w * (1.0 + lam * (f - f_star)) for w, f in zip(m.weights, m.means)]
    if min(q) < 0.0:
        raise InvalidSpecError(f"lam={lam} makes an internal weight negative")
    total = math.fsum(q)
    return InternalMixture(tuple(x / total for x in q))


def sample_direct_labels(m: MixtureSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw n direct labels: community c ~ w, then Y ~ Bernoulli(f*_c) (or Y = f*_c)."""
    if n < 0:
        raise ValueError(f"n must be non-negative, got {n}")
    means = np.asarray(m.means)
    if m.within_community_model == "deterministic" and not np.all(
        (means == 0.0) | (means == 1.0)
    ):
        raise InvalidSpecError(
            "deterministic within-community model needs community means in {0, 1}"
        )
    if n == 0:
        return np.zeros(0, dtype=np.int64)

    communities = rng.choice(m.n_communities, size=n, p=np.asarray(m.weights))
    p = means[communities]
    if m.within_community_model == "deterministic":
        return p.astype(np.int64)
    return (rng.random(n) < p).astype(np.int64)


def random_mixture(
    rng: np.random.Generator, n_communities: int, zero_weight_prob: float = 0.0
) -> MixtureSpec:
    """Random mixture for property checks; some weights may be exactly zero."""
    weights = rng.dirichlet(np.ones(n_communities))
    if zero_weight_prob > 0.0 and n_communities > 1:
        drop = rng.random(n_communities) < zero_weight_prob
        drop[rng.integers(n_communities)] = False
        weights = np.where(drop, 0.0, weights)
    weights = weights / weights.sum()
    return MixtureSpec(tuple(weights), tuple(rng.random(n_communities)))


def random_internal_mixture(rng: np.random.Generator, m: MixtureSpec) -> InternalMixture:
    """Random internal weights absolutely continuous with respect to m."""
    support = np.asarray(m.weights) > 0.0
    q = np.zeros(m.n_communities)
    q[support] = rng.dirichlet(np.ones(int(support.sum())))
    return InternalMixture(tuple(q / q.sum()))
