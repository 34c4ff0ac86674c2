"""
Generative model of one estimator protocol (a human PT crowd or an LLM).

Each prediction is f* + (b_W + b_C) + eps: a Wide Lens (representation) bias,
a Clear Lens (processing) bias and residual noise. Across the k members of a
panel the residuals share one exchangeable correlation gamma, built from one
shared standard-normal factor per panel plus one idiosyncratic factor per member.
"""

import math
from dataclasses import asdict, dataclass
from typing import Any, Dict, Literal

import numpy as np

from pt_estimation.errors import InvalidSpecError

PanelMethod = Literal["pooled", "components"]


@dataclass(frozen=True)
class AnnotatorSpec:
    mu_w: float = 0.0
    mu_c: float = 0.0
    var_w: float = 0.0
    var_c: float = 0.0
    var_eps: float = 0.0
    cov_wc: float = 0.0
    gamma: float = 0.0

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not math.isfinite(value):
                raise InvalidSpecError(f"{name}={value} is not finite")
        for name in ("var_w", "var_c", "var_eps"):
            if getattr(self, name) < 0.0:
                raise InvalidSpecError(f"{name}={getattr(self, name)} is negative")
        # small slack so a perfectly correlated pair built from floats is accepted
        if abs(self.cov_wc) > math.sqrt(self.var_w * self.var_c) * (1 + 1e-12) + 1e-15:
            raise InvalidSpecError(
                f"|cov_wc|={abs(self.cov_wc)} exceeds sqrt(var_w * var_c)"
            )
        if not 0.0 <= self.gamma < 1.0:
            raise InvalidSpecError(f"gamma={self.gamma} outside [0, 1)")
        if total_variance(self) < 0.0:
            raise InvalidSpecError(f"total variance {total_variance(self)} is negative")

    @classmethod
    def from_moments(cls, mu: float, v: float, gamma: float = 0.0) -> "AnnotatorSpec":
        """Spec with total bias mu and residual variance v (no lens split)."""
        return cls(mu_w=mu, var_eps=v, gamma=gamma)

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "AnnotatorSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise InvalidSpecError(f"unknown annotator fields {sorted(unknown)}")
        try:
            values = {k: float(v) for k, v in d.items()}
        except (TypeError, ValueError) as e:
            raise InvalidSpecError(f"malformed annotator spec {d!r}: {e}") from e
        return cls(**values)

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


@dataclass(frozen=True)
class Panel:
    predictions: np.ndarray

    def __post_init__(self):
        if self.predictions.ndim != 1 or self.predictions.size < 1:
            raise ValueError("a panel holds k >= 1 predictions")

    @property
    def k(self) -> int:
        return int(self.predictions.size)


def total_bias(a: AnnotatorSpec) -> float:
    return a.mu_w + a.mu_c


def total_variance(a: AnnotatorSpec) -> float:
    """Var(b_W) + Var(b_C) + 2 Cov(b_W, b_C) + Var(eps)."""
    return a.var_w + a.var_c + 2.0 * a.cov_wc + a.var_eps


def _check_panel_args(k: int, gamma: float) -> None:
    if k < 1:
        raise ValueError(f"panel budget k must be >= 1, got {k}")
    if not 0.0 <= gamma < 1.0:
        raise InvalidSpecError(f"gamma={gamma} outside [0, 1)")


def sample_panels(
    a: AnnotatorSpec,
    f_star: float,
    k: int,
    n_panels: int,
    rng: np.random.Generator,
    clip: bool = False,
    method: PanelMethod = "pooled",
) -> np.ndarray:
    """
    (n_panels, k) array of predictions.

    pooled: r_i = sqrt(V) (sqrt(gamma) z_0 + sqrt(1 - gamma) z_i).
    components: the same construction applied to jointly Gaussian (b_W, b_C)
    deviations and to eps separately; both have mean f* + mu, variance V and
    pairwise correlation gamma. Clipping to [0, 1] makes the moments approximate.
    """
    _check_panel_args(k, a.gamma)
    center = f_star + total_bias(a)
    g = a.gamma

    if method == "pooled":
        v = total_variance(a)
        shared = rng.standard_normal((n_panels, 1))
        own = rng.standard_normal((n_panels, k))
        resid = math.sqrt(v) * (math.sqrt(g) * shared + math.sqrt(1.0 - g) * own)
    elif method == "components":
        cov = np.array([[a.var_w, a.cov_wc], [a.cov_wc, a.var_c]])
        shared_b = rng.multivariate_normal(np.zeros(2), cov, size=n_panels, method="eigh")
        own_b = rng.multivariate_normal(
            np.zeros(2), cov, size=(n_panels, k), method="eigh"
        )
        b = math.sqrt(g) * shared_b[:, None, :] + math.sqrt(1.0 - g) * own_b
        sd_eps = math.sqrt(a.var_eps)
        eps = sd_eps * (
            math.sqrt(g) * rng.standard_normal((n_panels, 1))
            + math.sqrt(1.0 - g) * rng.standard_normal((n_panels, k))
        )
        resid = b.sum(axis=2) + eps
    else:
        raise ValueError(f"unknown panel method {method!r}")

    preds = center + resid
    if clip:
        preds = np.clip(preds, 0.0, 1.0)
    return preds


def sample_panel(
    a: AnnotatorSpec,
    f_star: float,
    k: int,
    rng: np.random.Generator,
    clip: bool = False,
    method: PanelMethod = "pooled",
) -> Panel:
    return Panel(sample_panels(a, f_star, k, 1, rng, clip=clip, method=method)[0])


def sample_components(
    a: AnnotatorSpec, n: int, rng: np.random.Generator
) -> Dict[str, np.ndarray]:
    """Independent per-annotator draws of the bias deviations and the residual noise."""
    cov = np.array([[a.var_w, a.cov_wc], [a.cov_wc, a.var_c]])
    b = rng.multivariate_normal(np.zeros(2), cov, size=n, method="eigh")
    eps = math.sqrt(a.var_eps) * rng.standard_normal(n)
    return {
        "b_w": a.mu_w + b[:, 0],
        "b_c": a.mu_c + b[:, 1],
        "eps": eps,
    }


def aggregate(p: Panel) -> float:
    return float(np.mean(p.predictions))


def exchangeable_correlation(k: int, gamma: float) -> np.ndarray:
    """k x k correlation matrix with ones on the diagonal and gamma elsewhere."""
    return (1.0 - gamma) * np.eye(k) + gamma * np.ones((k, k))


def random_spec(rng: np.random.Generator, max_mu: float = 0.3) -> AnnotatorSpec:
    """Random valid spec for property checks."""
    var_w, var_c = rng.uniform(0.0, 0.05, size=2)
    rho = rng.uniform(-1.0, 1.0)
    return AnnotatorSpec(
        mu_w=float(rng.uniform(-max_mu, max_mu)),
        mu_c=float(rng.uniform(-max_mu, max_mu)),
        var_w=float(var_w),
        var_c=float(var_c),
        var_eps=float(rng.uniform(0.0, 0.1)),
        cov_wc=float(rho * math.sqrt(var_w * var_c)),
        gamma=float(rng.uniform(0.0, 0.95)),
    )
