"""
Differential perspective-taking: does an estimator move with the groups?

For a group pair (g1, g2) the per-item ground-truth disagreement is
delta* = f*(x, g1) - f*(x, g2) and the estimated disagreement delta_hat is the
same difference of the estimator's mean predictions. Alignment is summarised
by the Pearson correlation of the two series, a percentile bootstrap interval
for it, and directional (sign) accuracy. Fisher z-tests compare correlations
between estimators.
"""

import math
from dataclasses import asdict, dataclass
from typing import Any, Dict, List, Literal, Mapping, Tuple

import numpy as np
from scipy import stats

from pt_estimation.data import GroundTruthTable, Pools
from pt_estimation.errors import UndefinedCorrelationError
from pt_estimation.utils import substream

DEFAULT_B = 2000
CI_LEVEL = 0.95

Sided = Literal["two-sided", "greater", "less"]


@dataclass(frozen=True)
class DifferentialSeries:
    g1: str
    g2: str
    item_ids: Tuple[str, ...]
    delta_star: np.ndarray
    delta_hat: np.ndarray

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    def scatter_rows(self) -> List[Dict[str, Any]]:
        return [
            {"item_id": x, "delta_star": float(ds), "delta_hat": float(dh)}
            for x, ds, dh in zip(self.item_ids, self.delta_star, self.delta_hat)
        ]


@dataclass(frozen=True)
class DptReport:
    estimator_id: str
    g1: str
    g2: str
    n_items: int
    rho: float | None
    ci_low: float | None
    ci_high: float | None
    directional_accuracy: float
    sigma_delta_star: float
    redrawn: int = 0
    error: str | None = None

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class FisherZResult:
    z_stat: float
    p_value: float
    sided: Sided

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def estimator_means(pools: Pools, estimator_id: str) -> Dict[Tuple[str, str], float]:
    """(item, group) -> mean prediction of one estimator."""
    return {
        (item, group): float(np.mean(pool))
        for (item, group, est), pool in pools.items()
        if est == estimator_id
    }


def differentials(
    truth: GroundTruthTable,
    est_means: Mapping[Tuple[str, str], float],
    g1: str,
    g2: str,
) -> DifferentialSeries:
    """Items present for both groups in both the truth and the estimator means."""
    items = sorted(
        x
        for x, g in truth.entries
        if g == g1
        and (x, g2) in truth
        and (x, g1) in est_means
        and (x, g2) in est_means
    )
    delta_star = np.array(
        [truth.f_star(x, g1) - truth.f_star(x, g2) for x in items], dtype=float
    )
    delta_hat = np.array(
        [est_means[(x, g1)] - est_means[(x, g2)] for x in items], dtype=float
    )
    return DifferentialSeries(g1, g2, tuple(items), delta_star, delta_hat)


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    if x.size < 3:
        raise UndefinedCorrelationError(f"need at least 3 items, got {x.size}")
    if np.ptp(x) == 0.0 or np.ptp(y) == 0.0:
        raise UndefinedCorrelationError("a constant series has no correlation")
    return float(stats.pearsonr(x, y).statistic)


def pearson(series: DifferentialSeries) -> float:
    return _pearson(series.delta_star, series.delta_hat)


def _sign(v: np.ndarray, zero_tol: float) -> np.ndarray:
    return np.where(np.abs(v) <= zero_tol, 0, np.sign(v)).astype(int)


def directional_accuracy(series: DifferentialSeries, zero_tol: float = 0.0) -> float:
    """Fraction of items with sign(delta_hat) == sign(delta*); |v| <= zero_tol counts as 0."""
    if series.n_items == 0:
        raise ValueError("directional accuracy of an empty series")
    matches = _sign(series.delta_hat, zero_tol) == _sign(series.delta_star, zero_tol)
    return float(np.mean(matches))


def _rowwise_pearson(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    xc = x - x.mean(axis=1, keepdims=True)
    yc = y - y.mean(axis=1, keepdims=True)
    num = np.sum(xc * yc, axis=1)
    den = np.sqrt(np.sum(xc**2, axis=1) * np.sum(yc**2, axis=1))
    return np.clip(num / den, -1.0, 1.0)


def bootstrap_ci(
    series: DifferentialSeries,
    B: int = DEFAULT_B,
    seed: int = 0,
    level: float = CI_LEVEL,
    max_redraw_rounds: int = 100,
) -> Tuple[float, float, int]:
    """
    Percentile interval of rho over B item-level resamples.

    Resamples in which either series is constant are redrawn; returns
    (ci_low, ci_high, redrawn). The interval is widened, if needed, to contain
    the point estimate.
    """
    if B < 1:
        raise ValueError(f"B must be >= 1, got {B}")
    rho = pearson(series)
    n = series.n_items
    rng = substream(seed, "dpt", series.g1, series.g2, n)

    kept: List[np.ndarray] = []
    have = 0
    redrawn = 0
    need = B
    for _ in range(max_redraw_rounds):
        idx = rng.integers(0, n, size=(need, n))
        xs, ys = series.delta_star[idx], series.delta_hat[idx]
        ok = (np.ptp(xs, axis=1) > 0.0) & (np.ptp(ys, axis=1) > 0.0)
        redrawn += int(np.sum(~ok))
        kept.append(_rowwise_pearson(xs[ok], ys[ok]))
        have += int(ok.sum())
        need = B - have
        if need == 0:
            break
    else:
        raise UndefinedCorrelationError(
            f"could not draw {B} non-constant resamples ({redrawn} redrawn)"
        )

    rhos = np.concatenate(kept)
    alpha = (1.0 - level) / 2.0
    low, high = np.quantile(rhos, [alpha, 1.0 - alpha])
    return min(float(low), rho), max(float(high), rho), redrawn


def fisher_z_test(
    rho1: float, n1: int, rho2: float, n2: int, sided: Sided = "two-sided"
) -> FisherZResult:
    """
    z = (atanh rho1 - atanh rho2) / sqrt(1/(n1-3) + 1/(n2-3)).

    "greater" tests rho1 > rho2, "less" tests rho1 < rho2.
    """
    if n1 < 4 or n2 < 4:
        raise ValueError(f"need n >= 4 per correlation, got n1={n1}, n2={n2}")
    for r in (rho1, rho2):
        if not -1.0 < r < 1.0:
            raise UndefinedCorrelationError(f"|rho|={abs(r)} must be < 1")
    z = (math.atanh(rho1) - math.atanh(rho2)) / math.sqrt(
        1.0 / (n1 - 3) + 1.0 / (n2 - 3)
    )
    if sided == "two-sided":
        p = 2.0 * float(stats.norm.sf(abs(z)))
    elif sided == "greater":
        p = float(stats.norm.sf(z))
    elif sided == "less":
        p = float(stats.norm.cdf(z))
    else:
        raise ValueError(f"unknown sidedness {sided!r}")
    return FisherZResult(z_stat=z, p_value=min(p, 1.0), sided=sided)


def run_dpt(
    series: DifferentialSeries,
    estimator_id: str,
    B: int = DEFAULT_B,
    seed: int = 0,
    zero_tol: float = 0.0,
) -> DptReport:
    """All DPT statistics for one (estimator, pair); an undefined rho is reported, not raised."""
    sigma = float(np.std(series.delta_star, ddof=1)) if series.n_items > 1 else 0.0
    da = directional_accuracy(series, zero_tol) if series.n_items else 0.0
    try:
        rho = pearson(series)
        ci_low, ci_high, redrawn = bootstrap_ci(series, B=B, seed=seed)
    except UndefinedCorrelationError as e:
        return DptReport(
            estimator_id=estimator_id,
            g1=series.g1,
            g2=series.g2,
            n_items=series.n_items,
            rho=None,
            ci_low=None,
            ci_high=None,
            directional_accuracy=da,
            sigma_delta_star=sigma,
            error=str(e),
        )
    return DptReport(
        estimator_id=estimator_id,
        g1=series.g1,
        g2=series.g2,
        n_items=series.n_items,
        rho=rho,
        ci_low=ci_low,
        ci_high=ci_high,
        directional_accuracy=da,
        sigma_delta_star=sigma,
        redrawn=redrawn,
    )
