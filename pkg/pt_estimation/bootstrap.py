"""
Bootstrap evaluation of estimators at annotation budget k.

For every (item, group, estimator) pool, B resamples of k predictions are drawn
with replacement and averaged; MSE, signed bias and variance of those averages
around the ground truth f*(x, g) are computed per item and then averaged over
items. Per item MSE = Bias^2 + Var holds exactly, which is asserted as the
numbers are produced. When pool_size^k is small enough the resampling
distribution is enumerated exhaustively instead of sampled.
"""

import math
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Iterable, List, Mapping, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from pt_estimation.annotator import AnnotatorSpec
from pt_estimation.data import (
    AnnotationTable,
    GroundTruthTable,
    PoolKey,
    Pools,
    PredictionRecord,
    PredictionTable,
)
from pt_estimation.errors import (
    IdentityViolationError,
    InsufficientPairsError,
    MissingGroundTruthError,
    UndefinedCorrelationError,
)
from pt_estimation.utils import substream, write_json

DEFAULT_B = 1000
DEFAULT_K_RANGE = tuple(range(1, 11))
EXHAUSTIVE_LIMIT = 1_000_000
IDENTITY_RTOL = 1e-9
# resample indices held in memory at once; B x k draws are made in row blocks
RESAMPLE_CHUNK = 1 << 22


def sem(x: Sequence[float]) -> float:
    if len(x) <= 1:
        return 0.0
    return float(np.std(x, ddof=1) / np.sqrt(len(x)))


def prediction_pools(
    source: PredictionTable | AnnotationTable | Mapping[PoolKey, Any],
    groups: Iterable[str] | None = None,
    estimators: Iterable[str] | None = None,
) -> Pools:
    """Uniform (item, group, estimator) -> array view of any prediction source."""
    if isinstance(source, PredictionTable):
        pools = source.pools()
    elif isinstance(source, AnnotationTable):
        pools = source.perspective_pools()
    else:
        pools = {key: np.asarray(v, dtype=float) for key, v in source.items()}
    group_set = set(groups) if groups is not None else None
    est_set = set(estimators) if estimators is not None else None
    return {
        key: pool
        for key, pool in sorted(pools.items())
        if (group_set is None or key[1] in group_set)
        and (est_set is None or key[2] in est_set)
    }


@dataclass(frozen=True)
class ItemMetrics:
    item_id: str
    group_id: str
    estimator_id: str
    k: int
    mse: float
    bias: float
    variance: float
    bootstrap_mean: float
    f_star: float
    pool_size: int
    mse_se: float
    exact: bool


@dataclass(frozen=True)
class AggregateMetrics:
    group_id: str
    estimator_id: str
    k: int
    n_items: int
    mean_mse: float
    mean_signed_bias: float
    mean_sq_bias: float
    mean_variance: float
    mse_se: float


@dataclass
class MetricsReport:
    items: List[ItemMetrics]
    aggregates: List[AggregateMetrics]
    provenance: Dict[str, Any]
    flags: List[Dict[str, Any]] = field(default_factory=list)

    def curve(self, group_id: str, estimator_id: str) -> List[AggregateMetrics]:
        return sorted(
            (
                a
                for a in self.aggregates
                if a.group_id == group_id and a.estimator_id == estimator_id
            ),
            key=lambda a: a.k,
        )

    def keys(self) -> List[Tuple[str, str]]:
        return sorted({(a.group_id, a.estimator_id) for a in self.aggregates})

    def to_dict(self) -> Dict[str, Any]:
        nested: Dict[str, Any] = {}
        for a in self.aggregates:
            nested.setdefault(a.group_id, {}).setdefault(a.estimator_id, {})[
                str(a.k)
            ] = {
                "n_items": a.n_items,
                "mean_mse": a.mean_mse,
                "mean_signed_bias": a.mean_signed_bias,
                "mean_sq_bias": a.mean_sq_bias,
                "mean_variance": a.mean_variance,
                "mse_se": a.mse_se,
            }
        return {
            "provenance": self.provenance,
            "aggregates": nested,
            "items": [asdict(i) for i in self.items],
            "flags": self.flags,
        }

    def write_json(self, path: str) -> None:
        write_json(self.to_dict(), path)

    def items_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(i) for i in self.items])

    def aggregates_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(a) for a in self.aggregates])

    def write_csv(self, items_path: str, aggregates_path: str | None = None) -> None:
        self.items_frame().to_csv(items_path, index=False, float_format="%.10g")
        if aggregates_path is not None:
            self.aggregates_frame().to_csv(
                aggregates_path, index=False, float_format="%.10g"
            )


def _enumerate_means(pool: np.ndarray, k: int) -> np.ndarray:
    """Every ordered k-draw with replacement, as its mean (pool_size^k values)."""
    if pool.size == 1:
        return pool.astype(float)
    sums = pool
    for _ in range(k - 1):
        sums = np.add.outer(sums, pool).ravel()
    return sums / k


def _resampled_means(
    pool: np.ndarray, k: int, B: int, rng: np.random.Generator
) -> np.ndarray:
    rows = max(1, RESAMPLE_CHUNK // k)
    estimates = np.empty(B)
    for start in range(0, B, rows):
        stop = min(B, start + rows)
        idx = rng.integers(0, pool.size, size=(stop - start, k))
        estimates[start:stop] = pool[idx].mean(axis=1)
    return estimates


def _item_metrics(
    pool: np.ndarray,
    f_star: float,
    k: int,
    B: int,
    rng: np.random.Generator,
    exhaustive_limit: int,
) -> Dict[str, Any]:
    n = pool.size
    # n >= 2 can only stay under the limit for k below its bit length
    exact = (n == 1 or k <= exhaustive_limit.bit_length()) and n**k <= exhaustive_limit
    if exact:
        estimates = _enumerate_means(pool, k)
    else:
        estimates = _resampled_means(pool, k, B, rng)

    bootstrap_mean = float(np.mean(estimates))
    sq_err = (estimates - f_star) ** 2
    mse = float(np.mean(sq_err))
    bias = bootstrap_mean - f_star
    variance = float(np.mean((estimates - bootstrap_mean) ** 2))
    if not math.isclose(mse, bias**2 + variance, rel_tol=IDENTITY_RTOL, abs_tol=1e-15):
        raise IdentityViolationError(
            f"MSE {mse!r} != Bias^2 + Var {bias**2 + variance!r}"
        )
    mse_se = 0.0
    if not exact and B > 1:
        mse_se = float(np.std(sq_err, ddof=1) / math.sqrt(B))
    return {
        "mse": mse,
        "bias": bias,
        "variance": variance,
        "bootstrap_mean": bootstrap_mean,
        "mse_se": mse_se,
        "exact": exact,
    }


def _aggregate(items: List[ItemMetrics]) -> List[AggregateMetrics]:
    by_cell: Dict[Tuple[str, str, int], List[ItemMetrics]] = {}
    for it in items:
        by_cell.setdefault((it.group_id, it.estimator_id, it.k), []).append(it)

    out = []
    for (group, estimator, k), cell in sorted(by_cell.items()):
        mean_mse = float(np.mean([i.mse for i in cell]))
        mean_sq_bias = float(np.mean([i.bias**2 for i in cell]))
        mean_variance = float(np.mean([i.variance for i in cell]))
        if not math.isclose(
            mean_mse, mean_sq_bias + mean_variance, rel_tol=IDENTITY_RTOL, abs_tol=1e-15
        ):
            raise IdentityViolationError(
                f"{group}/{estimator}/k={k}: mean MSE {mean_mse!r} != "
                f"mean Bias^2 + mean Var {mean_sq_bias + mean_variance!r}"
            )
        out.append(
            AggregateMetrics(
                group_id=group,
                estimator_id=estimator,
                k=k,
                n_items=len(cell),
                mean_mse=mean_mse,
                mean_signed_bias=float(np.mean([i.bias for i in cell])),
                mean_sq_bias=mean_sq_bias,
                mean_variance=mean_variance,
                mse_se=math.sqrt(sum(i.mse_se**2 for i in cell)) / len(cell),
            )
        )
    return out


def _check_inputs(pools: Pools, truth: GroundTruthTable, B: int) -> None:
    if B < 1:
        raise ValueError(f"bootstrap resample count B must be >= 1, got {B}")
    for (item, group, estimator), pool in pools.items():
        if pool.size == 0:
            raise ValueError(f"empty prediction pool for {(item, group, estimator)}")
        if (item, group) not in truth:
            raise MissingGroundTruthError(
                f"no ground truth for item {item!r} in group {group!r}"
            )


def _evaluate(
    pools: Pools,
    truth: GroundTruthTable,
    k_range: Sequence[int],
    B: int,
    seed: int,
    exhaustive_limit: int,
    progress: bool,
) -> List[ItemMetrics]:
    for k in k_range:
        if k < 1:
            raise ValueError(f"budget k must be >= 1, got {k}")
    _check_inputs(pools, truth, B)

    items = []
    cells = [(key, k) for key in sorted(pools) for k in k_range]
    for (item, group, estimator), k in tqdm(
        cells, desc="bootstrap", disable=not progress
    ):
        pool = pools[(item, group, estimator)]
        f_star = truth.f_star(item, group)
        rng = substream(seed, "bootstrap", item, group, estimator, k)
        m = _item_metrics(pool, f_star, k, B, rng, exhaustive_limit)
        items.append(
            ItemMetrics(
                item_id=item,
                group_id=group,
                estimator_id=estimator,
                k=k,
                f_star=f_star,
                pool_size=int(pool.size),
                **m,
            )
        )
    return items


def bootstrap_metrics(
    preds: PredictionTable | AnnotationTable | Mapping[PoolKey, Any],
    truth: GroundTruthTable,
    k: int,
    B: int = DEFAULT_B,
    seed: int = 0,
    exhaustive_limit: int = EXHAUSTIVE_LIMIT,
    progress: bool = False,
) -> MetricsReport:
    pools = prediction_pools(preds)
    items = _evaluate(pools, truth, [k], B, seed, exhaustive_limit, progress)
    return MetricsReport(
        items=items,
        aggregates=_aggregate(items),
        provenance={
            "B": B,
            "seed": seed,
            "k_range": [k],
            "exhaustive_limit": exhaustive_limit,
        },
    )


def _monotonicity_flags(aggregates: List[AggregateMetrics]) -> List[Dict[str, Any]]:
    flags = []
    by_key: Dict[Tuple[str, str], List[AggregateMetrics]] = {}
    for a in aggregates:
        by_key.setdefault((a.group_id, a.estimator_id), []).append(a)
    for (group, estimator), curve in sorted(by_key.items()):
        curve.sort(key=lambda a: a.k)
        for prev, nxt in zip(curve, curve[1:]):
            allowance = 2.0 * math.hypot(prev.mse_se, nxt.mse_se) + 1e-12
            if nxt.mean_mse > prev.mean_mse + allowance:
                flags.append(
                    {
                        "group_id": group,
                        "estimator_id": estimator,
                        "k_from": prev.k,
                        "k_to": nxt.k,
                        "mse_from": prev.mean_mse,
                        "mse_to": nxt.mean_mse,
                        "allowance": allowance,
                    }
                )
    return flags


def budget_curve(
    preds: PredictionTable | AnnotationTable | Mapping[PoolKey, Any],
    truth: GroundTruthTable,
    k_range: Sequence[int] = DEFAULT_K_RANGE,
    B: int = DEFAULT_B,
    seed: int = 0,
    exhaustive_limit: int = EXHAUSTIVE_LIMIT,
    progress: bool = False,
) -> MetricsReport:
    """MSE(k) curves; increases beyond two bootstrap standard errors are flagged."""
    k_range = sorted(set(k_range))
    if not k_range:
        raise ValueError("k_range is empty")
    pools = prediction_pools(preds)
    items = _evaluate(pools, truth, k_range, B, seed, exhaustive_limit, progress)
    aggregates = _aggregate(items)
    return MetricsReport(
        items=items,
        aggregates=aggregates,
        provenance={
            "B": B,
            "seed": seed,
            "k_range": list(k_range),
            "exhaustive_limit": exhaustive_limit,
        },
        flags=_monotonicity_flags(aggregates),
    )


@dataclass
class MixResult:
    table: PredictionTable
    estimator_id: str
    truncations: List[Dict[str, Any]]
    skipped: List[Tuple[str, str]]


def mix_estimators(
    preds: PredictionTable,
    members: Iterable[str],
    weights: Mapping[str, float] | None = None,
    name: str | None = None,
) -> MixResult:
    """
    Synthetic estimator whose sample i is the weighted mean of the members' sample i.

    Pools are aligned by sample order; unequal pool sizes are truncated to the
    shortest and reported. (item, group) keys missing from any member are skipped.
    """
    member_list = sorted(set(members))
    if not member_list:
        raise ValueError("at least one member estimator is required")
    available = set(preds.estimators())
    unknown = [m for m in member_list if m not in available]
    if unknown:
        raise ValueError(f"unknown member estimator(s) {unknown}")
    if weights is None:
        w = {m: 1.0 for m in member_list}
    else:
        w = {m: float(weights.get(m, 0.0)) for m in member_list}
        if any(v < 0.0 for v in w.values()) or sum(w.values()) <= 0.0:
            raise ValueError(f"weights must be non-negative with a positive sum: {w}")
    total_w = sum(w.values())
    mixed_id = name or "mix(" + "+".join(member_list) + ")"

    pools = preds.pools()
    by_item: Dict[Tuple[str, str], Dict[str, np.ndarray]] = {}
    for (item, group, estimator), pool in pools.items():
        if estimator in w:
            by_item.setdefault((item, group), {})[estimator] = pool

    records: List[PredictionRecord] = []
    truncations: List[Dict[str, Any]] = []
    skipped: List[Tuple[str, str]] = []
    for (item, group), member_pools in sorted(by_item.items()):
        if len(member_pools) != len(member_list):
            skipped.append((item, group))
            continue
        sizes = {m: int(member_pools[m].size) for m in member_list}
        n = min(sizes.values())
        if len(set(sizes.values())) > 1:
            truncations.append(
                {"item_id": item, "group_id": group, "sizes": sizes, "used": n}
            )
        mixed = sum(w[m] * member_pools[m][:n] for m in member_list) / total_w
        mixed = np.clip(mixed, 0.0, 1.0)
        records.extend(
            PredictionRecord(item, group, mixed_id, i, float(v))
            for i, v in enumerate(mixed)
        )
    return MixResult(
        table=PredictionTable.from_records(records),
        estimator_id=mixed_id,
        truncations=truncations,
        skipped=skipped,
    )


@dataclass(frozen=True)
class FittedSpec:
    group_id: str
    estimator_id: str
    mu_hat: float
    v_hat: float
    gamma_hat: float | None
    n_items: int
    n_pair_items: int
    gamma_flagged: bool

    def to_annotator_spec(self) -> AnnotatorSpec:
        gamma = 0.0 if self.gamma_hat is None else self.gamma_hat
        return AnnotatorSpec.from_moments(
            mu=self.mu_hat, v=self.v_hat, gamma=min(max(gamma, 0.0), 1.0 - 1e-9)
        )

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def fit_spec(
    preds: PredictionTable | AnnotationTable | Mapping[PoolKey, Any],
    truth: GroundTruthTable,
    require_gamma: bool = True,
) -> Dict[Tuple[str, str], FittedSpec]:
    """
    Method-of-moments (mu, V, gamma) per (group, estimator).

    mu_hat is the mean over items of (pool mean - f*). With residuals
    r = prediction - f* - mu_hat, v_hat is the mean over items of the pool's
    mean squared residual and gamma_hat the mean over items (with >= 2 members)
    of the average pairwise residual product, divided by v_hat.
    """
    pools = prediction_pools(preds)
    cells: Dict[Tuple[str, str], List[Tuple[np.ndarray, float]]] = {}
    for (item, group, estimator), pool in pools.items():
        if (item, group) not in truth:
            continue
        if pool.size == 0:
            raise ValueError(f"empty prediction pool for {(item, group, estimator)}")
        cells.setdefault((group, estimator), []).append((pool, truth.f_star(item, group)))
    if not cells:
        raise MissingGroundTruthError("no prediction pool has a ground-truth entry")

    fitted = {}
    for (group, estimator), entries in sorted(cells.items()):
        mu_hat = float(np.mean([pool.mean() - f for pool, f in entries]))
        sq = []
        pair = []
        for pool, f in entries:
            r = pool - f - mu_hat
            sq.append(float(np.mean(r**2)))
            n = r.size
            if n >= 2:
                s = float(r.sum())
                pair.append((s * s - float(np.sum(r**2))) / (n * (n - 1)))
        v_hat = float(np.mean(sq))

        gamma_hat: float | None = None
        if not pair:
            if require_gamma:
                raise InsufficientPairsError(
                    f"{group}/{estimator}: no item has >= 2 predictions, gamma is undefined"
                )
        elif v_hat <= 0.0:
            if require_gamma:
                raise UndefinedCorrelationError(
                    f"{group}/{estimator}: zero residual variance, gamma is undefined"
                )
        else:
            gamma_hat = float(np.mean(pair)) / v_hat

        fitted[(group, estimator)] = FittedSpec(
            group_id=group,
            estimator_id=estimator,
            mu_hat=mu_hat,
            v_hat=v_hat,
            gamma_hat=gamma_hat,
            n_items=len(entries),
            n_pair_items=len(pair),
            gamma_flagged=gamma_hat is not None and not 0.0 <= gamma_hat < 1.0,
        )
    return fitted
