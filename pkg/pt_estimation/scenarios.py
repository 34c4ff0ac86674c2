"""
Synthetic experiments: named scenarios and the theory property suite.

A scenario is a set of items (each a MixtureSpec for one group), a set of
estimator specs and a budget range. run_scenario simulates panels for every
(estimator, k), compares Monte Carlo MSE with the closed forms, runs the
bootstrap pipeline on synthetic prediction pools and reports the decision
rule's verdicts. verify_theory checks the model's identities and bounds on
randomized inputs and returns one ledger row per property.
"""

import json
import math
import os
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from typing import Any, Callable, Dict, List, Tuple

import numpy as np
from tqdm import tqdm

from pt_estimation.analytics import (
    ASYMPTOTIC,
    analytic_mse,
    budget_crossover,
    coupling,
    direct_label_spec,
    error_floor,
    expanded_floor,
    superiority,
)
from pt_estimation.annotator import (
    AnnotatorSpec,
    exchangeable_correlation,
    random_spec,
    sample_components,
    sample_panels,
    total_bias,
    total_variance,
)
from pt_estimation.bootstrap import MetricsReport, budget_curve, sem
from pt_estimation.data import GroundTruthEntry, GroundTruthTable, Pools
from pt_estimation.errors import InvalidSpecError
from pt_estimation.mixture import (
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
from pt_estimation.utils import substream

SCENARIO_VERSION = 1
DIRECT_ESTIMATOR = "human_direct"
GROUP_ID = "g"
AGREEMENT_RTOL = 0.02
AGREEMENT_ATOL = 1e-5
SMALL_MSE = 5e-4


@dataclass(frozen=True)
class RepresentationSweep:
    estimator: str
    community: int
    strengths: Tuple[float, ...]


@dataclass(frozen=True)
class Comparison:
    llm: str
    human: str


@dataclass(frozen=True)
class Scenario:
    name: str
    items: Tuple[MixtureSpec, ...]
    estimators: Dict[str, AnnotatorSpec]
    budgets: Tuple[int, ...]
    replications: int
    seed: int
    version: int = SCENARIO_VERSION
    description: str = ""
    clip: bool = False
    direct_baseline: bool = False
    pool_size: int = 50
    bootstrap: int = 200
    comparisons: Tuple[Comparison, ...] = ()
    representation_sweep: RepresentationSweep | None = None

    def __post_init__(self):
        if not self.items:
            raise InvalidSpecError(f"scenario {self.name!r} has no items")
        if not self.estimators:
            raise InvalidSpecError(f"scenario {self.name!r} has no estimators")
        if DIRECT_ESTIMATOR in self.estimators:
            raise InvalidSpecError(f"estimator id {DIRECT_ESTIMATOR!r} is reserved")
        if not self.budgets or min(self.budgets) < 1:
            raise InvalidSpecError(f"scenario {self.name!r} needs budgets >= 1")
        if self.replications < 1 or self.pool_size < 1 or self.bootstrap < 1:
            raise InvalidSpecError("replications, pool_size and bootstrap must be >= 1")
        known = set(self.estimator_ids())
        for c in self.comparisons:
            if c.llm not in known or c.human not in known:
                raise InvalidSpecError(f"comparison {c} names an unknown estimator")
        sweep = self.representation_sweep
        if sweep is not None:
            if sweep.estimator not in self.estimators:
                raise InvalidSpecError(f"sweep estimator {sweep.estimator!r} is unknown")
            for s in sweep.strengths:
                if not 0.0 <= s <= 1.0:
                    raise InvalidSpecError(f"sweep strength {s} outside [0, 1]")
            for item in self.items:
                if not 0 <= sweep.community < item.n_communities:
                    raise InvalidSpecError(
                        f"sweep community {sweep.community} missing from an item"
                    )

    def estimator_ids(self) -> List[str]:
        ids = sorted(self.estimators)
        return ids + [DIRECT_ESTIMATOR] if self.direct_baseline else ids

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "Scenario":
        try:
            sweep = d.get("representation_sweep")
            return cls(
                name=str(d["name"]),
                items=tuple(MixtureSpec.from_dict(i) for i in d["items"]),
                estimators={
                    k: AnnotatorSpec.from_dict(v) for k, v in d["estimators"].items()
                },
                budgets=tuple(int(k) for k in d["budgets"]),
                replications=int(d["replications"]),
                seed=int(d["seed"]),
                version=int(d.get("version", SCENARIO_VERSION)),
                description=str(d.get("description", "")),
                clip=bool(d.get("clip", False)),
                direct_baseline=bool(d.get("direct_baseline", False)),
                pool_size=int(d.get("pool_size", 50)),
                bootstrap=int(d.get("bootstrap", 200)),
                comparisons=tuple(
                    Comparison(str(c["llm"]), str(c["human"]))
                    for c in d.get("comparisons", [])
                ),
                representation_sweep=None
                if sweep is None
                else RepresentationSweep(
                    estimator=str(sweep["estimator"]),
                    community=int(sweep["community"]),
                    strengths=tuple(float(s) for s in sweep["strengths"]),
                ),
            )
        except (KeyError, TypeError) as e:
            raise InvalidSpecError(f"malformed scenario: {e!r}") from e

    def to_dict(self) -> Dict[str, Any]:
        d: Dict[str, Any] = {
            "name": self.name,
            "version": self.version,
            "description": self.description,
            "seed": self.seed,
            "replications": self.replications,
            "budgets": list(self.budgets),
            "clip": self.clip,
            "direct_baseline": self.direct_baseline,
            "pool_size": self.pool_size,
            "bootstrap": self.bootstrap,
            "items": [m.to_dict() for m in self.items],
            "estimators": {k: v.to_dict() for k, v in sorted(self.estimators.items())},
            "comparisons": [asdict(c) for c in self.comparisons],
        }
        if self.representation_sweep is not None:
            d["representation_sweep"] = asdict(self.representation_sweep)
        return d


def list_presets() -> List[str]:
    root = resources.files("pt_estimation") / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_scenario(path_or_preset: str) -> Scenario:
    """A scenario JSON file, or the name of a shipped preset."""
    if os.path.exists(path_or_preset):
        with open(path_or_preset, "r", encoding="utf-8") as f:
            return Scenario.from_dict(json.load(f))
    preset = resources.files("pt_estimation") / "presets" / f"{path_or_preset}.json"
    if not preset.is_file():
        raise InvalidSpecError(
            f"no scenario file or preset named {path_or_preset!r} "
            f"(presets: {', '.join(list_presets())})"
        )
    return Scenario.from_dict(json.loads(preset.read_text(encoding="utf-8")))


def item_spec(s: Scenario, estimator: str, item: MixtureSpec) -> AnnotatorSpec:
    if estimator == DIRECT_ESTIMATOR:
        return direct_label_spec(population_spread(item))
    return s.estimators[estimator]


def effective_spec(s: Scenario, estimator: str) -> AnnotatorSpec:
    """Item-averaged spec; exact for the direct baseline since its MSE is linear in V."""
    if estimator == DIRECT_ESTIMATOR:
        spread = float(np.mean([population_spread(m) for m in s.items]))
        return direct_label_spec(spread)
    return s.estimators[estimator]


def _simulate_aggregates(
    s: Scenario,
    estimator: str,
    spec: AnnotatorSpec,
    item: MixtureSpec,
    k: int,
    n_panels: int,
    rng: np.random.Generator,
) -> np.ndarray:
    if estimator == DIRECT_ESTIMATOR:
        labels = sample_direct_labels(item, n_panels * k, rng)
        return labels.reshape(n_panels, k).mean(axis=1)
    panels = sample_panels(spec, target_mean(item), k, n_panels, rng, clip=s.clip)
    return panels.mean(axis=1)


@dataclass(frozen=True)
class McEstimate:
    mse: float
    mse_se: float
    bias: float
    variance: float


def _monte_carlo(
    s: Scenario,
    estimator: str,
    k: int,
    spec_for: Callable[[MixtureSpec], AnnotatorSpec],
    tag: str = "mc",
) -> McEstimate:
    mses, ses, biases, variances = [], [], [], []
    for i, item in enumerate(s.items):
        rng = substream(s.seed, tag, s.name, i, estimator, k)
        agg = _simulate_aggregates(
            s, estimator, spec_for(item), item, k, s.replications, rng
        )
        sq = (agg - target_mean(item)) ** 2
        mses.append(float(np.mean(sq)))
        ses.append(sem(sq))
        biases.append(float(np.mean(agg)) - target_mean(item))
        variances.append(float(np.var(agg)))
    n = len(s.items)
    return McEstimate(
        mse=float(np.mean(mses)),
        mse_se=math.sqrt(sum(x * x for x in ses)) / n,
        bias=float(np.mean(biases)),
        variance=float(np.mean(variances)),
    )


def _analytic_mean(
    s: Scenario, k: int | str, spec_for: Callable[[MixtureSpec], AnnotatorSpec]
) -> Dict[str, float]:
    parts = [analytic_mse(spec_for(item), k) for item in s.items]  # type: ignore[arg-type]
    return {
        "bias_sq": float(np.mean([p.bias_sq for p in parts])),
        "correlation_floor": float(np.mean([p.correlation_floor for p in parts])),
        "reducible_variance": float(np.mean([p.reducible_variance for p in parts])),
        "total": float(np.mean([p.total for p in parts])),
    }


def _relative_gap(analytic: float, empirical: float) -> Tuple[float, bool]:
    gap = abs(empirical - analytic)
    if analytic < SMALL_MSE:
        return gap, gap <= AGREEMENT_ATOL
    rel = gap / analytic
    return rel, rel <= AGREEMENT_RTOL


def _synthetic_pools(s: Scenario) -> Tuple[Pools, GroundTruthTable]:
    """One pool of pool_size predictions per (item, estimator), drawn as a single panel."""
    pools: Pools = {}
    truth = {}
    for i, item in enumerate(s.items):
        item_id = f"x{i:03d}"
        f_star = target_mean(item)
        truth[(item_id, GROUP_ID)] = GroundTruthEntry(f_star, s.pool_size)
        for estimator in s.estimator_ids():
            rng = substream(s.seed, "pool", s.name, i, estimator)
            if estimator == DIRECT_ESTIMATOR:
                pool = sample_direct_labels(item, s.pool_size, rng).astype(float)
            else:
                spec = s.estimators[estimator]
                pool = sample_panels(spec, f_star, s.pool_size, 1, rng, clip=s.clip)[0]
            pools[(item_id, GROUP_ID, estimator)] = pool
    return pools, GroundTruthTable(truth)


def _empirical_crossover(
    mc: Dict[str, Dict[int, McEstimate]], llm: str, human: str, m: int
) -> int | None:
    if m not in mc[llm]:
        return None
    target = mc[llm][m].mse
    for n in sorted(mc[human]):
        if mc[human][n].mse < target:
            return n
    return None


@dataclass
class ScenarioResult:
    name: str
    seed: int
    approximate: bool
    analytic: Dict[str, Dict[int, Dict[str, float]]]
    monte_carlo: Dict[str, Dict[int, McEstimate]]
    agreement: Dict[str, Dict[int, Dict[str, Any]]]
    floors: Dict[str, Dict[str, Any]]
    decisions: List[Dict[str, Any]]
    metrics: MetricsReport
    sweep: List[Dict[str, Any]] = field(default_factory=list)

    def max_relative_gap(self) -> float:
        return max(
            cell["relative_gap"]
            for per_k in self.agreement.values()
            for cell in per_k.values()
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "seed": self.seed,
            "approximate": self.approximate,
            "analytic": {
                e: {str(k): v for k, v in per_k.items()}
                for e, per_k in self.analytic.items()
            },
            "monte_carlo": {
                e: {str(k): asdict(v) for k, v in per_k.items()}
                for e, per_k in self.monte_carlo.items()
            },
            "agreement": {
                e: {str(k): v for k, v in per_k.items()}
                for e, per_k in self.agreement.items()
            },
            "floors": self.floors,
            "decisions": self.decisions,
            "sweep": self.sweep,
            "metrics": self.metrics.to_dict(),
        }


def _run_sweep(s: Scenario) -> List[Dict[str, Any]]:
    sweep = s.representation_sweep
    if sweep is None:
        return []
    base = s.estimators[sweep.estimator]
    rows = []
    for t in sweep.strengths:
        biases = {}
        chi2s = []
        for item in s.items:
            q = skewed_mixture(item, sweep.community, t)
            biases[item] = repr_bias(item, q)
            chi2s.append(chi2_divergence(q, item))

        def spec_for(item: MixtureSpec, _b=biases) -> AnnotatorSpec:
            return replace(base, mu_w=_b[item])

        mc = _monte_carlo(s, sweep.estimator, 1, spec_for, tag=f"sweep:{t!r}")
        rows.append(
            {
                "strength": t,
                "mean_chi2": float(np.mean(chi2s)),
                "mean_repr_bias_sq": float(np.mean([b * b for b in biases.values()])),
                "analytic_mse_k1": _analytic_mean(s, 1, spec_for)["total"],
                "analytic_floor": _analytic_mean(s, ASYMPTOTIC, spec_for)["total"],
                "monte_carlo_mse_k1": mc.mse,
                "monte_carlo_se_k1": mc.mse_se,
            }
        )
    return rows


def run_scenario(s: Scenario, progress: bool = False) -> ScenarioResult:
    analytic: Dict[str, Dict[int, Dict[str, float]]] = {}
    mc: Dict[str, Dict[int, McEstimate]] = {}
    agreement: Dict[str, Dict[int, Dict[str, Any]]] = {}

    cells = [(e, k) for e in s.estimator_ids() for k in s.budgets]
    for estimator, k in tqdm(cells, desc=s.name, disable=not progress):

        def spec_for(item: MixtureSpec, _e=estimator) -> AnnotatorSpec:
            return item_spec(s, _e, item)

        a = _analytic_mean(s, k, spec_for)
        est = _monte_carlo(s, estimator, k, spec_for)
        gap, ok = _relative_gap(a["total"], est.mse)
        analytic.setdefault(estimator, {})[k] = a
        mc.setdefault(estimator, {})[k] = est
        agreement.setdefault(estimator, {})[k] = {
            "analytic": a["total"],
            "monte_carlo": est.mse,
            "relative_gap": gap,
            "within_tolerance": ok,
        }

    floors = {}
    for estimator in s.estimator_ids():
        spec = effective_spec(s, estimator)
        floors[estimator] = {
            "error_floor": error_floor(spec),
            "expanded": expanded_floor(spec).to_dict(),
            "coupling": coupling(spec).to_dict(),
            "total_bias": total_bias(spec),
            "total_variance": total_variance(spec),
        }

    decisions = []
    for c in s.comparisons:
        a_llm, a_human = effective_spec(s, c.llm), effective_spec(s, c.human)
        decisions.append(
            {
                "llm": c.llm,
                "human": c.human,
                "at_k1": superiority(a_llm, a_human, 1, 1).to_dict(),
                "asymptotic": superiority(a_llm, a_human, ASYMPTOTIC, ASYMPTOTIC).to_dict(),
                "analytic_crossover": budget_crossover(a_llm, a_human, 1),
                "empirical_crossover": _empirical_crossover(mc, c.llm, c.human, 1),
            }
        )

    pools, truth = _synthetic_pools(s)
    metrics = budget_curve(pools, truth, s.budgets, B=s.bootstrap, seed=s.seed)

    return ScenarioResult(
        name=s.name,
        seed=s.seed,
        approximate=s.clip,
        analytic=analytic,
        monte_carlo=mc,
        agreement=agreement,
        floors=floors,
        decisions=decisions,
        metrics=metrics,
        sweep=_run_sweep(s),
    )


@dataclass(frozen=True)
class LedgerRow:
    name: str
    description: str
    trials: int
    max_violation: float
    tolerance: float
    passed: bool


@dataclass
class TheoryLedger:
    seed: int
    trials: int
    rows: List[LedgerRow]

    @property
    def passed(self) -> bool:
        return bool(self.rows) and all(r.passed for r in self.rows)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "seed": self.seed,
            "trials": self.trials,
            "passed": self.passed,
            "rows": [asdict(r) for r in self.rows],
        }

    def to_text(self) -> str:
        lines = [
            f"theory ledger  seed={self.seed}  trials={self.trials}",
            f"{'property':<34} {'trials':>7} {'max violation':>14} {'tolerance':>10}  result",
        ]
        for r in self.rows:
            lines.append(
                f"{r.name:<34} {r.trials:>7} {r.max_violation:>14.3e} "
                f"{r.tolerance:>10.1e}  {'PASS' if r.passed else 'FAIL'}"
            )
        if not self.rows:
            lines.append("(no rows: nothing was checked)")
        lines.append(f"overall: {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines) + "\n"

    def write_json(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2)
            f.write("\n")

    def write_text(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.to_text())


def _rel(a: float, b: float) -> float:
    scale = max(abs(a), abs(b))
    return 0.0 if scale == 0.0 else abs(a - b) / scale


def _aligned_lambda(rng: np.random.Generator, m: MixtureSpec) -> float:
    """Random lam keeping every w_c (1 + lam d_c) non-negative."""
    f_star = target_mean(m)
    d = [f - f_star for w, f in zip(m.weights, m.means) if w > 0.0]
    sign = 1.0 if rng.random() < 0.5 else -1.0
    worst = max([-sign * x for x in d] + [0.0])
    limit = 10.0 if worst == 0.0 else 1.0 / worst
    return sign * float(rng.uniform(0.0, 1.0)) * limit


def verify_theory(
    seed: int,
    trials: int,
    mc_trials: int = 20,
    mc_panels: int = 100_000,
    perturb_floor: float = 0.0,
    progress: bool = False,
) -> TheoryLedger:
    """
    Randomized checks of the mixture, annotator and analytics properties.

    perturb_floor adds a constant to every error floor the harness compares
    against, which must make the floor rows fail.
    """
    if trials < 0:
        raise ValueError(f"trials must be non-negative, got {trials}")
    if trials == 0:
        return TheoryLedger(seed=seed, trials=0, rows=[])
    n_mc = min(trials, mc_trials)

    def floor_of(a: AnnotatorSpec) -> float:
        return error_floor(a) + perturb_floor

    checks: List[Tuple[str, str, int, float, Callable[[np.random.Generator], float]]] = []

    def check(name: str, description: str, n: int, tolerance: float):
        def register(fn: Callable[[np.random.Generator], float]):
            checks.append((name, description, n, tolerance, fn))
            return fn

        return register

    @check(
        "target_mean_in_range",
        "target lies between the extreme community means",
        trials,
        0.0,
    )
    def _(rng):
        m = random_mixture(rng, int(rng.integers(1, 8)), zero_weight_prob=0.2)
        t = target_mean(m)
        support = [f for w, f in zip(m.weights, m.means) if w > 0.0]
        return max(0.0, min(support) - t - 1e-15, t - max(support) - 1e-15)

    @check(
        "v_hetero_at_most_quarter",
        "heterogeneity of [0,1] means is at most 1/4",
        trials,
        0.0,
    )
    def _(rng):
        m = random_mixture(rng, int(rng.integers(1, 8)))
        return max(0.0, v_hetero(m) - 0.25)

    @check(
        "repr_bias_centered_form",
        "centered and uncentered representation bias agree",
        trials,
        1e-12,
    )
    def _(rng):
        m = random_mixture(rng, int(rng.integers(1, 8)), zero_weight_prob=0.2)
        q = random_internal_mixture(rng, m)
        return abs(repr_bias(m, q) - repr_bias(m, q, centered=True))

    @check("repr_bias_bound", "b_W^2 <= V_hetero * chi2(q || w)", trials, 1e-12)
    def _(rng):
        m = random_mixture(rng, int(rng.integers(1, 8)), zero_weight_prob=0.2)
        q = random_internal_mixture(rng, m)
        c = check_repr_bound(m, q)
        return max(0.0, c.lhs - c.rhs)

    @check(
        "repr_bound_equality",
        "bound is tight when q - w is proportional to w (f - f*)",
        trials,
        1e-12,
    )
    def _(rng):
        m = random_mixture(rng, int(rng.integers(1, 8)))
        q = aligned_mixture(m, _aligned_lambda(rng, m))
        c = check_repr_bound(m, q)
        return abs(c.slack)

    @check(
        "direct_label_variance",
        "Var(Y_h) = V_hetero + sum w f (1 - f) under bernoulli labels",
        n_mc,
        3.0 / math.sqrt(10 * mc_panels),
    )
    def _(rng):
        m = random_mixture(rng, int(rng.integers(1, 5)))
        y = sample_direct_labels(m, 10 * mc_panels, rng)
        return abs(float(np.var(y)) - population_spread(m))

    @check(
        "aggregate_bias",
        "E[mean of k] - f* = mu_W + mu_C (in standard errors)",
        n_mc,
        4.5,
    )
    def _(rng):
        a = random_spec(rng)
        k = int(rng.integers(1, 11))
        agg = sample_panels(a, 0.5, k, mc_panels, rng).mean(axis=1)
        var_agg = analytic_mse(a, k).correlation_floor + analytic_mse(a, k).reducible_variance
        se = math.sqrt(var_agg / mc_panels)
        return 0.0 if se == 0.0 else abs(float(agg.mean()) - 0.5 - total_bias(a)) / se

    @check(
        "aggregate_variance",
        "Var(mean of k) = gamma V + (1 - gamma) V / k (relative)",
        n_mc,
        AGREEMENT_RTOL,
    )
    def _(rng):
        a = random_spec(rng)
        k = int(rng.integers(1, 11))
        agg = sample_panels(a, 0.5, k, mc_panels, rng).mean(axis=1)
        v = total_variance(a)
        expected = a.gamma * v + (1.0 - a.gamma) * v / k
        return 0.0 if expected < 1e-6 else abs(float(np.var(agg)) - expected) / expected

    @check(
        "exchangeable_psd",
        "exchangeable correlation matrix is positive semidefinite",
        trials,
        1e-12,
    )
    def _(rng):
        k = int(rng.integers(1, 40))
        gamma = float(rng.uniform(0.0, 1.0))
        eig = np.linalg.eigvalsh(exchangeable_correlation(k, gamma))
        return max(0.0, -float(eig.min()))

    @check(
        "noise_orthogonality",
        "sample correlation of bias draws and noise vanishes",
        n_mc,
        5.0 / math.sqrt(mc_panels),
    )
    def _(rng):
        a = random_spec(rng)
        comp = sample_components(a, mc_panels, rng)
        b = comp["b_w"] + comp["b_c"]
        if np.ptp(b) == 0.0 or np.ptp(comp["eps"]) == 0.0:
            return 0.0
        return abs(float(np.corrcoef(b, comp["eps"])[0, 1]))

    @check(
        "mse_closed_form",
        "breakdown total = mu^2 + gamma V + (1 - gamma) V / k",
        trials,
        1e-12,
    )
    def _(rng):
        a = random_spec(rng)
        k = int(rng.integers(1, 100))
        mu, v, g = total_bias(a), total_variance(a), a.gamma
        return _rel(analytic_mse(a, k).total, mu * mu + g * v + (1.0 - g) * v / k)

    @check("floor_gap", "MSE(k) - floor = (1 - gamma) V / k", trials, 1e-12)
    def _(rng):
        a = random_spec(rng)
        k = int(rng.integers(1, 100))
        br = analytic_mse(a, k)
        gap = br.total - floor_of(a)
        return abs(gap - br.reducible_variance) / max(br.total, 1e-300)

    @check(
        "floor_limit",
        "MSE at the asymptotic budget equals the floor",
        trials,
        1e-15,
    )
    def _(rng):
        a = random_spec(rng)
        return _rel(analytic_mse(a, ASYMPTOTIC).total, floor_of(a))

    @check("mse_monotone_in_k", "MSE(k) is nonincreasing in k", trials, 0.0)
    def _(rng):
        a = random_spec(rng)
        totals = [analytic_mse(a, k).total for k in range(1, 21)]
        return max(0.0, max(b - a_ for a_, b in zip(totals, totals[1:])))

    @check(
        "expanded_floor_identity",
        "expanded floor terms sum to the floor",
        trials,
        1e-15,
    )
    def _(rng):
        a = random_spec(rng)
        return _rel(expanded_floor(a).total, floor_of(a))

    @check(
        "bias_coupling_identity",
        "(mu_W + mu_C)^2 = mu_W^2 + mu_C^2 + 2 mu_W mu_C",
        trials,
        1e-12,
    )
    def _(rng):
        a = random_spec(rng)
        exp = expanded_floor(a)
        lhs = analytic_mse(a, ASYMPTOTIC).bias_sq
        return abs(lhs - (exp.base_magnitudes + coupling(a).i_mean)) / max(lhs, 1e-12)

    @check(
        "bias_sign_symmetry",
        "negating both biases leaves MSEs and the winner unchanged",
        trials,
        0.0,
    )
    def _(rng):
        a_l, a_h = random_spec(rng), random_spec(rng)
        m, n = int(rng.integers(1, 20)), int(rng.integers(1, 20))
        d = superiority(a_l, a_h, m, n)
        flip = superiority(
            replace(a_l, mu_w=-a_l.mu_w, mu_c=-a_l.mu_c),
            replace(a_h, mu_w=-a_h.mu_w, mu_c=-a_h.mu_c),
            m,
            n,
        )
        same = (
            d.winner == flip.winner
            and d.llm_mse == flip.llm_mse
            and d.human_mse == flip.human_mse
            and error_floor(a_l) == error_floor(replace(a_l, mu_w=-a_l.mu_w, mu_c=-a_l.mu_c))
        )
        return 0.0 if same else 1.0

    @check(
        "crossover_consistency",
        "crossover budget is the first n the human side wins",
        trials,
        0.0,
    )
    def _(rng):
        a_l, a_h = random_spec(rng), random_spec(rng)
        m = int(rng.integers(1, 10))
        n = budget_crossover(a_l, a_h, m)
        if n is None:
            never = superiority(a_l, a_h, m, 10**9).winner != "human"
            return 0.0 if never else 1.0
        wins = superiority(a_l, a_h, m, n).winner == "human"
        before = n == 1 or superiority(a_l, a_h, m, n - 1).winner != "human"
        return 0.0 if wins and before else 1.0

    @check(
        "analytic_vs_monte_carlo",
        "Monte Carlo MSE gap over its allowance (2% or 1e-5)",
        n_mc,
        1.0,
    )
    def _(rng):
        a = random_spec(rng)
        k = int(rng.integers(1, 11))
        agg = sample_panels(a, 0.5, k, mc_panels, rng).mean(axis=1)
        analytic = analytic_mse(a, k).total
        gap = abs(float(np.mean((agg - 0.5) ** 2)) - analytic)
        if analytic < SMALL_MSE:
            return gap / AGREEMENT_ATOL
        return gap / (AGREEMENT_RTOL * analytic)

    @check(
        "superiority_vs_monte_carlo",
        "decision matches the empirical ordering when the margin is clear",
        n_mc,
        0.0,
    )
    def _(rng):
        a_l, a_h = random_spec(rng), random_spec(rng)
        m, n = int(rng.integers(1, 11)), int(rng.integers(1, 11))
        d = superiority(a_l, a_h, m, n)
        sq_l = (sample_panels(a_l, 0.5, m, mc_panels, rng).mean(axis=1) - 0.5) ** 2
        sq_h = (sample_panels(a_h, 0.5, n, mc_panels, rng).mean(axis=1) - 0.5) ** 2
        se = math.hypot(sem(sq_l), sem(sq_h))
        if abs(d.margin) <= 5.0 * se:
            return 0.0
        empirical = "llm" if sq_l.mean() < sq_h.mean() else "human"
        return 0.0 if empirical == d.winner else 1.0

    rows = []
    for name, description, n, tolerance, fn in tqdm(checks, desc="verify", disable=not progress):
        rng = substream(seed, "verify", name)
        worst = 0.0
        for _ in range(n):
            worst = max(worst, float(fn(rng)))
        rows.append(
            LedgerRow(
                name=name,
                description=description,
                trials=n,
                max_violation=worst,
                tolerance=tolerance,
                passed=worst <= tolerance,
            )
        )
    return TheoryLedger(seed=seed, trials=trials, rows=rows)
