"""
Closed-form error algebra for aggregated estimators and the decision rule built on it.

For an estimator with total bias mu, residual variance V and exchangeable
correlation gamma, the mean of k predictions has

    MSE(k) = mu^2 + gamma V + (1 - gamma) V / k

(squared bias, correlation floor, reducible variance). The limit k -> inf is the
error floor mu^2 + gamma V. Sums are formed in exact rational arithmetic and
rounded once, so the algebraic identities below hold to the last ulp.
"""

from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import Dict, List, Literal, Sequence

from pt_estimation.annotator import AnnotatorSpec

ASYMPTOTIC = "asymptotic"
TIE_MARGIN = 1e-12

Budget = int | Literal["asymptotic"]
Winner = Literal["llm", "human", "tie"]


@dataclass(frozen=True)
class MseBreakdown:
    bias_sq: float
    correlation_floor: float
    reducible_variance: float

    @property
    def total(self) -> float:
        return self.bias_sq + self.correlation_floor + self.reducible_variance

    def to_dict(self) -> Dict[str, float]:
        return {**asdict(self), "total": self.total}


@dataclass(frozen=True)
class CouplingReport:
    i_mean: float
    i_var: float
    superadditive_mean: bool
    superadditive_var: bool

    def to_dict(self) -> Dict[str, float | bool]:
        return asdict(self)


@dataclass(frozen=True)
class FloorExpansion:
    base_magnitudes: float  # mu_W^2 + mu_C^2
    systematic_coupling: float  # 2 mu_W mu_C
    floor_marginals: float  # gamma (Var b_W + Var b_C + Var eps)
    variance_coupling: float  # gamma 2 Cov(b_W, b_C)
    total: float

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


@dataclass(frozen=True)
class DecisionReport:
    winner: Winner
    llm_mse: float
    human_mse: float
    margin: float  # human_mse - llm_mse; positive favours the LLM
    llm_budget: Budget | None = None
    human_budget: Budget | None = None

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)


def _exact_terms(a: AnnotatorSpec) -> Dict[str, Fraction]:
    mu_w, mu_c = Fraction(a.mu_w), Fraction(a.mu_c)
    var_w, var_c = Fraction(a.var_w), Fraction(a.var_c)
    var_eps, cov = Fraction(a.var_eps), Fraction(a.cov_wc)
    return {
        "mu_w": mu_w,
        "mu_c": mu_c,
        "var_w": var_w,
        "var_c": var_c,
        "var_eps": var_eps,
        "cov": cov,
        "mu": mu_w + mu_c,
        "v": var_w + var_c + 2 * cov + var_eps,
        "gamma": Fraction(a.gamma),
    }


def _check_budget(k: Budget) -> None:
    if k == ASYMPTOTIC:
        return
    if isinstance(k, bool) or not isinstance(k, int) or k < 1:
        raise ValueError(f"budget must be an integer >= 1 or {ASYMPTOTIC!r}, got {k!r}")


def _exact_mse(a: AnnotatorSpec, k: Budget) -> Fraction:
    t = _exact_terms(a)
    reducible = Fraction(0) if k == ASYMPTOTIC else (1 - t["gamma"]) * t["v"] / k
    return t["mu"] ** 2 + t["gamma"] * t["v"] + reducible


def analytic_mse(a: AnnotatorSpec, k: Budget) -> MseBreakdown:
    _check_budget(k)
    t = _exact_terms(a)
    reducible = Fraction(0) if k == ASYMPTOTIC else (1 - t["gamma"]) * t["v"] / k
    return MseBreakdown(
        bias_sq=float(t["mu"] ** 2),
        correlation_floor=float(t["gamma"] * t["v"]),
        reducible_variance=float(reducible),
    )


def mse_curve(a: AnnotatorSpec, budgets: Sequence[Budget]) -> List[MseBreakdown]:
    return [analytic_mse(a, k) for k in budgets]


def error_floor(a: AnnotatorSpec) -> float:
    """mu^2 + gamma V, the limit of analytic_mse as k -> inf."""
    return float(_exact_mse(a, ASYMPTOTIC))


def coupling(a: AnnotatorSpec) -> CouplingReport:
    t = _exact_terms(a)
    i_mean = 2 * t["mu_w"] * t["mu_c"]
    i_var = 2 * t["cov"]
    return CouplingReport(
        i_mean=float(i_mean),
        i_var=float(i_var),
        superadditive_mean=i_mean > 0,
        superadditive_var=i_var > 0,
    )


def expanded_floor(a: AnnotatorSpec) -> FloorExpansion:
    t = _exact_terms(a)
    base = t["mu_w"] ** 2 + t["mu_c"] ** 2
    systematic = 2 * t["mu_w"] * t["mu_c"]
    marginals = t["gamma"] * (t["var_w"] + t["var_c"] + t["var_eps"])
    var_coupling = t["gamma"] * 2 * t["cov"]
    return FloorExpansion(
        base_magnitudes=float(base),
        systematic_coupling=float(systematic),
        floor_marginals=float(marginals),
        variance_coupling=float(var_coupling),
        total=float(base + systematic + marginals + var_coupling),
    )


def _decide(
    llm: Fraction, human: Fraction, llm_budget: Budget | None, human_budget: Budget | None
) -> DecisionReport:
    margin = human - llm
    if abs(margin) <= Fraction(TIE_MARGIN):
        winner: Winner = "tie"
    else:
        winner = "llm" if margin > 0 else "human"
    return DecisionReport(
        winner=winner,
        llm_mse=float(llm),
        human_mse=float(human),
        margin=float(margin),
        llm_budget=llm_budget,
        human_budget=human_budget,
    )


def superiority(
    a_llm: AnnotatorSpec, a_human: AnnotatorSpec, m: Budget, n: Budget
) -> DecisionReport:
    """Compare aggregated MSEs at budgets (m LLM samples, n human annotations)."""
    _check_budget(m)
    _check_budget(n)
    if (m == ASYMPTOTIC) != (n == ASYMPTOTIC):
        raise ValueError("asymptotic mode compares floors: set both budgets to asymptotic")
    return _decide(_exact_mse(a_llm, m), _exact_mse(a_human, n), m, n)


def budget_crossover(a_llm: AnnotatorSpec, a_human: AnnotatorSpec, m: int) -> int | None:
    """Smallest human budget n whose MSE beats the LLM at budget m, or None if never."""
    _check_budget(m)
    target = _exact_mse(a_llm, m) - Fraction(TIE_MARGIN)
    floor = _exact_mse(a_human, ASYMPTOTIC)
    if floor >= target:
        return None
    t = _exact_terms(a_human)
    reducible = (1 - t["gamma"]) * t["v"]
    if reducible == 0:
        return 1
    # floor + reducible / n < target  <=>  n > reducible / (target - floor)
    bound = reducible / (target - floor)
    return max(1, int(bound) + 1)


def direct_label_spec(spread: float) -> AnnotatorSpec:
    """Aggregated direct labels: unbiased, variance = population spread, uncorrelated."""
    return AnnotatorSpec.from_moments(mu=0.0, v=spread, gamma=0.0)


def single_direct_vs_llm(v_population_spread: float, a_llm: AnnotatorSpec) -> DecisionReport:
    """One LLM sample (mu_L^2 + V_L) against one direct label (population spread)."""
    if v_population_spread < 0.0:
        raise ValueError(f"population spread {v_population_spread} is negative")
    return _decide(_exact_mse(a_llm, 1), Fraction(v_population_spread), 1, 1)
