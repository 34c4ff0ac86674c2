from typing import Dict, List, Tuple


class PtEstimationError(ValueError):
    """Base class for every input or invariant error raised by this package."""


class TableValidationError(PtEstimationError):
    def __init__(self, source: str, problems: List[Tuple[int, str]]):
        self.source = source
        self.problems = problems
        shown = "; ".join(f"line {line}: {msg}" for line, msg in problems[:20])
        more = f" (+{len(problems) - 20} more)" if len(problems) > 20 else ""
        super().__init__(f"{source}: {len(problems)} invalid row(s): {shown}{more}")


class MissingGroundTruthError(PtEstimationError):
    pass


class EmptyJoinError(PtEstimationError):
    def __init__(self, message: str, counts: Dict[str, int]):
        self.counts = counts
        detail = ", ".join(f"{k}={v}" for k, v in counts.items())
        super().__init__(f"{message} ({detail})")


class InvalidSpecError(PtEstimationError):
    pass


class SupportViolationError(PtEstimationError):
    """q_c > 0 on a community with w_c = 0: the chi-squared divergence is unbounded."""


class UndefinedCorrelationError(PtEstimationError):
    pass


class InsufficientPairsError(PtEstimationError):
    pass


class IdentityViolationError(PtEstimationError):
    pass
