"""Report records shared by the integrand, grid and estimate checks."""
from dataclasses import dataclass, field
import math


@dataclass
class EstimateReport:
    """Measured sides of one inequality ``lhs <= c * rhs``.

    ``implied_constant`` is ``lhs / rhs`` (0 when both sides vanish) and the
    verdict passes iff it does not exceed ``budget``.
    """

    name: str
    lhs: float
    rhs: float
    budget: float = math.inf
    params: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.lhs = float(self.lhs)
        self.rhs = float(self.rhs)
        if not (math.isfinite(self.lhs) and math.isfinite(self.rhs)):
            raise ValueError(f"{self.name}: non-finite sides lhs={self.lhs} rhs={self.rhs}")
        if self.lhs < 0 or self.rhs < 0:
            raise ValueError(f"{self.name}: negative sides lhs={self.lhs} rhs={self.rhs}")

    @property
    def implied_constant(self):
        if self.rhs == 0.0:
            return 0.0 if self.lhs == 0.0 else math.inf
        return self.lhs / self.rhs

    @property
    def passed(self):
        return self.implied_constant <= self.budget

    @property
    def verdict(self):
        return "pass" if self.passed else "fail"

    def row(self):
        """Flat mapping used for CSV emission."""
        out = {"name": self.name, "lhs": self.lhs, "rhs": self.rhs,
               "implied_constant": self.implied_constant, "budget": self.budget,
               "verdict": self.verdict}
        out.update(self.params)
        return out
