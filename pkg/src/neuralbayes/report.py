"""Per-term loss breakdowns attached to every objective evaluation."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass
class ObjectiveReport:
    """Weighted contributions of one loss evaluation; total is their sum."""

    mi_term: float = 0.0
    prior_term: float = 0.0
    smooth_term: float = 0.0
    total: float = 0.0

    def as_record(self, step: int) -> dict:
        return {"step": step, "mi_term": self.mi_term, "prior_term": self.prior_term,
                "smooth_term": self.smooth_term, "total": self.total}

    @staticmethod
    def average(reports: list["ObjectiveReport"]) -> "ObjectiveReport":
        n = len(reports)
        return ObjectiveReport(
            mi_term=sum(r.mi_term for r in reports) / n,
            prior_term=sum(r.prior_term for r in reports) / n,
            smooth_term=sum(r.smooth_term for r in reports) / n,
            total=sum(r.total for r in reports) / n,
        )
