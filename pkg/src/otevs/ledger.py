"""Counters of prepared quantum-state copies."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

PHASES = ("critic", "alpha", "theta")


@dataclass
class ResourceLedger:
    """Monotone copy counters.

    Training phases sum to :attr:`total`. Evaluation copies and the symbolic
    copies of the infinite-shot scheme are kept apart so they never enter the
    per-iteration audit.
    """

    phases: dict = field(default_factory=lambda: {p: 0 for p in PHASES})
    evaluation: int = 0
    symbolic: dict = field(default_factory=lambda: defaultdict(int))

    def record(self, phase: str, copies: int) -> None:
        if copies < 0:
            raise ValueError("copy counts only grow")
        if phase == "evaluation":
            self.evaluation += int(copies)
        elif phase in self.phases:
            self.phases[phase] += int(copies)
        else:
            raise KeyError(f"unknown phase {phase!r}")

    def record_symbolic(self, phase: str, copies: int) -> None:
        self.symbolic[phase] += int(copies)

    @property
    def total(self) -> int:
        return sum(self.phases.values())

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "phases": dict(self.phases),
            "evaluation": self.evaluation,
            "symbolic": dict(self.symbolic),
        }
