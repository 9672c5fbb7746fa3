"""
Draw accounting for a single run.

Every sampler that generates points (centres, cluster offsets, reference points
for Monte Carlo integrals) reports the count to a DrawTracker. The tracker
belongs to one run, is opened by `guard.draw_guard()` and compares the running
total with the `budget:` section of the experiment file.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass


class DrawBudgetExceeded(RuntimeError):
    """A strict budget refused a batch. `attempted` includes the refused batch."""

    def __init__(self, attempted: int, cap: int, detail: str = ""):
        super().__init__(f"Draw budget exceeded: attempted {attempted} > cap {cap}. {detail}")
        self.attempted = attempted
        self.cap = cap
        self.detail = detail


@dataclass(frozen=True)
class Budget:
    """
    max_points == 0 means unlimited. In "soft" mode the cap is only reported,
    in "strict" mode the batch that reaches it raises.
    """
    max_points: int = 0
    warn_threshold_pct: float = 0.8
    enforce_mode: str = "strict"

    @property
    def enabled(self) -> bool:
        return self.max_points > 0


class DrawTracker:
    """Running point count for one run; safe to share across replica threads."""

    def __init__(self, budget: Budget | None = None):
        self.budget = budget or Budget()
        self.total_points: int = 0
        self.batches: int = 0
        self._lock = threading.Lock()

    def add_draws(self, n: int, context: str = "") -> int:
        """Record `n` more points and return the new total."""
        with self._lock:
            total = self.total_points + int(n)
            if self.budget.enabled and self.budget.enforce_mode == "strict" and total >= self.budget.max_points:
                raise DrawBudgetExceeded(attempted=total, cap=self.budget.max_points, detail=context)
            self.total_points = total
            self.batches += 1
            return total

    def near_threshold(self) -> bool:
        return self.budget.enabled and self.total_points >= self.budget.max_points * self.budget.warn_threshold_pct
