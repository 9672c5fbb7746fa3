"""Per-run draw tracker as a context manager."""

from __future__ import annotations

from contextlib import contextmanager
from typing import Iterator

import structlog

from .budget import Budget, DrawTracker

log = structlog.get_logger(__name__)


@contextmanager
def draw_guard(budget: Budget | None = None) -> Iterator[DrawTracker]:
    tracker = DrawTracker(budget)
    try:
        yield tracker
    finally:
        near = tracker.near_threshold()
        emit = log.warning if near else log.info
        emit(
            "draw_budget_closed",
            total_points=tracker.total_points,
            batches=tracker.batches,
            cap=tracker.budget.max_points,
            near_threshold=near,
        )
