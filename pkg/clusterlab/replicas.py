"""
replicas.py
-----------
Purpose: Run one Monte Carlo task per replica, reproducibly.

Key ideas:
- Each replica gets its own child Generator spawned from the run's parent rng
- Optional thread pool; results always come back in replica order, so the
  output does not depend on the thread count
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, TypeVar

import numpy as np
import structlog
from opentelemetry import trace

log = structlog.get_logger(__name__)
tracer = trace.get_tracer(__name__)

T = TypeVar("T")


def spawn_streams(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    if n < 0:
        raise ValueError("replica count must be >= 0")
    return rng.spawn(n)


def run_replicas(
    task: Callable[[np.random.Generator], T],
    rng: np.random.Generator,
    n: int,
    threads: int = 1,
    label: str = "replicas",
) -> list[T]:
    streams = spawn_streams(rng, n)
    with tracer.start_as_current_span(label, attributes={"replicas": n, "threads": threads}):
        if threads <= 1 or n <= 1:
            results = [task(s) for s in streams]
        else:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(task, streams))
    log.debug("replicas_done", label=label, replicas=n, threads=threads)
    return results
