# telemetry.py
"""
Logging + tracing initializer.
Call init_logging() and init_tracing() once at CLI startup.

All settings come from the `telemetry:` section of the experiment file;
nothing is read from the environment so that a run is fully described by
(config, seed).
"""

from __future__ import annotations

import logging
import sys
from typing import Dict

import structlog

from opentelemetry import trace
from opentelemetry.sdk.resources import Resource
from opentelemetry.sdk.trace import TracerProvider
from opentelemetry.sdk.trace.export import BatchSpanProcessor, ConsoleSpanExporter, SpanExporter


def _parse_headers(raw: str | None) -> Dict[str, str]:
    """Header string `k1=v1,k2=v2` as a dict; items without `=` are skipped."""
    items = (part.split("=", 1) for part in (raw or "").split(",") if "=" in part)
    return {key.strip(): value.strip() for key, value in items if key.strip()}


def init_logging(level: str = "info", json_logs: bool = False) -> None:
    """
    Configure structlog. Logs go to stderr so that stdout and the output
    directory stay byte-identical across runs.
    """
    renderer: structlog.types.Processor
    if json_logs:
        renderer = structlog.processors.JSONRenderer(sort_keys=True)
    else:
        renderer = structlog.dev.ConsoleRenderer(colors=False)

    structlog.configure(
        processors=[
            structlog.contextvars.merge_contextvars,
            structlog.processors.add_log_level,
            structlog.processors.StackInfoRenderer(),
            structlog.processors.format_exc_info,
            renderer,
        ],
        wrapper_class=structlog.make_filtering_bound_logger(
            logging.getLevelName(level.upper())
        ),
        logger_factory=structlog.PrintLoggerFactory(file=sys.stderr),
        cache_logger_on_first_use=False,
    )


def init_tracing(
    exporter: str = "none",
    service_name: str = "clusterlab",
    endpoint: str = "http://localhost:4318",
    headers: str | None = None,
) -> bool:
    """
    Initialize OpenTelemetry tracing.

        exporter  - "none" (default, spans stay no-op), "console" or "otlp"
        endpoint  - OTLP/HTTP collector base URL (only for "otlp")
        headers   - optional comma-separated key=value headers (only for "otlp")

    Returns True when a provider was installed.
    """
    if exporter == "none":
        return False
    if exporter not in ("console", "otlp"):
        raise ValueError(f"Unknown telemetry exporter '{exporter}'")

    provider = TracerProvider(resource=Resource.create({"service.name": service_name}))
    trace.set_tracer_provider(provider)

    span_exporter: SpanExporter
    if exporter == "console":
        span_exporter = ConsoleSpanExporter(out=sys.stderr)
    else:
        # Local import: the OTLP exporter pulls in protobuf/requests
        from opentelemetry.exporter.otlp.proto.http.trace_exporter import OTLPSpanExporter

        span_exporter = OTLPSpanExporter(
            endpoint=f"{endpoint.rstrip('/')}/v1/traces",
            headers=_parse_headers(headers) or None,
            timeout=10,
        )

    provider.add_span_processor(BatchSpanProcessor(span_exporter))

    tracer = trace.get_tracer("startup")
    with tracer.start_as_current_span("tracing_init_ok"):
        pass
    return True
