import json

import pytest
import structlog

from clusterlab.telemetry import _parse_headers, init_logging, init_tracing


def test_parse_headers():
    """Goal: comma-separated key=value pairs become a dict; junk items are skipped."""
    assert _parse_headers("authorization=Bearer abc, env=prod") == {"authorization": "Bearer abc", "env": "prod"}
    assert _parse_headers("a=b=c,novalue,,=x") == {"a": "b=c"}
    assert _parse_headers(None) == {}


def test_json_logs_go_to_stderr(capsys):
    """Goal: JSON logging writes sorted-key records with the level to stderr and nothing to stdout."""
    init_logging("info", json_logs=True)
    structlog.get_logger("t").info("hello", replicas=3)
    structlog.get_logger("t").debug("hidden")
    out, err = capsys.readouterr()
    assert out == ""
    lines = [json.loads(line) for line in err.splitlines()]
    assert lines == [{"event": "hello", "level": "info", "replicas": 3}]


def test_tracing_exporters():
    """Goal: 'none' installs nothing; an unknown exporter is refused."""
    assert init_tracing("none") is False
    with pytest.raises(ValueError):
        init_tracing("zipkin")
