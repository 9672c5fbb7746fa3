import pytest
import structlog


@pytest.fixture(autouse=True)
def _reset_logging():
    # the CLI binds its logger to the runner's stderr, which is closed afterwards
    yield
    structlog.reset_defaults()
    structlog.contextvars.clear_contextvars()
