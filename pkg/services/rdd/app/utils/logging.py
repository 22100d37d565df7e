"""Logging configuration and utilities"""

import logging
import sys
from contextlib import contextmanager
from typing import Iterator

import numpy as np
import structlog
from structlog.stdlib import LoggerFactory

from ..config import settings


def _numpy_to_python(logger, method_name, event_dict):
    """JSONRenderer cannot encode numpy scalars"""
    for key, value in event_dict.items():
        if isinstance(value, np.generic):
            event_dict[key] = value.item()
    return event_dict


def setup_logging(level: str = None, json_logs: bool = None):
    """Configure structured logging"""
    level = (level or settings.log_level).upper()
    json_logs = settings.json_logs if json_logs is None else json_logs

    renderer = structlog.processors.JSONRenderer() if json_logs else structlog.dev.ConsoleRenderer(colors=False)

    structlog.configure(
        processors=[
            structlog.contextvars.merge_contextvars,
            structlog.stdlib.filter_by_level,
            structlog.stdlib.add_logger_name,
            structlog.stdlib.add_log_level,
            structlog.processors.TimeStamper(fmt="iso"),
            structlog.processors.format_exc_info,
            _numpy_to_python,
            renderer,
        ],
        context_class=dict,
        logger_factory=LoggerFactory(),
        wrapper_class=structlog.stdlib.BoundLogger,
        cache_logger_on_first_use=True,
    )

    # stdout is reserved for cli output
    logging.basicConfig(
        format="%(message)s",
        stream=sys.stderr,
        level=getattr(logging, level),
        force=True,
    )

    logging.getLogger("uvicorn.access").setLevel(logging.WARNING)


@contextmanager
def run_context(**context) -> Iterator[None]:
    """Attach run identifiers (seed, digests) to every log line inside the block"""
    with structlog.contextvars.bound_contextvars(**context):
        yield
