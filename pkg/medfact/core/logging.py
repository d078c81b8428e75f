"""Logging setup shared by the medfact command and the scripts.

Records go to stderr; stdout carries the JSON result of a command. With LOG_FORMAT=json every
record, including the `extra={...}` context the stages attach (stage, counts, model, attempt),
is emitted as one JSON object per line.
"""

from __future__ import annotations

import logging
import logging.config
import os
from typing import Any, Dict

DEFAULT_FORMAT = "%(asctime)s | %(levelname)s | %(name)s | %(message)s"
DEFAULT_JSON_FIELDS = "%(asctime)s %(levelname)s %(name)s %(message)s"

# third-party loggers that log every HTTP request at INFO
QUIET_LOGGERS = ("httpx", "openai", "backoff")


def _json_requested() -> bool:
    return os.getenv("LOG_FORMAT", "plain").lower() == "json"


def _formatters() -> Dict[str, Dict[str, Any]]:
    formatters: Dict[str, Dict[str, Any]] = {
        "plain": {
            "format": os.getenv("LOG_FORMAT_STRING", DEFAULT_FORMAT),
            "datefmt": "%Y-%m-%dT%H:%M:%S%z",
        }
    }
    if _json_requested():
        try:
            from pythonjsonlogger import jsonlogger  # type: ignore
        except ImportError:
            formatters["json"] = formatters["plain"]
        else:
            formatters["json"] = {
                "()": jsonlogger.JsonFormatter,
                "fmt": os.getenv("LOG_JSON_FIELDS", DEFAULT_JSON_FIELDS),
                "rename_fields": {"levelname": "level", "name": "logger"},
            }
    return formatters


def logging_config(level: str) -> Dict[str, Any]:
    """dictConfig for a stderr handler at `level`, with QUIET_LOGGERS held at WARNING."""

    handler = {
        "class": "logging.StreamHandler",
        "stream": "ext://sys.stderr",
        "formatter": "json" if _json_requested() else "plain",
        "level": level,
    }
    loggers: Dict[str, Dict[str, Any]] = {
        name: {"handlers": ["stderr"], "level": "WARNING", "propagate": False} for name in QUIET_LOGGERS
    }
    return {
        "version": 1,
        "disable_existing_loggers": False,
        "formatters": _formatters(),
        "handlers": {"stderr": handler},
        "root": {"handlers": ["stderr"], "level": level},
        "loggers": loggers,
    }


def configure_logging(level: str | None = None) -> None:
    """Apply logging_config; `level` (e.g. from --log-level) wins over LOG_LEVEL."""

    level = (level or os.getenv("LOG_LEVEL", "INFO")).upper()
    logging.config.dictConfig(logging_config(level))
    logging.getLogger(__name__).debug("Logging configured", extra={"level": level, "json": _json_requested()})
