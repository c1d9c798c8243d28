import logging
import json
import datetime
import sys
import os
from contextlib import contextmanager
from logging.handlers import RotatingFileHandler
from contextvars import ContextVar
from typing import Optional, Any, Dict, Iterator

# Correlation ID: the scenario cell id while a grid cell is being computed
_correlation_id_ctx: ContextVar[Optional[str]] = ContextVar("correlation_id", default=None)

def set_correlation_id(cid: Optional[str]):
    """Sets the correlation ID for the current context."""
    _correlation_id_ctx.set(cid)

def get_correlation_id() -> Optional[str]:
    """Gets the current correlation ID."""
    return _correlation_id_ctx.get()

@contextmanager
def correlation_scope(cid: Optional[str]) -> Iterator[None]:
    """
    Tags every record emitted inside the block with `cid`,
    restoring the previous id on exit (cells may run back to back in one worker).
    """
    token = _correlation_id_ctx.set(cid)
    try:
        yield
    finally:
        _correlation_id_ctx.reset(token)

def level_from_name(name: Optional[str], default: int = logging.WARNING) -> int:
    """Maps 'debug'/'INFO'/... to a logging level; unknown names fall back to default."""
    if not name:
        return default
    level = logging.getLevelName(name.strip().upper())
    return level if isinstance(level, int) else default

class JSONFormatter(logging.Formatter):
    """
    Formatter that outputs one JSON object per log record.
    Includes correlation_id and the worker pid (grid cells may run in worker processes).
    """

    def format(self, record: logging.LogRecord) -> str:
        # 1. Base Data
        log_data: Dict[str, Any] = {
            "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
            "level": record.levelname,
            "component": record.name,
            "message": record.getMessage(),
            "pid": record.process,
        }

        # 2. Correlation ID
        cid = get_correlation_id()
        if cid:
            log_data["correlation_id"] = cid

        # 3. Exception Info
        if record.exc_info:
            if not record.exc_text:
                record.exc_text = self.formatException(record.exc_info)
            log_data["stack_trace"] = record.exc_text

        # 4. Numeric payloads (extra={"custom_metrics": {...}}), e.g. cell timings
        if hasattr(record, "custom_metrics"):
            log_data["metrics"] = record.custom_metrics  # type: ignore

        return json.dumps(log_data, default=str)

def setup_logging(log_file: Optional[str] = None, level: int = logging.INFO):
    """
    Configures the root logger with a JSON handler.

    With a log file: rotating file handler (5MB, 5 backups).
    Without one: stderr, so stdout stays reserved for CLI results.
    """
    root_logger = logging.getLogger()
    root_logger.setLevel(level)

    # Remove existing handlers to avoid duplicates
    for h in root_logger.handlers[:]:
        root_logger.removeHandler(h)

    if log_file:
        log_dir = os.path.dirname(log_file)
        if log_dir and not os.path.exists(log_dir):
            os.makedirs(log_dir)

        handler: logging.Handler = RotatingFileHandler(
            log_file,
            maxBytes=5 * 1024 * 1024,  # 5MB
            backupCount=5,
            encoding="utf-8"
        )
    else:
        handler = logging.StreamHandler(sys.stderr)

    handler.setFormatter(JSONFormatter())
    root_logger.addHandler(handler)

    logging.getLogger("System").debug("Logging system initialized.")
