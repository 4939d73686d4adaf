"""
logging_config.py - Centralized logging configuration

Library modules only call logging.getLogger(__name__); entry points call
configure_logging() once to attach handlers.
"""

import logging
import os
from typing import Optional

LOG_FORMAT = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"

_configured = False


def configure_logging(name: str, level: Optional[str] = None, log_file: Optional[str] = None) -> logging.Logger:
    """
    Configure root handlers and return the named logger

    Args:
        name: Name of the logger to return (usually the service or command name)
        level: Log level name; falls back to LPP_LOG_LEVEL, then INFO
        log_file: Optional path of an additional log file

    Returns:
        logging.Logger: The configured logger
    """
    global _configured

    level_name = (level or os.getenv("LPP_LOG_LEVEL", "INFO")).upper()
    root = logging.getLogger()
    root.setLevel(getattr(logging, level_name, logging.INFO))

    if not _configured:
        handlers = [logging.StreamHandler()]
        if log_file:
            handlers.append(logging.FileHandler(log_file, encoding="utf-8"))
        formatter = logging.Formatter(LOG_FORMAT)
        for handler in handlers:
            handler.setFormatter(formatter)
            root.addHandler(handler)
        _configured = True

    return logging.getLogger(name)
