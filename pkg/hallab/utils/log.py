# hallab/utils/log.py

import logging
import os

_FORMAT = "%(asctime)s %(levelname)s [%(name)s] %(message)s"
_configured = False


def get_logger(name: str) -> logging.Logger:
    """
    Return a package logger. The first call installs one stream handler on the
    'hallab' root logger; the level is taken from HALLAB_LOG_LEVEL (default INFO).
    """
    global _configured
    root = logging.getLogger("hallab")
    if not _configured:
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(_FORMAT))
        root.addHandler(handler)
        root.setLevel(os.environ.get("HALLAB_LOG_LEVEL", "INFO").upper())
        root.propagate = False
        _configured = True
    if name == "hallab" or name.startswith("hallab."):
        return logging.getLogger(name)
    return logging.getLogger(f"hallab.{name}")


def set_quiet(quiet: bool = True) -> None:
    """Raise the package log level to WARNING (used by --quiet)."""
    get_logger("hallab").setLevel(logging.WARNING if quiet else logging.INFO)
