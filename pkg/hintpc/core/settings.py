"""Shared settings / defaults for hintpc."""

from __future__ import annotations

import logging
import os

from rich.console import Console
from rich.logging import RichHandler


def default_checkpoint_path() -> str:
    """Return the checkpoint path.

    Uses the HINTPC_CHECKPOINT env var if set; falls back to ``hint.ckpt`` in CWD.
    """
    return os.environ.get("HINTPC_CHECKPOINT", "hint.ckpt")


def default_seed() -> int:
    try:
        return int(os.environ.get("HINTPC_SEED", "0"))
    except ValueError:
        return 0


def log_level() -> int:
    """Log level from HINTPC_LOG (name or number); WARNING when unset or unknown."""
    raw = (os.environ.get("HINTPC_LOG") or "").strip()
    if not raw:
        return logging.WARNING
    if raw.isdigit():
        return int(raw)
    level = logging.getLevelName(raw.upper())
    return level if isinstance(level, int) else logging.WARNING


def configure_logging(level: int | None = None) -> None:
    """Install a rich handler on the package logger (stderr, idempotent)."""
    logger = logging.getLogger("hintpc")
    logger.setLevel(log_level() if level is None else level)
    if any(isinstance(h, RichHandler) for h in logger.handlers):
        return
    handler = RichHandler(console=Console(stderr=True), show_path=False, rich_tracebacks=False)
    handler.setFormatter(logging.Formatter("%(message)s"))
    logger.addHandler(handler)
    logger.propagate = False
