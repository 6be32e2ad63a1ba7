from __future__ import annotations

import logging
import os
from typing import Optional, Union

from rich.console import Console
from rich.logging import RichHandler

_HANDLER_NAME = "unrect-rich"


def setup_logging(level: Optional[Union[str, int]] = None, console: Optional[Console] = None) -> logging.Logger:
    """Route the ``unrect`` logger tree through a single RichHandler.

    Level resolution: explicit argument, then ``UNRECT_LOG_LEVEL``, then WARNING.
    Calling it again only updates the level.
    """
    if level is None:
        level = os.getenv("UNRECT_LOG_LEVEL", "WARNING")
    if isinstance(level, str):
        level = logging.getLevelName(level.strip().upper())
        if not isinstance(level, int):
            level = logging.WARNING

    logger = logging.getLogger("unrect")
    logger.setLevel(level)
    if not any(getattr(h, "name", None) == _HANDLER_NAME for h in logger.handlers):
        handler = RichHandler(
            console=console or Console(stderr=True),
            show_path=False,
            rich_tracebacks=True,
            markup=False,
        )
        handler.set_name(_HANDLER_NAME)
        handler.setFormatter(logging.Formatter("%(name)s: %(message)s"))
        logger.addHandler(handler)
        logger.propagate = False
    return logger
