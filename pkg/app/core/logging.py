import logging
import sys
from typing import Optional

from app.core.config import settings

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def configure_logging(level: Optional[str] = None) -> None:
    """Send log records to stderr; stdout is reserved for command output."""
    root = logging.getLogger("app")
    root.setLevel((level or settings.LOG_LEVEL).upper())
    for handler in root.handlers:
        if getattr(handler, "_spinor_handler", False):
            # sys.stderr may have been swapped and the old stream closed; never flush it
            handler.acquire()
            try:
                handler.stream = sys.stderr
            finally:
                handler.release()
            return
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    handler._spinor_handler = True
    root.addHandler(handler)
