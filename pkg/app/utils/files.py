import logging
import os
import tempfile
from pathlib import Path
from typing import Union

from app.core.errors import ArgumentError, CorpusEncodingError

logger = logging.getLogger(__name__)

PathLike = Union[str, os.PathLike]


def atomic_write_text(path: PathLike, text: str) -> None:
    """
    Write UTF-8 text so that readers never see a partial file.

    Args:
        path: Destination file
        text: Full file contents
    """
    target = Path(path)
    directory = target.parent if str(target.parent) else Path(".")
    if not directory.is_dir():
        raise ArgumentError(f"directory does not exist: {directory}")
    fd, tmp_name = tempfile.mkstemp(prefix=f".{target.name}.", suffix=".tmp", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
            handle.write(text)
        os.replace(tmp_name, target)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    logger.info("wrote %s (%d bytes)", target, len(text.encode("utf-8")))


def read_utf8_text(path: PathLike) -> str:
    """
    Read a file that must be valid UTF-8.

    Args:
        path: Source file

    Returns:
        Decoded text
    """
    try:
        raw = Path(path).read_bytes()
    except FileNotFoundError:
        raise ArgumentError(f"file not found: {path}")
    except IsADirectoryError:
        raise ArgumentError(f"not a file: {path}")
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CorpusEncodingError(f"{path} is not valid UTF-8 (byte offset {exc.start})")
