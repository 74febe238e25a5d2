"""Logging setup shared by the CLI and the batch scripts."""

import logging

from rich.logging import RichHandler


def configure_logging(level: int = logging.INFO) -> None:
    """Route package logs through a rich handler.

    Safe to call more than once; the handler is only installed the first time.
    """
    root = logging.getLogger("song_speech_emotion")
    root.setLevel(level)
    if not any(isinstance(h, RichHandler) for h in root.handlers):
        handler = RichHandler(show_path=False, rich_tracebacks=True)
        handler.setFormatter(logging.Formatter("%(name)s: %(message)s"))
        root.addHandler(handler)
    root.propagate = False
