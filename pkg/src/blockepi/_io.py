"""Output helpers: atomic file writes."""

from __future__ import annotations

import contextlib
import os
import tempfile
from pathlib import Path


@contextlib.contextmanager
def open_output(dest):
    """Yield a text stream for ``dest``.

    Paths are written through a temporary sibling that replaces the target
    only when the block exits cleanly, so failed runs leave no partial file.
    Open streams are passed through untouched.
    """
    if hasattr(dest, "write"):
        yield dest
        return
    path = Path(dest)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="", encoding="utf-8") as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise
