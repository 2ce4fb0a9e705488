"""Lossless text formatting and atomic file writes."""

import os
import tempfile
from pathlib import Path

import numpy as np


def fmt(x):
    """17 significant digits: round-trips every float64 exactly."""
    return format(float(x), ".17g")


def format_matrix(matrix):
    m = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    return "".join(",".join(fmt(x) for x in row) + "\n" for row in m)


def atomic_write_text(path, text):
    """Write to a sibling temp file then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
