"""Atomic file writes and 8-bit PNG round-trips."""

from __future__ import annotations

import os
import tempfile

import numpy as np
from PIL import Image


def atomic_write_bytes(path, data: bytes) -> None:
    """Write via a temp file in the same directory, then rename."""
    path = os.fspath(path)
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)


def write_png(path, img: np.ndarray) -> None:
    """img: (H, W, 3) or (H, W, 4) float in [0,1] or uint8."""
    if img.dtype != np.uint8:
        img = to_uint8(img)
    import io

    buf = io.BytesIO()
    Image.fromarray(img).save(buf, format="PNG")
    atomic_write_bytes(path, buf.getvalue())


def read_png(path) -> np.ndarray:
    """PNG to float array in [0,1], shape (H, W, C)."""
    with Image.open(path) as im:
        arr = np.asarray(im)
    return arr.astype(np.float64) / 255.0
