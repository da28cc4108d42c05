"""Reading and writing masks and gray images as P5 graymaps and PNG files.

Files store the image with the top row first, which is the highest world y
(row ``j = height - 1`` of ``BinaryMask.bits``). Graymaps carry the world
frame in a header comment ``# scale=<m/px> origin=<x>,<y>`` so a mask
written here round-trips exactly; files without it load at 1 m/px with the
origin at (0, 0).
"""

from __future__ import annotations

import io
import re
from pathlib import Path

import numpy as np
from PIL import Image

from .percept import BinaryMask

_FRAME_RE = re.compile(r"scale=(\S+)\s+origin=(\S+),(\S+)")


class MaskFormatError(ValueError):
    pass


def _to_rows(bits: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(bits[::-1])


def pgm_bytes(values: np.ndarray, scale: float | None = None, origin=(0.0, 0.0)) -> bytes:
    """P5 graymap of a 2-D array in [0, 1] (or bool), maxval 255."""
    arr = np.asarray(values)
    if arr.ndim != 2:
        raise MaskFormatError("graymap needs a 2-D array")
    if arr.dtype == bool:
        px = arr.astype(np.uint8) * 255
    else:
        px = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = px.shape
    head = "P5\n"
    if scale is not None:
        head += f"# scale={float(scale)!r} origin={float(origin[0])!r},{float(origin[1])!r}\n"
    head += f"{w} {h}\n255\n"
    return head.encode("ascii") + _to_rows(px).tobytes()


def write_mask_pgm(mask: BinaryMask, path) -> None:
    Path(path).write_bytes(pgm_bytes(mask.bits, mask.scale, mask.origin))


def _tokens(data: bytes):
    """Yield (token, end offset) pairs from a PNM header, collecting comments."""
    pos, comments = 0, []
    out = []
    while len(out) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            raise MaskFormatError("truncated graymap header")
        if data[pos : pos + 1] == b"#":
            end = data.find(b"\n", pos)
            end = len(data) if end < 0 else end
            comments.append(data[pos + 1 : end].decode("ascii", "replace").strip())
            pos = end
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        out.append(data[start:pos].decode("ascii", "replace"))
    return out, pos + 1, comments


def read_pgm(path_or_bytes) -> tuple[np.ndarray, float, tuple[float, float]]:
    """Load a P5 graymap as float values in [0, 1], world-up row order."""
    data = path_or_bytes if isinstance(path_or_bytes, bytes) else Path(path_or_bytes).read_bytes()
    (magic, w, h, maxval), start, comments = _tokens(data)
    if magic != "P5":
        raise MaskFormatError(f"not a P5 graymap (magic {magic!r})")
    try:
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError:
        raise MaskFormatError("bad graymap dimensions") from None
    if w <= 0 or h <= 0 or not 0 < maxval < 65536:
        raise MaskFormatError("bad graymap dimensions")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = w * h * dtype.itemsize
    raw = data[start : start + need]
    if len(raw) < need:
        raise MaskFormatError("truncated graymap pixel data")
    px = np.frombuffer(raw, dtype=dtype).reshape(h, w).astype(float) / maxval
    scale, origin = 1.0, (0.0, 0.0)
    for c in comments:
        m = _FRAME_RE.search(c)
        if m:
            scale, origin = float(m.group(1)), (float(m.group(2)), float(m.group(3)))
    return px[::-1].copy(), scale, origin


def png_bytes(values: np.ndarray) -> bytes:
    """PNG of a mask (1-bit) or a [0, 1] image (8-bit gray), no metadata."""
    arr = np.asarray(values)
    if arr.dtype == bool:
        img = Image.fromarray(_to_rows(arr.astype(np.uint8) * 255)).convert("1")
    else:
        img = Image.fromarray(_to_rows(np.round(np.clip(arr, 0, 1) * 255).astype(np.uint8)))
    buf = io.BytesIO()
    img.save(buf, format="PNG", optimize=False)
    return buf.getvalue()


def read_image(path) -> tuple[np.ndarray, float, tuple[float, float]]:
    """Load a graymap or any Pillow-readable image as [0, 1] values."""
    data = Path(path).read_bytes()
    if data[:2] == b"P5":
        return read_pgm(data)
    with Image.open(io.BytesIO(data)) as img:
        px = np.asarray(img.convert("L"), dtype=float) / 255.0
    return px[::-1].copy(), 1.0, (0.0, 0.0)


def read_mask(path, threshold: float = 0.5, scale: float | None = None, origin=None) -> BinaryMask:
    """Load a mask; pixels brighter than ``threshold`` are occupied."""
    px, s, o = read_image(path)
    return BinaryMask(px > threshold, scale if scale is not None else s, origin if origin is not None else o)
