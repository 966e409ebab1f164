# actions/images.py
from pathlib import Path
from typing import Sequence, Tuple

import numpy as np

from errors import DimensionError, InvalidInputError


def _pgm_bytes(pixels: np.ndarray) -> bytes:
    height, width = pixels.shape
    return f"P5\n{width} {height}\n255\n".encode("ascii") + pixels.astype(np.uint8).tobytes()


def render_pgm(x: Sequence[int], width: int, height: int, path) -> Path:
    """Binary PGM, +1 -> white (255), -1 -> black (0)."""
    arr = np.asarray(x, dtype=np.int64)
    if arr.shape != (width * height,):
        raise DimensionError(f"{arr.size} pixels do not fill a {width}x{height} image")
    if not np.all(np.abs(arr) == 1):
        raise InvalidInputError("image pixels must be -1 or +1")
    path = Path(path)
    path.write_bytes(_pgm_bytes(np.where(arr > 0, 255, 0).reshape(height, width)))
    return path


def render_grid_pgm(inputs: Sequence[Sequence[int]], width: int, height: int, cols: int, path) -> Path:
    """All samples tiled into one image, separated by a one-pixel black gutter."""
    if not inputs:
        raise InvalidInputError("nothing to render")
    cols = max(1, min(cols, len(inputs)))
    rows = -(-len(inputs) // cols)
    canvas = np.zeros((rows * (height + 1) - 1, cols * (width + 1) - 1), dtype=np.uint8)
    for k, x in enumerate(inputs):
        arr = np.asarray(x, dtype=np.int64)
        if arr.shape != (width * height,):
            raise DimensionError(f"sample {k} has {arr.size} pixels, expected {width * height}")
        r, c = divmod(k, cols)
        top, left = r * (height + 1), c * (width + 1)
        canvas[top:top + height, left:left + width] = np.where(arr > 0, 255, 0).reshape(height, width)
    path = Path(path)
    path.write_bytes(_pgm_bytes(canvas))
    return path


def load_pgm(path) -> Tuple[Tuple[int, ...], int, int]:
    """Read a P5 file back into (bipolar pixels, width, height); >= 128 counts as +1."""
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise InvalidInputError(f"{path}: truncated PGM header")
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise InvalidInputError(f"{path}: not a binary PGM (P5) file")
    width, height, maxval = (int(t) for t in tokens[1:])
    pixels = np.frombuffer(data[pos + 1:], dtype=np.uint8)
    if pixels.size < width * height or maxval > 255:
        raise InvalidInputError(f"{path}: pixel data does not match {width}x{height}")
    threshold = (maxval + 1) // 2
    x = tuple(1 if p >= threshold else -1 for p in pixels[:width * height].tolist())
    return x, width, height
