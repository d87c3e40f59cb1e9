"""Reading and writing the raster formats used on the command line.

Images: 8-bit RGB PNG, or raw planar files (``.rgb``/``.raw``) with an
8-byte header (u32 height, u32 width, little-endian) followed by the R, G
and B planes. Masks and grayscale heatmaps: 8-bit PNG or binary PGM (P5).
"""
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import FormatError

RAW_SUFFIXES = {".rgb", ".raw"}


def read_rgb(path):
    """Return a uint8 array of shape [H, W, 3]."""
    path = Path(path)
    if path.suffix.lower() in RAW_SUFFIXES:
        data = path.read_bytes()
        if len(data) < 8:
            raise FormatError(f"{path}: truncated raw header")
        h, w = struct.unpack("<II", data[:8])
        if len(data) != 8 + 3 * h * w:
            raise FormatError(f"{path}: payload length does not match {h}x{w}x3")
        planes = np.frombuffer(data, dtype=np.uint8, offset=8).reshape(3, h, w)
        return np.ascontiguousarray(planes.transpose(1, 2, 0))
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def write_raw_rgb(path, rgb):
    rgb = np.asarray(rgb, dtype=np.uint8)
    h, w, _ = rgb.shape
    Path(path).write_bytes(struct.pack("<II", h, w) + np.ascontiguousarray(rgb.transpose(2, 0, 1)).tobytes())


def write_png(path, array):
    """Write uint8 [H,W] (grayscale) or [H,W,3] (RGB) as PNG."""
    array = np.asarray(array, dtype=np.uint8)
    mode = "L" if array.ndim == 2 else "RGB"
    Image.fromarray(array, mode=mode).save(path, format="PNG", optimize=False)


def _pgm_tokens(data):
    pos = 0
    tokens = []
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header")
        tokens.append(data[start:pos])
    return tokens, pos + 1


def read_gray(path):
    """Read an 8-bit single-channel PGM or PNG as a uint8 [H, W] array."""
    path = Path(path)
    data = path.read_bytes()
    if data[:2] == b"P5":
        tokens, offset = _pgm_tokens(data)
        try:
            w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
        except ValueError as exc:
            raise FormatError(f"{path}: malformed PGM header") from exc
        if maxval > 255:
            raise FormatError(f"{path}: only 8-bit PGM is supported")
        if len(data) - offset < w * h:
            raise FormatError(f"{path}: truncated PGM payload")
        return np.frombuffer(data, dtype=np.uint8, count=w * h, offset=offset).reshape(h, w).copy()
    with Image.open(path) as im:
        if im.mode not in ("L", "P"):
            raise FormatError(f"{path}: expected a single-channel 8-bit image, got mode {im.mode}")
        return np.asarray(im, dtype=np.uint8).copy()


def write_pgm(path, array):
    array = np.asarray(array, dtype=np.uint8)
    h, w = array.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(array).tobytes())
