"""On-disk map archive and heatmap rendering.

A map file is a 16-byte header (``b"LEAM"``, u32 height, u32 width, u32
flags, little-endian) followed by row-major little-endian f32 values. The
archive directory holds one such file per (model, layer, ordered pair) and
an ``index.csv`` describing them.
"""
import csv
import io
import re
import struct
from dataclasses import dataclass, fields
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import FormatError
from .maps import normalize_map, upsample

MAP_MAGIC = b"LEAM"
FLAG_NORMALIZED = 1
INDEX_NAME = "index.csv"


@dataclass(frozen=True)
class MapRecord:
    pair_id: str
    model: str
    layer: str
    path: str
    identity: str
    anchor: str
    positive: str
    height: int  # image resolution for upsampling
    width: int
    cosine: str
    loss: str
    seed: int


INDEX_COLUMNS = tuple(f.name for f in fields(MapRecord))


def write_map(path, values, flags=0):
    values = np.ascontiguousarray(values, dtype="<f4")
    if values.ndim != 2:
        raise ValueError("map must be 2-D")
    h, w = values.shape
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(MAP_MAGIC + struct.pack("<III", h, w, flags) + values.tobytes())


def read_map(path):
    """Return (float64 [H,W] array, flags)."""
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:4] != MAP_MAGIC:
        raise FormatError(f"{path}: not a LEAM map file")
    h, w, flags = struct.unpack("<III", data[4:16])
    if len(data) != 16 + 4 * h * w:
        raise FormatError(f"{path}: payload length does not match {h}x{w}")
    return np.frombuffer(data, dtype="<f4", offset=16).reshape(h, w).astype(np.float64), flags


def pair_id(identity, anchor, positive):
    return f"{identity}:{anchor}>{positive}"


def split_pair_id(pid):
    identity, rest = pid.split(":", 1)
    anchor, positive = rest.split(">", 1)
    return identity, anchor, positive


def _safe(name):
    return re.sub(r"[^A-Za-z0-9._-]+", "_", name)


def map_relpath(model, layer, identity, anchor, positive):
    return f"maps/{_safe(model)}/{_safe(layer)}/{_safe(identity)}/{_safe(anchor)}__{_safe(positive)}.leam"


def write_index(root, records):
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    with open(root / INDEX_NAME, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(INDEX_COLUMNS)
        for rec in sorted(records, key=lambda r: (r.model, r.layer, r.pair_id)):
            writer.writerow([getattr(rec, c) for c in INDEX_COLUMNS])


def read_index(root):
    root = Path(root)
    path = root / INDEX_NAME
    if not path.exists():
        return []
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for row in rows:
        row["height"] = int(row["height"])
        row["width"] = int(row["width"])
        row["seed"] = int(row["seed"])
        out.append(MapRecord(**row))
    return out


def load_upsampled(root, record):
    """Max-normalised map of ``record`` resized to its image resolution."""
    values, flags = read_map(Path(root) / record.path)
    normalized = values if flags & FLAG_NORMALIZED else normalize_map(values)
    return upsample(normalized, (record.height, record.width))


# -- heatmaps ------------------------------------------------------------------

@lru_cache(maxsize=1)
def warm_colormap():
    """256 x 3 uint8 ramp black -> red -> yellow -> white, read from package data."""
    text = resources.files("leam").joinpath("data/warm_colormap.csv").read_text(encoding="utf-8")
    rows = list(csv.reader(io.StringIO(text)))[1:]
    table = np.array([[int(v) for v in row[1:]] for row in rows], dtype=np.uint8)
    if table.shape != (256, 3):
        raise FormatError("warm colormap must have 256 RGB entries")
    table.setflags(write=False)
    return table


def to_gray(normalized):
    return np.rint(np.clip(normalized, 0.0, 1.0) * 255.0).astype(np.uint8)


def to_warm(normalized):
    return warm_colormap()[to_gray(normalized)]
