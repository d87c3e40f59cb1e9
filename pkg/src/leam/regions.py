"""Facial-region masks, pixel selection and per-class correlation reports."""
import csv
import io
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import DimensionError, FormatError
from .imageio import read_gray

CLASS_NAMES = (
    "background", "face", "nose", "inner mouth", "upper lip", "lower lip",
    "left eye", "right eye", "left eyebrow", "right eyebrow", "left ear",
    "right ear", "hair", "neck", "clothes", "eyeglasses", "hat", "earrings",
    "necklace",
)
NUM_CLASSES = len(CLASS_NAMES)
REPORT_COLUMNS = ("class", "pixels", "absolute_percent", "relative_percent")


@dataclass(frozen=True)
class SegmentationMask:
    labels: np.ndarray  # uint8 [H, W]

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2:
            raise DimensionError("mask labels must be 2-D")
        if labels.size and int(labels.max()) >= NUM_CLASSES:
            raise FormatError(f"label {int(labels.max())} outside 0..{NUM_CLASSES - 1}")

    @property
    def shape(self):
        return self.labels.shape


@dataclass(frozen=True)
class PixelSelection:
    rows: np.ndarray
    cols: np.ndarray
    shape: tuple
    mode: str  # "threshold" | "top-percent"
    parameter: float
    layer: str = ""
    requested: int = 0  # nominal count for top-percent mode

    def __len__(self):
        return len(self.rows)

    @property
    def scarce(self):
        return self.mode == "top-percent" and len(self.rows) < self.requested

    def coordinates(self):
        return set(zip(self.rows.tolist(), self.cols.tolist()))


@dataclass
class CorrelationReport:
    pixels: np.ndarray  # int64 [NUM_CLASSES]
    absolute: np.ndarray
    relative: np.ndarray
    selected: int
    total: int
    count: int = 1  # number of reports merged into this one
    meta: dict = field(default_factory=dict)

    @property
    def empty(self):
        return self.selected == 0

    def rows(self):
        for k, name in enumerate(CLASS_NAMES):
            yield name, self.pixels[k], self.absolute[k], self.relative[k]

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for name, px, ab, rel in self.rows():
            writer.writerow([name, fmt_count(px), f"{ab:.6g}", f"{rel:.6g}"])
        return buf.getvalue()


def fmt_count(value):
    value = float(value)
    return str(int(value)) if value.is_integer() else f"{value:.6g}"


def load_mask(path):
    return SegmentationMask(read_gray(path))


def select_by_value_threshold(map_, t, layer=""):
    """Pixels whose value is strictly greater than ``t``."""
    map_ = np.asarray(map_, dtype=np.float64)
    rows, cols = np.nonzero(map_ > t)
    return PixelSelection(rows, cols, map_.shape, "threshold", float(t), layer)


def top_count(p, total):
    """ceil(p/100 * total), computed on the decimal value of ``p``."""
    return math.ceil(Fraction(str(p)) * total / 100)


def select_top_percent(map_, p, layer=""):
    """The ceil(p% of H*W) largest pixels, ties in row-major order.

    Never selects pixels with zero activation, so fewer than nominal may be
    returned.
    """
    if not 0 < p <= 100:
        raise ValueError("p must lie in (0, 100]")
    map_ = np.asarray(map_, dtype=np.float64)
    flat = map_.ravel()
    k = top_count(p, flat.size)
    order = np.argsort(-flat, kind="stable")
    positive = int(np.count_nonzero(flat > 0))
    chosen = np.sort(order[:min(k, positive)])
    rows, cols = np.unravel_index(chosen, map_.shape)
    return PixelSelection(rows, cols, map_.shape, "top-percent", float(p), layer, requested=k)


def correlate(selection, mask, meta=None):
    if tuple(selection.shape) != tuple(mask.shape):
        raise DimensionError(f"selection grid {selection.shape} != mask {mask.shape}")
    labels = mask.labels[selection.rows, selection.cols]
    pixels = np.bincount(labels.astype(np.int64), minlength=NUM_CLASSES)[:NUM_CLASSES]
    total = int(np.prod(selection.shape))
    selected = len(selection)
    absolute = pixels / total * 100.0
    relative = pixels / selected * 100.0 if selected else np.zeros(NUM_CLASSES)
    return CorrelationReport(pixels.astype(np.int64), absolute, relative, selected, total,
                             meta=dict(meta or {}))


def aggregate_reports(reports, meta=None):
    """Unweighted mean of per-class percentages (and pixel counts)."""
    reports = list(reports)
    if not reports:
        raise ValueError("cannot aggregate an empty collection of reports")
    count = sum(r.count for r in reports)
    pixels = np.mean([r.pixels for r in reports], axis=0)
    absolute = np.mean([r.absolute for r in reports], axis=0)
    relative = np.mean([r.relative for r in reports], axis=0)
    selected = float(np.mean([r.selected for r in reports]))
    total = float(np.mean([r.total for r in reports]))
    return CorrelationReport(pixels, absolute, relative, selected, total, count=count,
                             meta=dict(meta or {}))
