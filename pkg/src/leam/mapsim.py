"""Activation maps as 2-D distributions: overlap, transport distance, alignment."""
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._kernels import bilinear_gather
from .errors import DegenerateError, DimensionError, FormatError
from .transport import solve_transport

REQUIRED_LANDMARKS = (
    "left-eye-outer", "left-eye-inner", "right-eye-inner", "right-eye-outer",
    "nose-tip", "mouth-left", "mouth-right",
)
DEFAULT_EMD_GRID = 32


@dataclass(frozen=True)
class ProbabilityMap:
    grid: np.ndarray

    @property
    def shape(self):
        return self.grid.shape


def normalize_distribution(map_):
    map_ = np.asarray(map_, dtype=np.float64)
    if map_.ndim != 2:
        raise DimensionError("expected a 2-D map")
    if np.any(map_ < 0):
        raise ValueError("distribution entries must be nonnegative")
    total = float(map_.sum())
    if not total > 0.0:
        raise DegenerateError("map has no mass")
    return ProbabilityMap(map_ / total)


def _grid(p):
    return p.grid if isinstance(p, ProbabilityMap) else np.asarray(p, dtype=np.float64)


def bhattacharyya(P, Q):
    p, q = _grid(P), _grid(Q)
    if p.shape != q.shape:
        raise DimensionError(f"shape mismatch {p.shape} vs {q.shape}")
    return min(1.0, float(np.sqrt(p * q).sum()))


def emd(P, Q, cell=(1.0, 1.0)):
    """Exact earth mover's distance with Euclidean ground cost between cell centres.

    ``cell`` gives the (row, col) spacing of the grid in output units.
    """
    p, q = _grid(P), _grid(Q)
    if p.shape != q.shape:
        raise DimensionError(f"shape mismatch {p.shape} vs {q.shape}")
    if np.array_equal(p, q):
        return 0.0
    src = np.argwhere(p > 0).astype(np.float64) * cell
    dst = np.argwhere(q > 0).astype(np.float64) * cell
    a = p[p > 0]
    b = q[q > 0]
    diff = src[:, None, :] - dst[None, :, :]
    cost = np.sqrt((diff ** 2).sum(axis=-1))
    return solve_transport(a, b, cost).cost


def _box_weights(n_in, n_out):
    """Row-stochastic area-overlap matrix mapping n_in cells onto n_out."""
    edges = np.arange(n_out + 1) * (n_in / n_out)
    W = np.zeros((n_out, n_in))
    for k in range(n_out):
        lo, hi = edges[k], edges[k + 1]
        for i in range(int(math.floor(lo)), min(n_in, int(math.ceil(hi)))):
            W[k, i] = max(0.0, min(hi, i + 1) - max(lo, i))
    return W / (n_in / n_out)


def box_downsample(map_, shape):
    map_ = np.asarray(map_, dtype=np.float64)
    H, W = map_.shape
    h, w = shape
    if (h, w) == (H, W):
        return map_.copy()
    return _box_weights(H, h) @ map_ @ _box_weights(W, w).T


@dataclass(frozen=True)
class EMDResult:
    distance: float
    grid: tuple


def emd_downsampled(P, Q, grid=DEFAULT_EMD_GRID):
    """EMD on box-averaged copies of the maps, in native pixel units.

    The working grid is ``grid`` x ``grid`` clipped to the native size; the
    grid actually used is returned with the distance.
    """
    if grid < 2:
        raise ValueError("grid side must be >= 2")
    p, q = _grid(P), _grid(Q)
    if p.shape != q.shape:
        raise DimensionError(f"shape mismatch {p.shape} vs {q.shape}")
    H, W = p.shape
    shape = (min(grid, H), min(grid, W))
    pd = normalize_distribution(box_downsample(p, shape))
    qd = normalize_distribution(box_downsample(q, shape))
    cell = (H / shape[0], W / shape[1])
    return EMDResult(emd(pd, qd, cell=cell), shape)


# -- alignment ---------------------------------------------------------------

@dataclass(frozen=True)
class SimilarityTransform:
    """x -> scale * R(theta) x + (tx, ty), points as (x, y) = (col, row)."""
    scale: float = 1.0
    theta: float = 0.0
    tx: float = 0.0
    ty: float = 0.0

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("scale must be positive")

    def matrix(self):
        c, s = math.cos(self.theta), math.sin(self.theta)
        return self.scale * np.array([[c, -s], [s, c]])

    def apply(self, points):
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.matrix().T + np.array([self.tx, self.ty])

    def inverse(self):
        inv_scale = 1.0 / self.scale
        c, s = math.cos(-self.theta), math.sin(-self.theta)
        tx = -inv_scale * (c * self.tx - s * self.ty)
        ty = -inv_scale * (s * self.tx + c * self.ty)
        return SimilarityTransform(inv_scale, -self.theta, tx, ty)

    def compose(self, first):
        """The transform applying ``first`` and then ``self``."""
        t = self.apply([[first.tx, first.ty]])[0]
        return SimilarityTransform(self.scale * first.scale, self.theta + first.theta, t[0], t[1])


IDENTITY = SimilarityTransform()


@dataclass(frozen=True)
class LandmarkSet:
    points: dict  # name -> (x, y)
    width: int = None
    height: int = None

    def __post_init__(self):
        if self.width is not None and self.height is not None:
            for name, (x, y) in self.points.items():
                if not (0 <= x <= self.width - 1 and 0 <= y <= self.height - 1):
                    raise ValueError(f"landmark {name} at ({x}, {y}) outside {self.width}x{self.height}")

    def transformed(self, T):
        names = list(self.points)
        moved = T.apply([self.points[k] for k in names]) if names else []
        return LandmarkSet({k: (float(p[0]), float(p[1])) for k, p in zip(names, moved)})


def _canonical(name):
    return name.strip().lower().replace("_", "-").replace(" ", "-")


def load_landmarks(path, width=None, height=None):
    """Landmarks from a JSON object of ``name: [x, y]`` pairs.

    Optional ``width``/``height`` keys in the file give the image bounds.
    """
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise FormatError(f"{path}: expected a JSON object")
    width = doc.pop("width", width)
    height = doc.pop("height", height)
    points = {}
    for key, value in doc.items():
        if not (isinstance(value, (list, tuple)) and len(value) == 2):
            raise FormatError(f"{path}: landmark {key!r} is not an [x, y] pair")
        points[_canonical(key)] = (float(value[0]), float(value[1]))
    return LandmarkSet(points, width, height)


def rotation_from_eye_corners(landmarks, center=None):
    """Rotation (scale 1) about the image centre that levels the outer eye corners.

    After rotation the left outer corner lies to the left of the right one.
    """
    try:
        left = np.asarray(landmarks.points["left-eye-outer"], dtype=np.float64)
        right = np.asarray(landmarks.points["right-eye-outer"], dtype=np.float64)
    except KeyError as exc:
        raise ValueError(f"missing eye corner {exc}") from exc
    d = right - left
    if math.hypot(d[0], d[1]) < 1e-12:
        raise DegenerateError("outer eye corners coincide")
    theta = -math.atan2(d[1], d[0])
    if center is None:
        if landmarks.width is not None and landmarks.height is not None:
            center = ((landmarks.width - 1) / 2.0, (landmarks.height - 1) / 2.0)
        else:
            center = tuple((left + right) / 2.0)
    c = np.asarray(center, dtype=np.float64)
    rotated = SimilarityTransform(1.0, theta, 0.0, 0.0).apply([c])[0]
    return SimilarityTransform(1.0, theta, c[0] - rotated[0], c[1] - rotated[1])


def estimate_similarity_transform(src, ref):
    """Least-squares similarity T with T(src_k) ~ ref_k over shared landmark names."""
    names = sorted(set(src.points) & set(ref.points))
    if len(names) < 2:
        raise ValueError("need at least two shared landmarks")
    zs = np.array([complex(*src.points[k]) for k in names])
    zr = np.array([complex(*ref.points[k]) for k in names])
    ms, mr = zs.mean(), zr.mean()
    ds, dr = zs - ms, zr - mr
    denom = float(np.sum(np.abs(ds) ** 2))
    if denom < 1e-18:
        raise DegenerateError("source landmarks are coincident")
    a = complex(np.sum(np.conj(ds) * dr)) / denom
    if abs(a) < 1e-18:
        raise DegenerateError("landmark configuration admits no unique similarity")
    t = mr - a * ms
    return SimilarityTransform(abs(a), math.atan2(a.imag, a.real), t.real, t.imag)


def apply_transform(tensor, T):
    """Resample so that ``out(T(p)) = in(p)``; bilinear, zero outside."""
    tensor = np.asarray(tensor, dtype=np.float64)
    if tensor.ndim == 3:
        return np.stack([apply_transform(ch, T) for ch in tensor])
    if tensor.ndim != 2:
        raise DimensionError("apply_transform expects [H,W] or [C,H,W]")
    H, W = tensor.shape
    rows, cols = np.mgrid[0:H, 0:W].astype(np.float64)
    inv = T.inverse()
    M = inv.matrix()
    xs = M[0, 0] * cols + M[0, 1] * rows + inv.tx
    ys = M[1, 0] * cols + M[1, 1] * rows + inv.ty
    return bilinear_gather(tensor, ys, xs)


def alignment_transforms(landmarks, reference):
    """Per-image transforms onto the levelled reference face.

    ``landmarks`` maps image keys to :class:`LandmarkSet`; the reference is
    rotated upright by its eye corners and every other image is fitted to the
    rotated reference landmarks.
    """
    level = rotation_from_eye_corners(landmarks[reference])
    target = landmarks[reference].transformed(level)
    out = {}
    for key, marks in landmarks.items():
        out[key] = level if key == reference else estimate_similarity_transform(marks, target)
    return out
