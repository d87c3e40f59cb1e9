"""Layer embedding activation maps for ordered image pairs.

For a tagged layer with activations ``A`` (channels x H x W) and pixel
gradients ``g``::

    M = relu( sum_k relu(g_k) * A_k )

``g`` is the descent direction of the pair loss ``1 - cos(anchor, positive)``
w.r.t. ``A`` (equivalently the gradient of the cosine similarity), so the
kept positive weights mark activations that raise the pair's similarity.
"""
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateError, DimensionError
from .tensor import NORM_EPS, as_tensor, backward, forward


@dataclass(frozen=True)
class EmbeddingPair:
    anchor: np.ndarray
    positive: np.ndarray
    cosine: float
    loss: float


@dataclass(frozen=True)
class LayerActivationMap:
    layer: str
    raw: np.ndarray
    normalized: np.ndarray
    upsampled: np.ndarray


def _norm(x):
    n = float(np.sqrt(np.dot(x, x)))
    if not n > NORM_EPS:
        raise DegenerateError("zero-norm vector")
    return n


def cosine_similarity(x1, x2):
    x1, x2 = as_tensor(x1), as_tensor(x2)
    if x1.shape != x2.shape or x1.ndim != 1:
        raise DimensionError(f"cosine_similarity needs equal 1-D shapes, got {x1.shape} and {x2.shape}")
    value = float(np.dot(x1, x2)) / (_norm(x1) * _norm(x2))
    return min(1.0, max(-1.0, value))


def cosine_loss(x1, x2):
    return 1.0 - cosine_similarity(x1, x2)


def cosine_loss_grad(x1, x2):
    """d(1 - cos(x1, x2)) / d x1, using the algebraic form even when x1 == x2."""
    x1, x2 = as_tensor(x1), as_tensor(x2)
    n1, n2 = _norm(x1), _norm(x2)
    dot = float(np.dot(x1, x2))
    return -(x2 / (n1 * n2) - dot * x1 / (n1 ** 3 * n2))


def leam_layer_map(activations, gradients):
    activations, gradients = as_tensor(activations), as_tensor(gradients)
    if activations.shape != gradients.shape:
        raise DimensionError(f"activation shape {activations.shape} != gradient shape {gradients.shape}")
    if activations.ndim == 2:
        activations, gradients = activations[None], gradients[None]
    weights = np.maximum(gradients, 0.0)
    return np.maximum((weights * activations).sum(axis=0), 0.0)


def normalize_map(raw):
    """Divide by the global maximum; all-zero maps stay zero."""
    raw = as_tensor(raw)
    peak = float(raw.max()) if raw.size else 0.0
    if peak > 0.0:
        return raw / peak
    return np.zeros_like(raw)


def _axis_weights(n_in, n_out):
    if n_out == 1 or n_in == 1:
        pos = np.zeros(n_out)
    else:
        pos = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
    lo = np.minimum(np.floor(pos).astype(np.int64), max(n_in - 2, 0))
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, pos - lo


def upsample(map_, target):
    """Corner-aligned bilinear resize of a 2-D map to ``target`` = (H, W)."""
    map_ = as_tensor(map_)
    if map_.ndim != 2 or min(map_.shape) < 1:
        raise DimensionError("upsample expects a non-empty 2-D map")
    H, W = int(target[0]), int(target[1])
    h, w = map_.shape
    lo, hi, f = _axis_weights(h, H)
    a, b = map_[lo], map_[hi]
    rows = (1.0 - f[:, None]) * a + f[:, None] * b
    lo, hi, f = _axis_weights(w, W)
    a, b = rows[:, lo], rows[:, hi]
    return (1.0 - f[None, :]) * a + f[None, :] * b


def maps_from_traces(net, trace, grads, target):
    out = []
    for name, activation in trace.recorded:
        raw = leam_layer_map(activation, grads.gradient(name))
        normalized = normalize_map(raw)
        out.append(LayerActivationMap(name, raw, normalized, upsample(normalized, target)))
    return out


def generate_maps(net, anchor, positive, target=None, layers=None):
    """Maps for the ordered pair (anchor, positive).

    The descent direction of the cosine loss is taken w.r.t. the anchor
    embedding and propagated through the anchor's forward pass only. ``target`` is the (H, W) of the
    upsampled maps, defaulting to the anchor's spatial size.
    """
    anchor_trace = forward(net, anchor)
    positive_embedding = forward(net, positive).embedding
    cos = cosine_similarity(anchor_trace.embedding, positive_embedding)
    pair = EmbeddingPair(anchor_trace.embedding, positive_embedding, cos, 1.0 - cos)
    grads = backward(net, anchor_trace, -cosine_loss_grad(anchor_trace.embedding, positive_embedding))
    if target is None:
        target = anchor_trace.input_shape[1:]
    maps = maps_from_traces(net, anchor_trace, grads, target)
    if layers is not None:
        wanted = set(layers)
        maps = [m for m in maps if m.layer in wanted]
    return pair, maps
