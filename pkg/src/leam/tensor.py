"""Layer primitives, forward recording and reverse-mode gradients.

Tensors are plain ``float64`` numpy arrays in C (row-major) order. A network
is anything with ``layers`` (a sequence of :class:`Layer`), ``tagged`` (layer
names whose outputs are recorded) and ``input_spec``.
"""
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import DegenerateError, DimensionError

NORM_EPS = 1e-12


def as_tensor(x):
    return np.ascontiguousarray(x, dtype=np.float64)


def _frozen(x):
    x = np.array(x, dtype=np.float64, order="C")
    x.flags.writeable = False
    return x


@dataclass(frozen=True)
class Layer:
    name: str
    kind: str  # conv | relu | avgpool | dense | l2norm
    params: dict = field(default_factory=dict)
    stride: int = 1
    padding: int = 0


@dataclass(frozen=True)
class ForwardTrace:
    embedding: np.ndarray
    recorded: tuple  # ((layer_name, activation), ...)
    input_shape: tuple
    layer_inputs: tuple = field(repr=False, default=())

    def activation(self, name):
        for key, value in self.recorded:
            if key == name:
                return value
        raise KeyError(name)


@dataclass(frozen=True)
class GradientTrace:
    grads: tuple  # ((layer_name, gradient), ...)

    def gradient(self, name):
        for key, value in self.grads:
            if key == name:
                return value
        raise KeyError(name)


# -- primitives --------------------------------------------------------------

def conv2d(x, kernels, bias, stride=1, padding=0):
    x, kernels, bias = as_tensor(x), as_tensor(kernels), as_tensor(bias)
    if x.ndim != 3 or kernels.ndim != 4 or bias.ndim != 1:
        raise DimensionError("conv2d expects input [C,H,W], kernels [K,C,kh,kw], bias [K]")
    if kernels.shape[1] != x.shape[0]:
        raise DimensionError(f"kernel channels {kernels.shape[1]} != input channels {x.shape[0]}")
    if bias.shape[0] != kernels.shape[0]:
        raise DimensionError("bias length must equal the number of kernels")
    if stride < 1 or padding < 0:
        raise ValueError("stride must be >= 1 and padding >= 0")
    _, H, W = x.shape
    kh, kw = kernels.shape[2:]
    if kh > H + 2 * padding or kw > W + 2 * padding:
        raise DimensionError("kernel larger than padded input")
    return _kernels.conv2d_forward(x, kernels, bias, int(stride), int(padding))


def conv2d_input_grad(grad_out, kernels, input_shape, stride=1, padding=0):
    return _kernels.conv2d_backward(as_tensor(grad_out), as_tensor(kernels), tuple(input_shape),
                                    int(stride), int(padding))


def relu(x):
    return np.maximum(as_tensor(x), 0.0)


def avgpool_global(x):
    x = as_tensor(x)
    if x.ndim != 3 or x.shape[1] < 1 or x.shape[2] < 1:
        raise DimensionError("avgpool_global expects [C,H,W] with H,W >= 1")
    return x.mean(axis=(1, 2))


def dense(x, weights, bias):
    x, weights, bias = as_tensor(x), as_tensor(weights), as_tensor(bias)
    if x.ndim != 1 or weights.ndim != 2 or weights.shape[1] != x.shape[0]:
        raise DimensionError(f"dense: weights {weights.shape} incompatible with input {x.shape}")
    if bias.shape != (weights.shape[0],):
        raise DimensionError("dense: bias length must equal output width")
    return weights @ x + bias


def l2_normalize(x):
    x = as_tensor(x)
    norm = float(np.sqrt(np.dot(x, x)))
    if not norm > NORM_EPS:
        raise DegenerateError("cannot normalise a (near-)zero embedding")
    return x / norm


# -- network evaluation ------------------------------------------------------

def _apply(layer, x):
    kind = layer.kind
    if kind == "conv":
        return conv2d(x, layer.params["weight"], layer.params["bias"], layer.stride, layer.padding)
    if kind == "relu":
        return relu(x)
    if kind == "avgpool":
        return avgpool_global(x)
    if kind == "dense":
        return dense(x, layer.params["weight"], layer.params["bias"])
    if kind == "l2norm":
        return l2_normalize(x)
    raise ValueError(f"unknown layer kind {kind!r}")


def run_layers(net, x, start=0):
    """Evaluate ``net.layers[start:]`` on ``x`` and return the final output."""
    x = as_tensor(x)
    for layer in net.layers[start:]:
        x = _apply(layer, x)
    return x


def layer_index(net, name):
    for i, layer in enumerate(net.layers):
        if layer.name == name:
            return i
    raise KeyError(name)


def check_image(net, image):
    image = as_tensor(image)
    channels = net.input_spec[0]
    if image.ndim != 3 or image.shape[0] != channels or min(image.shape[1:]) < 1:
        raise DimensionError(f"expected image of shape [{channels},H,W], got {image.shape}")
    if not np.all(np.isfinite(image)):
        raise ValueError("image contains non-finite values")
    return image


def forward(net, image):
    """Run ``net`` on ``image``, recording the output of every tagged layer."""
    x = check_image(net, image)
    tagged = set(net.tagged)
    inputs = []
    recorded = []
    for layer in net.layers:
        inputs.append(x)
        x = _apply(layer, x)
        if layer.name in tagged:
            recorded.append((layer.name, _frozen(x)))
    return ForwardTrace(embedding=_frozen(x), recorded=tuple(recorded),
                        input_shape=tuple(image.shape), layer_inputs=tuple(inputs))


def backward(net, trace, loss_grad):
    """Gradient of a scalar loss w.r.t. every recorded activation.

    ``loss_grad`` is dLoss/d(embedding). Propagation stops at the earliest
    tagged layer.
    """
    g = as_tensor(loss_grad)
    if g.shape != trace.embedding.shape:
        raise DimensionError(f"loss gradient shape {g.shape} != embedding shape {trace.embedding.shape}")
    tagged = set(net.tagged)
    remaining = len(tagged)
    grads = {}
    for idx in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[idx]
        x = trace.layer_inputs[idx]
        if layer.name in tagged:
            grads[layer.name] = _frozen(g)
            remaining -= 1
            if remaining == 0:
                break
        kind = layer.kind
        if kind == "l2norm":
            norm = np.sqrt(np.dot(x, x))
            y = x / norm
            g = (g - y * np.dot(y, g)) / norm
        elif kind == "dense":
            g = layer.params["weight"].T @ g
        elif kind == "avgpool":
            _, H, W = x.shape
            g = np.repeat(g / (H * W), H * W).reshape(x.shape)
        elif kind == "relu":
            g = np.where(x > 0.0, g, 0.0)
        elif kind == "conv":
            g = conv2d_input_grad(g, layer.params["weight"], x.shape, layer.stride, layer.padding)
        else:
            raise ValueError(f"unknown layer kind {kind!r}")
    ordered = tuple((name, grads[name]) for name, _ in trace.recorded)
    return GradientTrace(grads=ordered)
