"""DeskNet: a small fixed embedding CNN plus its binary weight format.

Architecture (input 3x64x64, values in [-1, 1])::

    conv1 16@3x3 s1 p1 -> relu -> conv2 32@3x3 s2 p1 -> relu
    -> conv3 64@3x3 s2 p1 -> relu -> global avgpool -> dense 128 -> l2 norm

The recorded activations of conv1/conv2/conv3 are the convolution outputs
(before the ReLU that follows them).
"""
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, FormatError
from .prng import Xoshiro256
from .tensor import Layer, forward

INPUT_SPEC = (3, 64, 64)
EMBED_DIM = 128
TAGGED = ("conv1", "conv2", "conv3")
WEIGHT_MAGIC = b"DNW1"

# (name, out_channels, in_channels, stride)
_CONVS = (("conv1", 16, 3, 1), ("conv2", 32, 16, 2), ("conv3", 64, 32, 2))


@dataclass(frozen=True)
class Network:
    layers: tuple
    tagged: tuple = TAGGED
    input_spec: tuple = INPUT_SPEC
    name: str = "desknet"

    def parameters(self):
        """Named parameter tensors in canonical file order."""
        out = []
        for layer in self.layers:
            for key in ("weight", "bias"):
                if key in layer.params:
                    out.append((f"{layer.name}.{key}", layer.params[key]))
        return out


def parameter_shapes():
    shapes = []
    for name, k, c, _ in _CONVS:
        shapes.append((f"{name}.weight", (k, c, 3, 3)))
        shapes.append((f"{name}.bias", (k,)))
    shapes.append(("fc.weight", (EMBED_DIM, _CONVS[-1][1])))
    shapes.append(("fc.bias", (EMBED_DIM,)))
    return shapes


def _readonly(a):
    a = np.array(a, dtype=np.float64, order="C")
    a.flags.writeable = False
    return a


def assemble(params, name="desknet"):
    """Build the fixed layer graph from a ``{param_name: array}`` mapping."""
    layers = []
    for i, (conv, _, _, stride) in enumerate(_CONVS, start=1):
        layers.append(Layer(conv, "conv", {"weight": _readonly(params[f"{conv}.weight"]),
                                            "bias": _readonly(params[f"{conv}.bias"])},
                            stride=stride, padding=1))
        layers.append(Layer(f"relu{i}", "relu"))
    layers.append(Layer("pool", "avgpool"))
    layers.append(Layer("fc", "dense", {"weight": _readonly(params["fc.weight"]),
                                         "bias": _readonly(params["fc.bias"])}))
    layers.append(Layer("norm", "l2norm"))
    return Network(layers=tuple(layers), name=name)


def build_desknet(seed, name="desknet"):
    """DeskNet with He-normal weights (variance 2/fan_in) and zero biases.

    Gaussians come from xoshiro256** (splitmix64-seeded) through Box-Muller,
    drawn in canonical parameter order, weights row-major.
    """
    rng = Xoshiro256(seed)
    params = {}
    for pname, shape in parameter_shapes():
        if pname.endswith(".bias"):
            params[pname] = np.zeros(shape)
            continue
        fan_in = int(np.prod(shape[1:]))
        std = np.sqrt(2.0 / fan_in)
        params[pname] = np.asarray(rng.normals(int(np.prod(shape))), dtype=np.float64).reshape(shape) * std
    return assemble(params, name=name)


# -- weight file -------------------------------------------------------------

def save_weights(net, path):
    params = net.parameters()
    chunks = [WEIGHT_MAGIC, struct.pack("<I", len(params))]
    for pname, value in params:
        raw = pname.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", value.ndim))
        chunks.append(struct.pack(f"<{value.ndim}I", *value.shape))
        chunks.append(np.ascontiguousarray(value, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def _read_weight_records(data):
    if data[:4] != WEIGHT_MAGIC:
        raise FormatError("bad magic; not a DNW1 weight file")
    pos = 4

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise FormatError("truncated weight file")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    (count,) = struct.unpack("<I", take(4))
    records = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        try:
            pname = take(name_len).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError("parameter name is not UTF-8") from exc
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        n = int(np.prod(dims)) if rank else 1
        values = np.frombuffer(take(4 * n), dtype="<f4").reshape(dims)
        records[pname] = values
    if pos != len(data):
        raise FormatError("trailing bytes after last record; declared counts do not match payload")
    return records


def load_weights(path, name=None):
    """Load a DNW1 file; values are widened from f32 to f64."""
    path = Path(path)
    records = _read_weight_records(path.read_bytes())
    params = {}
    for pname, shape in parameter_shapes():
        if pname not in records:
            raise FormatError(f"missing parameter {pname}")
        if records[pname].shape != shape:
            raise FormatError(f"{pname}: shape {records[pname].shape} != expected {shape}")
        params[pname] = records[pname].astype(np.float64)
    extra = set(records) - {p for p, _ in parameter_shapes()}
    if extra:
        raise FormatError(f"unexpected parameters: {sorted(extra)}")
    return assemble(params, name=name or path.stem)


def weight_payloads(net):
    """f32 byte payloads per parameter (used for bit-exact comparisons)."""
    return {p: np.ascontiguousarray(v, dtype="<f4").tobytes() for p, v in net.parameters()}


# -- images ------------------------------------------------------------------

def normalize_pixels(rgb):
    """uint8 [H,W,3] or [3,H,W] -> float64 [3,H,W] in [-1, 1]."""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3:
        raise DimensionError("expected a 3-D RGB array")
    if rgb.shape[0] != 3 and rgb.shape[-1] == 3:
        rgb = np.transpose(rgb, (2, 0, 1))
    return np.ascontiguousarray(rgb, dtype=np.float64) / 127.5 - 1.0


def black_value(net=None):
    """Normalised value of a black pixel (the minimum model input)."""
    return -1.0


def resize_image(image, size):
    """Resize a [C,H,W] tensor to ``size`` = (h, w).

    Exact integer down-scaling uses box averaging; anything else uses
    corner-aligned bilinear interpolation.
    """
    from .maps import upsample

    image = np.asarray(image, dtype=np.float64)
    C, H, W = image.shape
    h, w = size
    if (H, W) == (h, w):
        return image.copy()
    if H % h == 0 and W % w == 0:
        fy, fx = H // h, W // w
        return image.reshape(C, h, fy, w, fx).mean(axis=(2, 4))
    return np.stack([upsample(ch, (h, w)) for ch in image])


def prepare(net, image):
    """Fit a normalised [3,H,W] image to the network's input resolution."""
    return resize_image(image, net.input_spec[1:])


def embed(net, image):
    """Unit-norm embedding of an image already at network resolution."""
    image = np.asarray(image, dtype=np.float64)
    if image.shape != tuple(net.input_spec):
        raise DimensionError(f"expected image of shape {tuple(net.input_spec)}, got {image.shape}")
    return forward(net, image).embedding
