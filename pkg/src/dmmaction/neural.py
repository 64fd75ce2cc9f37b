"""Forward-only 3D convolutional feature extraction.

Tensors are dense float64 arrays laid out (channels, depth, height,
width).  Convolution is valid (no padding) unless a layer declares an
explicit zero padding; every conv output passes through tanh, so values
are strictly inside (-1, 1).  Features are the activations of the first
fully-connected layer in the stack.

The canonical deep stack follows the eight-conv/five-pool C3D shape
(3x3x3 kernels, stride 1, first pool 1x2x2, remaining pools 2x2x2, two
4096-unit dense layers).  Those conv layers carry 1x1x1 zero padding:
without it the temporal axis of a 16-frame clip collapses below kernel
size before the fifth conv layer, so the published layer list is only
realizable with same-padding.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .dmm import Clip
from .errors import ContractError, FormatError, ParseError

Triple = tuple[int, int, int]


@dataclass(frozen=True)
class Provenance:
    """Identifies the stream and clip a feature vector came from."""

    pose: str | None = None
    kind: str | None = None  # "dmm" | "rgb"
    plane: str | None = None
    window: object = None  # int, "all", or None
    angle: float | None = None
    clip_end: int | None = None

    def without_plane(self) -> "Provenance":
        return replace(self, plane=None)


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray = field(repr=False)
    provenance: object = None

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class Conv3d:
    """3D convolution layer: weights (out, in, r, p, q), tanh activation."""

    name: str
    weights: np.ndarray = field(repr=False)
    bias: np.ndarray = field(repr=False)
    stride: Triple = (1, 1, 1)
    padding: Triple = (0, 0, 0)

    def __post_init__(self) -> None:
        if self.weights.ndim != 5:
            raise ContractError(
                f"{self.name}: weights must be (out, in, r, p, q), "
                f"got shape {self.weights.shape}"
            )
        if self.bias.shape != (self.weights.shape[0],):
            raise ContractError(
                f"{self.name}: bias shape {self.bias.shape} does not match "
                f"{self.weights.shape[0]} output maps"
            )


@dataclass(frozen=True)
class MaxPool3d:
    name: str
    kernel: Triple
    stride: Triple


@dataclass(frozen=True)
class Flatten:
    name: str


@dataclass(frozen=True)
class Dense:
    """Fully-connected layer with tanh activation."""

    name: str
    weights: np.ndarray = field(repr=False)  # (out, in)
    bias: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ContractError(
                f"{self.name}: weights must be (out, in) with matching bias, "
                f"got {self.weights.shape} and {self.bias.shape}"
            )


Layer = Union[Conv3d, MaxPool3d, Flatten, Dense]


@dataclass(frozen=True)
class NetworkSpec:
    """Ordered layer stack with its declared input shape (c, d, h, w)."""

    name: str
    input_shape: tuple[int, int, int, int]
    layers: tuple[Layer, ...]


def _out_len(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - kernel) // stride + 1


def conv3d_forward(x: np.ndarray, layer: Conv3d) -> np.ndarray:
    """Valid 3D convolution (plus the layer's declared zero padding) with tanh.

    out(j, z, y, x) = tanh(b_j + sum over m, r, p, q of
    w(j, m, r, p, q) * in(m, z*sd + r, y*sh + p, x*sw + q)), indices taken
    in the zero-padded input.
    """
    j_maps, m_maps, kr, kp, kq = layer.weights.shape
    if x.ndim != 4:
        raise ContractError(f"{layer.name}: input must be 4D, got shape {x.shape}")
    if x.shape[0] != m_maps:
        raise ContractError(
            f"{layer.name}: input has {x.shape[0]} channels, layer expects {m_maps}"
        )
    pr, pp, pq = layer.padding
    if any(p < 0 for p in layer.padding) or any(s < 1 for s in layer.stride):
        raise ContractError(f"{layer.name}: invalid stride/padding")
    if pr or pp or pq:
        x = np.pad(x, ((0, 0), (pr, pr), (pp, pp), (pq, pq)))
    _, d, h, w = x.shape
    if d < kr or h < kp or w < kq:
        raise ContractError(
            f"{layer.name}: padded input {d}x{h}x{w} smaller than "
            f"kernel {kr}x{kp}x{kq}"
        )
    sr, sh, sw = layer.stride
    od = (d - kr) // sr + 1
    oh = (h - kp) // sh + 1
    ow = (w - kq) // sw + 1
    acc = np.zeros((j_maps, od, oh, ow))
    # Shift-and-accumulate: one GEMM per kernel offset keeps memory flat
    # and leaves the heavy lifting to BLAS.
    for r in range(kr):
        for p in range(kp):
            for q in range(kq):
                sub = x[
                    :,
                    r : r + sr * (od - 1) + 1 : sr,
                    p : p + sh * (oh - 1) + 1 : sh,
                    q : q + sw * (ow - 1) + 1 : sw,
                ]
                acc += np.tensordot(layer.weights[:, :, r, p, q], sub, axes=([1], [0]))
    return np.tanh(acc + layer.bias[:, None, None, None])


def maxpool3d(x: np.ndarray, kernel: Triple, stride: Triple) -> np.ndarray:
    """Per-channel windowed maximum."""
    if x.ndim != 4:
        raise ContractError(f"pool input must be 4D, got shape {x.shape}")
    kr, kp, kq = kernel
    sr, sh, sw = stride
    _, d, h, w = x.shape
    if d < kr or h < kp or w < kq:
        raise ContractError(
            f"pool input {d}x{h}x{w} smaller than kernel {kr}x{kp}x{kq}"
        )
    od = (d - kr) // sr + 1
    oh = (h - kp) // sh + 1
    ow = (w - kq) // sw + 1
    out = np.full((x.shape[0], od, oh, ow), -np.inf)
    for r in range(kr):
        for p in range(kp):
            for q in range(kq):
                sub = x[
                    :,
                    r : r + sr * (od - 1) + 1 : sr,
                    p : p + sh * (oh - 1) + 1 : sh,
                    q : q + sw * (ow - 1) + 1 : sw,
                ]
                np.maximum(out, sub, out=out)
    return out


def _layer_output_shape(shape: tuple[int, ...], layer: Layer) -> tuple[int, ...]:
    if isinstance(layer, Conv3d):
        j, m, kr, kp, kq = layer.weights.shape
        c, d, h, w = shape
        if c != m:
            raise ContractError(
                f"{layer.name}: input has {c} channels, layer expects {m}"
            )
        dims = []
        for size, k, s, p in zip((d, h, w), (kr, kp, kq), layer.stride, layer.padding):
            o = _out_len(size, k, s, p)
            if o < 1:
                raise ContractError(
                    f"{layer.name}: input {d}x{h}x{w} too small for "
                    f"kernel {kr}x{kp}x{kq}"
                )
            dims.append(o)
        return (j, *dims)
    if isinstance(layer, MaxPool3d):
        c, d, h, w = shape
        dims = []
        for size, k, s in zip((d, h, w), layer.kernel, layer.stride):
            o = _out_len(size, k, s, 0)
            if o < 1:
                raise ContractError(
                    f"{layer.name}: input {d}x{h}x{w} too small for pool "
                    f"kernel {layer.kernel}"
                )
            dims.append(o)
        return (c, *dims)
    if isinstance(layer, Flatten):
        return (int(np.prod(shape)),)
    if isinstance(layer, Dense):
        out, inp = layer.weights.shape
        if shape != (inp,):
            raise ContractError(
                f"{layer.name}: input shape {shape} does not match "
                f"expected ({inp},)"
            )
        return (out,)
    raise ContractError(f"unknown layer type {type(layer).__name__}")


def infer_shapes(net: NetworkSpec) -> list[tuple[str, tuple[int, ...]]]:
    """Symbolic per-layer output shapes, starting from the declared input."""
    shape: tuple[int, ...] = net.input_shape
    out = [("input", shape)]
    for layer in net.layers:
        shape = _layer_output_shape(shape, layer)
        out.append((layer.name, shape))
    return out


def run_layers(x: np.ndarray, net: NetworkSpec) -> list[tuple[str, np.ndarray]]:
    """Run the full stack, returning every intermediate activation."""
    if x.shape != net.input_shape:
        raise ContractError(
            f"input: clip tensor shape {x.shape} does not match network "
            f"input {net.input_shape}"
        )
    outputs = []
    for layer in net.layers:
        if isinstance(layer, Conv3d):
            x = conv3d_forward(x, layer)
        elif isinstance(layer, MaxPool3d):
            x = maxpool3d(x, layer.kernel, layer.stride)
        elif isinstance(layer, Flatten):
            x = x.reshape(-1)
        elif isinstance(layer, Dense):
            x = np.tanh(layer.weights @ x + layer.bias)
        else:
            raise ContractError(f"unknown layer type {type(layer).__name__}")
        outputs.append((layer.name, x))
    return outputs


def clip_to_tensor(clip: Clip) -> np.ndarray:
    """Clip frames (lam, h, w, 3) uint8 -> network tensor (3, lam, h, w) in [0, 1]."""
    return np.ascontiguousarray(clip.frames.transpose(3, 0, 1, 2)).astype(np.float64) / 255.0


def extract_features(clip: Clip, net: NetworkSpec, provenance: object = None) -> FeatureVector:
    """Run the stack on a clip and return the first dense layer's activations."""
    outputs = run_layers(clip_to_tensor(clip), net)
    for layer, (_, acts) in zip(net.layers, outputs):
        if isinstance(layer, Dense):
            return FeatureVector(values=acts, provenance=provenance)
    raise ContractError(f"network {net.name} has no fully-connected layer")


def concat_views(xy: FeatureVector, yz: FeatureVector, xz: FeatureVector) -> FeatureVector:
    """Concatenate the three plane features of one (window, angle, clip) slot."""
    tags = [_plane_free(f.provenance) for f in (xy, yz, xz)]
    if tags[0] != tags[1] or tags[0] != tags[2]:
        raise ContractError(f"provenance mismatch across views: {tags}")
    values = np.concatenate([xy.values, yz.values, xz.values])
    return FeatureVector(values=values, provenance=tags[0])


def _plane_free(p: object) -> object:
    return p.without_plane() if isinstance(p, Provenance) else p


def stream_rng(seed: int, stream_id: str) -> np.random.Generator:
    """Deterministic per-stream generator, independent of enumeration order."""
    return np.random.default_rng([seed, zlib.crc32(stream_id.encode())])


def _init_conv(
    name: str,
    in_maps: int,
    out_maps: int,
    rng: np.random.Generator,
    kernel: Triple = (3, 3, 3),
    stride: Triple = (1, 1, 1),
    padding: Triple = (0, 0, 0),
) -> Conv3d:
    kr, kp, kq = kernel
    fan_in = in_maps * kr * kp * kq
    s = 1.0 / np.sqrt(fan_in)
    # float32 round trip at init keeps the on-disk f32 format lossless.
    w = rng.uniform(-s, s, (out_maps, in_maps, kr, kp, kq)).astype(np.float32).astype(np.float64)
    b = rng.uniform(-s, s, out_maps).astype(np.float32).astype(np.float64)
    return Conv3d(name, w, b, stride=stride, padding=padding)


def _init_dense(name: str, in_dim: int, out_dim: int, rng: np.random.Generator) -> Dense:
    s = 1.0 / np.sqrt(in_dim)
    w = rng.uniform(-s, s, (out_dim, in_dim)).astype(np.float32).astype(np.float64)
    b = rng.uniform(-s, s, out_dim).astype(np.float32).astype(np.float64)
    return Dense(name, w, b)


def c3d_network(
    rng: np.random.Generator,
    name: str = "c3d",
    in_channels: int = 3,
    clip_len: int = 16,
    height: int = 112,
    width: int = 112,
    fc_units: int = 4096,
) -> NetworkSpec:
    """The canonical eight-conv/five-pool stack with two dense layers."""
    conv_maps = (64, 128, 256, 256, 512, 512, 512, 512)
    # conv indices after which a pool follows, mirroring C3D's grouping:
    # 1, 2, (3,4), (5,6), (7,8) with pools between groups.
    plan = [
        ("conv1", conv_maps[0]), ("pool1", None),
        ("conv2", conv_maps[1]), ("pool2", None),
        ("conv3a", conv_maps[2]), ("conv3b", conv_maps[3]), ("pool3", None),
        ("conv4a", conv_maps[4]), ("conv4b", conv_maps[5]), ("pool4", None),
        ("conv5a", conv_maps[6]), ("conv5b", conv_maps[7]), ("pool5", None),
    ]
    layers: list[Layer] = []
    channels = in_channels
    shape = (in_channels, clip_len, height, width)
    first_pool = True
    for layer_name, maps in plan:
        if maps is None:
            kernel = (1, 2, 2) if first_pool else (2, 2, 2)
            first_pool = False
            layers.append(MaxPool3d(layer_name, kernel, kernel))
        else:
            layers.append(
                _init_conv(layer_name, channels, maps, rng, padding=(1, 1, 1))
            )
            channels = maps
    flat = _stack_flat_size(shape, layers)
    layers.append(Flatten("flatten"))
    layers.append(_init_dense("fc6", flat, fc_units, rng))
    layers.append(_init_dense("fc7", fc_units, fc_units, rng))
    return NetworkSpec(name, shape, tuple(layers))


def desk_network(
    rng: np.random.Generator,
    name: str = "desk",
    in_channels: int = 3,
    clip_len: int = 16,
    height: int = 32,
    width: int = 32,
    conv_maps: tuple[int, int] = (8, 16),
    fc_units: int = 64,
) -> NetworkSpec:
    """Small two-conv/two-pool stack for synthetic-data runs."""
    shape = (in_channels, clip_len, height, width)
    layers: list[Layer] = [
        _init_conv("conv1", in_channels, conv_maps[0], rng, padding=(1, 1, 1)),
        MaxPool3d("pool1", (1, 2, 2), (1, 2, 2)),
        _init_conv("conv2", conv_maps[0], conv_maps[1], rng, padding=(1, 1, 1)),
        MaxPool3d("pool2", (2, 2, 2), (2, 2, 2)),
    ]
    flat = _stack_flat_size(shape, layers)
    layers.append(Flatten("flatten"))
    layers.append(_init_dense("fc", flat, fc_units, rng))
    return NetworkSpec(name, shape, tuple(layers))


def _stack_flat_size(input_shape: tuple[int, ...], layers: Sequence[Layer]) -> int:
    shape = input_shape
    for layer in layers:
        shape = _layer_output_shape(shape, layer)
    return int(np.prod(shape))


_MAGIC = b"DMW1"


def save_weights(net: NetworkSpec, path: str | Path) -> None:
    """Serialize all weight arrays: [u32le count] then per array
    [u32le ndim][u32le dims...][f32le values...]."""
    arrays: list[np.ndarray] = []
    for layer in net.layers:
        if isinstance(layer, (Conv3d, Dense)):
            arrays.extend([layer.weights, layer.bias])
    blob = bytearray(_MAGIC)
    blob += struct.pack("<I", len(arrays))
    for a in arrays:
        blob += struct.pack("<I", a.ndim)
        blob += struct.pack(f"<{a.ndim}I", *a.shape)
        blob += a.astype("<f4").tobytes()
    Path(path).write_bytes(bytes(blob))


def load_weights(path: str | Path, template: NetworkSpec) -> NetworkSpec:
    """Rebuild a network from a weight file, using template for structure.

    The file stores only weighted-layer arrays; pool/flatten structure and
    layer order come from the template, whose array shapes must match.
    """
    data = Path(path).read_bytes()
    if data[:4] != _MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}; expected {_MAGIC!r}")
    offset = 4
    (count,) = struct.unpack_from("<I", data, offset)
    offset += 4
    arrays = []
    for i in range(count):
        if offset + 4 > len(data):
            raise ParseError(f"truncated at array {i}: expected ndim at byte {offset}")
        (ndim,) = struct.unpack_from("<I", data, offset)
        offset += 4
        dims = struct.unpack_from(f"<{ndim}I", data, offset)
        offset += 4 * ndim
        n = int(np.prod(dims)) if dims else 1
        end = offset + 4 * n
        if end > len(data):
            raise ParseError(f"truncated payload: expected {end} bytes, got {len(data)}")
        arrays.append(
            np.frombuffer(data, dtype="<f4", count=n, offset=offset)
            .reshape(dims)
            .astype(np.float64)
        )
        offset = end
    expected = sum(1 for l in net_layers_with_weights(template)) * 2
    if count != expected:
        raise FormatError(f"file holds {count} arrays, template needs {expected}")
    it = iter(arrays)
    new_layers: list[Layer] = []
    for layer in template.layers:
        if isinstance(layer, Conv3d):
            w, b = next(it), next(it)
            _check_loaded(layer.name, layer.weights.shape, w.shape)
            _check_loaded(layer.name, layer.bias.shape, b.shape)
            new_layers.append(replace(layer, weights=w, bias=b))
        elif isinstance(layer, Dense):
            w, b = next(it), next(it)
            _check_loaded(layer.name, layer.weights.shape, w.shape)
            _check_loaded(layer.name, layer.bias.shape, b.shape)
            new_layers.append(replace(layer, weights=w, bias=b))
        else:
            new_layers.append(layer)
    return replace(template, layers=tuple(new_layers))


def net_layers_with_weights(net: NetworkSpec):
    return [l for l in net.layers if isinstance(l, (Conv3d, Dense))]


def _check_loaded(name: str, expected: tuple, got: tuple) -> None:
    if tuple(expected) != tuple(got):
        raise FormatError(f"{name}: file array shape {got} does not match {expected}")
