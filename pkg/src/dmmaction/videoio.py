"""Readers and writers for depth containers, PPM/PGM images, and image sequences.

Depth sequences use a fixed binary container: a 12-byte header of three
u32 little-endian fields (frameCount, width, height) followed by
frameCount * height * width u32 little-endian depth values in millimeters,
row-major with top-left origin.  A depth value of 0 means "no reading".

Color interchange is binary PPM (P6, maxval 255); scalar interchange is
binary PGM (P5, maxval 65535, big-endian samples).  Both round-trip
bit-exactly through the matching reader.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyInputError, FormatError, ParseError

_DEPTH_HEADER = struct.Struct("<III")


@dataclass(frozen=True)
class DepthFrame:
    """One depth image; values in millimeters, 0 = no reading."""

    width: int
    height: int
    depth: np.ndarray = field(repr=False)  # (height, width) float64, >= 0
    timestamp_index: int = 0

    def __post_init__(self) -> None:
        if self.depth.shape != (self.height, self.width):
            raise FormatError(
                f"depth grid shape {self.depth.shape} does not match "
                f"declared {self.height}x{self.width}"
            )
        if np.any(self.depth < 0):
            raise FormatError("depth values must be non-negative")


@dataclass(frozen=True)
class RgbFrame:
    """One color image with interleaved 8-bit channels."""

    width: int
    height: int
    pixels: np.ndarray = field(repr=False)  # (height, width, 3) uint8
    timestamp_index: int = 0

    def __post_init__(self) -> None:
        if self.pixels.shape != (self.height, self.width, 3):
            raise FormatError(
                f"pixel buffer shape {self.pixels.shape} does not match "
                f"declared {self.height}x{self.width}x3"
            )


@dataclass(frozen=True)
class DepthSequence:
    """Time-ordered depth frames of identical dimensions."""

    frames: tuple[DepthFrame, ...]

    def __post_init__(self) -> None:
        _check_sequence(self.frames)

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def width(self) -> int:
        return self.frames[0].width

    @property
    def height(self) -> int:
        return self.frames[0].height


@dataclass(frozen=True)
class RgbSequence:
    """Time-ordered color frames of identical dimensions."""

    frames: tuple[RgbFrame, ...]

    def __post_init__(self) -> None:
        _check_sequence(self.frames)

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def width(self) -> int:
        return self.frames[0].width

    @property
    def height(self) -> int:
        return self.frames[0].height


def _check_sequence(frames) -> None:
    if not frames:
        raise EmptyInputError("sequence contains no frames")
    w, h = frames[0].width, frames[0].height
    for i, f in enumerate(frames):
        if (f.width, f.height) != (w, h):
            raise FormatError(
                f"frame {i} is {f.width}x{f.height}, expected {w}x{h}"
            )
        if f.timestamp_index != i:
            raise FormatError(
                f"frame {i} has timestamp_index {f.timestamp_index}; "
                "indices must increase from 0"
            )


def read_depth_bin(path: str | Path) -> DepthSequence:
    """Read a binary depth container.

    Args:
        path: file with the u32le (frameCount, width, height) header
            described in the module docstring.

    Returns:
        DepthSequence with frameCount frames of width x height.

    Raises:
        ParseError: the file is shorter than its header declares.
        FormatError: the header declares a zero dimension.
    """
    data = Path(path).read_bytes()
    if len(data) < _DEPTH_HEADER.size:
        raise ParseError(
            f"truncated header: expected {_DEPTH_HEADER.size} bytes, "
            f"got {len(data)}"
        )
    count, width, height = _DEPTH_HEADER.unpack_from(data)
    if count < 1 or width < 1 or height < 1:
        raise FormatError(
            f"invalid dimensions in header: frames={count} "
            f"width={width} height={height}"
        )
    expected = _DEPTH_HEADER.size + count * width * height * 4
    if len(data) < expected:
        raise ParseError(
            f"truncated file: expected {expected} bytes, got {len(data)}"
        )
    raw = np.frombuffer(
        data, dtype="<u4", count=count * width * height, offset=_DEPTH_HEADER.size
    )
    grids = raw.reshape(count, height, width).astype(np.float64)
    frames = tuple(
        DepthFrame(width, height, grids[i], timestamp_index=i) for i in range(count)
    )
    return DepthSequence(frames)


def write_depth_bin(path: str | Path, seq: DepthSequence) -> None:
    """Write a DepthSequence in the binary container format.

    Values must be integral and fit in u32; fractional depths have no
    representation in the container.
    """
    grids = np.stack([f.depth for f in seq.frames])
    if np.any(grids != np.floor(grids)) or np.any(grids > 0xFFFFFFFF):
        raise FormatError("depth values must be integers in [0, 2^32)")
    payload = grids.astype("<u4").tobytes()
    header = _DEPTH_HEADER.pack(len(seq), seq.width, seq.height)
    Path(path).write_bytes(header + payload)


def _read_netpbm_tokens(data: bytes, n_tokens: int) -> tuple[list[bytes], int]:
    """Read whitespace-delimited header tokens, honoring '#' comments.

    Returns the tokens and the offset of the first payload byte (one
    whitespace after the last token, per the format).
    """
    tokens: list[bytes] = []
    i = 0
    while len(tokens) < n_tokens:
        if i >= len(data):
            raise ParseError(
                f"truncated header: expected {n_tokens} fields, "
                f"found {len(tokens)}"
            )
        c = data[i : i + 1]
        if c == b"#":
            while i < len(data) and data[i : i + 1] != b"\n":
                i += 1
        elif c.isspace():
            i += 1
        else:
            j = i
            while j < len(data) and not data[j : j + 1].isspace():
                j += 1
            tokens.append(data[i:j])
            i = j
    if i >= len(data) or not data[i : i + 1].isspace():
        raise ParseError("missing whitespace after header")
    return tokens, i + 1


def read_image(path: str | Path) -> np.ndarray:
    """Read a binary PPM (P6) or PGM (P5) image.

    Returns:
        (h, w, 3) uint8 for P6; (h, w) uint8 or uint16 for P5 depending
        on maxval.
    """
    data = Path(path).read_bytes()
    if len(data) < 2:
        raise ParseError(f"truncated header: expected magic, got {len(data)} bytes")
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"unsupported magic {magic!r}; expected P5 or P6")
    tokens, offset = _read_netpbm_tokens(data[2:], 3)
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise ParseError(f"non-numeric header field in {tokens}") from exc
    if width < 1 or height < 1:
        raise FormatError(f"invalid dimensions {width}x{height}")
    offset += 2
    channels = 3 if magic == b"P6" else 1
    dtype = np.dtype("u1") if maxval < 256 else np.dtype(">u2")
    expected = offset + width * height * channels * dtype.itemsize
    if len(data) < expected:
        raise ParseError(f"truncated payload: expected {expected} bytes, got {len(data)}")
    flat = np.frombuffer(data, dtype=dtype, count=width * height * channels, offset=offset)
    if magic == b"P6":
        return flat.reshape(height, width, 3).copy()
    arr = flat.reshape(height, width)
    return arr.astype(np.uint16).copy() if dtype.itemsize == 2 else arr.copy()


def write_image(grid: np.ndarray, path: str | Path) -> None:
    """Write a color grid as PPM (P6) or a scalar grid as 16-bit PGM (P5).

    Args:
        grid: (h, w, 3) color values in [0, 255] or (h, w) scalar values
            in [0, 65535]; values must be integral so the file round-trips
            bit-exactly through read_image.
    """
    arr = np.asarray(grid)
    if arr.size == 0:
        raise FormatError("empty grid")
    if np.any(arr != np.floor(arr)):
        raise FormatError("grid values must be integral for lossless interchange")
    if arr.ndim == 3 and arr.shape[2] == 3:
        if np.any(arr < 0) or np.any(arr > 255):
            raise FormatError("color values must lie in [0, 255]")
        h, w = arr.shape[:2]
        header = f"P6\n{w} {h}\n255\n".encode()
        Path(path).write_bytes(header + arr.astype("u1").tobytes())
    elif arr.ndim == 2:
        if np.any(arr < 0) or np.any(arr > 65535):
            raise FormatError("scalar values must lie in [0, 65535]")
        h, w = arr.shape
        header = f"P5\n{w} {h}\n65535\n".encode()
        Path(path).write_bytes(header + arr.astype(">u2").tobytes())
    else:
        raise FormatError(f"unsupported grid shape {arr.shape}")


def read_rgb_sequence(directory: str | Path) -> RgbSequence:
    """Read every .ppm file in a directory, ordered lexicographically.

    Raises:
        EmptyInputError: no .ppm files present.
        FormatError: images disagree on dimensions.
    """
    directory = Path(directory)
    paths = sorted(p for p in directory.iterdir() if p.suffix == ".ppm")
    if not paths:
        raise EmptyInputError(f"no .ppm files in {directory}")
    frames = []
    for i, p in enumerate(paths):
        arr = read_image(p)
        if arr.ndim != 3:
            raise FormatError(f"{p.name} is not a color image")
        frames.append(RgbFrame(arr.shape[1], arr.shape[0], arr, timestamp_index=i))
    return RgbSequence(tuple(frames))
