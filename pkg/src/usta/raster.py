"""Raster value types and bit-exact file I/O.

Images are read from binary netpbm (P5 grey / P6 RGB, maxval 255) and scaled
to [0, 1] at load time.  Change maps are written as P5 with labels 0/255.
Scalar maps use the raw ``USTAF1`` container: the 8-byte magic
``b"USTAF1\\0\\0"``, height and width as little-endian u32, then H*W
little-endian float32 values in row-major order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

USTAF_MAGIC = b"USTAF1\0\0"
_WHITESPACE = b" \t\n\r\v\f"


class RasterFormatError(ValueError):
    """Malformed raster file; ``offset`` is the byte where parsing failed."""

    def __init__(self, message, offset=None):
        super().__init__(message if offset is None else f"{message} (at byte {offset})")
        self.offset = offset


def _check_dims(arr, ndim, what):
    if arr.ndim != ndim or min(arr.shape[:2]) < 1:
        raise ValueError(f"{what} needs {ndim} dims with height, width >= 1, got shape {arr.shape}")


def _frozen(arr, dtype):
    arr = np.array(arr, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class RasterImage:
    """Multichannel image, ``data`` shaped (H, W, C) with values in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        _check_dims(arr, 3, "RasterImage")
        if arr.shape[2] < 1:
            raise ValueError("RasterImage needs at least one channel")
        if not np.all((arr >= 0) & (arr <= 1)):
            raise ValueError("RasterImage intensities must lie in [0, 1]")
        object.__setattr__(self, "data", _frozen(arr, np.float64))

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def channels(self):
        return self.data.shape[2]


@dataclass(frozen=True, eq=False)
class ScalarMap:
    """Single-channel (H, W) map of values in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        _check_dims(arr, 2, "ScalarMap")
        if not np.all((arr >= 0) & (arr <= 1)):
            raise ValueError("ScalarMap values must lie in [0, 1]")
        object.__setattr__(self, "data", _frozen(arr, np.float64))

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]


@dataclass(frozen=True, eq=False)
class ChangeMap:
    """Binary (H, W) labels: 0 unchanged, 1 changed."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        _check_dims(arr, 2, "ChangeMap")
        if not np.all((arr == 0) | (arr == 1)):
            raise ValueError("ChangeMap labels must be 0 or 1")
        object.__setattr__(self, "data", _frozen(arr, np.uint8))

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    def complement(self):
        return ChangeMap(1 - self.data)


def _parse_netpbm(buf):
    """Return (magic, width, height, maxval, payload_offset)."""
    pos = 0
    fields = []
    if len(buf) < 2:
        raise RasterFormatError("file too short for a netpbm header", 0)
    magic = buf[:2]
    if magic not in (b"P5", b"P6"):
        raise RasterFormatError(f"unsupported magic number {magic!r}", 0)
    pos = 2
    while len(fields) < 3:
        if pos >= len(buf):
            raise RasterFormatError("header ends before width/height/maxval", pos)
        ch = buf[pos:pos + 1]
        if ch in _WHITESPACE:
            pos += 1
        elif ch == b"#":
            end = buf.find(b"\n", pos)
            pos = len(buf) if end < 0 else end + 1
        elif ch.isdigit():
            start = pos
            while pos < len(buf) and buf[pos:pos + 1].isdigit():
                pos += 1
            fields.append((int(buf[start:pos]), start))
        else:
            raise RasterFormatError(f"unexpected byte {ch!r} in header", pos)
    if pos >= len(buf) or buf[pos:pos + 1] not in _WHITESPACE:
        raise RasterFormatError("missing whitespace after maxval", pos)
    (width, woff), (height, hoff), (maxval, moff) = fields
    if width < 1:
        raise RasterFormatError("width must be positive", woff)
    if height < 1:
        raise RasterFormatError("height must be positive", hoff)
    if maxval != 255:
        raise RasterFormatError(f"only maxval 255 is supported, got {maxval}", moff)
    return magic, width, height, maxval, pos + 1


def read_image(path) -> RasterImage:
    with open(path, "rb") as fh:
        buf = fh.read()
    magic, width, height, _, start = _parse_netpbm(buf)
    channels = 1 if magic == b"P5" else 3
    need = width * height * channels
    if len(buf) - start < need:
        raise RasterFormatError(f"payload truncated: need {need} bytes, have {len(buf) - start}", len(buf))
    pixels = np.frombuffer(buf, dtype=np.uint8, count=need, offset=start)
    return RasterImage(pixels.reshape(height, width, channels) / 255.0)


def _write_netpbm(path, data_u8):
    h, w = data_u8.shape[:2]
    magic = b"P5" if data_u8.ndim == 2 else b"P6"
    with open(path, "wb") as fh:
        fh.write(magic + f"\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(data_u8).tobytes())


def write_change_map(cm: ChangeMap, path):
    if not isinstance(cm, ChangeMap):
        cm = ChangeMap(cm)
    _write_netpbm(path, cm.data * np.uint8(255))


def read_change_map(path) -> ChangeMap:
    """Read a P5 change map; any nonzero byte is a changed pixel."""
    img = read_image(path)
    if img.channels != 1:
        raise RasterFormatError("change maps must be single-channel P5", 0)
    return ChangeMap((img.data[:, :, 0] > 0).astype(np.uint8))


def write_image(img: RasterImage, path):
    """Quantise to 8 bits and write P5 (one channel) or P6 (three channels)."""
    if img.channels not in (1, 3):
        raise ValueError(f"netpbm holds 1 or 3 channels, image has {img.channels}")
    q = np.rint(img.data * 255.0).astype(np.uint8)
    _write_netpbm(path, q[:, :, 0] if img.channels == 1 else q)


def write_scalar_map(sm: ScalarMap, path):
    h, w = sm.data.shape
    with open(path, "wb") as fh:
        fh.write(USTAF_MAGIC + struct.pack("<II", h, w))
        fh.write(sm.data.astype("<f4").tobytes())


def read_scalar_map(path) -> ScalarMap:
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 16:
        raise RasterFormatError("file shorter than the 16-byte USTAF1 header", len(buf))
    if buf[:8] != USTAF_MAGIC:
        raise RasterFormatError(f"bad magic {buf[:8]!r}", 0)
    h, w = struct.unpack("<II", buf[8:16])
    if h < 1 or w < 1:
        raise RasterFormatError(f"invalid dimensions {h}x{w}", 8)
    if len(buf) - 16 != 4 * h * w:
        raise RasterFormatError(f"payload has {len(buf) - 16} bytes, header implies {4 * h * w}", 16)
    values = np.frombuffer(buf, dtype="<f4", offset=16).reshape(h, w)
    return ScalarMap(values.astype(np.float64))
