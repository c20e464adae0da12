"""Deterministic block-transform image codec used as the digital source coder.

The pipeline per 8x8 block and channel: orthonormal DCT on 255-scaled,
level-shifted pixels, uniform quantization with step
delta(u, v, q) = max(1, round((16 + 2(u + v)) * (101 - q) / 50)),
zigzag scan, then Exp-Golomb coding. The DC level is coded differentially
against the previous block of the same channel (raster order); AC levels
are coded as (zero-run, level) pairs terminated by a level-0 marker. No
adaptive contexts, so the bitstream is bit-exact and deterministic.

Container layout (little-endian, part of the wire contract):

    offset  size  field
    0       4     magic "STC1"
    4       2     width (u16)
    6       2     height (u16)
    8       1     channels (u8, 1 or 2)
    9       1     quality q (u8, 1..100)
    10      1     pad_bits (u8, zero bits appended to the last body byte)
    11      1     reserved (u8, zero)
    12      ...   entropy-coded body, bits packed MSB-first

A single corrupted bit near the head of the body desynchronizes the
variable-length stream, which is the catastrophic failure mode behind the
digital chain's low-SNR collapse.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DecodeError, FormatError, InvalidArgumentError

MAGIC = b"STC1"
HEADER_SIZE = 12
_BLOCK = 8
_MAX_LEVEL = 1 << 14  # sanity bound while parsing possibly corrupted bodies


def _dct_matrix() -> np.ndarray:
    i = np.arange(_BLOCK)
    u = i[:, None]
    c = np.cos((2 * i[None, :] + 1) * u * np.pi / (2 * _BLOCK)) * math.sqrt(2.0 / _BLOCK)
    c[0] = math.sqrt(1.0 / _BLOCK)
    return c


_DCT = _dct_matrix()


def dct8_forward(block: np.ndarray) -> np.ndarray:
    """Orthonormal type-II 2-D DCT of an 8x8 block."""
    block = np.asarray(block, dtype=np.float64)
    if block.shape != (_BLOCK, _BLOCK):
        raise InvalidArgumentError("dct8_forward expects an 8x8 block")
    return _DCT @ block @ _DCT.T


def dct8_inverse(coeffs: np.ndarray) -> np.ndarray:
    """Inverse of :func:`dct8_forward`."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.shape != (_BLOCK, _BLOCK):
        raise InvalidArgumentError("dct8_inverse expects an 8x8 block")
    return _DCT.T @ coeffs @ _DCT


def quant_step(q: int) -> np.ndarray:
    """Quantization step table for quality q, shape (8, 8)."""
    if not 1 <= q <= 100:
        raise InvalidArgumentError("quality must be in [1, 100]")
    u = np.arange(_BLOCK)
    ramp = 16.0 + 2.0 * (u[:, None] + u[None, :])
    return np.maximum(1.0, np.round(ramp * (101 - q) / 50.0))


def _zigzag_order() -> np.ndarray:
    coords = []
    for s in range(2 * _BLOCK - 1):
        us = range(min(s, _BLOCK - 1), max(0, s - _BLOCK + 1) - 1, -1) if s % 2 == 0 \
            else range(max(0, s - _BLOCK + 1), min(s, _BLOCK - 1) + 1)
        coords.extend((u, s - u) for u in us)
    idx = np.asarray([u * _BLOCK + v for u, v in coords], dtype=np.int64)
    return idx


_ZIGZAG = _zigzag_order()


class _BitWriter:
    def __init__(self):
        self.bytes = bytearray()
        self.acc = 0
        self.nbits = 0

    def write(self, value: int, width: int):
        self.acc = (self.acc << width) | (value & ((1 << width) - 1))
        self.nbits += width
        while self.nbits >= 8:
            self.nbits -= 8
            self.bytes.append((self.acc >> self.nbits) & 0xFF)
        self.acc &= (1 << self.nbits) - 1

    def write_ue(self, v: int):
        # Exp-Golomb: floor(log2(v+1)) zeros then binary(v+1).
        v += 1
        width = v.bit_length()
        self.write(0, width - 1)
        self.write(v, width)

    def write_se(self, v: int):
        self.write_ue(2 * v - 1 if v > 0 else -2 * v)

    def finish(self) -> tuple[bytes, int]:
        pad = (8 - self.nbits) % 8
        if pad:
            self.write(0, pad)
        return bytes(self.bytes), pad


class _BitReader:
    def __init__(self, data: bytes, pad_bits: int):
        self.data = data
        self.pos = 0
        self.limit = 8 * len(data) - pad_bits

    def read_bit(self) -> int:
        if self.pos >= self.limit:
            raise DecodeError("bitstream exhausted", partial=True)
        byte = self.data[self.pos >> 3]
        bit = (byte >> (7 - (self.pos & 7))) & 1
        self.pos += 1
        return bit

    def read_ue(self) -> int:
        zeros = 0
        while self.read_bit() == 0:
            zeros += 1
            if zeros > 32:
                raise DecodeError("run-away Exp-Golomb prefix")
        v = 1
        for _ in range(zeros):
            v = (v << 1) | self.read_bit()
        return v - 1

    def read_se(self) -> int:
        u = self.read_ue()
        return (u + 1) // 2 if u % 2 else -(u // 2)


@dataclass
class CodecConfig:
    """Quality knob for the toy codec; block size is fixed at 8."""

    q: int = 50

    def __post_init__(self):
        if not 1 <= self.q <= 100:
            raise InvalidArgumentError("quality must be in [1, 100]")


@dataclass
class CompressedImage:
    width: int
    height: int
    channels: int
    q: int
    pad_bits: int
    body: bytes

    def to_bytes(self) -> bytes:
        return (
            MAGIC
            + struct.pack("<HHBBBB", self.width, self.height, self.channels,
                          self.q, self.pad_bits, 0)
            + self.body
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "CompressedImage":
        if len(data) < HEADER_SIZE:
            raise FormatError("container shorter than header")
        if data[:4] != MAGIC:
            raise FormatError("bad container magic")
        width, height, channels, q, pad_bits, _ = struct.unpack("<HHBBBB", data[4:12])
        if channels not in (1, 2):
            raise FormatError(f"unsupported channel count {channels}")
        if not 1 <= q <= 100:
            raise FormatError(f"quality out of range: {q}")
        if pad_bits > 7:
            raise FormatError(f"pad_bits out of range: {pad_bits}")
        if width < 8 or height < 8 or width % 8 or height % 8:
            raise FormatError(f"bad dimensions {width}x{height}")
        return cls(width, height, channels, q, pad_bits, data[HEADER_SIZE:])


def _as_image(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3 or img.shape[2] not in (1, 2):
        raise InvalidArgumentError("image must be (H, W) or (H, W, C) with C in {1, 2}")
    if img.shape[0] < 8 or img.shape[1] < 8:
        raise InvalidArgumentError("image dimensions must be >= 8")
    return img


def encode_image(img: np.ndarray, cfg: CodecConfig) -> CompressedImage:
    """Encode an image with values in [0, 1] into a compressed container.

    Dimensions must be multiples of 8 (callers pad beforehand).
    """
    img = _as_image(img)
    h, w, c = img.shape
    if h % 8 or w % 8:
        raise InvalidArgumentError("image dimensions must be multiples of 8")
    steps = quant_step(cfg.q)
    writer = _BitWriter()
    scaled = np.clip(img, 0.0, 1.0) * 255.0 - 128.0
    for ch in range(c):
        prev_dc = 0
        for by in range(0, h, _BLOCK):
            for bx in range(0, w, _BLOCK):
                coeffs = dct8_forward(scaled[by:by + _BLOCK, bx:bx + _BLOCK, ch])
                levels = np.round(coeffs / steps).astype(np.int64)
                zz = levels.ravel()[_ZIGZAG]
                writer.write_se(int(zz[0]) - prev_dc)
                prev_dc = int(zz[0])
                run = 0
                for v in zz[1:]:
                    if v == 0:
                        run += 1
                        continue
                    writer.write_ue(run)
                    writer.write_se(int(v))
                    run = 0
                writer.write_ue(0)
                writer.write_se(0)  # end-of-block marker
    body, pad = writer.finish()
    return CompressedImage(width=w, height=h, channels=c, q=cfg.q, pad_bits=pad, body=body)


def decode_image(container: CompressedImage | bytes) -> np.ndarray:
    """Decode a container back to an (H, W, C) image clamped to [0, 1].

    Raises FormatError for a bad header and DecodeError for a body that
    cannot be parsed (truncation or corruption). All blocks are parsed
    before any pixels are materialized, so corrupt headers cannot trigger
    large allocations.
    """
    if isinstance(container, (bytes, bytearray)):
        container = CompressedImage.from_bytes(bytes(container))
    h, w, c = container.height, container.width, container.channels
    reader = _BitReader(container.body, container.pad_bits)
    nblocks = (h // _BLOCK) * (w // _BLOCK)
    if 2 * nblocks * c > reader.limit + 2:
        raise DecodeError("body too short for declared dimensions", partial=True)
    planes: list[list[np.ndarray]] = []
    for _ in range(c):
        prev_dc = 0
        blocks = []
        for _ in range(nblocks):
            zz = np.zeros(_BLOCK * _BLOCK, dtype=np.int64)
            dc = prev_dc + reader.read_se()
            if abs(dc) > _MAX_LEVEL:
                raise DecodeError("implausible DC level")
            zz[0] = dc
            prev_dc = dc
            pos = 1
            while True:
                run = reader.read_ue()
                level = reader.read_se()
                if level == 0:
                    break
                pos += run
                if pos >= _BLOCK * _BLOCK or abs(level) > _MAX_LEVEL:
                    raise DecodeError("run/level outside block bounds")
                zz[pos] = level
                pos += 1
            blocks.append(zz)
        planes.append(blocks)
    steps = quant_step(container.q)
    out = np.empty((h, w, c), dtype=np.float64)
    for ch in range(c):
        it = iter(planes[ch])
        for by in range(0, h, _BLOCK):
            for bx in range(0, w, _BLOCK):
                levels = np.zeros(_BLOCK * _BLOCK, dtype=np.float64)
                levels[_ZIGZAG] = next(it)
                coeffs = levels.reshape(_BLOCK, _BLOCK) * steps
                out[by:by + _BLOCK, bx:bx + _BLOCK, ch] = dct8_inverse(coeffs)
    return np.clip((out + 128.0) / 255.0, 0.0, 1.0)


def bits_per_pixel(container: CompressedImage) -> float:
    """Container size in bits (header included) per source sample."""
    total_bytes = HEADER_SIZE + len(container.body)
    return 8.0 * total_bytes / (container.height * container.width * container.channels)
