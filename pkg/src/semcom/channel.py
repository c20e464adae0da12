"""Seeded physical-channel models and power/SNR accounting.

Symbol blocks are 1-D complex numpy arrays of baseband amplitudes. Every
encoder in the package emits blocks at unit average power, so SNR is
defined per complex channel symbol as transmit power over total complex
noise power. For QPSK this makes Es/N0 equal to the SNR; with 2 bits per
symbol, Eb = Es / 2.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, InvalidArgumentError

_MASK64 = (1 << 64) - 1

#: Unit-power tolerance all encoders must satisfy: |mean(|s|^2) - 1| <= this.
UNIT_POWER_TOL = 1e-6


@dataclass(frozen=True)
class ChannelSpec:
    """Channel kind plus SNR in dB. ``snr_db`` is ignored for ``noiseless``."""

    kind: str = "awgn"
    snr_db: float = 0.0

    def __post_init__(self):
        if self.kind not in ("noiseless", "awgn"):
            raise InvalidArgumentError(f"unknown channel kind: {self.kind!r}")
        if self.kind == "awgn" and not math.isfinite(self.snr_db):
            raise InvalidArgumentError("snr_db must be finite for an awgn channel")


NOISELESS = ChannelSpec(kind="noiseless", snr_db=0.0)


@dataclass(frozen=True)
class RngStream:
    """A reproducible noise stream keyed by (seed, stream_id).

    Identical (seed, stream_id) pairs always yield identical sample
    sequences; distinct stream_ids give statistically independent streams.
    Experiment cells derive their own substream so that sweeps are
    reproducible regardless of execution order.
    """

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        return np.random.default_rng(
            np.random.SeedSequence([self.seed & _MASK64, self.stream_id & _MASK64])
        )

    def substream(self, *labels) -> "RngStream":
        """Derive a child stream from labels (crc32-based, stable across runs)."""
        tag = "|".join(str(lab) for lab in labels)
        child = zlib.crc32(tag.encode("utf-8"), self.stream_id & 0xFFFFFFFF)
        return RngStream(self.seed, child)


def noise_variance(snr_db: float) -> float:
    """Total complex noise variance for unit transmit power.

    Returns sigma^2 = 10^(-snr_db / 10); each real dimension carries
    sigma^2 / 2.
    """
    if not math.isfinite(snr_db):
        raise InvalidArgumentError("snr_db must be finite")
    return 10.0 ** (-snr_db / 10.0)


def mean_power(block: np.ndarray) -> float:
    """Mean per-symbol power mean(|s|^2) of a block."""
    block = np.asarray(block)
    if block.size == 0:
        raise InvalidArgumentError("empty symbol block")
    return float(np.mean(np.abs(block) ** 2))


def normalize_power(block: np.ndarray) -> np.ndarray:
    """Scale a block so that mean(|s|^2) = 1.

    Raises DegenerateInputError for an all-zero block.
    """
    block = np.asarray(block, dtype=np.complex128)
    if block.size == 0:
        raise InvalidArgumentError("empty symbol block")
    p = np.mean(np.abs(block) ** 2)
    if p == 0.0:
        raise DegenerateInputError("cannot normalize an all-zero block")
    return block / np.sqrt(p)


def apply(block: np.ndarray, spec: ChannelSpec, rng: RngStream) -> np.ndarray:
    """Pass a symbol block through the channel.

    noiseless: exact copy. awgn: y = x + n with n iid circular complex
    Gaussian, per-real-dimension variance noise_variance(snr_db) / 2.
    Deterministic given ``rng``.
    """
    block = np.asarray(block, dtype=np.complex128)
    if block.size == 0:
        raise InvalidArgumentError("empty symbol block")
    if spec.kind == "noiseless":
        return block.copy()
    sigma2 = noise_variance(spec.snr_db)
    g = rng.generator()
    # (k, 2) C-order draw = [re0, im0, re1, im1, ...], matching the
    # interleaved real/imag pairing used by the learned codec.
    n = g.standard_normal((block.size, 2)) * math.sqrt(sigma2 / 2.0)
    return block + n[:, 0] + 1j * n[:, 1]
