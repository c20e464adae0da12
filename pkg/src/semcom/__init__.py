"""Desk-scale simulator for cooperative multi-user semantic communication.

A learned joint source-channel codec with explicit gradients, a classic
codec + LDPC + QPSK digital baseline, multi-user semantic fusion and task
execution on synthetic multi-view scenes, an edge knowledge-base and
federated-averaging simulation, and an experiment harness with a CLI.
"""

from .channel import ChannelSpec, NOISELESS, RngStream, apply, noise_variance, normalize_power
from .errors import SemcomError

__version__ = "0.1.0"

__all__ = [
    "ChannelSpec",
    "NOISELESS",
    "RngStream",
    "SemcomError",
    "apply",
    "noise_variance",
    "normalize_power",
    "__version__",
]
