"""Learned joint source-channel codec trained through the channel.

The encoder maps an image to 2k reals, normalizes them to unit complex
symbol power and pairs consecutive values into k complex samples
(v[2t], v[2t+1]) -> re, im. The channel is treated as a non-trainable
layer: the additive noise drawn in a forward pass is held fixed and acts
as a constant in the backward pass, so gradients flow straight through.

Two heads exist. A reconstruction model's decoder consumes the 2k
received reals and emits an image-shaped tensor. A feature model's
decoder is a cooperative trunk that consumes 4k reals, the received block
concatenated with the element-wise mean over all users' received blocks;
decoding a single block duplicates it, which makes single-user decoding
the exact reduction of the cooperative case.

Checkpoint container "SJSC1" (little-endian):

    magic "SJSC1" | u32 array count | per array: u8 ndim, ndim x u32 dims |
    all arrays as row-major float32, concatenated in layout order

Parameter layout order is encoder layers then decoder layers, each layer
contributing its arrays in a fixed order (conv/dense: weight then bias,
rectifiers: slope). In-memory math is float64; checkpoints store float32.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .channel import ChannelSpec, RngStream, noise_variance
from .errors import (
    FormatError,
    InvalidArgumentError,
    TrainingError,
)
from .layers import (
    Conv2d,
    Dense,
    Flatten,
    Layer,
    PowerNormPairs,
    PReLU,
    Reshape,
    Sequential,
    Upsample2x,
    cross_entropy,
    mse,
    sgd_step,
)

CHECKPOINT_MAGIC = b"SJSC1"


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    batch_size: int = 32
    epochs: int = 20
    train_snr_db: float = 0.0
    loss: str = "mse"  # {"mse", "cross_entropy"}
    seed: int = 0
    freeze_mask: list[bool] | None = None  # per layer, True = frozen

    def __post_init__(self):
        if self.learning_rate < 0.0:
            raise InvalidArgumentError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise InvalidArgumentError("batch_size must be >= 1")
        if self.loss not in ("mse", "cross_entropy"):
            raise InvalidArgumentError(f"unknown loss {self.loss!r}")


class JsccModel:
    """Encoder/decoder layer stacks plus the symbol budget k."""

    def __init__(self, encoder: Sequential, decoder: Sequential, k: int,
                 input_shape: tuple[int, int, int], head: str):
        if head not in ("reconstruction", "feature"):
            raise InvalidArgumentError(f"unknown head {head!r}")
        self.encoder = encoder
        self.decoder = decoder
        self.k = k
        self.input_shape = tuple(input_shape)  # (H, W, C)
        self.head = head

    def layers(self) -> list[Layer]:
        return self.encoder.layers + self.decoder.layers

    def params(self) -> list[np.ndarray]:
        return self.encoder.params() + self.decoder.params()

    def grads(self) -> list[np.ndarray]:
        return self.encoder.grads() + self.decoder.grads()

    def zero_grads(self):
        self.encoder.zero_grads()
        self.decoder.zero_grads()

    def set_params(self, values: list[np.ndarray]):
        own = self.params()
        if len(own) != len(values):
            raise InvalidArgumentError("parameter list length mismatch")
        for p, v in zip(own, values):
            if p.shape != v.shape:
                raise InvalidArgumentError("parameter shape mismatch")
            p[...] = v

    @property
    def compression_ratio(self) -> float:
        h, w, c = self.input_shape
        return self.k / (h * w * c)


def symbols_for_ratio(ratio: float, input_shape: tuple[int, int, int]) -> int:
    """Number of complex channel symbols for a target compression ratio.

    The convention is k complex symbols per real source sample,
    k = round(ratio * H * W * C).
    """
    if not 0.0 < ratio < 1.0:
        raise InvalidArgumentError("compression ratio must be in (0, 1)")
    h, w, c = input_shape
    return int(round(ratio * h * w * c))


def build_encoder(input_shape, k, widths, rng) -> Sequential:
    h, w, c = input_shape
    if h % 8 or w % 8:
        raise InvalidArgumentError("encoder input dims must be multiples of 8")
    w1, w2, w3 = widths
    return Sequential([
        Conv2d(c, w1, rng, stride=2),
        PReLU(),
        Conv2d(w1, w2, rng, stride=2),
        PReLU(),
        Conv2d(w2, w3, rng, stride=2),
        PReLU(),
        Flatten(),
        Dense(w3 * (h // 8) * (w // 8), 2 * k, rng),
        PowerNormPairs(),
    ])


def build_reconstruction_model(input_shape, ratio, widths=(16, 32, 32), seed=0) -> JsccModel:
    """Convolutional autoencoder with a mirrored upsampling decoder."""
    h, w, c = input_shape
    k = symbols_for_ratio(ratio, input_shape)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    encoder = build_encoder(input_shape, k, widths, rng)
    w1, w2, w3 = widths
    decoder = Sequential([
        Dense(2 * k, w3 * (h // 8) * (w // 8), rng),
        PReLU(),
        Reshape((w3, h // 8, w // 8)),
        Upsample2x(),
        Conv2d(w3, w2, rng, stride=1),
        PReLU(),
        Upsample2x(),
        Conv2d(w2, w1, rng, stride=1),
        PReLU(),
        Upsample2x(),
        Conv2d(w1, c, rng, stride=1),
    ])
    return JsccModel(encoder, decoder, k, input_shape, "reconstruction")


def build_feature_model(input_shape, ratio, out_dim, widths=(16, 32, 32),
                        hidden=256, seed=0) -> JsccModel:
    """Encoder plus a cooperative dense trunk emitting ``out_dim`` values."""
    k = symbols_for_ratio(ratio, input_shape)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    encoder = build_encoder(input_shape, k, widths, rng)
    decoder = Sequential([
        Dense(4 * k, hidden, rng),
        PReLU(),
        Dense(hidden, out_dim, rng),
        PReLU(),
    ])
    return JsccModel(encoder, decoder, k, input_shape, "feature")


# ---------------------------------------------------------------------------
# Forward paths
# ---------------------------------------------------------------------------

def _to_batch(model: JsccModel, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[:, :, None]
    if x.shape != model.input_shape:
        raise InvalidArgumentError(
            f"input shape {x.shape} does not match model input {model.input_shape}")
    return x.transpose(2, 0, 1)[None]  # (1, C, H, W)


def encode_batch(model: JsccModel, xs: np.ndarray, train: bool = False) -> np.ndarray:
    """Forward the encoder over (B, C, H, W) input; returns (B, 2k) reals."""
    return model.encoder.forward(xs, train=train)


def pair_to_complex(reals: np.ndarray) -> np.ndarray:
    return reals[..., 0::2] + 1j * reals[..., 1::2]


def complex_to_pairs(block: np.ndarray) -> np.ndarray:
    out = np.empty(block.shape[:-1] + (2 * block.shape[-1],), dtype=np.float64)
    out[..., 0::2] = block.real
    out[..., 1::2] = block.imag
    return out


def jscc_encode(model: JsccModel, x: np.ndarray) -> np.ndarray:
    """Encode one source tensor into k unit-power complex symbols."""
    reals = encode_batch(model, _to_batch(model, x))
    return pair_to_complex(reals[0])


def decode_batch(model: JsccModel, reals: np.ndarray, train: bool = False) -> np.ndarray:
    out = model.decoder.forward(reals, train=train)
    return out


def jscc_decode(model: JsccModel, y: np.ndarray) -> np.ndarray:
    """Decode k received symbols.

    Reconstruction head: returns an input-shaped tensor clamped to [0, 1].
    Feature head: returns the trunk output for the block decoded on its
    own (the block stands in for the cooperative mean).
    """
    y = np.asarray(y, dtype=np.complex128).ravel()
    if y.size != model.k:
        raise InvalidArgumentError(f"expected {model.k} symbols, got {y.size}")
    reals = complex_to_pairs(y[None])
    if model.head == "feature":
        out = decode_batch(model, np.concatenate([reals, reals], axis=1))
        return out[0]
    out = decode_batch(model, reals)[0]
    h, w, c = model.input_shape
    return np.clip(out.reshape(c, h, w).transpose(1, 2, 0), 0.0, 1.0)


def channel_noise(shape: tuple[int, ...], spec: ChannelSpec, rng: RngStream) -> np.ndarray:
    """Additive real-domain noise equivalent to the complex channel.

    Per real dimension the variance is noise_variance(snr)/2, and the draw
    order matches :func:`semcom.channel.apply` on the paired block.
    """
    if spec.kind == "noiseless":
        return np.zeros(shape)
    sigma = math.sqrt(noise_variance(spec.snr_db) / 2.0)
    return rng.generator().standard_normal(shape) * sigma


def _loss_terms(model, out, xs, labels, loss_kind):
    if loss_kind == "mse":
        target = xs.reshape(xs.shape[0], -1)
        return mse(out, target)
    if labels is None:
        raise InvalidArgumentError("cross_entropy loss requires class labels")
    return cross_entropy(out, labels)


def _forward_backward(model: JsccModel, batch, spec: ChannelSpec, rng: RngStream,
                      loss_kind: str, want_grads: bool):
    xs, labels = batch
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 4:
        raise InvalidArgumentError("batch images must be (B, C, H, W)")
    if xs.shape[0] == 0:
        raise InvalidArgumentError("batch must be non-empty")
    sent = encode_batch(model, xs, train=want_grads)
    noise = channel_noise(sent.shape, spec, rng)
    received = sent + noise
    if model.head == "feature":
        received = np.concatenate([received, received], axis=1)
    out = decode_batch(model, received, train=want_grads)
    out_shape = out.shape
    if model.head == "reconstruction":
        out = out.reshape(out.shape[0], -1)
    loss, dout = _loss_terms(model, out, xs, labels, loss_kind)
    if not want_grads:
        return loss, None
    model.zero_grads()
    dreceived = model.decoder.backward(dout.reshape(out_shape))
    if model.head == "feature":
        half = dreceived.shape[1] // 2
        dreceived = dreceived[:, :half] + dreceived[:, half:]
    model.encoder.backward(dreceived)
    return loss, [g.copy() for g in model.grads()]


def forward_loss(model: JsccModel, batch, spec: ChannelSpec, rng: RngStream,
                 loss: str = "mse") -> float:
    """Mean loss of decode(channel(encode(x))) against the batch target.

    ``batch`` is (images (B, C, H, W), labels or None); with no labels the
    target is the input itself (reconstruction MSE).
    """
    value, _ = _forward_backward(model, batch, spec, rng, loss, want_grads=False)
    return value


def backward(model: JsccModel, batch, spec: ChannelSpec, rng: RngStream,
             loss: str = "mse", freeze_mask: list[bool] | None = None):
    """Gradient of the sampled loss for every parameter, in layout order.

    The channel noise drawn in the forward pass is treated as a constant.
    Frozen layers receive exactly-zero gradient arrays.
    """
    _, grads = _forward_backward(model, batch, spec, rng, loss, want_grads=True)
    if freeze_mask is not None:
        _apply_freeze(model, grads, freeze_mask)
    return grads


def _apply_freeze(model: JsccModel, grads: list[np.ndarray], mask: list[bool]):
    layers = model.layers()
    if len(mask) != len(layers):
        raise InvalidArgumentError(
            f"freeze_mask must have one entry per layer ({len(layers)})")
    i = 0
    for layer, frozen in zip(layers, mask):
        for _ in layer.params:
            if frozen:
                grads[i][...] = 0.0
            i += 1


def train(model: JsccModel, dataset, cfg: TrainConfig, spec: ChannelSpec):
    """Mini-batch gradient descent through the channel.

    ``dataset`` is (images (N, C, H, W), labels or None). Deterministic
    for a given config seed; returns (model, per-epoch mean loss history).
    Raises TrainingError when the loss becomes non-finite.
    """
    xs, labels = dataset
    xs = np.asarray(xs, dtype=np.float64)
    n = xs.shape[0]
    if n == 0:
        raise InvalidArgumentError("dataset must be non-empty")
    shuffle = np.random.default_rng(np.random.SeedSequence([cfg.seed, 3]))
    base = RngStream(cfg.seed).substream("jscc-train")
    history = []
    for epoch in range(cfg.epochs):
        order = shuffle.permutation(n)
        total = 0.0
        for bi, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            batch = (xs[idx], None if labels is None else labels[idx])
            rng = base.substream("noise", epoch, bi)
            loss, grads = _forward_backward(model, batch, spec, rng, cfg.loss,
                                            want_grads=True)
            if not math.isfinite(loss):
                raise TrainingError(f"loss diverged at epoch {epoch}", epoch=epoch)
            if cfg.freeze_mask is not None:
                _apply_freeze(model, grads, cfg.freeze_mask)
            sgd_step(model.params(), grads, cfg.learning_rate)
            total += loss * len(idx)
        history.append(total / n)
    return model, history


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(params: list[np.ndarray]) -> bytes:
    """Serialize a parameter list into the SJSC1 container."""
    out = bytearray(CHECKPOINT_MAGIC)
    out += struct.pack("<I", len(params))
    payload = bytearray()
    for p in params:
        if p.ndim > 255:
            raise InvalidArgumentError("parameter rank too large")
        out += struct.pack("<B", p.ndim)
        out += struct.pack(f"<{p.ndim}I", *p.shape)
        payload += np.ascontiguousarray(p, dtype="<f4").tobytes()
    return bytes(out) + bytes(payload)


def load_checkpoint(data: bytes) -> list[np.ndarray]:
    """Parse an SJSC1 container. Raises FormatError on bad magic/truncation."""
    if len(data) < len(CHECKPOINT_MAGIC) + 4:
        raise FormatError("checkpoint shorter than header")
    if data[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise FormatError("bad checkpoint magic")
    pos = len(CHECKPOINT_MAGIC)
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    shapes = []
    for _ in range(count):
        if pos + 1 > len(data):
            raise FormatError("truncated checkpoint header")
        (ndim,) = struct.unpack_from("<B", data, pos)
        pos += 1
        if pos + 4 * ndim > len(data):
            raise FormatError("truncated checkpoint header")
        shape = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        shapes.append(shape)
    params = []
    for shape in shapes:
        n = int(np.prod(shape)) if shape else 1
        end = pos + 4 * n
        if end > len(data):
            raise FormatError("truncated checkpoint payload")
        arr = np.frombuffer(data[pos:end], dtype="<f4").astype(np.float64)
        params.append(arr.reshape(shape))
        pos = end
    if pos != len(data):
        raise FormatError("trailing bytes after checkpoint payload")
    return params
