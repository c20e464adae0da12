"""Per-user semantic extraction, multi-user fusion, task performers and metrics.

Pixel coordinates follow (dx, dy) = (column, row) order for offsets and
boxes; arrays are indexed [row, column]. Features are 1-D float vectors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.signal import fftconvolve

from .channel import ChannelSpec, RngStream
from .errors import InvalidArgumentError, RegistrationError
from .jscc import (
    JsccModel,
    TrainConfig,
    channel_noise,
    complex_to_pairs,
    encode_batch,
)
from .layers import Conv2d, Dense, PReLU, Sequential, cross_entropy, sgd_step, softmax


# ---------------------------------------------------------------------------
# Feature extraction and modality fusion
# ---------------------------------------------------------------------------

@dataclass
class MultiModalSample:
    """A visual view and its thermal counterpart, same dimensions."""

    visual: np.ndarray
    thermal: np.ndarray

    def __post_init__(self):
        if self.visual.shape != self.thermal.shape:
            raise InvalidArgumentError("visual and thermal dimensions must match")


def _as_nchw(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3:
        img = img.transpose(2, 0, 1)[None]
    elif img.ndim == 2:
        img = img[None, None]
    else:
        raise InvalidArgumentError("image must be (H, W) or (H, W, C)")
    return img


def extract_semantic(backbone, img: np.ndarray) -> np.ndarray:
    """Deterministic semantic feature of an image.

    ``backbone`` is either a feature-head :class:`JsccModel` (encode then
    decode with no channel in between, i.e. the on-board path) or a plain
    layer stack ending in a vector.
    """
    if isinstance(backbone, JsccModel):
        from .jscc import jscc_decode, jscc_encode

        return jscc_decode(backbone, jscc_encode(backbone, img))
    return backbone.forward(_as_nchw(img)).ravel()


@dataclass
class ModalityTower:
    """Convolution stages of one modality; ``head`` maps the last stage to a feature."""

    stages: list[Sequential]
    head: Sequential | None = None

    def params(self):
        out = [p for s in self.stages for p in s.params()]
        if self.head is not None:
            out += self.head.params()
        return out

    def grads(self):
        out = [g for s in self.stages for g in s.grads()]
        if self.head is not None:
            out += self.head.grads()
        return out

    def zero_grads(self):
        for s in self.stages:
            s.zero_grads()
        if self.head is not None:
            self.head.zero_grads()


def build_fusion_towers(view_hw: tuple[int, int], feature_dim: int,
                        widths=(8, 16), seed: int = 0):
    """Two stage-matched towers with additive cross links.

    The thermal tower uses bias-free convolutions so an all-zero thermal
    input contributes exactly zero at every cross link.
    """
    h, w = view_hw
    rng = np.random.default_rng(np.random.SeedSequence([seed, 11]))
    w1, w2 = widths
    vis = ModalityTower(
        stages=[
            Sequential([Conv2d(1, w1, rng, stride=2), PReLU()]),
            Sequential([Conv2d(w1, w2, rng, stride=2), PReLU()]),
        ],
        head=Sequential([Dense(w2 * (h // 4) * (w // 4), feature_dim, rng)]),
    )
    thermal = ModalityTower(
        stages=[
            Sequential([Conv2d(1, w1, rng, stride=2, bias=False), PReLU()]),
            Sequential([Conv2d(w1, w2, rng, stride=2, bias=False), PReLU()]),
        ],
    )
    return vis, thermal


def fuse_modalities(tower_a: ModalityTower, tower_b: ModalityTower,
                    sample: MultiModalSample, train: bool = False) -> np.ndarray:
    """Run both towers, adding the thermal stage output into the visual path
    after every stage, then map the merged activations to one feature."""
    xa = _as_nchw(sample.visual)
    xb = _as_nchw(sample.thermal)
    out, _ = _fuse_forward(tower_a, tower_b, xa, xb, train=train)
    return out.ravel()


def _fuse_forward(tower_a, tower_b, xa, xb, train=False):
    for sa, sb in zip(tower_a.stages, tower_b.stages):
        xa = sa.forward(xa, train=train)
        xb = sb.forward(xb, train=train)
        xa = xa + xb
    merged_shape = xa.shape
    flat = xa.reshape(xa.shape[0], -1)
    return tower_a.head.forward(flat, train=train), merged_shape


def _fuse_backward(tower_a, tower_b, dfeat, merged_shape):
    """Backward through head, stages and the additive cross links.

    The merged activation after each stage feeds only the next visual
    stage; the thermal chain continues from its own activation, so a
    thermal stage receives both the cross-link gradient and the gradient
    flowing back down its own chain.
    """
    dflat = tower_a.head.backward(dfeat)
    dmerge = dflat.reshape(merged_shape)
    db_chain = None
    for sa, sb in zip(reversed(tower_a.stages), reversed(tower_b.stages)):
        db_total = dmerge if db_chain is None else dmerge + db_chain
        db_chain = sb.backward(db_total)
        dmerge = sa.backward(dmerge)
    return dmerge, db_chain


def train_fusion(tower_a, tower_b, fcn: Sequential, visuals, thermals, labels,
                 cfg: TrainConfig) -> list[float]:
    """Train towers plus classifier with softmax cross-entropy.

    ``visuals`` and ``thermals`` are (N, H, W); deterministic per config seed.
    """
    n = visuals.shape[0]
    shuffle = np.random.default_rng(np.random.SeedSequence([cfg.seed, 12]))
    params = tower_a.params() + tower_b.params() + fcn.params()
    history = []
    for epoch in range(cfg.epochs):
        order = shuffle.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xa = visuals[idx][:, None]
            xb = thermals[idx][:, None]
            tower_a.zero_grads()
            tower_b.zero_grads()
            fcn.zero_grads()
            feat, merged_shape = _fuse_forward(tower_a, tower_b, xa, xb, train=True)
            logits = fcn.forward(feat, train=True)
            loss, dlogits = cross_entropy(logits, labels[idx])
            dfeat = fcn.backward(dlogits)
            _fuse_backward(tower_a, tower_b, dfeat, merged_shape)
            grads = tower_a.grads() + tower_b.grads() + fcn.grads()
            sgd_step(params, grads, cfg.learning_rate)
            total += loss * len(idx)
        history.append(total / n)
    return history


# ---------------------------------------------------------------------------
# Occlusion
# ---------------------------------------------------------------------------

def _occluder_dims(area: int, h: int, w: int) -> tuple[int, int]:
    best = None
    for target in (area, area - 1, area + 1):
        if target < 1:
            continue
        for rh in range(1, h + 1):
            if target % rh:
                continue
            rw = target // rh
            if rw > w:
                continue
            cand = (abs(target - area), abs(rh - rw), rh)
            if best is None or cand < best[0]:
                best = (cand, rh, rw)
    if best is not None:
        return best[1], best[2]
    # fall back to the closest achievable rectangle
    fh, fw, ferr = 1, 1, abs(area - 1)
    for rh in range(1, h + 1):
        rw = min(w, max(1, round(area / rh)))
        err = abs(rh * rw - area)
        if err < ferr:
            fh, fw, ferr = rh, rw, err
    return fh, fw


def occlude(img: np.ndarray, rate: float, rng: RngStream) -> np.ndarray:
    """Mask a contiguous axis-aligned rectangle of ``rate * H * W`` pixels
    (within one pixel) with the constant occluder value 0.5."""
    if not 0.0 <= rate <= 1.0:
        raise InvalidArgumentError("occlusion rate must be in [0, 1]")
    img = np.asarray(img, dtype=np.float64)
    out = img.copy()
    h, w = img.shape[:2]
    area = int(round(rate * h * w))
    if area == 0:
        return out
    rh, rw = _occluder_dims(area, h, w)
    g = rng.generator()
    top = int(g.integers(0, h - rh + 1))
    left = int(g.integers(0, w - rw + 1))
    out[top:top + rh, left:left + rw] = 0.5
    return out


# ---------------------------------------------------------------------------
# Cooperative decoding and user fusion
# ---------------------------------------------------------------------------

def cooperative_decode(decoder: JsccModel, blocks: list[np.ndarray]) -> list[np.ndarray]:
    """Jointly decode all users' received blocks into per-user features.

    Every user's branch runs the shared trunk on its own block paired with
    the element-wise mean of all users' blocks. With a single user the
    mean is the block itself, which reduces exactly to independent
    decoding.
    """
    if len(blocks) == 0:
        raise InvalidArgumentError("need at least one user block")
    arr = [np.asarray(b, dtype=np.complex128).ravel() for b in blocks]
    k = arr[0].size
    if any(a.size != k for a in arr):
        raise InvalidArgumentError("all user blocks must have the same length")
    if k != decoder.k:
        raise InvalidArgumentError(f"expected blocks of {decoder.k} symbols")
    reals = np.stack([complex_to_pairs(a) for a in arr])  # (U, 2k)
    feats = cooperative_features(decoder, reals)
    return [feats[u] for u in range(feats.shape[0])]


def cooperative_features(decoder: JsccModel, received: np.ndarray) -> np.ndarray:
    """Trunk features for (U, 2k) received reals using the cooperative mean."""
    mean = received.mean(axis=0, keepdims=True)
    trunk_in = np.concatenate([received, np.repeat(mean, received.shape[0], axis=0)],
                              axis=1)
    return decoder.decoder.forward(trunk_in)


def solo_features(decoder: JsccModel, received: np.ndarray) -> np.ndarray:
    """Independent per-user trunk features for (U, 2k) received reals."""
    trunk_in = np.concatenate([received, received], axis=1)
    return decoder.decoder.forward(trunk_in)


def fuse_users(features: list[np.ndarray], mode: str = "mean",
               confidences: list[float] | None = None) -> np.ndarray:
    """Merge per-user features into one.

    mean: element-wise average. confidence_weighted: weights proportional
    to the given per-user confidences (normalized). concat: concatenation.
    """
    if len(features) == 0:
        raise InvalidArgumentError("empty feature list")
    arr = [np.asarray(f, dtype=np.float64).ravel() for f in features]
    d = arr[0].size
    if any(a.size != d for a in arr):
        raise InvalidArgumentError("feature dimensions must match")
    if mode == "mean":
        return np.mean(arr, axis=0)
    if mode == "concat":
        return np.concatenate(arr)
    if mode == "confidence_weighted":
        if confidences is None or len(confidences) != len(arr):
            raise InvalidArgumentError("one confidence per user is required")
        wsum = float(np.sum(confidences))
        if wsum <= 0.0:
            raise InvalidArgumentError("confidences must sum to a positive value")
        w = np.asarray(confidences, dtype=np.float64) / wsum
        return np.tensordot(w, np.stack(arr), axes=1)
    raise InvalidArgumentError(f"unknown fusion mode {mode!r}")


def build_classifier(feature_dim: int, hidden: int, classes: int, seed: int = 0) -> Sequential:
    """Two dense layers with a rectifier in between; softmax applied by classify."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 13]))
    return Sequential([Dense(feature_dim, hidden, rng), PReLU(),
                       Dense(hidden, classes, rng)])


def classify(fcn: Sequential, feature: np.ndarray) -> np.ndarray:
    """Class probability vector for one feature (softmax output)."""
    feature = np.asarray(feature, dtype=np.float64).ravel()
    expected = fcn.layers[0].n_in
    if feature.size != expected:
        raise InvalidArgumentError(f"feature dimension must be {expected}")
    return softmax(fcn.forward(feature[None]))[0]


def vote(per_user: list[tuple[int, float]]) -> int:
    """Majority class; ties broken by summed confidence, then lowest id."""
    if len(per_user) == 0:
        raise InvalidArgumentError("empty vote list")
    counts: dict[int, int] = {}
    conf: dict[int, float] = {}
    for cid, c in per_user:
        counts[cid] = counts.get(cid, 0) + 1
        conf[cid] = conf.get(cid, 0.0) + float(c)
    return min(counts, key=lambda cid: (-counts[cid], -conf[cid], cid))


# ---------------------------------------------------------------------------
# Cooperative classification pipeline (shared encoder + trunk + classifier)
# ---------------------------------------------------------------------------

@dataclass
class CooperativeClassifier:
    model: JsccModel       # feature head: encoder + cooperative trunk
    fcn: Sequential        # classifier on (fused) features

    def params(self):
        return self.model.params() + self.fcn.params()

    def grads(self):
        return self.model.grads() + self.fcn.grads()

    def zero_grads(self):
        self.model.zero_grads()
        self.fcn.zero_grads()


def _coop_forward_backward(clf: CooperativeClassifier, vx, labels, spec, rng,
                           fused: bool, want_grads: bool):
    b, u = vx.shape[:2]
    flat = vx.reshape((b * u,) + vx.shape[2:])
    model = clf.model
    sent = encode_batch(model, flat, train=want_grads)
    received = sent + channel_noise(sent.shape, spec, rng)
    twok = received.shape[1]
    if fused:
        mean = received.reshape(b, u, twok).mean(axis=1)
        trunk_in = np.concatenate([received, np.repeat(mean, u, axis=0)], axis=1)
    else:
        trunk_in = np.concatenate([received, received], axis=1)
    feats = model.decoder.forward(trunk_in, train=want_grads)
    if fused:
        fused_feat = feats.reshape(b, u, -1).mean(axis=1)
        logits = clf.fcn.forward(fused_feat, train=want_grads)
        loss, dlogits = cross_entropy(logits, labels)
    else:
        logits = clf.fcn.forward(feats, train=want_grads)
        loss, dlogits = cross_entropy(logits, np.repeat(labels, u))
    if not want_grads:
        return loss, None
    clf.zero_grads()
    if fused:
        dfused = clf.fcn.backward(dlogits)
        dfeats = np.repeat(dfused / u, u, axis=0)
    else:
        dfeats = clf.fcn.backward(dlogits)
    dtrunk = model.decoder.backward(dfeats)
    da, db = dtrunk[:, :twok], dtrunk[:, twok:]
    if fused:
        dmean = db.reshape(b, u, twok).sum(axis=1)
        dreceived = da + np.repeat(dmean / u, u, axis=0)
    else:
        dreceived = da + db
    model.encoder.backward(dreceived)
    return loss, [g.copy() for g in clf.grads()]


def train_cooperative(clf: CooperativeClassifier, views: np.ndarray,
                      labels: np.ndarray, cfg: TrainConfig, spec: ChannelSpec,
                      fused: bool) -> list[float]:
    """Train the shared pipeline with per-user loss (``fused=False``, stage
    one) or fused multi-user loss (``fused=True``, stage two).

    ``views`` is (N, U, C, H, W) with one label per scene.
    """
    n = views.shape[0]
    if n == 0:
        raise InvalidArgumentError("dataset must be non-empty")
    shuffle = np.random.default_rng(np.random.SeedSequence([cfg.seed, 14, int(fused)]))
    base = RngStream(cfg.seed).substream("coop-train", int(fused))
    history = []
    for epoch in range(cfg.epochs):
        order = shuffle.permutation(n)
        total = 0.0
        for bi, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            rng = base.substream("noise", epoch, bi)
            loss, grads = _coop_forward_backward(
                clf, views[idx], labels[idx], spec, rng, fused, want_grads=True)
            if not math.isfinite(loss):
                from .errors import TrainingError

                raise TrainingError(f"loss diverged at epoch {epoch}", epoch=epoch)
            sgd_step(clf.params(), grads, cfg.learning_rate)
            total += loss * len(idx)
        history.append(total / n)
    return history


def classify_batch(fcn: Sequential, features: np.ndarray) -> np.ndarray:
    return softmax(fcn.forward(features))


# ---------------------------------------------------------------------------
# Registration, composition, detection
# ---------------------------------------------------------------------------

def _overlap_ncc_map(ref: np.ndarray, mov: np.ndarray):
    """Exact windowed NCC between two same-size images at every shift.

    Returns (ncc, counts) full-mode maps where entry (i, j) corresponds to
    placing ``mov`` at (dy, dx) = (i - H + 1, j - W + 1) relative to ``ref``.
    """
    a = ref.astype(np.float64)
    b = mov.astype(np.float64)
    ones = np.ones_like(a)
    flip = (slice(None, None, -1), slice(None, None, -1))
    n = fftconvolve(ones, ones[flip], mode="full")
    sa = fftconvolve(a, ones[flip], mode="full")
    sb = fftconvolve(ones, b[flip], mode="full")
    sab = fftconvolve(a, b[flip], mode="full")
    saa = fftconvolve(a * a, ones[flip], mode="full")
    sbb = fftconvolve(ones, (b * b)[flip], mode="full")
    n = np.maximum(n, 1e-9)
    cov = sab - sa * sb / n
    va = np.maximum(saa - sa * sa / n, 0.0)
    vb = np.maximum(sbb - sb * sb / n, 0.0)
    denom = np.sqrt(va * vb)
    with np.errstate(invalid="ignore", divide="ignore"):
        ncc = np.where(denom > 1e-9, cov / np.maximum(denom, 1e-30), -np.inf)
    return ncc, n


def register_pair(ref: np.ndarray, mov: np.ndarray,
                  overlap_range: tuple[float, float] = (0.2, 1.0)) -> tuple[int, int]:
    """Integer (dx, dy) of ``mov`` relative to ``ref`` maximizing windowed NCC
    over shifts whose overlap fraction lies in ``overlap_range``."""
    if ref.shape != mov.shape:
        raise InvalidArgumentError("views must have identical dimensions")
    h, w = ref.shape
    ncc, counts = _overlap_ncc_map(ref, mov)
    frac = counts / (h * w)
    feasible = (frac >= overlap_range[0] - 1e-9) & (frac <= overlap_range[1] + 1e-9)
    if not feasible.any():
        raise RegistrationError("no shift satisfies the overlap constraint")
    masked = np.where(feasible, ncc, -np.inf)
    if not np.isfinite(masked).any():
        raise RegistrationError("no usable texture in the feasible overlap window")
    idx = int(np.argmax(masked))
    i, j = divmod(idx, masked.shape[1])
    # convolution output (i, j) -> mov placed at ref-relative (dy, dx)
    dy = (h - 1) - i
    dx = (w - 1) - j
    return dx, dy


def register_views(images: list[np.ndarray],
                   overlap_range: tuple[float, float] = (0.2, 1.0)) -> list[tuple[int, int]]:
    """Chain registration of same-size views; the first view anchors (0, 0).

    The lower overlap bound comes from the adjacency contract of the view
    sets; shifts above 50% overlap remain searchable so near-duplicate
    views register at their true offset.
    """
    if len(images) < 2:
        raise InvalidArgumentError("need at least two views")
    offsets = [(0, 0)]
    for a, b in zip(images, images[1:]):
        dx, dy = register_pair(np.asarray(a, dtype=np.float64),
                               np.asarray(b, dtype=np.float64), overlap_range)
        px, py = offsets[-1]
        offsets.append((px + dx, py + dy))
    return offsets


def compose(images: list[np.ndarray], offsets: list[tuple[int, int]]) -> np.ndarray:
    """Place views on a union canvas; overlaps averaged, uncovered pixels 0."""
    if len(images) != len(offsets):
        raise InvalidArgumentError("one offset per view is required")
    if len(images) == 1:
        return np.asarray(images[0], dtype=np.float64).copy()
    xs = [int(o[0]) for o in offsets]
    ys = [int(o[1]) for o in offsets]
    x0, y0 = min(xs), min(ys)
    h, w = images[0].shape[:2]
    ch = max(ys) - y0 + h
    cw = max(xs) - x0 + w
    acc = np.zeros((ch, cw))
    cnt = np.zeros((ch, cw))
    for img, (dx, dy) in zip(images, offsets):
        r, c = dy - y0, dx - x0
        acc[r:r + h, c:c + w] += img
        cnt[r:r + h, c:c + w] += 1.0
    out = np.zeros_like(acc)
    np.divide(acc, cnt, out=out, where=cnt > 0)
    return out


@dataclass
class DetBox:
    x: float
    y: float
    w: float
    h: float
    score: float = 1.0
    class_id: int = 0

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise InvalidArgumentError("box width and height must be positive")


_FOUR_CONN = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])


def detect(wide: np.ndarray, threshold: float, classifier=None) -> list[DetBox]:
    """Threshold, extract 4-connected components and box them.

    Score is the mean intensity over the component's pixels. ``classifier``
    optionally maps a box crop to a class id; without one, class 0.
    """
    if not 0.0 < threshold < 1.0:
        raise InvalidArgumentError("threshold must be in (0, 1)")
    wide = np.asarray(wide, dtype=np.float64)
    mask = wide > threshold
    labeled, count = ndimage.label(mask, structure=_FOUR_CONN)
    boxes = []
    for sl in ndimage.find_objects(labeled):
        if sl is None:
            continue
        ys, xs = sl
        region = wide[ys, xs]
        comp = labeled[ys, xs] > 0
        score = float(region[comp].mean())
        crop = wide[ys, xs]
        cid = int(classifier(crop)) if classifier is not None else 0
        boxes.append(DetBox(x=xs.start, y=ys.start, w=xs.stop - xs.start,
                            h=ys.stop - ys.start, score=min(1.0, score), class_id=cid))
    return boxes


def box_iou(a: DetBox, b: DetBox) -> float:
    x1 = max(a.x, b.x)
    y1 = max(a.y, b.y)
    x2 = min(a.x + a.w, b.x + b.w)
    y2 = min(a.y + a.h, b.y + b.h)
    if x2 <= x1 or y2 <= y1:
        return 0.0
    inter = (x2 - x1) * (y2 - y1)
    return inter / (a.w * a.h + b.w * b.h - inter)


def match_detections(dets: list[DetBox], gts: list[DetBox], iou_thresh: float = 0.5):
    """Greedy score-descending matching; each ground truth matches at most once.

    Returns a boolean TP flag per detection (in score-descending order),
    the score-descending order indices, and the number of matched gts.
    """
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    used = [False] * len(gts)
    tp = []
    for i in order:
        best, best_iou = -1, 0.0
        for j, g in enumerate(gts):
            if used[j]:
                continue
            iou = box_iou(dets[i], g)
            if iou >= iou_thresh and iou > best_iou:
                best, best_iou = j, iou
        if best >= 0:
            used[best] = True
            tp.append(True)
        else:
            tp.append(False)
    return tp, order, sum(used)


def ap_at_iou(dets: list[DetBox], gts: list[DetBox], iou_thresh: float = 0.5) -> float:
    """Average precision with all-points interpolation, one class per call.

    Conventions: no ground truths and no detections scores 1.0; detections
    against an empty ground truth set (or none at all against a non-empty
    one) score 0.0.
    """
    if not 0.0 < iou_thresh < 1.0:
        raise InvalidArgumentError("iou_thresh must be in (0, 1)")
    if len(gts) == 0:
        return 1.0 if len(dets) == 0 else 0.0
    if len(dets) == 0:
        return 0.0
    tp, _, _ = match_detections(dets, gts, iou_thresh)
    tp_cum = np.cumsum(np.asarray(tp, dtype=np.float64))
    fp_cum = np.cumsum(~np.asarray(tp, dtype=bool))
    recall = tp_cum / len(gts)
    precision = tp_cum / (tp_cum + fp_cum)
    # all-points interpolation: integrate the precision envelope over recall
    ap = 0.0
    prev_r = 0.0
    for i in range(len(recall)):
        r = recall[i]
        if r > prev_r:
            ap += (r - prev_r) * precision[i:].max()
            prev_r = r
    return float(ap)


def detection_recall(dets: list[DetBox], gts: list[DetBox], iou_thresh: float = 0.5) -> float:
    """Fraction of ground truths matched by the greedy matcher."""
    if len(gts) == 0:
        return 1.0
    _, _, matched = match_detections(dets, gts, iou_thresh)
    return matched / len(gts)


# ---------------------------------------------------------------------------
# Classification metrics
# ---------------------------------------------------------------------------

def confusion_matrix(true_ids, pred_ids, classes: int) -> np.ndarray:
    cm = np.zeros((classes, classes), dtype=np.int64)
    for t, p in zip(true_ids, pred_ids):
        cm[int(t), int(p)] += 1
    return cm


def weighted_f1(cm: np.ndarray) -> float:
    """Support-weighted mean of per-class F1 scores (0 when undefined)."""
    cm = np.asarray(cm, dtype=np.float64)
    total = cm.sum()
    if total == 0:
        raise InvalidArgumentError("confusion matrix has no counts")
    score = 0.0
    for i in range(cm.shape[0]):
        tp = cm[i, i]
        support = cm[i].sum()
        pred = cm[:, i].sum()
        precision = tp / pred if pred > 0 else 0.0
        recall = tp / support if support > 0 else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        score += (support / total) * f1
    return float(score)


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for [0, 1] images, capped at 99."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidArgumentError("psnr requires matching dimensions")
    mse_val = float(np.mean((a - b) ** 2))
    if mse_val < 1e-10:
        return 99.0
    return min(99.0, 10.0 * math.log10(1.0 / mse_val))
