"""Experiment harness: configs, training orchestration, sweeps and CSV output.

Fair-comparison rules baked in here:

* The learned pipeline transmits exactly k complex symbols per image,
  k = round(ratio * H * W * C).
* The digital baseline gets a per-image channel budget of
  ``baseline.budget_factor`` times the learned pipeline's symbol count,
  rounded to whole LDPC frames; codec quality is chosen per image as the
  highest quality whose container (plus padding up to the frame grid)
  fits the budget. Both budgets are logged.
* All schemes share one trained discriminative pipeline: local (on-board)
  classification runs it with a noiseless channel, the digital baseline
  runs it on decoded images at the server, and the learned schemes run it
  across the noisy channel.

Every record is reproducible bit-exactly from (config, seed); wall-clock
benchmark values are the one documented exception.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import classic_codec as cc
from . import knowledge_base as kb
from . import modem_fec as mf
from .channel import NOISELESS, ChannelSpec, RngStream, noise_variance
from .dataset import (
    DatasetSpec,
    Scene,
    cls_arrays,
    make_classification_scenes,
    make_detection_scenes,
)
from .errors import ConfigError, DecodeError, FormatError, InvalidArgumentError
from .jscc import (
    JsccModel,
    TrainConfig,
    build_feature_model,
    build_reconstruction_model,
    channel_noise,
    encode_batch,
    jscc_decode,
    jscc_encode,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .semantic_tasks import (
    CooperativeClassifier,
    DetBox,
    build_classifier,
    classify_batch,
    compose,
    confusion_matrix,
    detect,
    detection_recall,
    ap_at_iou,
    occlude,
    psnr,
    register_views,
    solo_features,
    train_cooperative,
    vote,
    weighted_f1,
)

SCHEMES = ("jscc_coop", "jscc_single", "jscc_voting", "digital_baseline")

METRICS = ("f1_weighted", "accuracy", "psnr", "ap50", "recall", "ber", "fer",
           "bpp", "symbols_per_sample", "wall_ms")


@dataclass(frozen=True)
class RunRecord:
    scheme: str
    snr_db: float
    seed: int
    metric: str
    value: float

    def __post_init__(self):
        if self.metric not in METRICS:
            raise InvalidArgumentError(f"unknown metric {self.metric!r}")


@dataclass
class ModelConfig:
    ratio_classification: float = 0.084
    ratio_reconstruction: float = 0.167
    widths: tuple[int, int, int] = (16, 32, 32)
    trunk_hidden: int = 256
    feature_dim: int = 64
    classifier_hidden: int = 32


@dataclass
class TrainPlan:
    learning_rate: float = 0.04
    batch_size: int = 32
    epochs_stage1: int = 30
    epochs_stage2: int = 12
    recon_learning_rate: float = 0.015
    recon_epochs: int = 30
    train_snr_db: float = 0.0
    train_scenes: int = 400
    recon_scenes: int = 260
    occlusion_prob: float = 0.5


@dataclass
class BaselineConfig:
    ldpc_n: int = 256
    ldpc_seed: int = 20240
    budget_factor: float = 7.0
    max_iters: int = 50


@dataclass
class SweepConfig:
    snr_grid: tuple[float, ...] = (-5.0, 0.0, 5.0, 10.0, 15.0)
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    test_scenes: int = 144
    det_snr_grid: tuple[float, ...] = (0.0, 5.0, 10.0, 15.0)
    det_seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    det_test_scenes: int = 36
    detect_threshold: float = 0.5


@dataclass
class ExperimentConfig:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainPlan = field(default_factory=TrainPlan)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    base_seed: int = 0

    @property
    def view_shape(self) -> tuple[int, int, int]:
        return (self.dataset.view, self.dataset.view, 1)


def _merge_dataclass(obj, data: dict):
    names = {f.name: f for f in fields(obj)}
    updates = {}
    for key, value in data.items():
        if key not in names:
            raise ConfigError(f"unknown config key {key!r} for {type(obj).__name__}")
        current = getattr(obj, key)
        if hasattr(current, "__dataclass_fields__"):
            updates[key] = _merge_dataclass(current, value)
        elif isinstance(current, tuple) and isinstance(value, (list, tuple)):
            updates[key] = tuple(value)
        else:
            updates[key] = value
    return replace(obj, **updates)


def load_config(path=None, seed: int | None = None) -> ExperimentConfig:
    """Config file is JSON with optional sections ``dataset``, ``model``,
    ``train``, ``baseline``, ``sweep`` and ``base_seed``; every field has a
    default. ``seed`` overrides ``base_seed``."""
    cfg = ExperimentConfig()
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        cfg = _merge_dataclass(cfg, data)
    if seed is not None:
        cfg = replace(cfg, base_seed=int(seed))
    return cfg


# ---------------------------------------------------------------------------
# Training and checkpoints
# ---------------------------------------------------------------------------

@dataclass
class Models:
    clf: CooperativeClassifier
    recon: JsccModel


def _occlusion_augment(views: np.ndarray, cfg: ExperimentConfig, stream: RngStream):
    """Occlude each training view with the configured probability."""
    out = views.copy()
    rate = cfg.dataset.occlusion
    n, u = views.shape[:2]
    flip = stream.substream("flip").generator()
    for i in range(n):
        for j in range(u):
            if flip.random() < cfg.train.occlusion_prob:
                out[i, j, 0] = occlude(views[i, j, 0], rate,
                                       stream.substream("rect", i, j))
    return out


def build_models(cfg: ExperimentConfig) -> Models:
    shape = cfg.view_shape
    m = cfg.model
    clf_model = build_feature_model(shape, m.ratio_classification, m.feature_dim,
                                    widths=m.widths, hidden=m.trunk_hidden,
                                    seed=cfg.base_seed)
    fcn = build_classifier(m.feature_dim, m.classifier_hidden,
                           cfg.dataset.classes, seed=cfg.base_seed)
    recon = build_reconstruction_model(shape, m.ratio_reconstruction,
                                       widths=m.widths, seed=cfg.base_seed)
    return Models(clf=CooperativeClassifier(model=clf_model, fcn=fcn), recon=recon)


def train_models(cfg: ExperimentConfig) -> tuple[Models, dict[str, list[float]]]:
    """Train the classification pipeline (two stages: per-user, then fused)
    and the reconstruction codec, both through the training-SNR channel."""
    models = build_models(cfg)
    tp = cfg.train
    spec = ChannelSpec("awgn", tp.train_snr_db)
    stream = RngStream(cfg.base_seed)

    scenes = make_classification_scenes(cfg.dataset, tp.train_scenes,
                                        stream.substream("train-cls"))
    views, labels = cls_arrays(scenes)
    views = _occlusion_augment(views, cfg, stream.substream("train-occl"))
    stage1 = train_cooperative(
        models.clf, views, labels,
        TrainConfig(learning_rate=tp.learning_rate, batch_size=tp.batch_size,
                    epochs=tp.epochs_stage1, train_snr_db=tp.train_snr_db,
                    loss="cross_entropy", seed=cfg.base_seed),
        spec, fused=False)
    stage2 = train_cooperative(
        models.clf, views, labels,
        TrainConfig(learning_rate=tp.learning_rate / 2, batch_size=tp.batch_size,
                    epochs=tp.epochs_stage2, train_snr_db=tp.train_snr_db,
                    loss="cross_entropy", seed=cfg.base_seed + 1),
        spec, fused=True)

    det = make_detection_scenes(cfg.dataset, tp.recon_scenes,
                                stream.substream("train-det"))
    imgs = np.concatenate([s.visual for s in det]).astype(np.float64)[:, None]
    _, recon_hist = train(
        models.recon, (imgs, None),
        TrainConfig(learning_rate=tp.recon_learning_rate, batch_size=tp.batch_size,
                    epochs=tp.recon_epochs, train_snr_db=tp.train_snr_db,
                    loss="mse", seed=cfg.base_seed),
        spec)
    return models, {"stage1": stage1, "stage2": stage2, "recon": recon_hist}


_CKPT_FILES = ("cls_model.sjsc", "cls_fcn.sjsc", "recon_model.sjsc")


def save_models(models: Models, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, params in zip(_CKPT_FILES, (models.clf.model.params(),
                                          models.clf.fcn.params(),
                                          models.recon.params())):
        p = out_dir / name
        p.write_bytes(save_checkpoint(params))
        paths.append(p)
    return paths


def load_models(cfg: ExperimentConfig, out_dir) -> Models:
    out_dir = Path(out_dir)
    models = build_models(cfg)
    missing = [n for n in _CKPT_FILES if not (out_dir / n).exists()]
    if missing:
        raise ConfigError(
            f"missing checkpoints in {out_dir}: {missing}; run the train command first")
    models.clf.model.set_params(load_checkpoint((out_dir / _CKPT_FILES[0]).read_bytes()))
    _set_seq_params(models.clf.fcn, load_checkpoint((out_dir / _CKPT_FILES[1]).read_bytes()))
    models.recon.set_params(load_checkpoint((out_dir / _CKPT_FILES[2]).read_bytes()))
    return models


def _set_seq_params(seq, values):
    own = seq.params()
    if len(own) != len(values):
        raise ConfigError("classifier checkpoint layout mismatch")
    for p, v in zip(own, values):
        p[...] = v.reshape(p.shape)


def write_history_csv(history: dict[str, list[float]], path):
    lines = ["phase,epoch,loss"]
    for phase in sorted(history):
        for i, loss in enumerate(history[phase]):
            lines.append(f"{phase},{i},{loss:.6g}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Classification sweep
# ---------------------------------------------------------------------------

def _test_views(cfg: ExperimentConfig, seed: int):
    """Per-seed occluded test views plus labels."""
    stream = RngStream(seed).substream("test-cls")
    scenes = make_classification_scenes(cfg.dataset, cfg.sweep.test_scenes, stream)
    views, labels = cls_arrays(scenes)
    occl = views.copy()
    rate = cfg.dataset.occlusion
    for i in range(views.shape[0]):
        for u in range(views.shape[1]):
            occl[i, u, 0] = occlude(views[i, u, 0], rate,
                                    stream.substream("occl", i, u))
    return occl, labels


def _pred_metrics(labels, preds, classes) -> dict[str, float]:
    cm = confusion_matrix(labels, preds, classes)
    return {"f1_weighted": weighted_f1(cm),
            "accuracy": float((np.asarray(preds) == labels).mean())}


def _jscc_cell_metrics(cfg, models, sent, labels, snr_db, seed):
    """Metrics for the three learned schemes at one (snr, seed) cell."""
    classes = cfg.dataset.classes
    n = labels.size
    u = cfg.dataset.users
    model, fcn = models.clf.model, models.clf.fcn
    twok = sent.shape[1]
    spec = ChannelSpec("awgn", snr_db)
    rng = RngStream(seed).substream("cell", "jscc", f"{snr_db:g}")
    received = sent + channel_noise(sent.shape, spec, rng)

    rb = received.reshape(n, u, twok)
    mean = rb.mean(axis=1)
    trunk_in = np.concatenate([received, np.repeat(mean, u, axis=0)], axis=1)
    fused_feats = model.decoder.forward(trunk_in).reshape(n, u, -1).mean(axis=1)
    coop_preds = classify_batch(fcn, fused_feats).argmax(axis=1)

    solo = solo_features(model, received)
    solo_probs = classify_batch(fcn, solo).reshape(n, u, classes)
    per_user_f1 = []
    per_user_acc = []
    for j in range(u):
        m = _pred_metrics(labels, solo_probs[:, j].argmax(axis=1), classes)
        per_user_f1.append(m["f1_weighted"])
        per_user_acc.append(m["accuracy"])
    best = int(np.argmax(per_user_f1))

    out = {"jscc_coop": _pred_metrics(labels, coop_preds, classes),
           "jscc_single": {"f1_weighted": per_user_f1[best],
                           "accuracy": per_user_acc[best]}}
    return out


def _voting_metrics(cfg, models, sent, labels):
    """On-board classification (noiseless channel) plus majority vote."""
    classes = cfg.dataset.classes
    n, u = labels.size, cfg.dataset.users
    solo = solo_features(models.clf.model, sent)
    probs = classify_batch(models.clf.fcn, solo).reshape(n, u, classes)
    preds = []
    for i in range(n):
        ballots = [(int(probs[i, j].argmax()), float(probs[i, j].max()))
                   for j in range(u)]
        preds.append(vote(ballots))
    return _pred_metrics(labels, preds, classes)


def frame_budget(budget_symbols: float, code: mf.LdpcCode) -> tuple[int, int]:
    """Whole-frame channel budget closest to the target symbol count.

    Returns (frames, symbols). Raises ConfigError when the frame grid
    cannot land within 5% of the target.
    """
    per_frame = code.n // 2
    frames = max(1, round(budget_symbols / per_frame))
    best = min((abs(f * per_frame - budget_symbols), f)
               for f in (frames - 1, frames, frames + 1) if f >= 1)[1]
    symbols = best * per_frame
    if abs(symbols - budget_symbols) / budget_symbols > 0.05:
        raise ConfigError(
            f"LDPC frame grid ({per_frame} symbols) cannot match budget "
            f"{budget_symbols:.0f} within 5%; use a shorter code")
    return best, symbols


def match_quality(img: np.ndarray, byte_budget: int) -> cc.CompressedImage:
    """Highest-quality container fitting the byte budget (binary search on
    the near-monotone quality/size curve, then a downward repair scan)."""
    lo, hi = 1, 100
    best = None
    while lo <= hi:
        mid = (lo + hi) // 2
        cand = cc.encode_image(img, cc.CodecConfig(q=mid))
        if cc.HEADER_SIZE + len(cand.body) <= byte_budget:
            best, lo = cand, mid + 1
        else:
            hi = mid - 1
    if best is None:
        best = cc.encode_image(img, cc.CodecConfig(q=1))
    return best


def _to_bits(data: bytes) -> np.ndarray:
    return np.unpackbits(np.frombuffer(data, dtype=np.uint8))


def _from_bits(bits: np.ndarray) -> bytes:
    return np.packbits(bits.astype(np.uint8)).tobytes()


@dataclass
class _BaselineTx:
    container: cc.CompressedImage
    payload: np.ndarray   # padded to the frame budget
    raw_bits: int


def prepare_baseline_tx(img: np.ndarray, budget_symbols: float,
                        code: mf.LdpcCode) -> _BaselineTx:
    """Quality-match one image and zero-pad its payload to the frame grid."""
    frames, _ = frame_budget(budget_symbols, code)
    byte_budget = frames * code.k // 8
    container = match_quality(img, byte_budget)
    bits = _to_bits(container.to_bytes())
    payload = np.zeros(frames * code.k, dtype=np.uint8)
    payload[: bits.size] = bits[: payload.size]
    return _BaselineTx(container=container, payload=payload, raw_bits=bits.size)


def baseline_receive(tx: _BaselineTx, spec: ChannelSpec, code: mf.LdpcCode,
                     rng: RngStream, max_iters: int, fallback_shape):
    """Send one prepared image; returns (image, frames_failed, bit_errors).

    A container that cannot be decoded (the catastrophic case) falls back
    to a flat mid-gray image.
    """
    received, failed = mf.digital_link(tx.payload, spec, code, rng, max_iters)
    bit_errors = int((received != tx.payload).sum())
    blob = _from_bits(received)[: (tx.raw_bits + 7) // 8]
    try:
        img = cc.decode_image(blob)
    except (FormatError, DecodeError):
        img = np.full(fallback_shape + (1,), 0.5)
    if img.shape[:2] != fallback_shape:
        img = np.full(fallback_shape + (1,), 0.5)
    return img, failed, bit_errors


def _baseline_cell(cfg, models, views, labels, snr_db, seed, txs):
    """Digital baseline metrics for one (snr, seed) cell."""
    classes = cfg.dataset.classes
    n, u = labels.size, cfg.dataset.users
    hw = (cfg.dataset.view, cfg.dataset.view)
    code = _baseline_code(cfg)
    spec = NOISELESS if np.isinf(snr_db) else ChannelSpec("awgn", snr_db)
    decoded = np.empty((n, u, 1) + hw)
    frames_failed = 0
    frames_total = 0
    bit_errors = 0
    bits_total = 0
    psnrs = []
    for i in range(n):
        for j in range(u):
            tx = txs[i][j]
            rng = RngStream(seed).substream("cell", "digital", f"{snr_db:g}", i, j)
            img, failed, errs = baseline_receive(tx, spec, code, rng,
                                                 cfg.baseline.max_iters, hw)
            decoded[i, j, 0] = img[:, :, 0]
            frames_failed += failed
            frames_total += tx.payload.size // code.k
            bit_errors += errs
            bits_total += tx.payload.size
            psnrs.append(psnr(img[:, :, 0], views[i, j, 0]))
    feats = solo_features(models.clf.model,
                          encode_batch(models.clf.model,
                                       decoded.reshape((n * u, 1) + hw)))
    fused = feats.reshape(n, u, -1).mean(axis=1)
    preds = classify_batch(models.clf.fcn, fused).argmax(axis=1)
    metrics = _pred_metrics(labels, preds, classes)
    metrics["fer"] = frames_failed / frames_total
    metrics["ber"] = bit_errors / bits_total
    metrics["psnr"] = float(np.mean(psnrs))
    return metrics


def _baseline_code(cfg) -> mf.LdpcCode:
    key = (cfg.baseline.ldpc_n, cfg.baseline.ldpc_seed)
    if key not in _CODE_CACHE:
        _CODE_CACHE[key] = mf.ldpc_new(cfg.baseline.ldpc_n, cfg.baseline.ldpc_seed)
    return _CODE_CACHE[key]


_CODE_CACHE: dict[tuple[int, int], mf.LdpcCode] = {}


def classification_budgets(cfg) -> tuple[int, int]:
    """(learned symbols per image, baseline symbols per image)."""
    h, w, c = cfg.view_shape
    from .jscc import symbols_for_ratio

    k = symbols_for_ratio(cfg.model.ratio_classification, (h, w, c))
    code = _baseline_code(cfg)
    _, symbols = frame_budget(cfg.baseline.budget_factor * k, code)
    return k, symbols


def run_classification_sweep(cfg: ExperimentConfig, models: Models,
                             schemes=SCHEMES) -> list[RunRecord]:
    """Weighted F1 and accuracy for every (scheme, snr, seed) cell."""
    records: list[RunRecord] = []
    k, budget_symbols = classification_budgets(cfg)
    samples = cfg.dataset.view * cfg.dataset.view
    code = _baseline_code(cfg)
    for seed in cfg.sweep.seeds:
        views, labels = _test_views(cfg, seed)
        n, u = labels.size, cfg.dataset.users
        flat = views.reshape((n * u, 1, cfg.dataset.view, cfg.dataset.view))
        sent = encode_batch(models.clf.model, flat)
        assert sent.shape[1] == 2 * k
        vote_metrics = _voting_metrics(cfg, models, sent, labels) \
            if "jscc_voting" in schemes else None
        txs = None
        if "digital_baseline" in schemes:
            txs = [[prepare_baseline_tx(views[i, j, 0], budget_symbols, code)
                    for j in range(u)] for i in range(n)]
        for snr in cfg.sweep.snr_grid:
            cell = {}
            if "jscc_coop" in schemes or "jscc_single" in schemes:
                cell.update(_jscc_cell_metrics(cfg, models, sent, labels, snr, seed))
            if vote_metrics is not None:
                cell["jscc_voting"] = vote_metrics
            if txs is not None:
                cell["digital_baseline"] = _baseline_cell(
                    cfg, models, views, labels, snr, seed, txs)
            for scheme in schemes:
                if scheme not in cell:
                    continue
                metrics = dict(cell[scheme])
                metrics["symbols_per_sample"] = (
                    budget_symbols / samples if scheme == "digital_baseline"
                    else k / samples)
                if scheme == "digital_baseline" and txs is not None:
                    metrics["bpp"] = float(np.mean(
                        [cc.bits_per_pixel(t.container) for row in txs for t in row]))
                for name, value in metrics.items():
                    records.append(RunRecord(scheme, float(snr), seed, name, value))
    return records


def run_baseline_sweep(cfg: ExperimentConfig, models: Models) -> list[RunRecord]:
    """Digital chain only: F1, PSNR, FER, BER, bpp, budget accounting."""
    return run_classification_sweep(cfg, models, schemes=("digital_baseline",))


# ---------------------------------------------------------------------------
# Detection experiment
# ---------------------------------------------------------------------------

def _crop_classifier(models: Models, classes: int):
    """Classify a detector box crop with the shared on-board pipeline."""
    view = models.clf.model.input_shape[0]

    def classify_crop(crop: np.ndarray) -> int:
        h, w = crop.shape
        ri = (np.arange(view) * h / view).astype(int)
        ci = (np.arange(view) * w / view).astype(int)
        resized = crop[np.clip(ri, 0, h - 1)][:, np.clip(ci, 0, w - 1)]
        sent = encode_batch(models.clf.model, resized[None, None])
        feats = solo_features(models.clf.model, sent)
        return int(classify_batch(models.clf.fcn, feats)[0].argmax())

    return classify_crop


def _scene_gt_boxes(scene: Scene) -> list[DetBox]:
    return [DetBox(x=b[0], y=b[1], w=b[2], h=b[3], class_id=b[4])
            for b in scene.boxes]


def _shift_boxes(boxes: list[DetBox], dx: float, dy: float) -> list[DetBox]:
    return [DetBox(x=b.x + dx, y=b.y + dy, w=b.w, h=b.h, score=b.score,
                   class_id=b.class_id) for b in boxes]


def _mean_class_ap(dets: list[DetBox], gts: list[DetBox], thresh=0.5) -> float:
    classes = sorted({g.class_id for g in gts})
    if not classes:
        return 1.0 if not dets else 0.0
    aps = []
    for cid in classes:
        aps.append(ap_at_iou([d for d in dets if d.class_id == cid],
                             [g for g in gts if g.class_id == cid], thresh))
    return float(np.mean(aps))


def run_detection_experiment(cfg: ExperimentConfig, models: Models,
                             snr_grid=None, seeds=None) -> list[RunRecord]:
    """Composed multi-view detection versus the best single view.

    Per scene, each user's view is sent through the reconstruction codec,
    the received views are registered and composed, and the detector runs
    on the composed canvas (scheme ``jscc_coop``) and on each single view
    (scheme ``jscc_single``, best view per scene). Aborts when more than
    half the scenes fail to register.
    """
    sw = cfg.sweep
    snr_grid = sw.det_snr_grid if snr_grid is None else snr_grid
    seeds = sw.det_seeds if seeds is None else seeds
    records: list[RunRecord] = []
    view = cfg.dataset.view
    k = models.recon.k
    samples = view * view
    crop_cls = _crop_classifier(models, cfg.dataset.classes)
    for seed in seeds:
        scenes = make_detection_scenes(cfg.dataset, sw.det_test_scenes,
                                       RngStream(seed).substream("test-det"))
        for snr in snr_grid:
            spec = ChannelSpec("awgn", snr)
            multi_recalls, single_recalls = [], []
            multi_aps, single_aps = [], []
            psnrs = []
            reg_failures = 0
            for si, scene in enumerate(scenes):
                rng = RngStream(seed).substream("cell", "det", f"{snr:g}", si)
                recon_views = []
                for uj in range(cfg.dataset.users):
                    block = jscc_encode(models.recon, scene.visual[uj][:, :, None])
                    assert block.size == k
                    from .channel import apply as channel_apply

                    received = channel_apply(block, spec, rng.substream("user", uj))
                    img = jscc_decode(models.recon, received)
                    recon_views.append(img[:, :, 0])
                    psnrs.append(psnr(img[:, :, 0], scene.visual[uj]))
                gts = _scene_gt_boxes(scene)
                # single-view detection, reported for the best view
                best_recall, best_ap = 0.0, 0.0
                for uj, rv in enumerate(recon_views):
                    dets = detect(rv, sw.detect_threshold, classifier=crop_cls)
                    dx, dy = scene.offsets[uj]
                    dets = _shift_boxes(dets, dx, dy)
                    best_recall = max(best_recall, detection_recall(dets, gts))
                    best_ap = max(best_ap, _mean_class_ap(dets, gts))
                single_recalls.append(best_recall)
                single_aps.append(best_ap)
                try:
                    offsets = register_views(recon_views)
                except Exception:
                    reg_failures += 1
                    multi_recalls.append(best_recall)
                    multi_aps.append(best_ap)
                    continue
                canvas = compose(recon_views, offsets)
                dets = detect(canvas, sw.detect_threshold, classifier=crop_cls)
                ox = scene.offsets[0][0] + min(o[0] for o in offsets)
                oy = scene.offsets[0][1] + min(o[1] for o in offsets)
                dets = _shift_boxes(dets, ox, oy)
                multi_recalls.append(detection_recall(dets, gts))
                multi_aps.append(_mean_class_ap(dets, gts))
            if reg_failures > len(scenes) / 2:
                raise ConfigError(
                    f"registration failed on {reg_failures}/{len(scenes)} scenes "
                    f"at {snr:g} dB; reconstruction quality is too low")
            cell = {
                "jscc_coop": {"recall": float(np.mean(multi_recalls)),
                              "ap50": float(np.mean(multi_aps))},
                "jscc_single": {"recall": float(np.mean(single_recalls)),
                                "ap50": float(np.mean(single_aps))},
            }
            for scheme, metrics in cell.items():
                metrics = dict(metrics)
                metrics["psnr"] = float(np.mean(psnrs))
                metrics["symbols_per_sample"] = k / samples
                for name, value in metrics.items():
                    records.append(RunRecord(scheme, float(snr), seed, name, value))
    return records


# ---------------------------------------------------------------------------
# Benchmark
# ---------------------------------------------------------------------------

def bench(cfg: ExperimentConfig, models: Models, images: int = 100,
          repetitions: int = 3) -> list[RunRecord]:
    """Per-image encode+decode wall time for both chains.

    Wall-clock values are inherently non-deterministic; everything else in
    the records (symbol accounting) is exact.
    """
    stream = RngStream(cfg.base_seed).substream("bench")
    scenes = make_classification_scenes(
        cfg.dataset, -(-images // cfg.dataset.users), stream)
    imgs = [s.visual[u] for s in scenes for u in range(cfg.dataset.users)][:images]
    code = _baseline_code(cfg)
    k, budget_symbols = classification_budgets(cfg)
    samples = cfg.dataset.view ** 2
    spec = ChannelSpec("awgn", 10.0)

    def time_once(fn) -> float:
        t0 = time.perf_counter()
        fn()
        return (time.perf_counter() - t0) * 1000.0

    jscc_ms, digital_ms = [], []
    for rep in range(repetitions):
        t_j, t_d = 0.0, 0.0
        for i, img in enumerate(imgs):
            rng = stream.substream("noise", rep, i)

            def jscc_once():
                block = jscc_encode(models.recon, img[:, :, None])
                from .channel import apply as channel_apply

                jscc_decode(models.recon, channel_apply(block, spec, rng))

            def digital_once():
                tx = prepare_baseline_tx(img, budget_symbols, code)
                baseline_receive(tx, spec, code, rng, cfg.baseline.max_iters,
                                 img.shape)

            t_j += time_once(jscc_once)
            t_d += time_once(digital_once)
        jscc_ms.append(t_j / len(imgs))
        digital_ms.append(t_d / len(imgs))

    records = []
    for scheme, times, spsym in (("jscc_single", jscc_ms, models.recon.k / samples),
                                 ("digital_baseline", digital_ms,
                                  budget_symbols / samples)):
        records.append(RunRecord(scheme, 10.0, cfg.base_seed, "wall_ms",
                                 float(np.median(times))))
        records.append(RunRecord(scheme, 10.0, cfg.base_seed,
                                 "symbols_per_sample", spsym))
    return records


# ---------------------------------------------------------------------------
# Knowledge-base demo simulation
# ---------------------------------------------------------------------------

def kb_demo(seed: int = 0):
    """A small two-region topology driven through one full update round."""
    topology = {
        "servers": [
            {"id": "srv-a", "region": "west", "peers": ["srv-b"]},
            {"id": "srv-b", "region": "mid", "peers": ["srv-a", "srv-c"]},
            {"id": "srv-c", "region": "east", "peers": ["srv-b"]},
        ],
        "vehicles": [
            {"id": "veh-1", "server": "srv-a", "region": "west"},
            {"id": "veh-2", "server": "srv-a", "region": "west"},
            {"id": "veh-3", "server": "srv-c", "region": "east"},
        ],
        "rsus": [
            {"id": "rsu-1", "server": "srv-b", "region": "mid"},
        ],
    }
    g = RngStream(seed).substream("kb").generator()
    keys = ("map.lane-closure", "map.speed-limit", "model.detector")
    schedule = []
    tick = 0
    for i, (vid, sid) in enumerate((("veh-1", "srv-a"), ("veh-2", "srv-a"),
                                    ("rsu-1", "srv-b"), ("veh-3", "srv-c"))):
        entries = []
        for key in keys[: 1 + int(g.integers(0, len(keys)))]:
            entries.append({"key": key, "version": int(g.integers(1, 6)),
                            "payload": bytes(g.integers(1, 255, size=8).tolist()),
                            "origin": vid, "region": "r"})
        schedule.append({"tick": tick, "op": "submit", "from": vid, "to": sid,
                         "entries": entries})
        tick += 1
    schedule.append({"tick": tick, "op": "round"})
    sim = kb.KbSim(topology, seed=seed)
    sim.nodes["veh-1"].private["route.plan"] = kb.KbEntry(
        key="route.plan", version=1, payload=b"itinerary", origin="veh-1",
        private=True)
    schedule.append({"tick": tick + 1, "op": "handoff", "vehicle": "veh-1",
                     "itinerary": ["srv-b"]})
    return sim.run(schedule)


# ---------------------------------------------------------------------------
# CSV emission
# ---------------------------------------------------------------------------

CSV_HEADER = "scheme,snr_db,seed,metric,value"


def sort_records(records: list[RunRecord]) -> list[RunRecord]:
    return sorted(records, key=lambda r: (r.scheme, r.snr_db, r.seed, r.metric))


def emit_csv(records: list[RunRecord], path) -> Path:
    """Write records sorted by (scheme, snr_db, seed, metric), values with
    six significant digits, newline-terminated lines."""
    lines = [CSV_HEADER]
    for r in sort_records(records):
        lines.append(f"{r.scheme},{r.snr_db:g},{r.seed},{r.metric},{r.value:.6g}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def parse_csv(path) -> list[RunRecord]:
    lines = Path(path).read_text(encoding="utf-8").strip().splitlines()
    if not lines or lines[0] != CSV_HEADER:
        raise FormatError("bad records header")
    out = []
    for line in lines[1:]:
        scheme, snr, seed, metric, value = line.split(",")
        out.append(RunRecord(scheme, float(snr), int(seed), metric, float(value)))
    return out
