"""Synthetic multi-view, multi-modal scene generator and its dataset container.

Scenes hold bright textured targets (four shape classes) on a dim smoothly
textured background. Each scene is observed by several users through
same-size views whose adjacent pairs overlap by a configured fraction of
the view area. The thermal modality renders targets as class-dependent
blurred heat blobs. Pixels are quantized to the 8-bit grid at generation
time so in-memory scenes and container round trips are bit-identical.

Container layout "SVDS1" (little-endian):

    magic "SVDS1" | u8 split (0 classification, 1 detection) |
    u32 scene count | u16 scene_h | u16 scene_w | u16 view_h | u16 view_w |
    u8 users | u8 modalities (2) | u8 classes | u8 reserved |
    per scene, per user: view_h*view_w visual bytes then thermal bytes |
    u32 metadata length | canonical JSON (offsets, labels, boxes)
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .channel import RngStream
from .errors import ConfigError, FormatError

MAGIC = b"SVDS1"

CLASS_NAMES = ("square", "disc", "triangle", "cross")
# thermal emission level per class
_HEAT = (0.55, 0.70, 0.85, 1.00)


@dataclass
class DatasetSpec:
    users: int = 3
    classes: int = 4
    view: int = 48
    cls_scene: tuple[int, int] = (96, 96)    # (h, w)
    det_scene: tuple[int, int] = (96, 128)
    det_targets: tuple[int, int] = (1, 5)
    overlap: tuple[float, float] = (0.2, 0.5)
    occlusion: float = 0.45

    def validate(self):
        for h, w in (self.cls_scene, self.det_scene):
            if self.view > h or self.view > w:
                raise ConfigError("views cannot be larger than the scene")
        if not (0.0 <= self.occlusion <= 1.0):
            raise ConfigError("occlusion rate must be in [0, 1]")
        if not (0.0 < self.overlap[0] < self.overlap[1] <= 1.0):
            raise ConfigError("overlap range must satisfy 0 < lo < hi <= 1")
        if self.users < 1 or self.classes < 2 or self.classes > len(CLASS_NAMES):
            raise ConfigError("bad user or class count")


@dataclass
class Scene:
    visual: np.ndarray                 # (U, view, view) in [0, 1]
    thermal: np.ndarray                # (U, view, view)
    offsets: list[tuple[int, int]]     # per view (dx, dy) into the scene
    label: int | None                  # classification split only
    boxes: list[tuple[int, int, int, int, int]] = field(default_factory=list)
    scene_shape: tuple[int, int] = (0, 0)


def _quantize(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0


def _background(h: int, w: int, g: np.random.Generator) -> np.ndarray:
    coarse = g.uniform(-1.0, 1.0, size=(h // 16 + 2, w // 16 + 2))
    smooth = ndimage.zoom(coarse, 16.0, order=1)[:h, :w]
    return np.clip(0.30 + 0.06 * smooth, 0.20, 0.42)


def _shape_mask(class_id: int, size: int) -> np.ndarray:
    half = size / 2.0
    v, u = np.meshgrid(np.arange(size) - half + 0.5,
                       np.arange(size) - half + 0.5, indexing="ij")
    if class_id == 0:
        return np.ones((size, size), dtype=bool)
    if class_id == 1:
        return u * u + v * v <= half * half
    if class_id == 2:
        return (np.abs(u) <= (v + half) / 2.0) & (v >= -half) & (v <= half)
    bar = size / 6.0
    return (np.abs(u) <= bar) | (np.abs(v) <= bar)


def _texture(class_id: int, size: int) -> np.ndarray:
    rows, cols = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    if class_id == 0:
        flag = (rows // 3) % 2
    elif class_id == 1:
        rad = np.sqrt((rows - size / 2.0) ** 2 + (cols - size / 2.0) ** 2).astype(int)
        flag = (rad // 3) % 2
    elif class_id == 2:
        flag = ((rows + cols) // 3) % 2
    else:
        flag = ((rows // 3) % 2) ^ ((cols // 3) % 2)
    return np.where(flag == 0, 0.95, 0.68)


def _render_scene(shape_hw, targets, g: np.random.Generator):
    """Draw targets (list of (class_id, cy, cx, size)) on a fresh background.

    Returns (visual, thermal, boxes) with boxes as (x, y, w, h, class) taken
    from the rendered mask bounds.
    """
    h, w = shape_hw
    visual = _background(h, w, g)
    heatmap = np.zeros((h, w))
    boxes = []
    for class_id, cy, cx, size in targets:
        mask = _shape_mask(class_id, size)
        tex = _texture(class_id, size)
        top, left = cy - size // 2, cx - size // 2
        region = visual[top:top + size, left:left + size]
        region[mask] = tex[mask]
        heatmap[top:top + size, left:left + size][mask] = _HEAT[class_id]
        ys, xs = np.nonzero(mask)
        boxes.append((left + int(xs.min()), top + int(ys.min()),
                      int(xs.max() - xs.min() + 1), int(ys.max() - ys.min() + 1),
                      class_id))
    thermal = np.clip(0.08 + ndimage.gaussian_filter(heatmap, sigma=1.5), 0.0, 1.0)
    return visual, thermal, boxes


def _sample_offsets(spec: DatasetSpec, scene_hw, g: np.random.Generator):
    """Per-view (dx, dy) whose adjacent pairs overlap within spec.overlap."""
    v = spec.view
    h, w = scene_hw
    lo, hi = spec.overlap
    for _ in range(300):
        steps = []
        ok = True
        for _ in range(spec.users - 1):
            for _ in range(100):
                dx = int(g.integers(max(1, v // 4), v - 8))
                dy = int(g.integers(-10, 11))
                frac = (v - dx) * (v - abs(dy)) / (v * v)
                if lo + 0.005 <= frac <= hi - 0.005:
                    steps.append((dx, dy))
                    break
            else:
                ok = False
                break
        if not ok:
            continue
        xs = np.cumsum([0] + [s[0] for s in steps])
        ys = np.cumsum([0] + [s[1] for s in steps])
        span_x = xs.max() - xs.min()
        span_y = ys.max() - ys.min()
        if span_x > w - v or span_y > h - v:
            continue
        bx = int(g.integers(0, w - v - span_x + 1)) - xs.min()
        by = int(g.integers(0, h - v - span_y + 1)) - ys.min()
        return [(int(x + bx), int(y + by)) for x, y in zip(xs, ys)]
    # deterministic fallback: half-overlap horizontal chain
    xs = [i * (v // 2) for i in range(spec.users)]
    return [(x, (h - v) // 2) for x in xs]


def _crop_views(visual, thermal, offsets, v):
    vis = np.stack([visual[dy:dy + v, dx:dx + v] for dx, dy in offsets])
    th = np.stack([thermal[dy:dy + v, dx:dx + v] for dx, dy in offsets])
    return vis, th


def make_classification_scenes(spec: DatasetSpec, count: int, rng: RngStream) -> list[Scene]:
    """Scenes with exactly one target near the scene center."""
    spec.validate()
    g = rng.generator()
    h, w = spec.cls_scene
    scenes = []
    for _ in range(count):
        class_id = int(g.integers(0, spec.classes))
        size = int(g.integers(22, 29))
        cy = h // 2 + int(g.integers(-3, 4))
        cx = w // 2 + int(g.integers(-3, 4))
        visual, thermal, boxes = _render_scene((h, w), [(class_id, cy, cx, size)], g)
        offsets = _sample_offsets(spec, (h, w), g)
        vis, th = _crop_views(visual, thermal, offsets, spec.view)
        scenes.append(Scene(visual=_quantize(vis), thermal=_quantize(th),
                            offsets=offsets, label=class_id, boxes=boxes,
                            scene_shape=(h, w)))
    return scenes


def make_detection_scenes(spec: DatasetSpec, count: int, rng: RngStream) -> list[Scene]:
    """Scenes with one to several well-separated targets."""
    spec.validate()
    g = rng.generator()
    h, w = spec.det_scene
    scenes = []
    for _ in range(count):
        n = int(g.integers(spec.det_targets[0], spec.det_targets[1] + 1))
        targets = []
        for _ in range(n):
            for _ in range(80):
                size = int(g.integers(18, 27))
                cy = int(g.integers(size // 2 + 2, h - size // 2 - 2))
                cx = int(g.integers(size // 2 + 2, w - size // 2 - 2))
                gap_ok = all(
                    max(abs(cy - ty), abs(cx - tx)) >= (size + ts) / 2 + 4
                    for _, ty, tx, ts in targets
                )
                if gap_ok:
                    targets.append((int(g.integers(0, spec.classes)), cy, cx, size))
                    break
        visual, thermal, boxes = _render_scene((h, w), targets, g)
        offsets = _sample_offsets(spec, (h, w), g)
        vis, th = _crop_views(visual, thermal, offsets, spec.view)
        scenes.append(Scene(visual=_quantize(vis), thermal=_quantize(th),
                            offsets=offsets, label=None, boxes=boxes,
                            scene_shape=(h, w)))
    return scenes


def synth_dataset(spec: DatasetSpec, rng: RngStream, det_count: int, cls_count: int):
    """Detection split plus single-target classification split."""
    det = make_detection_scenes(spec, det_count, rng.substream("det"))
    cls = make_classification_scenes(spec, cls_count, rng.substream("cls"))
    return det, cls


def cls_arrays(scenes: list[Scene]):
    """(views (N, U, 1, H, W), labels (N,)) for the classification pipeline."""
    views = np.stack([s.visual for s in scenes])[:, :, None]
    labels = np.asarray([s.label for s in scenes], dtype=np.int64)
    return views, labels


# ---------------------------------------------------------------------------
# Container
# ---------------------------------------------------------------------------

def save_svds(scenes: list[Scene], spec: DatasetSpec, split: str, path):
    """Write scenes to the SVDS1 container; byte-identical for equal inputs."""
    split_id = {"classification": 0, "detection": 1}[split]
    scene_hw = spec.cls_scene if split == "classification" else spec.det_scene
    v = spec.view
    head = MAGIC + struct.pack(
        "<BIHHHHBBBB", split_id, len(scenes), scene_hw[0], scene_hw[1],
        v, v, spec.users, 2, spec.classes, 0)
    pixels = bytearray()
    meta_scenes = []
    for s in scenes:
        for u in range(spec.users):
            pixels += np.round(s.visual[u] * 255.0).astype(np.uint8).tobytes()
            pixels += np.round(s.thermal[u] * 255.0).astype(np.uint8).tobytes()
        meta_scenes.append({
            "offsets": [[int(dx), int(dy)] for dx, dy in s.offsets],
            "label": s.label,
            "boxes": [[int(a) for a in b] for b in s.boxes],
        })
    meta = json.dumps({"scenes": meta_scenes}, sort_keys=True,
                      separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(bytes(pixels))
        fh.write(struct.pack("<I", len(meta)))
        fh.write(meta)


def load_svds(path) -> tuple[list[Scene], dict]:
    """Read an SVDS1 container back into scenes."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:5] != MAGIC:
        raise FormatError("bad dataset magic")
    split_id, count, sh, sw, vh, vw, users, mods, classes, _ = struct.unpack_from(
        "<BIHHHHBBBB", data, 5)
    pos = 5 + struct.calcsize("<BIHHHHBBBB")
    if mods != 2:
        raise FormatError("expected visual+thermal modalities")
    need = count * users * 2 * vh * vw
    if len(data) < pos + need + 4:
        raise FormatError("truncated dataset container")
    raw = np.frombuffer(data[pos:pos + need], dtype=np.uint8).astype(np.float64) / 255.0
    raw = raw.reshape(count, users, 2, vh, vw)
    pos += need
    (meta_len,) = struct.unpack_from("<I", data, pos)
    pos += 4
    meta = json.loads(data[pos:pos + meta_len].decode("utf-8"))
    scenes = []
    for i, m in enumerate(meta["scenes"]):
        scenes.append(Scene(
            visual=raw[i, :, 0], thermal=raw[i, :, 1],
            offsets=[(int(a), int(b)) for a, b in m["offsets"]],
            label=m["label"],
            boxes=[tuple(b) for b in m["boxes"]],
            scene_shape=(sh, sw),
        ))
    header = {"split": "classification" if split_id == 0 else "detection",
              "users": users, "classes": classes, "view": vh}
    return scenes, header
