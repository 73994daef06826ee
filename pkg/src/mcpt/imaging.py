"""Image pairs, synthetic optical/SAR scenes, augmentation and GCD splits.

Images are ``numpy`` float64 arrays laid out ``H x W x C`` with values in [0, 1].
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

SHAPE_FAMILIES = ("blob", "stripe", "grid", "ring", "wedge")
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


@dataclass
class ImagePair:
    eo: np.ndarray
    sar: np.ndarray
    pair_id: str = ""

    def __post_init__(self):
        self.eo = np.asarray(self.eo, dtype=np.float64)
        self.sar = np.asarray(self.sar, dtype=np.float64)
        if self.sar.ndim == 2:
            self.sar = self.sar[..., None]
        if self.eo.ndim != 3 or self.eo.shape[2] != 3:
            raise ValueError(f"eo must be HxWx3, got {self.eo.shape}")
        if self.sar.ndim != 3 or self.sar.shape[2] != 1:
            raise ValueError(f"sar must be HxWx1, got {self.sar.shape}")
        if self.eo.shape[:2] != self.sar.shape[:2]:
            raise ValueError("eo and sar are not registered (different H, W)")
        for name, arr in (("eo", self.eo), ("sar", self.sar)):
            if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
                raise ValueError(f"{name} values outside [0, 1]")


@dataclass(frozen=True)
class SceneSpec:
    class_id: int
    family: str
    texture_scale: float = 2.0
    seed: int = 0
    level: float | None = None  # fixed background luminance, for class-keyed intensity

    def __post_init__(self):
        if self.family not in SHAPE_FAMILIES:
            raise ValueError(f"unknown shape family {self.family!r}")
        if self.texture_scale <= 0:
            raise ValueError("texture_scale must be positive")


@dataclass(frozen=True)
class NoiseParams:
    speckle_strength: float = 0.3
    blur_radius: float = 1.0
    gamma: float = 1.2

    def __post_init__(self):
        if self.speckle_strength < 0:
            raise ValueError("speckle_strength must be >= 0")
        if self.blur_radius < 0:
            raise ValueError("blur_radius must be >= 0")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")


@dataclass(frozen=True)
class AugmentParams:
    min_scale: float = 0.8
    max_scale: float = 1.0
    flip_prob: float = 0.5
    jitter_sigma: float = 0.02


@dataclass
class Sample:
    sample_id: str
    image: np.ndarray
    class_id: int


@dataclass
class GCDSplit:
    labeled: list[Sample]
    unlabeled: list[Sample]
    test: list[Sample]
    old_classes: frozenset[int]
    new_classes: frozenset[int] = field(default_factory=frozenset)

    @property
    def num_classes(self) -> int:
        return len(self.old_classes | self.new_classes)


def to_grayscale(eo) -> np.ndarray:
    """ITU-R 601 luminance of an ``H x W x 3`` image, returned as ``H x W x 1``."""
    eo = np.asarray(eo, dtype=np.float64)
    if eo.ndim != 3 or eo.shape[2] != 3:
        raise ValueError(f"expected H x W x 3 input, got shape {eo.shape}")
    gray = eo @ LUMA_WEIGHTS
    return np.clip(gray, 0.0, 1.0)[..., None]


# ---------------------------------------------------------------------------
# synthetic scenes


def _coords(size, rng):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    cy, cx = rng.uniform(0.35, 0.65, size=2)
    return yy - cy, xx - cx


def _render_mask(family: str, size: int, rng: np.random.Generator) -> np.ndarray:
    """Soft foreground mask in [0, 1] for one shape family."""
    y, x = _coords(size, rng)
    theta = rng.uniform(0, np.pi)
    soft = 1.5 / size
    if family == "blob":
        out = np.zeros((size, size))
        for _ in range(rng.integers(2, 4)):
            by, bx = rng.uniform(-0.2, 0.2, size=2)
            s = rng.uniform(0.08, 0.14)
            out = np.maximum(out, np.exp(-((y - by) ** 2 + (x - bx) ** 2) / (2 * s**2)))
        return out
    if family == "stripe":
        u = x * np.cos(theta) + y * np.sin(theta)
        period = rng.uniform(0.18, 0.26)
        return 0.5 + 0.5 * np.tanh(np.sin(2 * np.pi * u / period) / 0.35)
    if family == "grid":
        period = rng.uniform(0.22, 0.3)
        u = x * np.cos(theta) + y * np.sin(theta)
        v = -x * np.sin(theta) + y * np.cos(theta)
        width = 0.05
        du = np.abs(((u / period) % 1.0) - 0.5) * period
        dv = np.abs(((v / period) % 1.0) - 0.5) * period
        line = np.maximum(_smooth_step(du - (0.5 * period - width), soft), _smooth_step(dv - (0.5 * period - width), soft))
        return line
    if family == "ring":
        r = np.hypot(x, y)
        r0 = rng.uniform(0.18, 0.26)
        w = rng.uniform(0.05, 0.07)
        return _smooth_step(w - np.abs(r - r0), soft)
    if family == "wedge":
        ang = np.arctan2(y, x) - theta
        ang = np.angle(np.exp(1j * ang))
        half = rng.uniform(0.35, 0.6)
        r = np.hypot(x, y)
        return _smooth_step(half - np.abs(ang), 0.08) * _smooth_step(0.4 - r, soft)
    raise ValueError(f"unknown shape family {family!r}")


def _smooth_step(v, width):
    return 0.5 + 0.5 * np.tanh(v / width)


def render_scene(spec: SceneSpec, size: int = 64) -> np.ndarray:
    """Render the optical view of a scene as an ``size x size x 3`` image.

    Foreground and background colors are drawn with a luminance gap of at least
    0.3 so the structure survives grayscale conversion. A low-amplitude smooth
    texture (correlation length ``texture_scale`` pixels) is added on top.
    """
    rng = np.random.default_rng([spec.seed, spec.class_id, SHAPE_FAMILIES.index(spec.family)])
    mask = _render_mask(spec.family, size, rng)
    if spec.level is None:
        lum_bg = rng.uniform(0.15, 0.35)
        lum_fg = rng.uniform(lum_bg + 0.3, 0.9)
    else:
        lum_bg = spec.level + rng.uniform(-0.01, 0.01)
        lum_fg = min(lum_bg + 0.15, 0.95)
    bg = _color_with_luma(lum_bg, rng)
    fg = _color_with_luma(lum_fg, rng)
    eo = mask[..., None] * fg + (1.0 - mask[..., None]) * bg
    texture = ndimage.gaussian_filter(rng.standard_normal((size, size)), spec.texture_scale, mode="wrap")
    texture *= 0.04 / (texture.std() + 1e-12)
    return np.clip(eo + texture[..., None], 0.0, 1.0)


def _color_with_luma(luma: float, rng: np.random.Generator) -> np.ndarray:
    tint = rng.uniform(-0.12, 0.12, size=3)
    tint -= tint @ LUMA_WEIGHTS
    return np.clip(luma + tint, 0.0, 1.0)


def speckle(shape, strength: float, rng: np.random.Generator) -> np.ndarray:
    """Multiplicative gamma speckle with mean 1 and standard deviation ``strength``."""
    if strength == 0:
        return np.ones(shape)
    looks = 1.0 / strength**2
    return rng.gamma(shape=looks, scale=1.0 / looks, size=shape)


def synth_pair(spec: SceneSpec, noise: NoiseParams = NoiseParams(), seed: int = 0, size: int = 64) -> ImagePair:
    eo = render_scene(spec, size)
    gray = to_grayscale(eo)[..., 0]
    if noise.blur_radius > 0:
        gray = ndimage.gaussian_filter(gray, noise.blur_radius, mode="reflect")
    rng = np.random.default_rng([seed, spec.seed, spec.class_id, 7])
    sar = np.power(gray, noise.gamma) if noise.gamma != 1 else gray
    sar = np.clip(sar * speckle(sar.shape, noise.speckle_strength, rng), 0.0, 1.0)
    return ImagePair(eo=eo, sar=sar[..., None], pair_id=f"c{spec.class_id}-s{spec.seed}-n{seed}")


def synth_corpus(n_pairs: int, n_classes: int = 5, noise: NoiseParams = NoiseParams(), seed: int = 0, size: int = 64):
    """Paired corpus with classes cycling through the shape families. Returns (pairs, class_ids)."""
    pairs, labels = [], []
    for i in range(n_pairs):
        cid = i % n_classes
        spec = SceneSpec(cid, SHAPE_FAMILIES[cid % len(SHAPE_FAMILIES)], texture_scale=2.0, seed=seed * 100003 + i)
        pair = synth_pair(spec, noise, seed=seed, size=size)
        pair.pair_id = f"pair{i:05d}"
        pairs.append(pair)
        labels.append(cid)
    return pairs, labels


def synth_classification_corpus(
    n_train: int,
    n_test: int,
    n_classes: int = 5,
    noise: NoiseParams = NoiseParams(speckle_strength=0.1),
    seed: int = 0,
    size: int = 64,
    separable: bool = False,
) -> tuple[list[Sample], list[Sample]]:
    """Single-modality (SAR) labeled corpus, ``n_train``/``n_test`` samples per class.

    With ``separable=True`` every class also gets its own background luminance
    (evenly spaced in [0.05, 0.65]) and a fixed foreground contrast, which makes the classes linearly separable
    from image statistics alone.
    """
    train, test = [], []
    for cid in range(n_classes):
        family = SHAPE_FAMILIES[cid % len(SHAPE_FAMILIES)]
        level = 0.05 + 0.6 * cid / max(n_classes - 1, 1) if separable else None
        for j in range(n_train + n_test):
            spec = SceneSpec(cid, family, texture_scale=2.0, seed=seed * 100003 + 1000 * cid + j, level=level)
            pair = synth_pair(spec, noise, seed=seed + 1, size=size)
            sample = Sample(f"c{cid}-{j:04d}", pair.sar, cid)
            (train if j < n_train else test).append(sample)
    return train, test


# ---------------------------------------------------------------------------
# augmentation


def augment(image, seed: int, params: AugmentParams = AugmentParams()) -> np.ndarray:
    """Seeded random crop-resize, horizontal flip and Gaussian jitter.

    The crop keeps a side fraction drawn from ``[min_scale, max_scale]`` and is
    resampled back to the input size with bilinear interpolation.
    """
    img = np.asarray(image, dtype=np.float64)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[..., None]
    h, w, _ = img.shape
    rng = np.random.default_rng(seed)
    scale = rng.uniform(params.min_scale, params.max_scale)
    ch, cw = scale * (h - 1), scale * (w - 1)
    oy = rng.uniform(0, (h - 1) - ch)
    ox = rng.uniform(0, (w - 1) - cw)
    flip = rng.uniform() < params.flip_prob
    noise = rng.standard_normal(img.shape)

    if scale != 1.0:
        yy = oy + np.linspace(0, ch, h)
        xx = ox + np.linspace(0, cw, w)
        grid = np.meshgrid(yy, xx, indexing="ij")
        img = np.stack(
            [ndimage.map_coordinates(img[..., c], grid, order=1, mode="nearest") for c in range(img.shape[2])],
            axis=-1,
        )
    if flip:
        img = img[:, ::-1]
    if params.jitter_sigma > 0:
        img = img + params.jitter_sigma * noise
    img = np.clip(img, 0.0, 1.0)
    return img[..., 0] if squeeze else np.ascontiguousarray(img)


# ---------------------------------------------------------------------------
# GCD splits


def make_splits(
    train: Sequence[Sample],
    old_classes,
    label_fraction: float = 0.5,
    seed: int = 0,
    test: Sequence[Sample] = (),
) -> GCDSplit:
    """Build ``D_l``, ``D_u`` and ``D_test`` from a labeled training pool.

    For every old class ``floor(label_fraction * n)`` randomly chosen training
    instances are labeled; everything else in the pool becomes unlabeled.
    """
    if not 0 < label_fraction <= 1:
        raise ValueError("label_fraction must be in (0, 1]")
    old = frozenset(int(c) for c in old_classes)
    by_class: dict[int, list[Sample]] = {}
    for s in train:
        by_class.setdefault(int(s.class_id), []).append(s)
    missing = old - set(by_class)
    if missing:
        raise ValueError(f"old classes {sorted(missing)} have no training data")
    new = frozenset(set(by_class) | {int(s.class_id) for s in test}) - old

    rng = np.random.default_rng(seed)
    labeled_ids: set[str] = set()
    for cid in sorted(old):
        members = by_class[cid]
        if len(members) < 2:
            raise ValueError(f"old class {cid} has fewer than 2 instances")
        k = math.floor(label_fraction * len(members))
        chosen = rng.choice(len(members), size=k, replace=False)
        labeled_ids.update(members[i].sample_id for i in chosen)
    if len(labeled_ids) != sum(math.floor(label_fraction * len(by_class[c])) for c in old):
        raise ValueError("duplicate sample ids in training pool")

    labeled = [s for s in train if s.sample_id in labeled_ids]
    unlabeled = [s for s in train if s.sample_id not in labeled_ids]
    return GCDSplit(labeled, unlabeled, list(test), old, new)


# ---------------------------------------------------------------------------
# manifests and PNG I/O


def load_png(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB") if "A" in im.mode or im.mode == "P" else im.convert("L")
        arr = np.asarray(im, dtype=np.float64) / 255.0
    return arr[..., None] if arr.ndim == 2 else arr


def save_png(path, image) -> None:
    from PIL import Image

    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[..., 0]
    Image.fromarray(np.round(np.clip(arr, 0, 1) * 255).astype(np.uint8)).save(path)


def _resolve(base: Path, p: str) -> Path:
    q = Path(p)
    return q if q.is_absolute() else base / q


def read_pair_manifest(path) -> list[ImagePair]:
    path = Path(path)
    entries = json.loads(path.read_text())
    pairs = []
    for e in entries:
        eo = load_png(_resolve(path.parent, e["eo_path"]))
        if eo.shape[2] == 1:
            eo = np.repeat(eo, 3, axis=2)
        sar = load_png(_resolve(path.parent, e["sar_path"]))
        if sar.shape[2] == 3:
            sar = to_grayscale(sar)
        pairs.append(ImagePair(eo, sar, str(e["pair_id"])))
    return pairs


def read_class_manifest(path) -> tuple[list[Sample], list[Sample]]:
    """Returns ``(train, test)`` samples; RGB images are converted to grayscale."""
    path = Path(path)
    entries = json.loads(path.read_text())
    train, test = [], []
    for e in entries:
        img = load_png(_resolve(path.parent, e["image_path"]))
        if img.shape[2] == 3:
            img = to_grayscale(img)
        split = e.get("split", "train")
        if split not in ("train", "test"):
            raise ValueError(f"bad split {split!r} in manifest")
        sid = e.get("sample_id", Path(e["image_path"]).stem)
        (train if split == "train" else test).append(Sample(str(sid), img, int(e["class_id"])))
    return train, test


def write_pair_corpus(out_dir, pairs: Sequence[ImagePair]) -> Path:
    out_dir = Path(out_dir)
    (out_dir / "pairs").mkdir(parents=True, exist_ok=True)
    entries = []
    for p in pairs:
        eo_rel = os.path.join("pairs", f"{p.pair_id}_eo.png")
        sar_rel = os.path.join("pairs", f"{p.pair_id}_sar.png")
        save_png(out_dir / eo_rel, p.eo)
        save_png(out_dir / sar_rel, p.sar)
        entries.append({"pair_id": p.pair_id, "eo_path": eo_rel, "sar_path": sar_rel})
    manifest = out_dir / "pairs.json"
    manifest.write_text(json.dumps(entries, indent=1))
    return manifest


def write_class_corpus(out_dir, train: Sequence[Sample], test: Sequence[Sample]) -> Path:
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    entries = []
    for split, samples in (("train", train), ("test", test)):
        for s in samples:
            rel = os.path.join("images", f"{split}_{s.sample_id}.png")
            save_png(out_dir / rel, s.image)
            entries.append({"image_path": rel, "class_id": int(s.class_id), "split": split, "sample_id": s.sample_id})
    manifest = out_dir / "classes.json"
    manifest.write_text(json.dumps(entries, indent=1))
    return manifest
