"""Directory-driven dataset ingestion, deterministic splits, preprocessing,
augmentation, batching, and a synthetic corpus generator for desk-scale
testing.

Images flow through as H x W x 3 float tensors scaled to [-1, 1] via
x / 127.5 - 1. Class indices follow lexicographically sorted class
directory names.
"""

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw, UnidentifiedImageError

from .errors import ConfigError, DataError
from .tensor import STORAGE_DTYPE, Shape4

IMAGE_EXTS = {".png", ".jpg", ".jpeg"}
SPLITS = ("train", "val", "test")


@dataclass
class LabeledDataset:
    """Sorted class table plus (path, class_index) samples and split tags."""

    class_names: list[str]
    samples: list[tuple[str, int]]
    splits: list[str | None] = field(default_factory=list)

    def __post_init__(self):
        if list(self.class_names) != sorted(self.class_names):
            raise DataError("class_names must be lexicographically sorted")
        k = len(self.class_names)
        for path, idx in self.samples:
            if not 0 <= idx < k:
                raise DataError(f"sample {path} has class index {idx} out of range")
        if not self.splits:
            self.splits = [None] * len(self.samples)
        if len(self.splits) != len(self.samples):
            raise DataError("splits must parallel samples")

    def indices(self, split: str) -> list[int]:
        if split not in SPLITS:
            raise ConfigError(f"split must be one of {SPLITS}, got {split!r}")
        return [i for i, tag in enumerate(self.splits) if tag == split]

    def split_counts(self) -> dict[str, int]:
        counts = {s: 0 for s in SPLITS}
        for tag in self.splits:
            if tag is not None:
                counts[tag] += 1
        return counts


@dataclass
class AugmentSpec:
    """Random rotation/shift/flip policy; ranges of zero disable each op."""

    rotation_deg: float = 30.0
    shift_frac: float = 0.10
    horizontal_flip: bool = True
    vertical_flip: bool = True
    fill: str = "nearest"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.rotation_deg <= 180.0:
            raise ConfigError(f"rotation_deg must be in [0, 180], got {self.rotation_deg}")
        if not 0.0 <= self.shift_frac <= 0.5:
            raise ConfigError(f"shift_frac must be in [0, 0.5], got {self.shift_frac}")
        if self.fill not in ("nearest", "zero"):
            raise ConfigError(f"fill must be 'nearest' or 'zero', got {self.fill!r}")


@dataclass
class Batch:
    images: np.ndarray  # B x H x W x C
    labels: np.ndarray  # B x K one-hot


# ---------------------------------------------------------------------------
# Ingestion and splitting


def scan_dataset(root) -> LabeledDataset:
    """Read a root/<class_name>/<image> tree into a LabeledDataset.

    Class names are the sorted subdirectory names; sample order is sorted
    within each class, so rescans are stable.
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset root {root} is not a directory")
    strays = sorted(p.name for p in root.iterdir()
                    if p.is_file() and p.suffix.lower() in IMAGE_EXTS)
    if strays:
        raise DataError(
            f"image files without a class directory under {root}: {', '.join(strays[:5])}"
        )
    class_dirs = sorted((p for p in root.iterdir() if p.is_dir()), key=lambda p: p.name)
    if not class_dirs:
        raise DataError(f"no class subdirectories under {root}")
    class_names = [p.name for p in class_dirs]
    samples: list[tuple[str, int]] = []
    for idx, cdir in enumerate(class_dirs):
        files = sorted(p for p in cdir.iterdir()
                       if p.is_file() and p.suffix.lower() in IMAGE_EXTS)
        if not files:
            raise DataError(f"class directory {cdir} contains no images")
        samples.extend((str(p), idx) for p in files)
    return LabeledDataset(class_names, samples)


def split_dataset(ds: LabeledDataset, fractions=(0.76, 0.19, 0.05),
                  seed: int = 0) -> LabeledDataset:
    """Assign train/val/test tags, stratified per class.

    Per-class counts use largest-remainder rounding (ties go to train, then
    val), so every split deviates from its requested fraction by less than
    one sample per class. Classes smaller than the number of splits go
    entirely to train with a warning.
    """
    if len(fractions) != 3:
        raise ConfigError(f"fractions must be (train, val, test), got {fractions}")
    if any(f <= 0 for f in fractions):
        raise ConfigError(f"all split fractions must be positive, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must sum to 1, got {sum(fractions)}")

    rng = np.random.default_rng(seed)
    splits: list[str | None] = [None] * len(ds.samples)
    for c in range(len(ds.class_names)):
        members = [i for i, (_, idx) in enumerate(ds.samples) if idx == c]
        n = len(members)
        if n < len(SPLITS):
            warnings.warn(
                f"class {ds.class_names[c]!r} has {n} sample(s), fewer than the "
                f"{len(SPLITS)} splits; assigning all to train"
            )
            for i in members:
                splits[i] = "train"
            continue
        order = rng.permutation(n)
        ideal = [n * f for f in fractions]
        counts = [int(x) for x in ideal]
        # Largest remainder; tie order train > val > test.
        leftovers = sorted(range(3), key=lambda j: (-(ideal[j] - counts[j]), j))
        for j in leftovers[: n - sum(counts)]:
            counts[j] += 1
        bounds = np.cumsum([0] + counts)
        for tag, lo, hi in zip(SPLITS, bounds[:-1], bounds[1:]):
            for pos in order[lo:hi]:
                splits[members[pos]] = tag
    return LabeledDataset(ds.class_names, list(ds.samples), splits)


def export_split_manifest(ds: LabeledDataset, path) -> None:
    """One JSON object per line: {path, class, split}."""
    with open(path, "w", encoding="utf-8") as fh:
        for (sample_path, idx), tag in zip(ds.samples, ds.splits):
            fh.write(json.dumps(
                {"path": sample_path, "class": ds.class_names[idx], "split": tag}
            ) + "\n")


# ---------------------------------------------------------------------------
# Image loading and augmentation


def load_image(path, target) -> np.ndarray:
    """Decode PNG/JPEG, bilinear-resize to target H x W, scale to [-1, 1].

    Grayscale sources are replicated to RGB and alpha channels dropped.
    """
    if isinstance(target, Shape4):
        if target.channels != 3:
            raise ConfigError(f"load_image targets 3 channels, got {target.channels}")
        th, tw = target.height, target.width
    else:
        th, tw = target
    try:
        with Image.open(path) as im:
            im = im.convert("RGB")
            if im.size != (tw, th):
                im = im.resize((tw, th), Image.BILINEAR)
            arr = np.asarray(im, dtype=np.float32)
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise DataError(f"cannot decode image {path}: {exc}") from exc
    return arr / np.float32(127.5) - np.float32(1.0)


def _bilinear_sample(img, src_y, src_x, fill):
    h, w = img.shape[:2]
    if fill == "zero":
        inside = (src_y >= 0) & (src_y <= h - 1) & (src_x >= 0) & (src_x <= w - 1)
    else:
        inside = None
    src_y = np.clip(src_y, 0, h - 1)
    src_x = np.clip(src_x, 0, w - 1)
    y0 = np.floor(src_y).astype(np.intp)
    x0 = np.floor(src_x).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (src_y - y0)[..., None]
    fx = (src_x - x0)[..., None]
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bottom = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    out = top * (1 - fy) + bottom * fy
    if inside is not None:
        out = np.where(inside[..., None], out, 0)
    return out.astype(img.dtype)


def rotate_shift(img, angle_deg, shift_y, shift_x, fill="nearest") -> np.ndarray:
    """Rotate about the image center (positive = counter-clockwise) and
    translate by (shift_y, shift_x) pixels, bilinear with border fill.

    Zero rotation and zero shift short-circuit to an exact copy.
    """
    img = np.asarray(img)
    if angle_deg == 0 and shift_y == 0 and shift_x == 0:
        return img.copy()
    h, w = img.shape[:2]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    t = np.deg2rad(angle_deg)
    cos_t, sin_t = np.cos(t), np.sin(t)
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    y0 = yy - cy - shift_y
    x0 = xx - cx - shift_x
    src_y = cos_t * y0 + sin_t * x0 + cy
    src_x = -sin_t * y0 + cos_t * x0 + cx
    return _bilinear_sample(img, src_y, src_x, fill)


def augment(img, spec: AugmentSpec, rng) -> np.ndarray:
    """Apply one random draw of the augmentation policy to a rank-3 image."""
    img = np.asarray(img)
    if img.ndim != 3:
        raise ConfigError(f"augment expects a rank-3 image, got shape {img.shape}")
    h, w = img.shape[:2]
    angle = rng.uniform(-spec.rotation_deg, spec.rotation_deg) if spec.rotation_deg else 0.0
    if spec.shift_frac:
        shift_y = rng.uniform(-spec.shift_frac, spec.shift_frac) * h
        shift_x = rng.uniform(-spec.shift_frac, spec.shift_frac) * w
    else:
        shift_y = shift_x = 0.0
    out = rotate_shift(img, angle, shift_y, shift_x, spec.fill)
    if spec.horizontal_flip and rng.random() < 0.5:
        out = out[:, ::-1]
    if spec.vertical_flip and rng.random() < 0.5:
        out = out[::-1]
    return np.ascontiguousarray(out)


# ---------------------------------------------------------------------------
# Batching


def make_batches(ds: LabeledDataset, split: str, batch_size: int, target,
                 seed: int = 0, epoch: int = 0, augment_spec: AugmentSpec | None = None,
                 shuffle: bool = True, dtype=STORAGE_DTYPE):
    """Yield Batch objects covering the split exactly once; the final
    partial batch is emitted. Order is deterministic in (seed, epoch)."""
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    idx = ds.indices(split)
    if not idx:
        raise DataError(f"split {split!r} is empty")
    if shuffle:
        order = np.random.default_rng([seed, epoch]).permutation(len(idx))
        idx = [idx[i] for i in order]
    aug_rng = (np.random.default_rng([augment_spec.seed, epoch])
               if augment_spec is not None else None)
    k = len(ds.class_names)
    for start in range(0, len(idx), batch_size):
        chunk = idx[start : start + batch_size]
        images = []
        labels = np.zeros((len(chunk), k), dtype=dtype)
        for row, i in enumerate(chunk):
            path, cls = ds.samples[i]
            img = load_image(path, target)
            if augment_spec is not None:
                img = augment(img, augment_spec, aug_rng)
            images.append(img)
            labels[row, cls] = 1
        yield Batch(np.stack(images).astype(dtype, copy=False), labels)


# ---------------------------------------------------------------------------
# Synthetic corpus


def generate_synthetic_corpus(out_dir, classes: int = 6, per_class: int = 50,
                              seed: int = 0, size: int = 64) -> list[str]:
    """Write a learnable stand-in corpus: one hue/shape family per class on
    a plain background. Byte-identical for a given seed."""
    if classes < 2:
        raise ConfigError(f"classes must be >= 2, got {classes}")
    if per_class < 1:
        raise ConfigError(f"per_class must be >= 1, got {per_class}")
    out_dir = Path(out_dir)
    written = []
    for c in range(classes):
        cdir = out_dir / f"class_{c:02d}"
        cdir.mkdir(parents=True, exist_ok=True)
        hue = c / classes
        aspect = 0.45 + 0.5 * (c % 3) / 2  # three width families
        for i in range(per_class):
            rng = np.random.default_rng([seed, c, i])
            img = _draw_synthetic(size, hue, aspect, rng)
            path = cdir / f"img_{i:03d}.png"
            img.save(path, format="PNG")
            written.append(str(path))
    return written


def _hsv_to_rgb(h, s, v):
    i = int(h * 6) % 6
    f = h * 6 - int(h * 6)
    p, q, t = v * (1 - s), v * (1 - s * f), v * (1 - s * (1 - f))
    rgb = [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)][i]
    return tuple(int(round(255 * x)) for x in rgb)


def _draw_synthetic(size, hue, aspect, rng):
    bg = int(rng.integers(185, 215))
    img = Image.new("RGB", (size, size), (bg, bg, bg))
    draw = ImageDraw.Draw(img)
    color = _hsv_to_rgb((hue + rng.uniform(-0.02, 0.02)) % 1.0,
                        rng.uniform(0.75, 0.95), rng.uniform(0.75, 0.95))
    half = size / 2
    rx = half * aspect * rng.uniform(0.75, 0.95)
    ry = half * rng.uniform(0.55, 0.85)
    cx = half + rng.uniform(-0.12, 0.12) * size
    cy = half + rng.uniform(-0.12, 0.12) * size
    draw.ellipse((cx - rx, cy - ry, cx + rx, cy + ry), fill=color)
    return img
