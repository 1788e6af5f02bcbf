"""Dataset ingestion, preprocessing, augmentation, Ax export and procedural rosettes."""
from __future__ import annotations

import csv
import logging
import math
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .config import worker_count
from .errors import DatasetValidationError, RangeError, ValidationError
from .pngio import read_mask, read_rgb, to_unit_range, write_rgb

logger = logging.getLogger(__name__)

N_ROTATIONS = 10
FLIPS = ("none", "horizontal", "vertical")
AUGMENT_FACTOR = N_ROTATIONS * len(FLIPS)
BACKGROUND = -1.0


@dataclass
class ImageSample:
    pixels: np.ndarray  # [3, H, W] float32 in [-1, 1]
    leaf_count: int
    source_id: str = ""
    is_synthetic: bool = False


@dataclass
class DatasetManifest:
    entries: list[tuple[str, int]]
    root: Path
    masks: dict[str, str] = field(default_factory=dict)

    def __len__(self):
        return len(self.entries)

    @property
    def min_count(self) -> int | None:
        return min((c for _, c in self.entries), default=None)

    @property
    def max_count(self) -> int | None:
        return max((c for _, c in self.entries), default=None)

    @property
    def num_classes(self) -> int | None:
        if not self.entries:
            return None
        return self.max_count - self.min_count + 1


# ---------------------------------------------------------------------------
# preprocessing

def _resize_channel(channel: np.ndarray, target: int) -> np.ndarray:
    im = Image.fromarray(np.ascontiguousarray(channel, dtype=np.float32))
    return np.asarray(im.resize((target, target), Image.Resampling.BILINEAR), dtype=np.float32)


def preprocess(raw: np.ndarray, target: int | None = 128, mask: np.ndarray | None = None) -> np.ndarray:
    """Center-crop an ``H x W x 3`` 8-bit image to a square, rescale and map to [-1, 1].

    Background pixels (``mask == 0``) are blacked out before rescaling.
    ``target=None`` keeps the cropped size.  Returns ``[3, target, target]``.
    """
    raw = np.asarray(raw)
    if raw.size == 0 or raw.ndim != 3 or raw.shape[2] != 3:
        raise ValidationError(f"expected a non-empty H x W x 3 image, got shape {list(raw.shape)}")
    if target is not None and target < 8:
        raise ValidationError(f"target size must be >= 8, got {target}")
    img = raw.astype(np.float32)
    if mask is not None:
        mask = np.asarray(mask)
        if mask.shape != raw.shape[:2]:
            raise ValidationError(f"mask shape {list(mask.shape)} does not match image {list(raw.shape[:2])}")
        img = img * (mask > 0)[:, :, None]
    h, w = img.shape[:2]
    s = min(h, w)
    top, left = (h - s) // 2, (w - s) // 2
    img = img[top:top + s, left:left + s]
    if target is not None and target != s:
        img = np.stack([_resize_channel(img[:, :, c], target) for c in range(3)], axis=2)
    pixels = to_unit_range(img.transpose(2, 0, 1))
    return np.clip(pixels, -1.0, 1.0)


# ---------------------------------------------------------------------------
# augmentation

def transform(pixels: np.ndarray, rotation: int, flip: str) -> np.ndarray:
    """Flip, then rotate by ``rotation * 2*pi/10``; exposed corners become background."""
    if flip == "horizontal":
        out = pixels[:, :, ::-1]
    elif flip == "vertical":
        out = pixels[:, ::-1, :]
    elif flip == "none":
        out = pixels
    else:
        raise ValidationError(f"unknown flip {flip!r}")
    if rotation % N_ROTATIONS == 0:
        return np.array(out)
    angle = 360.0 * rotation / N_ROTATIONS
    rotated = ndimage.rotate(out, angle, axes=(2, 1), reshape=False, order=1, mode="constant", cval=BACKGROUND)
    return np.clip(rotated, -1.0, 1.0).astype(pixels.dtype)


class AugmentedDataset(Sequence):
    """Lazy 30-fold view: index ``i`` maps to source ``i // 30``, flip and rotation below."""

    def __init__(self, samples: Sequence[ImageSample]):
        self.samples = samples

    def __len__(self):
        return AUGMENT_FACTOR * len(self.samples)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(len(self)))]
        if i < 0:
            i += len(self)
        if not 0 <= i < len(self):
            raise IndexError(i)
        src, rem = divmod(i, AUGMENT_FACTOR)
        f, rot = divmod(rem, N_ROTATIONS)
        s = self.samples[src]
        return ImageSample(
            transform(s.pixels, rot, FLIPS[f]),
            s.leaf_count,
            f"{s.source_id}/flip-{FLIPS[f]}/rot{rot}",
            s.is_synthetic,
        )


def augment(samples: Sequence[ImageSample], rng: np.random.Generator | None = None,
            memory_budget: int = 512 * 2**20):
    """Every sample under 10 equidistant rotations x {identity, h-flip, v-flip}.

    The transforms are deterministic; ``rng`` is accepted for interface
    symmetry with the other pipeline stages and unused.  Results that would
    exceed ``memory_budget`` bytes are returned as a lazy
    :class:`AugmentedDataset` instead of a list.
    """
    if len(samples) == 0:
        raise ValidationError("augment needs at least one sample")
    view = AugmentedDataset(samples)
    if len(view) * samples[0].pixels.nbytes > memory_budget:
        return view
    return list(view)


# ---------------------------------------------------------------------------
# CSV datasets

def _parse_csv(csv_path: Path) -> list[tuple[int, list[str]]]:
    """Non-blank rows with their line numbers; a leading header row is dropped."""
    with open(csv_path, newline="") as fh:
        rows = [
            (lineno, [c.strip() for c in row])
            for lineno, row in enumerate(csv.reader(fh), start=1)
            if any(c.strip() for c in row)
        ]
    if rows and len(rows[0][1]) == 2 and not rows[0][1][0].lower().endswith(".png"):
        try:
            int(rows[0][1][1])
        except ValueError:
            rows = rows[1:]
    return rows


def load_dataset(root, csv_path=None, target: int | None = 128, use_masks: bool = True):
    """Read a ``filename,count`` CSV and the PNGs it lists under ``root``.

    ``csv_path`` defaults to the single ``*.csv`` in ``root``.  Masks named
    ``plantXXX_fg.png`` next to ``plantXXX_rgb.png`` are applied when present
    and ``use_masks`` is set.  All row problems are reported together in one
    :class:`DatasetValidationError`.
    """
    root = Path(root)
    if csv_path is None:
        found = sorted(root.glob("*.csv"))
        if len(found) != 1:
            raise ValidationError(f"{root}: expected exactly one CSV file, found {len(found)}")
        csv_path = found[0]
    csv_path = Path(csv_path)
    rows = _parse_csv(csv_path)

    entries, masks, seen, problems = [], {}, set(), []
    for lineno, fields in rows:
        where = f"{csv_path.name}:{lineno}"
        if len(fields) != 2:
            problems.append(f"{where}: expected 'filename,count', got {','.join(fields)!r}")
            continue
        name, raw_count = fields
        try:
            count = int(raw_count)
        except ValueError:
            problems.append(f"{where}: count {raw_count!r} is not an integer")
            continue
        if count < 1:
            problems.append(f"{where}: count {count} must be >= 1")
        if name in seen:
            problems.append(f"{where}: duplicate filename {name!r}")
        seen.add(name)
        if not (root / name).is_file():
            problems.append(f"{where}: missing file {root / name}")
        if use_masks and name.endswith("_rgb.png"):
            fg = name[: -len("_rgb.png")] + "_fg.png"
            if (root / fg).is_file():
                masks[name] = fg
        entries.append((name, count))
    if problems:
        raise DatasetValidationError(problems)

    manifest = DatasetManifest(entries, root, masks)
    if not entries:
        logger.warning("dataset %s is empty", csv_path)
        return manifest, []

    def load(entry):
        name, count = entry
        mask = read_mask(root / masks[name]) if name in masks else None
        pixels = preprocess(read_rgb(root / name), target, mask)
        return ImageSample(pixels, count, name, False)

    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        samples = list(pool.map(load, entries))
    return manifest, samples


def ax_filename(index: int) -> str:
    return f"plant{index:03d}_rgb.png"


def write_dataset(images, counts, out_dir, csv_name: str = "Ax.csv", start_index: int = 1) -> DatasetManifest:
    """Write ``[N, 3, H, W]`` images as ``plantXXX_rgb.png`` plus a ``filename,count`` CSV."""
    images = np.asarray(images)
    counts = [int(c) for c in counts]
    if images.ndim != 4 or images.shape[1] != 3:
        raise ValidationError(f"images must be [N, 3, H, W], got {list(images.shape)}")
    if len(counts) != images.shape[0]:
        raise ValidationError(f"{images.shape[0]} images but {len(counts)} counts")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, (img, count) in enumerate(zip(images, counts)):
        name = ax_filename(start_index + i)
        write_rgb(out / name, img)
        entries.append((name, count))
    with open(out / csv_name, "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(entries)
    return DatasetManifest(entries, out)


def write_samples(samples, out_dir, csv_name: str, start_index: int = 1) -> DatasetManifest:
    """Stream an iterable of :class:`ImageSample` to disk in the same layout as :func:`write_dataset`."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, s in enumerate(samples):
        name = ax_filename(start_index + i)
        write_rgb(out / name, s.pixels)
        entries.append((name, int(s.leaf_count)))
    with open(out / csv_name, "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(entries)
    return DatasetManifest(entries, out)


def export_ax(images, counts, out_dir, csv_name: str = "Ax.csv") -> DatasetManifest:
    """Export generated images in the Ax layout (no masks are written)."""
    return write_dataset(images, counts, out_dir, csv_name)


# ---------------------------------------------------------------------------
# procedural rosettes

MAX_SYNTH_LEAVES = 16


def _wrap(a):
    return (a + np.pi) % (2 * np.pi) - np.pi


def synth_rosette(leaf_count: int, size: int, rng: np.random.Generator, supersample: int = 4) -> ImageSample:
    """Render a top-view rosette of ``leaf_count`` separated elliptical leaves.

    Leaves sit at equidistant angles (random global phase) with jittered
    length, width and green tone on a dark background.  Each leaf is confined
    to a wedge narrower than its angular sector and starts away from the
    center, so leaves never touch.
    """
    if not 1 <= leaf_count <= MAX_SYNTH_LEAVES:
        raise RangeError(f"leaf count {leaf_count} outside the valid interval [1, {MAX_SYNTH_LEAVES}]")
    if size < 16:
        raise ValidationError(f"rosette size must be >= 16, got {size}")
    n, S = leaf_count, size * supersample
    axis = (np.arange(S) + 0.5) / S * 2 - 1
    yy, xx = np.meshgrid(axis, axis, indexing="ij")
    radius = np.hypot(xx, yy)
    theta = np.arctan2(yy, xx)

    half_sector = math.pi / n
    wedge = 0.6 * half_sector if n > 1 else math.pi
    phase = rng.uniform(0, 2 * math.pi)
    r_in = 0.2
    u = np.linspace(-0.995, 0.995, 399)

    red = np.full((S, S), -0.80)
    green = np.full((S, S), -0.85)
    blue = np.full((S, S), -0.90)
    for k in range(n):
        length = rng.uniform(0.55, 0.75)
        a = length / 2
        d = r_in + a
        if n > 2:
            b_max = math.sin(wedge) * float(np.min((d + a * u) / np.sqrt(1 - u * u)))
            b = min(0.5 * a, b_max) * rng.uniform(0.85, 1.0)
        else:
            b = a * rng.uniform(0.35, 0.5)
        angle = phase + 2 * math.pi * k / n + rng.uniform(-0.1, 0.1) * half_sector
        c, s = math.cos(angle), math.sin(angle)
        along = xx * c + yy * s - d
        across = -xx * s + yy * c
        rho = (along / a) ** 2 + (across / b) ** 2
        inside = (rho <= 1) & (np.abs(_wrap(theta - angle)) <= wedge)
        tone = rng.uniform(0.25, 0.7)
        shade = 1 - 0.35 * rho[inside]
        green[inside] = -0.2 + (tone + 0.2) * shade
        red[inside] = -0.65 + 0.15 * shade
        blue[inside] = -0.85
    img = np.stack([red, green, blue]).reshape(3, size, supersample, size, supersample).mean(axis=(2, 4))
    img = img + rng.normal(0, 0.015, size=img.shape)
    pixels = np.clip(img, -1.0, 1.0).astype(np.float32)
    return ImageSample(pixels, n, f"synth-{n}", True)


def synth_dataset(n: int, counts: Sequence[int], size: int, rng: np.random.Generator) -> list[ImageSample]:
    """``n`` rosettes with leaf counts drawn uniformly from ``counts``."""
    counts = list(counts)
    out = []
    for i in range(n):
        s = synth_rosette(int(counts[rng.integers(len(counts))]), size, rng)
        s.source_id = f"synth{i:05d}"
        out.append(s)
    return out


def foreground_mask(pixels: np.ndarray, threshold: float = -0.5) -> np.ndarray:
    """Green-channel foreground of a rendered rosette."""
    return pixels[1] > threshold
