"""Paired exposure datasets: loading, splitting, patch sampling, synthesis.

On-disk layout::

    root/gt/NAME.png      clean frame
    root/over/NAME.png    overexposed version of gt/NAME.png (optional)
    root/under/NAME.png   underexposed version of gt/NAME.png (optional)
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

log = logging.getLogger(__name__)

TAGS = ("over", "under")
IMAGE_SUFFIXES = (".png",)


class DatasetError(ValueError):
    pass


# -- image io ---------------------------------------------------------------------


def read_image(path) -> np.ndarray:
    """8-bit RGB file -> float32 H x W x 3 in [0, 1]."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    except (OSError, ValueError) as exc:
        raise DatasetError(f"unreadable image {path}: {exc}") from None
    return arr / 255.0


def write_image(path, img: np.ndarray) -> None:
    arr = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.round(arr * 255.0).astype(np.uint8)).save(path)


def _image_size(path: Path) -> tuple[int, int]:
    try:
        with Image.open(path) as im:
            return im.size[1], im.size[0]
    except (OSError, ValueError) as exc:
        raise DatasetError(f"unreadable image {path}: {exc}") from None


def list_images(folder) -> list[Path]:
    folder = Path(folder)
    if not folder.is_dir():
        return []
    return sorted(p for p in folder.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


# -- dataset -----------------------------------------------------------------------


@dataclass(frozen=True)
class Record:
    corrupted: Path
    gt: Path
    tag: str

    @property
    def name(self) -> str:
        return self.gt.stem

    def load(self) -> tuple[np.ndarray, np.ndarray]:
        return read_image(self.corrupted), read_image(self.gt)


@dataclass
class PairedDataset:
    records: list[Record]
    root: Path | None = None
    rejected: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def counts(self) -> dict[str, int]:
        out = {tag: 0 for tag in TAGS}
        for r in self.records:
            out[r.tag] += 1
        out["gt"] = len(self.frames())
        return out

    def frames(self) -> list[str]:
        """Distinct ground-truth names, in sorted order."""
        return sorted({r.name for r in self.records})

    def subset(self, names: Iterable[str]) -> "PairedDataset":
        keep = set(names)
        return PairedDataset([r for r in self.records if r.name in keep], self.root)

    def with_tags(self, tags: Iterable[str]) -> "PairedDataset":
        keep = set(tags)
        return PairedDataset([r for r in self.records if r.tag in keep], self.root)

    def load_pairs(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [r.load() for r in self.records]


def load_dataset(root) -> PairedDataset:
    """Pair every ``over``/``under`` image with ``gt`` by file name.

    A corrupted image without a ground-truth partner is an error. Pairs whose
    sizes disagree are dropped and listed in ``PairedDataset.rejected``.
    """
    root = Path(root)
    gt_dir = root / "gt"
    if not gt_dir.is_dir():
        raise DatasetError(f"{root} has no gt/ directory")
    gt_files = {p.stem: p for p in list_images(gt_dir)}
    records: list[Record] = []
    rejected: list[str] = []
    for tag in TAGS:
        for path in list_images(root / tag):
            partner = gt_files.get(path.stem)
            if partner is None:
                raise DatasetError(f"{path} has no ground-truth partner gt/{path.stem}.png")
            a, b = _image_size(path), _image_size(partner)
            if a != b:
                rejected.append(f"{path}: size {a[0]}x{a[1]} != gt {b[0]}x{b[1]}")
                continue
            records.append(Record(path, partner, tag))
    for msg in rejected:
        log.warning("rejected pair %s", msg)
    ds = PairedDataset(records, root, rejected)
    c = ds.counts()
    log.info("loaded %s: %d gt frames, %d over, %d under", root, c["gt"], c["over"], c["under"])
    return ds


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.70
    test: float = 0.27
    val: float = 0.03
    seed: int = 0

    def __post_init__(self):
        if min(self.train, self.test, self.val) < 0:
            raise DatasetError("split fractions must be non-negative")
        if abs(self.train + self.test + self.val - 1.0) > 1e-9:
            raise DatasetError(f"split fractions sum to {self.train + self.test + self.val}, not 1")


def split_sizes(n: int, spec: SplitSpec) -> tuple[int, int, int]:
    test = math.floor(spec.test * n + 1e-9)
    val = math.floor(spec.val * n + 1e-9)
    return n - test - val, test, val


def split_dataset(ds: PairedDataset, spec: SplitSpec = SplitSpec()) -> tuple[PairedDataset, PairedDataset, PairedDataset]:
    """Deterministic train/test/val split by ground-truth frame.

    Both corrupted versions of a frame land in the same split. Sizes are the
    floors of each fraction of the frame count; the remainder goes to train.
    """
    frames = ds.frames()
    if not frames:
        raise DatasetError("cannot split an empty dataset")
    order = np.random.default_rng(spec.seed).permutation(len(frames))
    shuffled = [frames[i] for i in order]
    n_train, n_test, _ = split_sizes(len(frames), spec)
    train = shuffled[:n_train]
    test = shuffled[n_train : n_train + n_test]
    val = shuffled[n_train + n_test :]
    return ds.subset(train), ds.subset(test), ds.subset(val)


# -- patches ----------------------------------------------------------------------


def extract_patches(
    corrupted: np.ndarray, gt: np.ndarray, patch_size: int, count: int, seed: int
) -> list[tuple[np.ndarray, np.ndarray]]:
    """``count`` co-located random crops; empty (with a warning) if the image is too small."""
    if corrupted.shape != gt.shape:
        raise DatasetError(f"pair size mismatch: {corrupted.shape} vs {gt.shape}")
    h, w = gt.shape[:2]
    if h < patch_size or w < patch_size:
        log.warning("image %dx%d smaller than patch %d; skipped", h, w, patch_size)
        return []
    rng = np.random.default_rng(seed)
    ys = rng.integers(0, h - patch_size + 1, size=count)
    xs = rng.integers(0, w - patch_size + 1, size=count)
    return [
        (corrupted[y : y + patch_size, x : x + patch_size], gt[y : y + patch_size, x : x + patch_size])
        for y, x in zip(ys, xs)
    ]


# -- synthetic corruption -------------------------------------------------------------

UNDER_GAIN, OVER_GAIN = 0.9, 1.1
GAIN_RAMP = 0.5  # strength at which the full gain is reached


def synth_corrupt(img: np.ndarray, mode: str, strength: float = 0.5, seed: int = 0, jitter: float = 0.0) -> np.ndarray:
    """Gamma + gain exposure corruption.

    under: ``gain * x ** (1 + 3s)``; over: ``min(1, gain * x ** (1 / (1 + 3s)))``.
    The gain moves linearly from 1 at ``s = 0`` to 0.9 (under) / 1.1 (over)
    at ``s = 0.5`` and stays there. ``jitter`` scales ``s`` by a seeded
    factor in ``[1 - jitter, 1 + jitter]``.
    """
    if mode not in TAGS:
        raise DatasetError(f"mode must be one of {TAGS}, got {mode!r}")
    if not 0.0 < strength <= 1.0:
        raise DatasetError(f"strength must lie in (0, 1], got {strength}")
    s = strength
    if jitter:
        s = float(np.clip(s * (1.0 + jitter * np.random.default_rng(seed).uniform(-1.0, 1.0)), 1e-6, 1.0))
    x = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    ramp = min(1.0, s / GAIN_RAMP)
    if mode == "under":
        gain = 1.0 + (UNDER_GAIN - 1.0) * ramp
        out = gain * x ** (1.0 + 3.0 * s)
    else:
        gain = 1.0 + (OVER_GAIN - 1.0) * ramp
        out = np.minimum(1.0, gain * x ** (1.0 / (1.0 + 3.0 * s)))
    return out.astype(np.asarray(img).dtype if np.issubdtype(np.asarray(img).dtype, np.floating) else np.float64)


def make_clean_frame(size: int | tuple[int, int] = 128, seed: int = 0) -> np.ndarray:
    """Procedural stand-in for a well-exposed endoscopic frame.

    Pinkish tissue albedo with low-frequency folds, dark vessel curves, fine
    mucosal texture and a soft central light falloff. Values stay in
    roughly [0.05, 0.95].
    """
    h, w = (size, size) if isinstance(size, int) else size
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)

    folds = gaussian_filter(rng.standard_normal((h, w)), sigma=max(h, w) / 10.0)
    folds /= np.abs(folds).max() + 1e-12
    texture = gaussian_filter(rng.standard_normal((h, w)), sigma=1.2)
    texture /= np.abs(texture).max() + 1e-12

    vessels = np.zeros((h, w))
    for _ in range(rng.integers(3, 7)):
        f, phase, amp = rng.uniform(2, 6), rng.uniform(0, 2 * np.pi), rng.uniform(0.05, 0.2)
        offset, width = rng.uniform(0.1, 0.9), rng.uniform(0.006, 0.02)
        if rng.random() < 0.5:
            d = yy - (offset + amp * np.sin(2 * np.pi * f * xx + phase))
        else:
            d = xx - (offset + amp * np.sin(2 * np.pi * f * yy + phase))
        vessels = np.maximum(vessels, np.exp(-(d**2) / (2 * width**2)))

    cy, cx = rng.uniform(0.35, 0.65, size=2)
    light = 1.0 - 0.45 * ((yy - cy) ** 2 + (xx - cx) ** 2) / 0.5

    albedo = np.array([0.78, 0.45, 0.40]) + rng.uniform(-0.06, 0.06, size=3)
    shade = (0.75 + 0.2 * folds + 0.08 * texture) * light
    img = albedo * shade[..., None]
    img = img * (1.0 - 0.45 * vessels[..., None] * np.array([0.4, 1.0, 0.9]))
    return np.clip(img, 0.05, 0.95).astype(np.float32)


def materialize(
    out_root,
    clean: Iterable[tuple[str, np.ndarray]],
    strength: float = 0.5,
    seed: int = 0,
    jitter: float = 0.0,
    modes: Iterable[str] = TAGS,
) -> PairedDataset:
    """Write ``gt/`` plus one corrupted copy per mode under ``out_root``."""
    out_root = Path(out_root)
    modes = tuple(modes)
    for k, (name, img) in enumerate(clean):
        write_image(out_root / "gt" / f"{name}.png", img)
        for j, mode in enumerate(modes):
            corrupted = synth_corrupt(img, mode, strength, seed=seed * 100003 + 2 * k + j, jitter=jitter)
            write_image(out_root / mode / f"{name}.png", corrupted)
    return load_dataset(out_root)


def generate_corpus(out_root, count: int, size: int = 128, strength: float = 0.5, seed: int = 0, jitter: float = 0.0) -> PairedDataset:
    """Procedural clean frames, corrupted both ways, in the standard layout."""
    frames = ((f"frame{k:04d}", make_clean_frame(size, seed=seed * 7919 + k)) for k in range(count))
    return materialize(out_root, frames, strength=strength, seed=seed, jitter=jitter)
