"""Dataset manifests, augmentation, batching, and the synthetic age corpus.

Images are RGB uint8 numpy arrays (H, W, 3). The synthetic generator stands
in for real face albums: each image encodes its age label through three
redundant monotone statistics (mean luminance, ring count, texture
frequency) plus noise, so a small model has a real signal to learn while
nothing about the task requires faces.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, replace
from typing import Iterator, Optional

import cv2
import numpy as np

from .errors import ContractError, ManifestError
from .tensor import Tensor

SPLITS = ("train", "val", "test", "unassigned")
IMAGE_SIZE = 224
MANIFEST_NAME = "manifest.csv"
AGE_RANGE = (0.0, 80.0)


@dataclass
class SampleRecord:
    path: str
    age: float
    split: str = "unassigned"


@dataclass
class SampleManifest:
    records: list[SampleRecord]
    base_dir: str = "."

    def of_split(self, split: str) -> list[SampleRecord]:
        if split not in SPLITS:
            raise ContractError(f"unknown split {split!r}")
        return [r for r in self.records if r.split == split]

    def resolve(self, record: SampleRecord) -> str:
        return os.path.join(self.base_dir, record.path)


def load_manifest(path: str) -> SampleManifest:
    """Parse a `path,age,split` CSV; malformed rows fail with their line number."""
    if not os.path.isfile(path):
        raise ManifestError(f"manifest file not found: {path}")
    records = []
    seen = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["path", "age", "split"]:
            raise ManifestError(f"manifest {path} must start with header path,age,split")
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 3:
                raise ManifestError(f"manifest row {lineno}: expected 3 fields, got {len(row)}")
            rel, age_text, split = (f.strip() for f in row)
            if not rel:
                raise ManifestError(f"manifest row {lineno}: empty path")
            if rel in seen:
                raise ManifestError(f"manifest row {lineno}: duplicate path {rel!r}")
            try:
                age = float(age_text)
            except ValueError:
                raise ManifestError(f"manifest row {lineno}: age {age_text!r} is not a number") from None
            if not math.isfinite(age) or age < 0:
                raise ManifestError(f"manifest row {lineno}: age must be finite and >= 0, got {age_text}")
            if split not in SPLITS:
                raise ManifestError(f"manifest row {lineno}: split {split!r} not in {SPLITS}")
            seen.add(rel)
            records.append(SampleRecord(rel, age, split))
    return SampleManifest(records, base_dir=os.path.dirname(os.path.abspath(path)))


def save_manifest(manifest: SampleManifest, path: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["path", "age", "split"])
        for r in manifest.records:
            writer.writerow([r.path, f"{r.age:.4f}", r.split])
    os.replace(tmp, path)


def rebase_manifest(manifest: SampleManifest, new_dir: str) -> SampleManifest:
    """Re-anchor record paths so a copy saved under new_dir resolves identically."""
    new_dir = os.path.abspath(new_dir)
    records = []
    for r in manifest.records:
        absolute = os.path.abspath(os.path.join(manifest.base_dir, r.path))
        records.append(replace(r, path=os.path.relpath(absolute, new_dir)))
    return SampleManifest(records, base_dir=new_dir)


def split_dataset(manifest: SampleManifest, ratios: tuple, seed: int) -> SampleManifest:
    """Assign unassigned records to train/val/test by seeded permutation.

    Counts use largest-remainder rounding (ties favor the later split); any
    record that already carries a split keeps it.
    """
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ContractError(f"ratios must be three positives, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ContractError(f"ratios must sum to 1, got {sum(ratios)}")
    if len(manifest.records) < 3:
        raise ContractError(f"need at least 3 records to split, got {len(manifest.records)}")
    idx = [i for i, r in enumerate(manifest.records) if r.split == "unassigned"]
    records = [replace(r) for r in manifest.records]
    if idx:
        n = len(idx)
        quotas = [r * n for r in ratios]
        counts = [int(q) for q in quotas]
        order = sorted(range(3), key=lambda i: (quotas[i] - counts[i], i), reverse=True)
        for i in order[: n - sum(counts)]:
            counts[i] += 1
        perm = np.random.default_rng(np.random.PCG64(seed)).permutation(n)
        shuffled = [idx[p] for p in perm]
        start = 0
        for split, count in zip(("train", "val", "test"), counts):
            for i in shuffled[start : start + count]:
                records[i].split = split
            start += count
    return SampleManifest(records, base_dir=manifest.base_dir)


@dataclass
class AugmentationSpec:
    """Ordered training-time pipeline; evaluation applies only the resize."""

    size: int = IMAGE_SIZE
    crop_scale: tuple = (0.8, 1.0)
    flip_p: float = 0.5
    jitter_brightness: float = 0.2
    jitter_contrast: float = 0.2
    rotation_degrees: float = 10.0
    blur_p: float = 0.2
    blur_sigma: tuple = (0.1, 1.0)
    erase_p: float = 0.25
    erase_area: tuple = (0.02, 0.10)
    erase_fill: tuple = (127.5, 127.5, 127.5)

    def validate(self) -> None:
        for name, p in (("flip_p", self.flip_p), ("blur_p", self.blur_p), ("erase_p", self.erase_p)):
            if not 0.0 <= p <= 1.0:
                raise ContractError(f"{name} must lie in [0, 1], got {p}")
        lo, hi = self.crop_scale
        if not (0.0 < lo <= hi <= 1.0):
            raise ContractError(f"crop_scale must satisfy 0 < lo <= hi <= 1, got {self.crop_scale}")
        lo, hi = self.erase_area
        if not (0.0 < lo <= hi < 1.0):
            raise ContractError(f"erase_area must lie inside (0, 1), got {self.erase_area}")

    @classmethod
    def disabled(cls, size: int = IMAGE_SIZE) -> "AugmentationSpec":
        """A pipeline whose every stage is an exact no-op after the resize."""
        return cls(
            size=size,
            crop_scale=(1.0, 1.0),
            flip_p=0.0,
            jitter_brightness=0.0,
            jitter_contrast=0.0,
            rotation_degrees=0.0,
            blur_p=0.0,
            erase_p=0.0,
        )


def _check_image(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3 or image.shape[0] == 0 or image.shape[1] == 0:
        raise ContractError(f"expected an HxWx3 image, got shape {image.shape}")
    return image.astype(np.uint8, copy=False)


def resize_image(image: np.ndarray, size: int) -> np.ndarray:
    image = _check_image(image)
    if image.shape[0] == size and image.shape[1] == size:
        return image.copy()
    return cv2.resize(image, (size, size), interpolation=cv2.INTER_LINEAR)


def _hflip(image: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(image[:, ::-1])


def _rotate(image: np.ndarray, degrees: float) -> np.ndarray:
    if degrees == 0.0:
        return image
    h, w = image.shape[:2]
    mat = cv2.getRotationMatrix2D((w / 2.0 - 0.5, h / 2.0 - 0.5), degrees, 1.0)
    return cv2.warpAffine(image, mat, (w, h), flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_REFLECT_101)


def _blur3(image: np.ndarray, sigma: float) -> np.ndarray:
    return cv2.GaussianBlur(image, (3, 3), sigmaX=sigma, sigmaY=sigma, borderType=cv2.BORDER_REFLECT_101)


def augment(image: np.ndarray, spec: AugmentationSpec, rng: np.random.Generator) -> np.ndarray:
    """Training-time pipeline; always returns a size x size x 3 uint8 image."""
    spec.validate()
    img = resize_image(image, spec.size)
    size = spec.size

    # random resized square crop
    lo, hi = spec.crop_scale
    scale = rng.uniform(lo, hi) if hi > lo else lo
    if scale < 1.0:
        side = max(1, int(round(size * math.sqrt(scale))))
        top = int(rng.integers(0, size - side + 1))
        left = int(rng.integers(0, size - side + 1))
        img = resize_image(img[top : top + side, left : left + side], size)

    if spec.flip_p > 0 and rng.uniform() < spec.flip_p:
        img = _hflip(img)

    if spec.jitter_brightness > 0 or spec.jitter_contrast > 0:
        fb = 1.0 + rng.uniform(-spec.jitter_brightness, spec.jitter_brightness)
        fc = 1.0 + rng.uniform(-spec.jitter_contrast, spec.jitter_contrast)
        out = img.astype(np.float32) * fb
        m = out.mean()
        out = (out - m) * fc + m
        img = np.clip(np.rint(out), 0, 255).astype(np.uint8)

    if spec.rotation_degrees > 0:
        img = _rotate(img, float(rng.uniform(-spec.rotation_degrees, spec.rotation_degrees)))

    if spec.blur_p > 0 and rng.uniform() < spec.blur_p:
        img = _blur3(img, float(rng.uniform(*spec.blur_sigma)))

    if spec.erase_p > 0 and rng.uniform() < spec.erase_p:
        frac = rng.uniform(*spec.erase_area)
        side = max(1, int(math.floor(math.sqrt(frac) * size)))
        top = int(rng.integers(0, size - side + 1))
        left = int(rng.integers(0, size - side + 1))
        fill = np.array(spec.erase_fill, dtype=np.float32)
        img = img.copy()
        img[top : top + side, left : left + side] = np.clip(np.rint(fill), 0, 255).astype(np.uint8)

    return img


def write_image(path: str, image: np.ndarray) -> None:
    ok = cv2.imwrite(path, cv2.cvtColor(_check_image(image), cv2.COLOR_RGB2BGR))
    if not ok:
        raise OSError(f"could not write image {path}")


def read_image(path: str) -> np.ndarray:
    bgr = cv2.imread(path, cv2.IMREAD_COLOR)
    if bgr is None:
        raise OSError(f"could not read image {path}")
    return cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB)


_IMAGE_CACHE: dict[str, np.ndarray] = {}
_IMAGE_CACHE_SLOTS = 4096


def read_image_cached(path: str) -> np.ndarray:
    """read_image with a bounded cache; epochs re-read the same small corpus."""
    cached = _IMAGE_CACHE.get(path)
    if cached is None:
        cached = read_image(path)
        if len(_IMAGE_CACHE) < _IMAGE_CACHE_SLOTS:
            _IMAGE_CACHE[path] = cached
    return cached


def _synthetic_image(age: float, rng: np.random.Generator, style: str) -> np.ndarray:
    """Render one sample whose pixel statistics are monotone in age."""
    size = IMAGE_SIZE
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32)
    base = 40.0 + 2.0 * age + float(rng.normal(0.0, 2.0))

    freq = 2.0 + age * 0.35
    phase = float(rng.uniform(0.0, 2.0 * math.pi))
    axis = xx if style == "standard" else yy
    grating = 12.0 * np.sin(2.0 * math.pi * freq * axis / size + phase)

    cx = size / 2.0 + float(rng.uniform(-10.0, 10.0))
    cy = size / 2.0 + float(rng.uniform(-10.0, 10.0))
    dist = np.sqrt((xx - cx) ** 2 + (yy - cy) ** 2)
    rings = np.zeros_like(dist)
    count = 1 + int(age // 8)
    polarity = -25.0 if style == "standard" else 25.0
    for j in range(count):
        radius = (j + 1) * (90.0 / (count + 1))
        rings[np.abs(dist - radius) < 1.5] = polarity

    gray = base + grating + rings
    tint = (1.0, 0.97, 0.94) if style == "standard" else (0.94, 0.97, 1.0)
    channels = [gray * t for t in tint]
    img = np.stack(channels, axis=-1) + rng.normal(0.0, 2.0, size=(size, size, 3))
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def gen_synthetic(n: int, seed: int, out_dir: str, style: str = "standard") -> SampleManifest:
    """Write n synthetic PNGs plus manifest.csv; byte-deterministic per seed."""
    if n < 8:
        raise ContractError(f"gen_synthetic needs n >= 8, got {n}")
    if style not in ("standard", "alt"):
        raise ContractError(f"style must be standard or alt, got {style!r}")
    os.makedirs(out_dir, exist_ok=True)
    if not os.path.isdir(out_dir) or not os.access(out_dir, os.W_OK):
        raise OSError(f"output directory {out_dir} is not writable")
    rng = np.random.default_rng(np.random.PCG64(seed))
    records = []
    for i in range(n):
        age = float(rng.uniform(*AGE_RANGE))
        name = f"sample_{i:05d}.png"
        write_image(os.path.join(out_dir, name), _synthetic_image(age, rng, style))
        records.append(SampleRecord(name, round(age, 4)))
    manifest = SampleManifest(records, base_dir=out_dir)
    save_manifest(manifest, os.path.join(out_dir, MANIFEST_NAME))
    return manifest


def dataset_channel_mean(manifest: SampleManifest, split: str) -> tuple:
    """Per-channel uint8 mean over a split (used as the erase fill value)."""
    records = manifest.of_split(split)
    if not records:
        raise ContractError(f"split {split!r} is empty")
    total = np.zeros(3, dtype=np.float64)
    for r in records:
        total += read_image(manifest.resolve(r)).reshape(-1, 3).mean(axis=0)
    return tuple(float(v) for v in total / len(records))


def to_input_array(image: np.ndarray, mean: float = 0.5, std: float = 0.5) -> np.ndarray:
    """uint8 HWC -> normalized float32 CHW in ((x/255) - mean) / std."""
    arr = image.astype(np.float32) / np.float32(255.0)
    arr = (arr - np.float32(mean)) / np.float32(std)
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def batch_iter(
    manifest: SampleManifest,
    split: str,
    batch_size: int,
    shuffle_seed: int,
    epoch: int = 0,
    aug: Optional[AugmentationSpec] = None,
    train_mode: bool = False,
    mean: float = 0.5,
    std: float = 0.5,
    size: int = IMAGE_SIZE,
) -> Iterator[tuple[Tensor, Tensor]]:
    """Yield (images [B,3,S,S], ages [B]) batches for one epoch.

    Order is a permutation seeded by (shuffle_seed, epoch) in train mode and
    manifest order otherwise; the final partial batch is emitted. Per-sample
    augmentation draws are seeded independently of batch size.
    """
    if batch_size < 1:
        raise ContractError(f"batch_size must be >= 1, got {batch_size}")
    records = manifest.of_split(split)
    if not records:
        raise ContractError(f"split {split!r} is empty")
    order = np.arange(len(records))
    if train_mode:
        order = np.random.default_rng(np.random.PCG64([shuffle_seed, epoch])).permutation(len(records))
    spec = aug if aug is not None else AugmentationSpec(size=size)
    out_size = spec.size if train_mode else size
    for start in range(0, len(records), batch_size):
        chunk = order[start : start + batch_size]
        images = np.empty((len(chunk), 3, out_size, out_size), dtype=np.float32)
        ages = np.empty(len(chunk), dtype=np.float32)
        for row, rec_idx in enumerate(chunk):
            rec = records[int(rec_idx)]
            full_path = manifest.resolve(rec)
            try:
                img = read_image_cached(full_path)
            except OSError:
                raise OSError(f"could not read image {full_path} referenced by manifest") from None
            if train_mode:
                sample_rng = np.random.default_rng(np.random.PCG64([shuffle_seed, epoch, int(rec_idx)]))
                img = augment(img, spec, sample_rng)
            else:
                img = resize_image(img, out_size)
            images[row] = to_input_array(img, mean, std)
            ages[row] = rec.age
        yield Tensor(images), Tensor(ages)
