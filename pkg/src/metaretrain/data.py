"""Dataset loading and data-scarcity splitting.

Handles the stock binary distributions:

MNIST IDX image file (big-endian):
    [offset] [type]          [value]          [description]
    0000     32 bit integer  0x00000803       magic number
    0004     32 bit integer  60000            number of images
    0008     32 bit integer  28               rows
    0012     32 bit integer  28               columns
    0016...  unsigned bytes  pixels, row-major per image

MNIST IDX label file: magic 0x00000801, count, then one byte per label.

CIFAR-10 batch: records of 3073 bytes (1 label byte + 3072 channel-major
pixels). CIFAR-100: 3074 bytes (coarse byte, fine byte, 3072 pixels); the
fine label is used.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParseError, ValidationError

MNIST_IMAGE_MAGIC = 0x00000803
MNIST_LABEL_MAGIC = 0x00000801


@dataclass(frozen=True)
class ImageSample:
    """One image with its class label and a stable source id."""

    pixels: np.ndarray  # uint8 [C,H,W]
    label: int
    source_id: int

    def __post_init__(self):
        if self.pixels.dtype != np.uint8 or self.pixels.ndim != 3:
            raise ValidationError("pixels must be a uint8 [C,H,W] array")


@dataclass(frozen=True)
class DatasetSplit:
    """Labeled / unlabeled / test partition of a subsampled dataset.

    Unlabeled samples retain their ground-truth label on the sample object for
    evaluation-only diagnostics; training code must consume unlabeled data
    through `unlabeled_pixels()` (or the batch stream), which never exposes
    labels.
    """

    labeled: tuple
    unlabeled: tuple
    test: tuple
    seed: int
    provenance: dict = field(default_factory=dict)

    def unlabeled_pixels(self) -> np.ndarray:
        if not self.unlabeled:
            return np.zeros((0, 0, 0, 0), dtype=np.uint8)
        return np.stack([s.pixels for s in self.unlabeled])

    def sizes(self) -> tuple:
        return (len(self.labeled), len(self.unlabeled), len(self.test))


def to_model_input(pixels: np.ndarray) -> np.ndarray:
    """uint8 pixels -> float32 in [0,1]; accepts [C,H,W] or [N,C,H,W]."""
    return np.asarray(pixels, dtype=np.float32) / 255.0


def _read_be_u32(data: bytes, offset: int, path, what: str) -> int:
    if len(data) < offset + 4:
        raise ParseError(f"{path}: truncated {what} at offset {offset}")
    return struct.unpack_from(">I", data, offset)[0]


def load_mnist(images_path, labels_path) -> list:
    """Parse an IDX image/label file pair into ImageSamples."""
    images_path, labels_path = Path(images_path), Path(labels_path)
    img_data = images_path.read_bytes()
    lbl_data = labels_path.read_bytes()

    magic = _read_be_u32(img_data, 0, images_path, "magic")
    if magic != MNIST_IMAGE_MAGIC:
        raise ParseError(f"{images_path}: bad image magic 0x{magic:08x} at offset 0")
    count = _read_be_u32(img_data, 4, images_path, "count")
    rows = _read_be_u32(img_data, 8, images_path, "rows")
    cols = _read_be_u32(img_data, 12, images_path, "cols")
    expected = 16 + count * rows * cols
    if len(img_data) != expected:
        raise ParseError(
            f"{images_path}: expected {expected} bytes for {count} images, "
            f"found {len(img_data)} (pixel data starts at offset 16)"
        )

    lmagic = _read_be_u32(lbl_data, 0, labels_path, "magic")
    if lmagic != MNIST_LABEL_MAGIC:
        raise ParseError(f"{labels_path}: bad label magic 0x{lmagic:08x} at offset 0")
    lcount = _read_be_u32(lbl_data, 4, labels_path, "count")
    if lcount != count:
        raise ParseError(f"{labels_path}: label count {lcount} != image count {count}")
    if len(lbl_data) != 8 + lcount:
        raise ParseError(f"{labels_path}: expected {8 + lcount} bytes, found {len(lbl_data)} (labels start at offset 8)")

    pixels = np.frombuffer(img_data, dtype=np.uint8, offset=16).reshape(count, 1, rows, cols)
    labels = np.frombuffer(lbl_data, dtype=np.uint8, offset=8)
    return [ImageSample(pixels[i].copy(), int(labels[i]), i) for i in range(count)]


def load_cifar(batch_files, variant: int = 10) -> list:
    """Parse CIFAR-10/100 binary batches; source ids run across files in order."""
    if variant not in (10, 100):
        raise ValidationError("variant must be 10 or 100")
    record = 3073 if variant == 10 else 3074
    label_offset = 0 if variant == 10 else 1  # CIFAR-100: fine label is byte 1
    samples = []
    next_id = 0
    for file in batch_files:
        file = Path(file)
        data = file.read_bytes()
        if len(data) == 0 or len(data) % record:
            raise ParseError(
                f"{file}: length {len(data)} is not a positive multiple of record size {record}"
            )
        n = len(data) // record
        arr = np.frombuffer(data, dtype=np.uint8).reshape(n, record)
        labels = arr[:, label_offset]
        pixels = arr[:, record - 3072 :].reshape(n, 3, 32, 32)
        for i in range(n):
            samples.append(ImageSample(pixels[i].copy(), int(labels[i]), next_id))
            next_id += 1
    return samples


def largest_remainder(total: int, weights) -> list:
    """Apportion `total` into integer parts proportional to `weights`."""
    weights = np.asarray(weights, dtype=np.float64)
    quotas = weights / weights.sum() * total
    base = np.floor(quotas).astype(int)
    short = total - int(base.sum())
    # distribute leftovers to the largest fractional parts, ties by index
    order = sorted(range(len(weights)), key=lambda i: (-(quotas[i] - base[i]), i))
    for i in order[:short]:
        base[i] += 1
    return base.tolist()


def subsample_and_split(samples, fraction, ratios, seed, stratified: bool = True) -> DatasetSplit:
    """Take round(fraction*N) samples and split by largest-remainder ratios.

    `ratios` is (labeled, unlabeled, test). Stratified mode apportions the
    subset per class so realized per-class counts differ from proportional by
    at most one.
    """
    if not 0 < fraction <= 1:
        raise ValidationError("fraction must be in (0, 1]")
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or min(ratios) < 0:
        raise ValidationError("ratios must be three non-negative numbers")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValidationError(f"ratios must sum to 1 within 1e-9, got {sum(ratios)}")

    n_total = len(samples)
    n_sub = round(fraction * n_total)
    if n_sub < 1:
        raise ValidationError(f"fraction {fraction} of {n_total} samples is empty")
    sizes = largest_remainder(n_sub, ratios) if sum(ratios) else [0, 0, 0]
    for name, size, ratio in zip(("labeled", "unlabeled", "test"), sizes, ratios):
        if ratio > 0 and size < 1:
            raise ValidationError(f"subset of {n_sub} gives no samples for the {name} split")

    rng = np.random.default_rng(seed)
    if stratified:
        by_class: dict[int, list] = {}
        for idx, s in enumerate(samples):
            by_class.setdefault(s.label, []).append(idx)
        class_order = sorted(by_class)
        per_class = largest_remainder(n_sub, [len(by_class[c]) for c in class_order])
        chosen = []
        for c, take in zip(class_order, per_class):
            pool = np.array(by_class[c])
            chosen.extend(pool[rng.choice(len(pool), size=take, replace=False)])
        chosen = np.array(sorted(chosen))
        chosen = chosen[rng.permutation(len(chosen))]
    else:
        chosen = rng.choice(n_total, size=n_sub, replace=False)

    picked = [samples[i] for i in chosen]
    n_lab, n_unl, n_test = sizes
    return DatasetSplit(
        labeled=tuple(picked[:n_lab]),
        unlabeled=tuple(picked[n_lab : n_lab + n_unl]),
        test=tuple(picked[n_lab + n_unl :]),
        seed=seed,
        provenance={"fraction": fraction, "ratios": ratios, "stratified": stratified, "total": n_total},
    )
