"""Metamorphic relations: image transformations paired with label mappings.

A relation is a pure pair (transform g, label_map h). Transforms take and
return uint8 [C,H,W] arrays, preserve shape, and clamp to [0,255]. Stochastic
transforms (noise) derive their randomness from an explicit key so every
application is reproducible; deterministic transforms ignore the key.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import ndimage

from .data import ImageSample
from .errors import ValidationError

LABEL_PRESERVING = "label_preserving"
NON_LABEL_PRESERVING = "non_label_preserving"


def identity_label_map(label: int) -> int:
    return label


def mnist_rot180_labelmap(label: int) -> int:
    """Digit identity after 180-degree rotation: 2<->5, 6<->9, rest fixed.

    The swap is an involution so that rotating twice maps every label back to
    itself.
    """
    if not 0 <= label <= 9:
        raise ValidationError(f"digit label out of range: {label}")
    return {2: 5, 5: 2, 6: 9, 9: 6}.get(label, label)


@dataclass(frozen=True, eq=False)
class MetamorphicRelation:
    """Input transformation g paired with label mapping h."""

    id: str
    transform: Callable  # (uint8 [C,H,W], key tuple) -> uint8 [C,H,W]
    label_map: Callable = identity_label_map
    kind: str = LABEL_PRESERVING
    strength: str = "strong"

    def __eq__(self, other):
        return isinstance(other, MetamorphicRelation) and other.id == self.id

    def __hash__(self):
        return hash(self.id)


@dataclass(frozen=True, eq=False)
class CompositeMR:
    """Ordered composition of relations, applied left to right."""

    components: tuple

    def __post_init__(self):
        if not self.components:
            raise ValidationError("composite needs at least one component")

    @property
    def id(self) -> str:
        return "+".join(c.id for c in self.components)

    @property
    def kind(self) -> str:
        return (
            LABEL_PRESERVING
            if all(c.kind == LABEL_PRESERVING for c in self.components)
            else NON_LABEL_PRESERVING
        )

    @property
    def strength(self) -> str:
        return "strong"

    def transform(self, image: np.ndarray, key: tuple = ()) -> np.ndarray:
        for i, component in enumerate(self.components):
            image = component.transform(image, tuple(key) + (i,))
        return image

    def label_map(self, label: int) -> int:
        for component in self.components:
            label = component.label_map(label)
        return label

    def __eq__(self, other):
        return isinstance(other, (CompositeMR, MetamorphicRelation)) and other.id == self.id

    def __hash__(self):
        return hash(self.id)


def compose(mrs) -> CompositeMR:
    mrs = tuple(mrs)
    if not mrs:
        raise ValidationError("compose() requires a non-empty relation list")
    flat = []
    for mr in mrs:
        if isinstance(mr, CompositeMR):
            flat.extend(mr.components)
        else:
            flat.append(mr)
    return CompositeMR(components=tuple(flat))


def apply(mr, sample: ImageSample, seed: int = 0):
    """Transform a sample; returns (image', expected_label')."""
    image = mr.transform(sample.pixels, (seed, sample.source_id))
    return image, mr.label_map(sample.label)


def label_map_array(mr, n_classes: int) -> np.ndarray:
    """h as a lookup table: out[c] = h(c)."""
    return np.array([mr.label_map(c) for c in range(n_classes)], dtype=np.int64)


# -- transform implementations -------------------------------------------------


def _clamp(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def _rot_right_angle(k: int):
    def transform(image, key=()):
        if image.shape[1] != image.shape[2]:
            raise ValidationError("right-angle rotation requires square images")
        return np.ascontiguousarray(np.rot90(image, k, axes=(1, 2)))

    return transform


def _rot_interpolated(degrees: float):
    def transform(image, key=()):
        rotated = ndimage.rotate(
            image.astype(np.float32), degrees, axes=(2, 1), reshape=False, order=1, cval=0.0
        )
        return _clamp(rotated)

    return transform


def _hflip(image, key=()):
    return np.ascontiguousarray(image[:, :, ::-1])


def _brightness(delta: float):
    def transform(image, key=()):
        return _clamp(image.astype(np.float32) + delta * 255.0)

    return transform


def _contrast(factor: float):
    def transform(image, key=()):
        return _clamp((image.astype(np.float32) - 127.5) * factor + 127.5)

    return transform


def _gaussian_noise(sigma: float):
    def transform(image, key=()):
        rng = np.random.default_rng(tuple(int(k) for k in key) if key else 0)
        noisy = image.astype(np.float32) + rng.normal(0.0, sigma, size=image.shape)
        return _clamp(noisy)

    return transform


def _translate(dy: int, dx: int):
    def transform(image, key=()):
        out = np.zeros_like(image)
        h, w = image.shape[1:]
        ys = slice(max(dy, 0), h + min(dy, 0))
        xs = slice(max(dx, 0), w + min(dx, 0))
        ys_src = slice(max(-dy, 0), h + min(-dy, 0))
        xs_src = slice(max(-dx, 0), w + min(-dx, 0))
        out[:, ys, xs] = image[:, ys_src, xs_src]
        return out

    return transform


IDENTITY = MetamorphicRelation(
    id="identity", transform=lambda image, key=(): image, strength="weak"
)


def catalog_default(dataset_kind: str) -> list:
    """Stock relation catalog for a dataset family.

    For MNIST the 180-degree rotation carries the digit label map and the
    horizontal flip is omitted (mirrored digits are not valid digits). CIFAR
    object classes are treated as rotation- and flip-invariant.
    """
    dataset_kind = dataset_kind.lower()
    if dataset_kind not in ("mnist", "cifar10", "cifar100"):
        raise ValidationError(f"unknown dataset kind {dataset_kind!r}")

    rot180_map = mnist_rot180_labelmap if dataset_kind == "mnist" else identity_label_map
    rot180_kind = NON_LABEL_PRESERVING if dataset_kind == "mnist" else LABEL_PRESERVING
    catalog = [
        MetamorphicRelation("rot15", _rot_interpolated(15.0), strength="weak"),
        MetamorphicRelation("translate_p3", _translate(3, 3), strength="weak"),
        MetamorphicRelation("translate_m3", _translate(-3, -3), strength="weak"),
        MetamorphicRelation("rot90", _rot_right_angle(1)),
        MetamorphicRelation("rot180", _rot_right_angle(2), label_map=rot180_map, kind=rot180_kind),
        MetamorphicRelation("brightness_up", _brightness(0.25)),
        MetamorphicRelation("brightness_down", _brightness(-0.25)),
        MetamorphicRelation("contrast_up", _contrast(1.25)),
        MetamorphicRelation("contrast_down", _contrast(0.75)),
        MetamorphicRelation("noise8", _gaussian_noise(8.0)),
    ]
    if dataset_kind != "mnist":
        catalog.insert(3, MetamorphicRelation("hflip", _hflip))
    return catalog


def catalog_by_id(dataset_kind: str) -> dict:
    return {mr.id: mr for mr in catalog_default(dataset_kind)}
