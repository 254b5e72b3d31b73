"""Seeded synthetic image-classification corpora for desk-scale experiments.

Each class has a smooth RGB prototype that is symmetric under flips and
quarter turns, so the geometric ops of RandAugment-lite preserve the label.
Samples add a faded distractor prototype from another class, a global
brightness offset and per-pixel noise.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .image import ImageU8, write_image


def _blur(x: np.ndarray, passes: int = 2) -> np.ndarray:
    for _ in range(passes):
        for axis in (0, 1):
            x = (np.roll(x, 1, axis) + x + np.roll(x, -1, axis)) / 3.0
    return x


def _symmetrise(x: np.ndarray) -> np.ndarray:
    views = []
    for flip in (False, True):
        y = x[:, ::-1] if flip else x
        views += [np.rot90(y, k, axes=(0, 1)) for k in range(4)]
    return np.mean(views, axis=0)


def make_prototypes(num_classes: int, size: int, rng: np.random.Generator) -> np.ndarray:
    protos = []
    for _ in range(num_classes):
        p = _symmetrise(_blur(rng.standard_normal((size, size, 3))))
        p = (p - p.mean()) / p.std()
        protos.append(128.0 + 45.0 * p)
    return np.stack(protos)


def make_synthetic(num_classes: int = 10, per_class: int = 50, size: int = 16,
                   seed: int = 0, noise: float = 30.0, distractor: float = 0.5,
                   prototype_seed: int = 0):
    """Return ``(images, labels)``; ``prototype_seed`` fixes the class look, ``seed`` the draws."""
    if num_classes < 2 or per_class < 1 or size < 1:
        raise ValueError("need num_classes >= 2, per_class >= 1 and size >= 1")
    protos = make_prototypes(num_classes, size, np.random.default_rng(prototype_seed))
    rng = np.random.default_rng([prototype_seed, seed])
    images, labels = [], []
    for c in range(num_classes):
        for _ in range(per_class):
            other = (c + 1 + int(rng.integers(num_classes - 1))) % num_classes
            mix = distractor * rng.random()
            x = (1.0 - mix) * protos[c] + mix * protos[other]
            x = x + rng.uniform(-25.0, 25.0) + noise * rng.standard_normal(x.shape)
            images.append(ImageU8.from_array(np.clip(np.rint(x), 0, 255).astype(np.uint8)))
            labels.append(c)
    return images, np.asarray(labels, dtype=np.int64)


def write_dataset(root: str | os.PathLike, images, labels, class_names=None) -> None:
    """Write a class-per-directory corpus of PPM/PGM files."""
    root = Path(root)
    labels = np.asarray(labels)
    if class_names is None:
        width = len(str(int(labels.max())))
        class_names = [f"class{c:0{width}d}" for c in range(int(labels.max()) + 1)]
    counters = {}
    for img, lab in zip(images, labels):
        name = class_names[int(lab)]
        (root / name).mkdir(parents=True, exist_ok=True)
        k = counters.get(name, 0)
        counters[name] = k + 1
        ext = "ppm" if img.channels == 3 else "pgm"
        write_image(root / name / f"img{k:04d}.{ext}", img)
