"""On-disk layouts: class-per-directory datasets and prediction CSVs."""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .ensemble import FusedLabel
from .image import ImageU8, read_image
from .trainer import PredictionRecord

IMAGE_SUFFIXES = (".ppm", ".pgm")


@dataclass
class Dataset:
    """Images with ids ``"<class>/<file>"`` (or bare file names when unlabelled)."""

    item_ids: list[str]
    images: list[ImageU8]
    labels: Optional[np.ndarray]
    classes: list[str]


def _image_files(directory: Path) -> list[Path]:
    return sorted(p for p in directory.iterdir()
                  if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)


def load_dataset(root: str | os.PathLike) -> Dataset:
    """Load ``root/<class>/*.ppm|pgm``; class index is the sorted rank of the name.

    A directory holding image files directly is loaded as an unlabelled set.
    """
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {root}")
    classes = sorted(p.name for p in root.iterdir() if p.is_dir())
    ids, images, labels = [], [], []
    for index, name in enumerate(classes):
        for path in _image_files(root / name):
            ids.append(f"{name}/{path.name}")
            images.append(read_image(path))
            labels.append(index)
    if classes:
        return Dataset(ids, images, np.asarray(labels, dtype=np.int64), classes)
    for path in _image_files(root):
        ids.append(path.name)
        images.append(read_image(path))
    return Dataset(ids, images, None, [])


def format_prob(p: float) -> str:
    # 17 significant digits: parses back to the identical float64
    return f"{p:.16e}"


def write_predictions(path, records: Sequence[PredictionRecord]) -> None:
    """``item_id,prob_0,...,prob_{C-1}``, rows sorted by item id."""
    records = sorted(records, key=lambda r: r.item_id)
    num_classes = len(records[0].probs) if records else 0
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["item_id"] + [f"prob_{c}" for c in range(num_classes)])
    for rec in records:
        writer.writerow([rec.item_id] + [format_prob(p) for p in rec.probs])
    Path(path).write_text(buf.getvalue())


def read_predictions(path) -> list[PredictionRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:1] != ["item_id"]:
        raise ValueError(f"{path}: missing item_id header")
    width = len(rows[0])
    if rows[0][1:] != [f"prob_{c}" for c in range(width - 1)]:
        raise ValueError(f"{path}: malformed probability header")
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != width:
            raise ValueError(f"{path}:{lineno}: expected {width} fields, got {len(row)}")
        out.append(PredictionRecord.from_probs(row[0], [float(v) for v in row[1:]]))
    return out


def write_fused(path, fused: Sequence[FusedLabel]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["item_id", "predicted_class", "source"])
    for row in fused:
        writer.writerow([row.item_id, row.predicted_class, row.source])
    Path(path).write_text(buf.getvalue())


def read_fused(path) -> list[FusedLabel]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if rows[0] != ["item_id", "predicted_class", "source"]:
        raise ValueError(f"{path}: malformed ensemble header")
    return [FusedLabel(r[0], int(r[1]), r[2]) for r in rows[1:]]
