"""CSV manifests for quality datasets and saliency ground truth."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

from .errors import InvalidInputError


@dataclass
class DatasetManifest:
    """Image/score pairs; paths are absolute after reading."""

    entries: list[tuple[str, float]]
    score_range: tuple[float, float]

    def __len__(self) -> int:
        return len(self.entries)


def read_quality_manifest(path: str | Path) -> DatasetManifest:
    """Read a ``image_path,mos`` CSV; relative paths resolve against the CSV."""
    path = Path(path)
    base = path.parent
    entries: list[tuple[str, float]] = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "image_path" not in reader.fieldnames or "mos" not in reader.fieldnames:
            raise InvalidInputError(f"{path} must have columns image_path,mos")
        for row in reader:
            p = Path(row["image_path"])
            if not p.is_absolute():
                p = base / p
            entries.append((str(p), float(row["mos"])))
    if not entries:
        raise InvalidInputError(f"{path} contains no entries")
    scores = [s for _, s in entries]
    return DatasetManifest(entries=entries, score_range=(min(scores), max(scores)))


def write_quality_manifest(path: str | Path, entries: list[tuple[str, float]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_path", "mos"])
        for img, mos in entries:
            writer.writerow([img, f"{mos:.6f}"])


def read_saliency_manifest(path: str | Path) -> list[tuple[str, str]]:
    """Read a ``image_path,map_path`` CSV; relative paths resolve against the CSV."""
    path = Path(path)
    base = path.parent
    pairs: list[tuple[str, str]] = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "image_path" not in reader.fieldnames or "map_path" not in reader.fieldnames:
            raise InvalidInputError(f"{path} must have columns image_path,map_path")
        for row in reader:
            img = Path(row["image_path"])
            m = Path(row["map_path"])
            pairs.append(
                (str(img if img.is_absolute() else base / img),
                 str(m if m.is_absolute() else base / m))
            )
    if not pairs:
        raise InvalidInputError(f"{path} contains no entries")
    return pairs


def write_saliency_manifest(path: str | Path, pairs: list[tuple[str, str]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_path", "map_path"])
        for img, m in pairs:
            writer.writerow([img, m])
