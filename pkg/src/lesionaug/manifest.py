"""Ground-truth ingestion and per-class statistics.

The ground truth arrives as a one-hot CSV with the fixed header
``image,MEL,NV,BCC,AKIEC,BKL,DF,VASC``. Downstream stages consume the
canonical manifest CSV ``image_id,path,label`` instead.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from typing import Iterable, Mapping, Sequence


class DataError(ValueError):
    """Malformed or inconsistent input data."""


class ClassLabel(IntEnum):
    MEL = 0
    NV = 1
    BCC = 2
    AKIEC = 3
    BKL = 4
    DF = 5
    VASC = 6

    @property
    def code(self) -> str:
        return self.name

    @property
    def index(self) -> int:
        return int(self.value)

    @classmethod
    def from_code(cls, code: str) -> "ClassLabel":
        try:
            return cls[code.strip().upper()]
        except KeyError:
            raise DataError(f"unknown class code {code!r}") from None


CLASSES: tuple[ClassLabel, ...] = tuple(ClassLabel)
NUM_CLASSES = len(CLASSES)
GT_HEADER: tuple[str, ...] = ("image",) + tuple(c.code for c in CLASSES)
MANIFEST_HEADER = ("image_id", "path", "label")

# Column order of the published class-count table (alphabetical by code).
TABLE_ORDER: tuple[ClassLabel, ...] = tuple(sorted(CLASSES, key=lambda c: c.code))

IMAGE_EXTENSIONS = ("jpg", "jpeg", "png")

_ONE = {"1", "1.0"}
_ZERO = {"0", "0.0"}


@dataclass(frozen=True)
class ManifestEntry:
    image_id: str
    path: str
    label: ClassLabel


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple[ManifestEntry, ...]

    def __post_init__(self) -> None:
        ids = [e.image_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate image_id in manifest")
        if ids != sorted(ids):
            object.__setattr__(
                self, "entries", tuple(sorted(self.entries, key=lambda e: e.image_id))
            )

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def labels(self) -> dict[str, ClassLabel]:
        return {e.image_id: e.label for e in self.entries}


@dataclass(frozen=True)
class ClassCounts:
    count_per_class: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.count_per_class) != NUM_CLASSES:
            raise ValueError(f"expected {NUM_CLASSES} counts, got {len(self.count_per_class)}")
        if any(c < 0 for c in self.count_per_class):
            raise ValueError("class counts must be non-negative")

    def __getitem__(self, label: ClassLabel) -> int:
        return self.count_per_class[int(label)]

    @property
    def total(self) -> int:
        return sum(self.count_per_class)

    @classmethod
    def from_mapping(cls, counts: Mapping[ClassLabel, int]) -> "ClassCounts":
        return cls(tuple(int(counts.get(c, 0)) for c in CLASSES))


def _rows(text: str) -> list[list[str]]:
    # csv handles both LF and CRLF when fed through a newline='' stream
    return list(csv.reader(io.StringIO(text, newline="")))


def parse_ground_truth(csv_text: str) -> DatasetManifest:
    """Decode a one-hot ground-truth table into a sorted manifest.

    Row numbers in error messages count the header as row 1. The nominal
    path of every entry is ``<image_id>.jpg``; see :func:`resolve_image_path`
    for extension probing.
    """
    rows = _rows(csv_text)
    if not rows:
        raise DataError("missing header, row 1")
    header = tuple(cell.strip() for cell in rows[0])
    if header != GT_HEADER:
        raise DataError(
            f"bad header, row 1: expected {','.join(GT_HEADER)}, got {','.join(header)}"
        )

    entries: list[ManifestEntry] = []
    seen: set[str] = set()
    for row_no, row in enumerate(rows[1:], start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(GT_HEADER):
            raise DataError(f"expected {len(GT_HEADER)} cells, got {len(row)}, row {row_no}")
        image_id = row[0].strip()
        if not image_id:
            raise DataError(f"empty image id, row {row_no}")
        if image_id in seen:
            raise DataError(f"duplicate image_id {image_id!r}, row {row_no}")
        hot: list[int] = []
        for k, cell in enumerate(row[1:]):
            value = cell.strip()
            if value in _ONE:
                hot.append(k)
            elif value not in _ZERO:
                raise DataError(f"cell {value!r} is not 0 or 1, row {row_no}")
        if len(hot) != 1:
            raise DataError(f"not one-hot, row {row_no}")
        seen.add(image_id)
        entries.append(ManifestEntry(image_id, f"{image_id}.{IMAGE_EXTENSIONS[0]}", CLASSES[hot[0]]))
    return DatasetManifest(tuple(entries))


def format_ground_truth(m: DatasetManifest) -> str:
    out = io.StringIO(newline="")
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(GT_HEADER)
    for e in m:
        writer.writerow([e.image_id] + ["1.0" if c == e.label else "0.0" for c in CLASSES])
    return out.getvalue()


def parse_manifest(csv_text: str) -> DatasetManifest:
    """Parse the canonical ``image_id,path,label`` manifest."""
    rows = _rows(csv_text)
    if not rows or tuple(c.strip() for c in rows[0]) != MANIFEST_HEADER:
        raise DataError(f"bad header, row 1: expected {','.join(MANIFEST_HEADER)}")
    entries = []
    seen: set[str] = set()
    for row_no, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 3:
            raise DataError(f"expected 3 cells, got {len(row)}, row {row_no}")
        image_id, path, code = (c.strip() for c in row)
        if image_id in seen:
            raise DataError(f"duplicate image_id {image_id!r}, row {row_no}")
        seen.add(image_id)
        try:
            label = ClassLabel.from_code(code)
        except DataError as exc:
            raise DataError(f"{exc}, row {row_no}") from None
        entries.append(ManifestEntry(image_id, path, label))
    return DatasetManifest(tuple(entries))


def format_manifest(m: DatasetManifest) -> str:
    out = io.StringIO(newline="")
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(MANIFEST_HEADER)
    for e in m:
        writer.writerow([e.image_id, e.path, e.label.code])
    return out.getvalue()


def load_manifest(path: str | Path) -> DatasetManifest:
    """Read either a one-hot ground-truth CSV or a canonical manifest CSV."""
    text = Path(path).read_text(encoding="utf-8-sig")
    first = text.split("\n", 1)[0].strip()
    if first.startswith("image_id,"):
        return parse_manifest(text)
    return parse_ground_truth(text)


def class_counts(m: Iterable[ManifestEntry]) -> ClassCounts:
    counts = [0] * NUM_CLASSES
    for e in m:
        counts[int(e.label)] += 1
    return ClassCounts(tuple(counts))


def resolve_image_path(images_dir: str | Path, image_id: str, hint: str | None = None) -> Path:
    """Locate the file for ``image_id`` under ``images_dir``.

    ``hint`` (a manifest path relative to ``images_dir``) wins when it exists;
    otherwise extensions are probed in the order jpg, jpeg, png.
    """
    root = Path(images_dir)
    if hint:
        candidate = root / hint
        if candidate.is_file():
            return candidate
    for ext in IMAGE_EXTENSIONS:
        candidate = root / f"{image_id}.{ext}"
        if candidate.is_file():
            return candidate
    raise FileNotFoundError(f"no image file for {image_id!r} under {root}")


def resolve_paths(m: DatasetManifest, images_dir: str | Path) -> DatasetManifest:
    root = Path(images_dir)
    return DatasetManifest(
        tuple(
            ManifestEntry(
                e.image_id,
                resolve_image_path(root, e.image_id, e.path).relative_to(root).as_posix(),
                e.label,
            )
            for e in m
        )
    )


def in_table_order(values: Sequence[int]) -> tuple[int, ...]:
    """Reorder seven values given in alphabetical code order into canonical order."""
    if len(values) != NUM_CLASSES:
        raise ValueError(f"expected {NUM_CLASSES} values, got {len(values)}")
    by_label = dict(zip(TABLE_ORDER, values))
    return tuple(by_label[c] for c in CLASSES)
