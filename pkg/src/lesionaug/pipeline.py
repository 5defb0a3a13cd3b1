"""Expand a plan into work items and execute them in parallel.

Each output file is a pure function of its work item, so the bytes written
never depend on the worker count or on scheduling order. The output manifest
is sorted once at the end.
"""

from __future__ import annotations

import csv
import io
import logging
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path

import numpy as np
from PIL import Image

from .balancer import AugmentationPlan
from .imgops import apply_operation
from .manifest import ClassLabel, DatasetManifest, DataError, resolve_image_path

log = logging.getLogger(__name__)

OUTPUT_HEADER = ("output_name", "source_id", "label", "operation")


@dataclass(frozen=True)
class Operation:
    flip: bool = False
    angle: float | None = None

    @property
    def kind(self) -> str:
        if self.angle is None:
            return "flip" if self.flip else "copy"
        return "flip+rotate" if self.flip else "rotate"

    def describe(self) -> str:
        if self.angle is None:
            return self.kind
        return f"{self.kind}({self.angle!r})"

    @classmethod
    def parse(cls, text: str) -> "Operation":
        text = text.strip()
        if text == "copy":
            return cls()
        if text == "flip":
            return cls(flip=True)
        for prefix, flip in (("flip+rotate(", True), ("rotate(", False)):
            if text.startswith(prefix) and text.endswith(")"):
                return cls(flip=flip, angle=float(text[len(prefix):-1]))
        raise DataError(f"unknown operation {text!r}")


COPY = Operation()
FLIP = Operation(flip=True)


def millidegrees(angle: float) -> int:
    # exact decimal value of the double, so the half-up rule is honoured
    return int((Decimal(angle) * 1000).quantize(Decimal(1), rounding=ROUND_HALF_UP))


def output_name(source_id: str, op: Operation) -> str:
    if op.angle is None:
        return f"{source_id}__{'f' if op.flip else 'o'}"
    prefix = "f_" if op.flip else ""
    return f"{source_id}__{prefix}r{millidegrees(op.angle):06d}"


@dataclass(frozen=True)
class WorkItem:
    source_id: str
    source_path: str
    label: ClassLabel
    operation: Operation
    normalize: bool = True
    normalize_first: bool = False

    @property
    def output_name(self) -> str:
        return output_name(self.source_id, self.operation)


@dataclass(frozen=True)
class OutputRow:
    output_name: str
    source_id: str
    label: ClassLabel
    operation: Operation


@dataclass(frozen=True)
class OutputManifest:
    rows: tuple[OutputRow, ...]

    def __len__(self) -> int:
        return len(self.rows)

    def per_class(self) -> dict[ClassLabel, int]:
        counts = {c: 0 for c in ClassLabel}
        for r in self.rows:
            counts[r.label] += 1
        return counts


def expand(
    plan: AugmentationPlan,
    m: DatasetManifest,
    normalize: bool = True,
    normalize_first: bool = False,
) -> list[WorkItem]:
    """One copy, an optional flip, and (flip+)rotate items per angle, per image."""
    planned = {p.label: p for p in plan.per_class}
    items: list[WorkItem] = []
    for e in m:
        p = planned.get(e.label)
        if p is None:
            raise DataError(f"class {e.label.code} of {e.image_id} missing from plan")
        ops = [COPY]
        if p.flip:
            ops.append(FLIP)
        for a in p.angles:
            ops.append(Operation(False, a))
            if p.flip:
                ops.append(Operation(True, a))
        items.extend(
            WorkItem(e.image_id, e.path, e.label, op, normalize, normalize_first) for op in ops
        )
    return items


def decode_image(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def encode_png(img: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(img)).save(buf, format="PNG", optimize=False, compress_level=6)
    return buf.getvalue()


def write_atomic(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class ItemError(RuntimeError):
    def __init__(self, item: WorkItem, cause: BaseException):
        super().__init__(f"{item.source_id} ({item.operation.describe()}): {cause}")
        self.item = item
        self.cause = cause


class ExecutionError(RuntimeError):
    """Raised when one or more work items failed."""

    def __init__(self, failures: list[ItemError], completed: OutputManifest | None = None):
        first = failures[0]
        more = f" (+{len(failures) - 1} more)" if len(failures) > 1 else ""
        super().__init__(f"{len(failures)} item(s) failed; first: {first}{more}")
        self.failures = failures
        self.completed = completed


def _process_source(group: list[WorkItem], images_dir: Path, out_dir: Path) -> list[OutputRow]:
    # one decode per source image; the mirrored copy is shared by its items
    first = group[0]
    try:
        src = resolve_image_path(images_dir, first.source_id, first.source_path)
        img = decode_image(src)
    except Exception as exc:  # noqa: BLE001 - reported with the item
        raise ItemError(first, exc) from exc

    bases: dict[tuple[bool, bool], np.ndarray] = {}
    rows = []
    for item in group:
        try:
            key = (item.operation.flip, item.normalize and item.normalize_first)
            base = bases.get(key)
            if base is None:
                base = apply_operation(img, key[0], None, key[1], True)
                bases[key] = base
            out = apply_operation(base, False, item.operation.angle, item.normalize and not item.normalize_first)
            write_atomic(out_dir / f"{item.output_name}.png", encode_png(out))
        except Exception as exc:  # noqa: BLE001
            raise ItemError(item, exc) from exc
        rows.append(OutputRow(item.output_name, item.source_id, item.label, item.operation))
    return rows


def execute(
    items: list[WorkItem],
    images_dir: str | Path,
    out_dir: str | Path,
    workers: int = 1,
    keep_going: bool = False,
) -> OutputManifest:
    """Process every item into ``out_dir/<output_name>.png``.

    Items are grouped by source image so each file is decoded once; groups
    are claimed by workers in any order. Fail-fast by default: the first
    failure cancels pending work and raises :class:`ExecutionError`. With
    ``keep_going`` every group is attempted and the error carries the
    successful rows in ``completed``.
    """
    if workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")
    images_dir = Path(images_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    names = [it.output_name for it in items]
    if len(set(names)) != len(names):
        raise DataError("work items produce colliding output names")

    groups: dict[tuple[str, str], list[WorkItem]] = {}
    for it in items:
        groups.setdefault((it.source_id, it.source_path), []).append(it)

    rows: list[OutputRow] = []
    failures: list[ItemError] = []
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_process_source, g, images_dir, out_dir) for g in groups.values()]
        for fut in as_completed(futures):
            try:
                rows.extend(fut.result())
            except ItemError as err:
                failures.append(err)
                log.error("%s", err)
                if not keep_going:
                    for f in futures:
                        f.cancel()
                    break

    rows.sort(key=lambda r: r.output_name)
    result = OutputManifest(tuple(rows))
    if failures:
        failures.sort(key=lambda e: e.item.output_name)
        raise ExecutionError(failures, result)
    return result


def format_output_manifest(om: OutputManifest) -> str:
    out = io.StringIO(newline="")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(OUTPUT_HEADER)
    for r in om.rows:
        w.writerow([r.output_name, r.source_id, r.label.code, r.operation.describe()])
    return out.getvalue()


def parse_output_manifest(text: str) -> OutputManifest:
    rows = list(csv.reader(io.StringIO(text, newline="")))
    if not rows or tuple(rows[0]) != OUTPUT_HEADER:
        raise DataError(f"bad header: expected {','.join(OUTPUT_HEADER)}")
    parsed = [
        OutputRow(name, sid, ClassLabel.from_code(code), Operation.parse(op))
        for name, sid, code, op in (r for r in rows[1:] if r)
    ]
    return OutputManifest(tuple(sorted(parsed, key=lambda r: r.output_name)))
