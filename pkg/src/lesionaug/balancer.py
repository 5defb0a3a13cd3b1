"""Flip + rotation augmentation plans that equalise class sizes.

A class with rotation factor ``i`` contributes ``i`` images per (possibly
flipped) source: the image itself plus ``i - 1`` rotations by
``360 / i * j`` degrees, ``j = 1 .. i - 1``. Factors 0 and 1 both mean
"no rotation". Flipping happens first, so every mirrored copy is rotated too.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Sequence, Union

from .manifest import CLASSES, NUM_CLASSES, ClassCounts, ClassLabel, DataError

PLAN_HEADER = ("class", "input_count", "flip", "factor", "expected_output")
ANGLES_TAG = "#angles"

Factors = Union[Sequence[int], Mapping[ClassLabel, int]]


def rotation_angles(i: int) -> list[float]:
    if i < 0:
        raise ValueError(f"rotation factor must be >= 0, got {i}")
    return [360 * j / i for j in range(1, i)]


@dataclass(frozen=True)
class ClassPlan:
    label: ClassLabel
    input_count: int
    flip: bool
    rotation_factor: int

    @property
    def angles(self) -> list[float]:
        return rotation_angles(self.rotation_factor)

    @property
    def after_flip(self) -> int:
        return self.input_count * (2 if self.flip else 1)

    @property
    def expected_output(self) -> int:
        return self.after_flip * max(self.rotation_factor, 1)


@dataclass(frozen=True)
class AugmentationPlan:
    per_class: tuple[ClassPlan, ...]

    def __post_init__(self) -> None:
        if [p.label for p in self.per_class] != list(CLASSES):
            raise ValueError("plan must hold one record per class in canonical order")

    def __getitem__(self, label: ClassLabel) -> ClassPlan:
        return self.per_class[int(label)]

    @property
    def flip(self) -> bool:
        return any(p.flip for p in self.per_class)

    @property
    def factors(self) -> tuple[int, ...]:
        return tuple(p.rotation_factor for p in self.per_class)

    @property
    def after_flip(self) -> tuple[int, ...]:
        return tuple(p.after_flip for p in self.per_class)

    @property
    def expected_outputs(self) -> tuple[int, ...]:
        return tuple(p.expected_output for p in self.per_class)

    @property
    def total_input(self) -> int:
        return sum(p.input_count for p in self.per_class)

    @property
    def total_after_flip(self) -> int:
        return sum(self.after_flip)

    @property
    def total_output(self) -> int:
        return sum(self.expected_outputs)


def _as_vector(factors: Factors) -> tuple[int, ...]:
    if isinstance(factors, Mapping):
        vec = tuple(int(factors.get(c, 0)) for c in CLASSES)
    else:
        vec = tuple(int(f) for f in factors)
    if len(vec) != NUM_CLASSES:
        raise ValueError(f"expected {NUM_CLASSES} factors, got {len(vec)}")
    if any(f < 0 for f in vec):
        raise ValueError("rotation factors must be >= 0")
    return vec


def plan_from_factors(counts: ClassCounts, factors: Factors, flip: bool) -> AugmentationPlan:
    """Build a plan from explicit per-class factors.

    Sequences are read in canonical class order (MEL first); pass a mapping
    keyed by :class:`ClassLabel` to avoid ordering mistakes.
    """
    vec = _as_vector(factors)
    return AugmentationPlan(
        tuple(ClassPlan(c, counts[c], flip, vec[int(c)]) for c in CLASSES)
    )


def plan_auto(counts: ClassCounts, flip: bool, target: int | str = "largest-class") -> AugmentationPlan:
    """Pick per-class factors so every class lands near ``target`` images.

    ``factor = max(1, round_half_up(target / after_flip))``; empty classes get
    factor 0. ``"largest-class"`` uses the largest after-flip count as target.
    """
    mult = 2 if flip else 1
    after = [counts[c] * mult for c in CLASSES]
    if target == "largest-class":
        target = max(after)
        if target == 0:
            return plan_from_factors(counts, [0] * NUM_CLASSES, flip)
    elif isinstance(target, str):
        raise ValueError(f"unknown target {target!r}")
    if target < 1:
        raise ValueError(f"target must be >= 1, got {target}")
    factors = []
    for n in after:
        if n == 0:
            factors.append(0)
            continue
        q = Fraction(target, n)
        factors.append(max(1, (q.numerator * 2 + q.denominator) // (2 * q.denominator)))
    return plan_from_factors(counts, factors, flip)


def format_plan(plan: AugmentationPlan) -> str:
    out = io.StringIO(newline="")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(PLAN_HEADER)
    for p in plan.per_class:
        w.writerow([p.label.code, p.input_count, int(p.flip), p.rotation_factor, p.expected_output])
    for p in plan.per_class:
        w.writerow([ANGLES_TAG, p.label.code] + [repr(a) for a in p.angles])
    return out.getvalue()


def parse_plan(text: str) -> AugmentationPlan:
    """Read a plan written by :func:`format_plan`, checking every derived column."""
    rows = [r for r in csv.reader(io.StringIO(text, newline="")) if r]
    if not rows or tuple(rows[0]) != PLAN_HEADER:
        raise DataError(f"bad plan header: expected {','.join(PLAN_HEADER)}")
    records: dict[ClassLabel, ClassPlan] = {}
    angles: dict[ClassLabel, list[float]] = {}
    for row_no, row in enumerate(rows[1:], start=2):
        try:
            if row[0] == ANGLES_TAG:
                angles[ClassLabel.from_code(row[1])] = [float(a) for a in row[2:]]
                continue
            code, n, flip, factor, expected = row
            cp = ClassPlan(ClassLabel.from_code(code), int(n), flip.strip() in ("1", "true", "True"), int(factor))
        except (ValueError, IndexError) as exc:
            raise DataError(f"malformed plan row {row_no}: {exc}") from None
        if cp.input_count < 0 or cp.rotation_factor < 0:
            raise DataError(f"negative value in plan row {row_no}")
        if cp.expected_output != int(expected):
            raise DataError(
                f"plan row {row_no}: expected_output {expected} inconsistent with "
                f"{cp.input_count} x {'2' if cp.flip else '1'} x max({cp.rotation_factor}, 1)"
            )
        if cp.label in records:
            raise DataError(f"duplicate class {cp.label.code} in plan row {row_no}")
        records[cp.label] = cp
    missing = [c.code for c in CLASSES if c not in records]
    if missing:
        raise DataError(f"plan is missing classes: {', '.join(missing)}")
    for label, listed in angles.items():
        if listed != records[label].angles:
            raise DataError(f"angles for {label.code} do not match factor {records[label].rotation_factor}")
    return AugmentationPlan(tuple(records[c] for c in CLASSES))
