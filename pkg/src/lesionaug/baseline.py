"""Nearest-centroid colour-histogram classifier.

A stand-in for a trained network: every image becomes three concatenated
per-channel histograms (each L1-normalized), each class is the mean of its
images' histograms, and class probabilities are a softmax over negative
Euclidean distances. Its accuracy means nothing beyond plumbing checks.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .evalkit import ProbabilityMatrix
from .imgops import check_image
from .manifest import CLASSES, NUM_CLASSES, DatasetManifest, DataError, resolve_image_path
from .pipeline import decode_image

DEFAULT_BINS = 8
DEFAULT_TEMPERATURE = 0.05


def color_histogram(img: np.ndarray, bins: int = DEFAULT_BINS) -> np.ndarray:
    """Concatenated R, G, B histograms, each summing to 1; sample s lands in bin s*bins//256."""
    img = check_image(img)
    flat = img.reshape(-1, 3).astype(np.int64)
    idx = flat * bins // 256
    n = flat.shape[0]
    return np.concatenate(
        [np.bincount(idx[:, c], minlength=bins).astype(np.float64) / n for c in range(3)]
    )


@dataclass(frozen=True)
class CentroidModel:
    bins: int
    centroids: np.ndarray  # (7, 3*bins); rows of absent classes are zero
    present: tuple[bool, ...]
    temperature: float = DEFAULT_TEMPERATURE

    def __post_init__(self) -> None:
        if self.bins < 2:
            raise ValueError(f"bins must be >= 2, got {self.bins}")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if self.centroids.shape != (NUM_CLASSES, 3 * self.bins):
            raise ValueError(f"centroid array has shape {self.centroids.shape}")
        if not any(self.present):
            raise ValueError("model has no trained class")


def train_centroids(
    m: DatasetManifest,
    images_dir: str | Path,
    bins: int = DEFAULT_BINS,
    temperature: float = DEFAULT_TEMPERATURE,
    workers: int = 1,
) -> CentroidModel:
    if bins < 2:
        raise ValueError(f"bins must be >= 2, got {bins}")
    if len(m) == 0:
        raise DataError("cannot train on an empty manifest")

    def hist(entry):
        return color_histogram(decode_image(resolve_image_path(images_dir, entry.image_id, entry.path)), bins)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        hists = list(pool.map(hist, m.entries))

    centroids = np.zeros((NUM_CLASSES, 3 * bins))
    present = []
    for c in CLASSES:
        members = [h for e, h in zip(m.entries, hists) if e.label == c]
        present.append(bool(members))
        if members:
            # fsum makes the mean independent of manifest order
            stack = np.stack(members)
            centroids[int(c)] = [math.fsum(col) / len(members) for col in stack.T]
    return CentroidModel(bins, centroids, tuple(present), temperature)


def predict_from_histogram(model: CentroidModel, hist: np.ndarray) -> np.ndarray:
    present = np.array(model.present)
    d = np.linalg.norm(model.centroids - hist, axis=1)
    logits = np.where(present, -d / model.temperature, -np.inf)
    logits -= logits[present].max()
    p = np.exp(logits)
    return p / p.sum()


def predict_baseline(model: CentroidModel, img: np.ndarray) -> np.ndarray:
    return predict_from_histogram(model, color_histogram(img, model.bins))


def predict_manifest(
    model: CentroidModel, m: DatasetManifest, images_dir: str | Path, workers: int = 1
) -> ProbabilityMatrix:
    def one(entry):
        img = decode_image(resolve_image_path(images_dir, entry.image_id, entry.path))
        return predict_baseline(model, img)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        rows = list(pool.map(one, m.entries))
    probs = np.array(rows).reshape(-1, NUM_CLASSES)
    return ProbabilityMatrix(tuple(e.image_id for e in m.entries), probs)


def format_model(model: CentroidModel) -> str:
    out = io.StringIO(newline="")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["bins", model.bins])
    w.writerow(["temperature", repr(model.temperature)])
    for c in CLASSES:
        vec = model.centroids[int(c)] if model.present[int(c)] else []
        w.writerow([c.code, int(model.present[int(c)])] + [repr(float(v)) for v in vec])
    return out.getvalue()


def parse_model(text: str) -> CentroidModel:
    rows = [r for r in csv.reader(io.StringIO(text, newline="")) if r]
    try:
        if rows[0][0] != "bins" or rows[1][0] != "temperature":
            raise DataError("model file must start with 'bins' and 'temperature' lines")
        bins = int(rows[0][1])
        temperature = float(rows[1][1])
        body = rows[2:]
        if [r[0] for r in body] != [c.code for c in CLASSES]:
            raise DataError("model file must list every class in canonical order")
        centroids = np.zeros((NUM_CLASSES, 3 * bins))
        present = []
        for k, r in enumerate(body):
            flag = r[1] == "1"
            present.append(flag)
            if flag:
                centroids[k] = [float(v) for v in r[2:]]
        return CentroidModel(bins, centroids, tuple(present), temperature)
    except (IndexError, ValueError) as exc:
        if isinstance(exc, DataError):
            raise
        raise DataError(f"malformed model file: {exc}") from None
