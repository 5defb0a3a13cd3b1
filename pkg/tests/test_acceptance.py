"""Exit criteria for the build, one test per criterion.

Run alone with ``pytest tests/test_acceptance.py``; a PASS/FAIL line per
criterion is printed in the terminal summary.
"""

import csv
import time

import numpy as np
import pytest

from lesionaug.balancer import plan_from_factors
from lesionaug.cli import main
from lesionaug.evalkit import ConfusionMatrix, EnsembleConfig, ProbabilityMatrix, balanced_accuracy, fuse, predict
from lesionaug.imgops import cubic_weights, max_rgb_normalize, rotate
from lesionaug.manifest import CLASSES, ClassLabel, class_counts, parse_ground_truth
from lesionaug.pipeline import execute, expand
from oracles import argmax_lowest, balanced_accuracy_bruteforce, max_rgb_naive, rot90_ccw_remap
from synth import (
    ISIC_AFTER_FLIP,
    ISIC_AFTER_ROTATION,
    gt_csv,
    isic_labels,
    tree_digest,
    write_colour_dataset,
    write_dataset,
)


def _plan_rows(text):
    return {l.split()[0]: l.split()[1:] for l in text.splitlines()[1:]}


@pytest.mark.acceptance(1, "published class-count arithmetic reproduced exactly via the plan command (< 1 s)")
def test_published_count_arithmetic(tmp_path, capsys):
    gt = tmp_path / "gt.csv"
    gt.write_text(gt_csv(isic_labels()))
    plan_csv = tmp_path / "plan.csv"

    start = time.perf_counter()
    code = main(["plan", str(gt), "--factors", "22,13,6,60,6,1,52", "-o", str(plan_csv)])
    elapsed = time.perf_counter() - start
    assert code == 0
    rows = _plan_rows(capsys.readouterr().out)

    assert {k: int(v[0]) for k, v in rows.items() if k != "total"} == {
        "AKIEC": 327, "BCC": 514, "BKL": 1099, "DF": 115, "MEL": 1113, "NV": 6705, "VASC": 142,
    }
    assert {k: int(v[1]) for k, v in rows.items() if k != "total"} == ISIC_AFTER_FLIP
    assert {k: int(v[3]) for k, v in rows.items() if k != "total"} == ISIC_AFTER_ROTATION
    assert int(rows["total"][-1]) == 96_274
    assert sum(ISIC_AFTER_ROTATION.values()) == 96_274
    with plan_csv.open() as fh:
        plan_rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")][1:]
    assert sum(int(r[4]) for r in plan_rows) == 96_274
    assert elapsed < 1.0, f"plan took {elapsed:.3f}s"


@pytest.mark.acceptance(2, "70 images x flip x factor 3 -> 420 PNGs, digest identical for 1/2/8 workers (< 30 s)")
def test_desk_scale_pipeline(tmp_path):
    images = tmp_path / "images"
    labels = write_dataset(images, per_class=10, size=64, seed=2018, jpeg_every=5)
    m = parse_ground_truth(gt_csv(labels))
    assert len(m) == 70
    plan = plan_from_factors(class_counts(m), [3] * 7, flip=True)
    assert plan.total_output == 420

    items = expand(plan, m)
    digests = {}
    start = time.perf_counter()
    for workers in (1, 2, 8):
        out = tmp_path / f"out{workers}"
        om = execute(items, images, out, workers=workers)
        assert len(om) == 420
        assert om.per_class() == {c: 60 for c in ClassLabel}
        digests[workers] = tree_digest(out)
    elapsed = time.perf_counter() - start

    assert len(digests[1]) == 420
    assert digests[1] == digests[2] == digests[8]
    assert elapsed < 30.0, f"three runs took {elapsed:.1f}s"


@pytest.mark.acceptance(3, "kernel properties: unity partition, 4x90 identity, constant rotation, max-RGB idempotence and maxima")
def test_kernel_properties():
    rng = np.random.default_rng(3)

    t = rng.random(10_000)
    assert np.abs(cubic_weights(t).sum(axis=-1) - 1.0).max() < 1e-12

    for _ in range(50):
        n = int(rng.integers(1, 40))
        img = rng.integers(0, 256, (n, n, 3), dtype=np.uint8)
        out = img
        for _ in range(4):
            out = rotate(out, 90)
        assert np.array_equal(out, img)

    for _ in range(50):
        h, w = (int(v) for v in rng.integers(1, 40, 2))
        img = np.empty((h, w, 3), dtype=np.uint8)
        img[:] = rng.integers(0, 256, 3)
        theta = float(rng.uniform(-360, 360))
        assert np.array_equal(rotate(img, theta), img)

    for _ in range(100):
        h, w = (int(v) for v in rng.integers(1, 48, 2))
        img = rng.integers(0, 256, (h, w, 3), dtype=np.uint8)
        img[0, 0] = np.maximum(img[0, 0], 1)  # non-degenerate: every channel has a nonzero sample
        once = max_rgb_normalize(img)
        assert np.array_equal(max_rgb_normalize(once), once)
        assert once.reshape(-1, 3).max(axis=0).tolist() == [255, 255, 255]


@pytest.mark.acceptance(4, "max-RGB matches naive per-pixel reference on 20 images; 2x2 quarter-turn golden")
def test_oracle_equivalence():
    rng = np.random.default_rng(4)
    for _ in range(20):
        h, w = (int(v) for v in rng.integers(1, 32, 2))
        hi = rng.integers(1, 256, 3)
        img = (rng.random((h, w, 3)) * hi).astype(np.uint8)
        expected = np.array(max_rgb_naive(img.tolist()), dtype=np.uint8)
        assert np.array_equal(max_rgb_normalize(img), expected)

    A, B, C, D = [1, 2, 3], [4, 5, 6], [7, 8, 9], [10, 11, 12]
    grid = [[A, B], [C, D]]
    assert rot90_ccw_remap(grid) == [[B, D], [A, C]]
    assert rotate(np.array(grid, dtype=np.uint8), 90).tolist() == rot90_ccw_remap(grid)


@pytest.mark.acceptance(5, "(0.5, 0.5) fusion = arithmetic mean (1e-12); argmax invariant to weight scaling (1,000 pairs)")
def test_ensemble_math():
    rng = np.random.default_rng(5)
    n = 1000
    ids = tuple(f"r{k:04d}" for k in range(n))
    a = rng.random((n, 7))
    b = rng.random((n, 7))
    a /= a.sum(axis=1, keepdims=True)
    b /= b.sum(axis=1, keepdims=True)
    ma, mb = ProbabilityMatrix(ids, a), ProbabilityMatrix(ids, b)

    fused = fuse([ma, mb], EnsembleConfig((0.5, 0.5)))
    assert np.abs(fused.probs - (a + b) / 2).max() < 1e-12

    base_w = rng.random(2) + 0.05
    base = [int(c) for _, c in predict(fuse([ma, mb], EnsembleConfig(tuple(base_w))))]
    for k in (1e-6, 0.3, 7.0, 1e6):
        scaled = [int(c) for _, c in predict(fuse([ma, mb], EnsembleConfig(tuple(k * base_w))))]
        assert scaled == base
    # cross-check the decisions against a plain-Python argmax of the weighted sum
    w0, w1 = base_w
    assert base == [argmax_lowest([w0 * x + w1 * y for x, y in zip(ra, rb)]) for ra, rb in zip(a, b)]


@pytest.mark.acceptance(6, "balanced accuracy of 7-class toy matrix = 0.6857142857 (24/35, 1e-12); diagonal = 1.0")
def test_metric_correctness():
    counts = np.zeros((7, 7), dtype=np.int64)
    for c, (ok, total) in enumerate([(2, 4), (3, 3), (1, 2), (4, 5), (0, 1), (5, 5), (2, 2)]):
        counts[c, c] = ok
        counts[c, (c + 3) % 7] += total - ok
    ba = balanced_accuracy(ConfusionMatrix(counts))
    assert abs(ba - 24 / 35) < 1e-12
    assert round(ba, 10) == 0.6857142857
    assert balanced_accuracy(ConfusionMatrix(np.diag([5, 1, 3, 8, 2, 9, 4]).astype(np.int64))) == 1.0


def _read_probs(path):
    with path.open() as fh:
        rows = list(csv.reader(fh))[1:]
    return {r[0]: [float(v) for v in r[1:]] for r in rows}


def _read_metric(path, name):
    with path.open() as fh:
        return float(dict(csv.reader(fh))[name])


@pytest.mark.acceptance(7, "end-to-end: two baselines fused at (0.5, 0.5) score >= each single model; metrics re-derived by oracle")
def test_end_to_end_ensemble(tmp_path):
    train_dir, test_dir = tmp_path / "train", tmp_path / "test"
    train = write_colour_dataset(train_dir, 6, 16, seed=71, prefix="tr")
    test = write_colour_dataset(test_dir, 5, 16, seed=72, prefix="te")
    train_gt, test_gt = tmp_path / "train.csv", tmp_path / "test.csv"
    train_gt.write_text(gt_csv(train))
    test_gt.write_text(gt_csv(test))

    scores = {}
    for name, bins in (("m4", 4), ("m8", 8)):
        model = tmp_path / f"{name}.model.csv"
        preds = tmp_path / f"{name}.csv"
        assert main(["baseline", "train", "--manifest", str(train_gt), "--images", str(train_dir),
                     "--bins", str(bins), "-o", str(model), "--workers", "2"]) == 0
        assert main(["baseline", "predict", "--model", str(model), "--images", str(test_dir),
                     "--manifest", str(test_gt), "-o", str(preds)]) == 0
        assert main(["evaluate", str(preds), str(test_gt), "-o", str(tmp_path / f"{name}.report")]) == 0
        scores[name] = preds

    fused = tmp_path / "fused.csv"
    assert main(["fuse", str(scores["m4"]), str(scores["m8"]), "--weights", "0.5,0.5", "-o", str(fused)]) == 0
    assert main(["evaluate", str(fused), str(test_gt), "-o", str(tmp_path / "fused.report")]) == 0

    # brute-force recomputation straight from the CSV files
    p4, p8, pf = _read_probs(scores["m4"]), _read_probs(scores["m8"]), _read_probs(fused)
    codes = [c.code for c in CLASSES]
    oracle = {}
    for name, probs in (("m4", p4), ("m8", p8), ("fused", pf)):
        pairs = [(test[i], codes[argmax_lowest(row)]) for i, row in probs.items()]
        oracle[name] = balanced_accuracy_bruteforce(pairs)
        reported = _read_metric(tmp_path / f"{name}.report" / "metrics.csv", "balanced_accuracy")
        assert abs(reported - oracle[name]) < 1e-12
    for i in pf:
        assert np.allclose(pf[i], [(x + y) / 2 for x, y in zip(p4[i], p8[i])], atol=1e-12)

    assert oracle["fused"] >= oracle["m4"] - 1e-9
    assert oracle["fused"] >= oracle["m8"] - 1e-9
