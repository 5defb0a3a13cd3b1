import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image

from lesionaug.baseline import (
    CentroidModel,
    color_histogram,
    format_model,
    parse_model,
    predict_baseline,
    predict_from_histogram,
    predict_manifest,
    train_centroids,
)
from lesionaug.imgops import hflip
from lesionaug.manifest import ClassLabel, DataError, DatasetManifest, parse_ground_truth
from oracles import softmax_neg
from synth import gt_csv, write_colour_dataset


def save(path, img):
    Image.fromarray(img).save(path)


def test_histogram_of_constant_red():
    img = np.zeros((4, 4, 3), dtype=np.uint8)
    img[..., 0] = 255
    assert color_histogram(img, 2).tolist() == [0, 1, 1, 0, 1, 0]


def test_train_single_red_image(tmp_path):
    img = np.zeros((4, 4, 3), dtype=np.uint8)
    img[..., 0] = 255
    save(tmp_path / "r.png", img)
    model = train_centroids(parse_ground_truth(gt_csv({"r": "BKL"})), tmp_path, bins=2)
    assert model.centroids[int(ClassLabel.BKL)].tolist() == [0, 1, 1, 0, 1, 0]
    assert model.present == tuple(c == ClassLabel.BKL for c in ClassLabel)
    p = predict_baseline(model, img)
    assert p[int(ClassLabel.BKL)] == 1.0 and p.sum() == 1.0


def test_identical_images_give_their_histogram(tmp_path):
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, (8, 8, 3), dtype=np.uint8)
    save(tmp_path / "a.png", img)
    save(tmp_path / "b.png", img)
    model = train_centroids(parse_ground_truth(gt_csv({"a": "DF", "b": "DF"})), tmp_path, bins=4)
    assert np.allclose(model.centroids[int(ClassLabel.DF)], color_histogram(img, 4), atol=1e-15)


def test_absent_classes_get_zero(tmp_path):
    labels = write_colour_dataset(tmp_path, 2, 6, seed=1, prefix="t")
    labels = {k: v for k, v in labels.items() if v in ("MEL", "NV")}
    model = train_centroids(parse_ground_truth(gt_csv(labels)), tmp_path, bins=4)
    p = predict_baseline(model, np.zeros((3, 3, 3), dtype=np.uint8))
    assert (p[2:] == 0).all()
    assert abs(p.sum() - 1) < 1e-9


def test_nearest_centroid_wins(tmp_path):
    labels = write_colour_dataset(tmp_path, 3, 8, seed=2, prefix="n")
    m = parse_ground_truth(gt_csv(labels))
    model = train_centroids(m, tmp_path, bins=8)
    probs = predict_manifest(model, m, tmp_path, workers=3)
    for image_id, row in zip(probs.image_ids, probs.probs):
        assert int(np.argmax(row)) == int(ClassLabel[labels[image_id]])


def two_class_model(c0, c1):
    centroids = np.zeros((7, 6))
    centroids[0], centroids[1] = c0, c1
    return CentroidModel(2, centroids, (True, True) + (False,) * 5, 0.05)


def test_equidistant_split_evenly():
    model = two_class_model([1, 0, 1, 0, 1, 0], [0, 1, 0, 1, 1, 0])
    p = predict_from_histogram(model, np.array([0.5, 0.5, 0.5, 0.5, 1, 0]))
    assert p[:2].tolist() == [0.5, 0.5]


def test_softmax_golden():
    # distances 0.1 and 0.2 at temperature 0.05
    model = two_class_model([0.1, 0, 0, 0, 0, 0], [0.2, 0, 0, 0, 0, 0])
    p = predict_from_histogram(model, np.zeros(6))
    expected = softmax_neg([0.1, 0.2], 0.05)
    assert abs(p[0] - expected[0]) < 1e-12 and abs(p[1] - expected[1]) < 1e-12
    assert round(p[0], 4) == 0.8808 and round(p[1], 4) == 0.1192
    assert abs(expected[0] - math.exp(-2) / (math.exp(-2) + math.exp(-4))) < 1e-15


@settings(max_examples=50)
@given(arrays(np.uint8, st.tuples(st.integers(1, 10), st.integers(1, 10), st.just(3))))
def test_prediction_valid_and_flip_invariant(img):
    rng = np.random.default_rng(4)
    cents = rng.random((7, 12))
    for c in range(3):
        cents[:, 4 * c:4 * c + 4] /= cents[:, 4 * c:4 * c + 4].sum(axis=1, keepdims=True)
    model = CentroidModel(4, cents, (True,) * 6 + (False,), 0.05)
    p = predict_baseline(model, img)
    assert (p >= 0).all() and abs(p.sum() - 1) < 1e-9 and p[6] == 0
    assert np.array_equal(predict_baseline(model, hflip(img)), p)


def test_training_is_order_invariant(tmp_path):
    labels = write_colour_dataset(tmp_path, 5, 6, seed=5, prefix="o")
    m = parse_ground_truth(gt_csv(labels))
    a = train_centroids(m, tmp_path, bins=4)
    reversed_m = DatasetManifest.__new__(DatasetManifest)
    object.__setattr__(reversed_m, "entries", tuple(reversed(m.entries)))
    b = train_centroids(reversed_m, tmp_path, bins=4, workers=4)
    assert np.array_equal(a.centroids, b.centroids)


def test_model_file_round_trip(tmp_path):
    labels = write_colour_dataset(tmp_path, 2, 6, seed=6, prefix="f")
    labels = {k: v for k, v in labels.items() if v != "DF"}
    model = train_centroids(parse_ground_truth(gt_csv(labels)), tmp_path, bins=3, temperature=0.1)
    text = format_model(model)
    assert text.splitlines()[:2] == ["bins,3", "temperature,0.1"]
    again = parse_model(text)
    assert again.bins == 3 and again.temperature == 0.1 and again.present == model.present
    assert np.array_equal(again.centroids, model.centroids)


def test_training_errors(tmp_path):
    with pytest.raises(DataError):
        train_centroids(parse_ground_truth(gt_csv({})), tmp_path)
    with pytest.raises(ValueError):
        train_centroids(parse_ground_truth(gt_csv({"x": "MEL"})), tmp_path, bins=1)
    with pytest.raises(FileNotFoundError):
        train_centroids(parse_ground_truth(gt_csv({"x": "MEL"})), tmp_path)
    with pytest.raises(DataError):
        parse_model("bins,2\n")
