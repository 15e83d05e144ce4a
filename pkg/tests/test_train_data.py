"""Synthetic data generation, dataset IO, losses, Adam, training loop."""

import numpy as np
import pytest
from PIL import Image

from mixfire.backbone import default_model_config, init_model_params
from mixfire.data import (
    BOXES_FILE,
    CLASS_NAMES,
    Dataset,
    generate_synthetic,
    load_directory,
    quantize_image,
    save_dataset,
)
from mixfire.tensor import ShapeError, Tensor, grad_check, softmax
from mixfire.train import (
    LOG_GUARD,
    TrainConfig,
    adam_init,
    adam_step,
    cross_entropy,
    cross_entropy_batch,
    predict,
    train,
)


# ---------------------------------------------------------------------------
# synthetic generator


def test_generator_counts_and_ranges():
    ds = generate_synthetic(5, image_size=32, seed=0)
    assert len(ds) == 15
    assert ds.class_names == list(CLASS_NAMES)
    assert [ds.labels.count(c) for c in range(3)] == [5, 5, 5]
    for img in ds.images:
        assert img.shape == (1, 32, 32)
        assert img.min() >= 0.0 and img.max() <= 1.0


def test_generator_is_seed_deterministic():
    a = generate_synthetic(3, image_size=32, seed=7)
    b = generate_synthetic(3, image_size=32, seed=7)
    c = generate_synthetic(3, image_size=32, seed=8)
    for x, y in zip(a.images, b.images):
        np.testing.assert_array_equal(x, y)
    assert a.truth_boxes == b.truth_boxes
    assert any(not np.array_equal(x, y)
               for x, y in zip(a.images, c.images))


def test_brightest_pixel_lies_inside_its_box():
    ds = generate_synthetic(10, image_size=64, seed=1)
    for img, box in zip(ds.images, ds.truth_boxes):
        x0, y0, x1, y1 = box
        row, col = np.unravel_index(np.argmax(img[0]), img[0].shape)
        assert y0 <= row <= y1 and x0 <= col <= x1
        # the shape is uniformly brighter than any background pixel
        inside = img[0, y0:y1 + 1, x0:x1 + 1]
        assert inside.max() >= 0.7


def test_boxes_stay_under_quarter_area():
    ds = generate_synthetic(20, image_size=64, seed=2)
    for x0, y0, x1, y1 in ds.truth_boxes:
        assert 0 <= x0 <= x1 < 64 and 0 <= y0 <= y1 < 64
        assert (x1 - x0 + 1) * (y1 - y0 + 1) < 64 * 64 * 0.25


def test_boxes_are_tight():
    ds = generate_synthetic(6, image_size=64, seed=3)
    for img, box in zip(ds.images, ds.truth_boxes):
        x0, y0, x1, y1 = box
        shape_mask = img[0] >= 0.7
        rows = np.flatnonzero(shape_mask.any(axis=1))
        cols = np.flatnonzero(shape_mask.any(axis=0))
        assert (cols[0], rows[0], cols[-1], rows[-1]) == box


def test_generator_validation():
    with pytest.raises(ValueError):
        generate_synthetic(0)
    with pytest.raises(ValueError):
        generate_synthetic(1, image_size=8)


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(images=[np.zeros((1, 4, 4))], labels=[0, 1],
                class_names=["a", "b"])
    with pytest.raises(ValueError):
        Dataset(images=[np.zeros((1, 4, 4))], labels=[2],
                class_names=["a", "b"])
    with pytest.raises(ValueError):
        Dataset(images=[np.zeros((1, 4, 4)), np.zeros((1, 5, 5))],
                labels=[0, 0], class_names=["a"])


def test_subset_keeps_alignment():
    ds = generate_synthetic(4, image_size=16, seed=0)
    sub = ds.subset([1, 5, 9])
    assert len(sub) == 3
    assert sub.labels == [ds.labels[i] for i in (1, 5, 9)]
    np.testing.assert_array_equal(sub.images[2], ds.images[9])
    assert sub.truth_boxes == [ds.truth_boxes[i] for i in (1, 5, 9)]


# ---------------------------------------------------------------------------
# disk round trip


def test_quantize_image_endpoints():
    img = np.array([[0.0, 1.0], [0.5, 2.0]])
    q = quantize_image(img)
    assert q.dtype == np.uint8
    assert q[0, 0] == 0 and q[0, 1] == 255
    assert q[1, 1] == 255  # clipped
    assert q[1, 0] == 128  # rint(127.5) rounds half to even


def test_save_load_round_trip(tmp_path):
    ds = generate_synthetic(3, image_size=32, seed=4)
    paths = save_dataset(ds, str(tmp_path))
    assert len(paths) == 9
    assert (tmp_path / BOXES_FILE).is_file()
    assert sorted(p.name for p in (tmp_path / "disc").iterdir()) == \
        ["0000.pgm", "0001.pgm", "0002.pgm"]

    loaded = load_directory(str(tmp_path), image_size=32)
    assert loaded.class_names == list(CLASS_NAMES)
    assert loaded.labels == ds.labels
    assert loaded.truth_boxes == ds.truth_boxes
    for orig, back in zip(ds.images, loaded.images):
        # one uint8 quantization step each way
        assert np.abs(orig - back).max() <= 0.5 / 255 + 1e-12


def test_load_directory_resizes_and_rescales_boxes(tmp_path):
    ds = generate_synthetic(2, image_size=32, seed=5)
    save_dataset(ds, str(tmp_path))
    loaded = load_directory(str(tmp_path), image_size=64)
    assert loaded.images[0].shape == (1, 64, 64)
    for (x0, y0, x1, y1), (sx0, sy0, sx1, sy1) in zip(loaded.truth_boxes,
                                                      ds.truth_boxes):
        assert (x0, y0, x1, y1) == (sx0 * 2, sy0 * 2, sx1 * 2, sy1 * 2)


def test_load_directory_reads_grayscale_png(tmp_path):
    (tmp_path / "only").mkdir()
    pixels = np.arange(256, dtype=np.uint8).reshape(16, 16)
    Image.fromarray(pixels, mode="L").save(tmp_path / "only" / "img.png")
    loaded = load_directory(str(tmp_path), image_size=16)
    assert loaded.labels == [0]
    np.testing.assert_allclose(loaded.images[0][0], pixels / 255.0)
    assert loaded.truth_boxes is None


def test_load_directory_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_directory(str(tmp_path / "missing"))
    with pytest.raises(ValueError):
        load_directory(str(tmp_path))  # no class subdirectories
    (tmp_path / "empty").mkdir()
    with pytest.raises(ValueError):
        load_directory(str(tmp_path))
    rgb = tmp_path / "empty" / "color.png"
    Image.new("RGB", (8, 8), (10, 20, 30)).save(rgb)
    with pytest.raises(ValueError):
        load_directory(str(tmp_path), image_size=8)


# ---------------------------------------------------------------------------
# losses


def test_cross_entropy_matches_closed_form():
    probs = Tensor(np.array([0.2, 0.5, 0.3]))
    loss = cross_entropy(probs, 1)
    assert loss.item() == pytest.approx(-np.log(0.5 + LOG_GUARD), rel=1e-15)
    with pytest.raises(ValueError):
        cross_entropy(probs, 3)
    with pytest.raises(ShapeError):
        cross_entropy(Tensor(np.ones((2, 3)) / 3), 0)


def test_cross_entropy_guard_keeps_zero_probability_finite():
    probs = Tensor(np.array([1.0, 0.0]))
    loss = cross_entropy(probs, 1)
    assert np.isfinite(loss.item())
    assert loss.item() == pytest.approx(-np.log(LOG_GUARD), rel=1e-12)


def test_cross_entropy_batch_is_mean_of_rows(rng):
    probs_data = rng.random((4, 3)) + 0.05
    probs_data /= probs_data.sum(axis=1, keepdims=True)
    labels = [0, 2, 1, 2]
    batch = cross_entropy_batch(Tensor(probs_data), labels).item()
    rows = [cross_entropy(Tensor(probs_data[i]), labels[i]).item()
            for i in range(4)]
    assert batch == pytest.approx(np.mean(rows), rel=1e-14)
    with pytest.raises(ShapeError):
        cross_entropy_batch(Tensor(probs_data), [0, 1])
    with pytest.raises(ValueError):
        cross_entropy_batch(Tensor(probs_data), [0, 1, 2, 3])


def test_cross_entropy_gradient(rng):
    logits = Tensor(rng.standard_normal((3, 4)), requires_grad=True)

    def f():
        return cross_entropy_batch(softmax(logits), [1, 3, 0])

    assert grad_check(f, {"logits": logits}) < 1e-6


# ---------------------------------------------------------------------------
# Adam


def _scalar_params(*values):
    return {f"p{i}": Tensor(np.array([v]), requires_grad=True)
            for i, v in enumerate(values)}


def test_adam_single_step_matches_hand_computation():
    named = _scalar_params(1.0)
    config = TrainConfig(learning_rate=0.1)
    state = adam_init(named)
    grad = np.array([0.5])
    adam_step(named, {"p0": grad}, state, config)
    # first step: m-hat = g, v-hat = g^2, update = g/(|g| + eps)
    expect = 1.0 - 0.1 * (0.5 / (0.5 + config.adam_eps))
    assert named["p0"].data[0] == pytest.approx(expect, rel=1e-12)
    assert state.step == 1


def test_adam_two_steps_match_reference_formula():
    named = _scalar_params(2.0)
    config = TrainConfig(learning_rate=0.01)
    state = adam_init(named)
    grads = [np.array([0.3]), np.array([-0.2])]
    # independent reference implementation of the update rule
    theta, m, v = 2.0, 0.0, 0.0
    b1, b2, eps, lr = (config.adam_beta1, config.adam_beta2,
                       config.adam_eps, config.learning_rate)
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g[0]
        v = b2 * v + (1 - b2) * g[0] ** 2
        theta -= lr * (m / (1 - b1 ** t)) / \
            (np.sqrt(v / (1 - b2 ** t)) + eps)
    for g in grads:
        adam_step(named, {"p0": g}, state, config)
    assert named["p0"].data[0] == pytest.approx(theta, rel=1e-12)


def test_adam_skips_missing_and_validates_shapes():
    named = _scalar_params(1.0, 2.0)
    state = adam_init(named)
    config = TrainConfig()
    adam_step(named, {"p0": np.array([1.0])}, state, config)
    assert named["p1"].data[0] == 2.0  # untouched without a gradient
    with pytest.raises(ShapeError):
        adam_step(named, {"p1": np.zeros(3)}, state, config)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        TrainConfig(adam_beta1=1.0)
    with pytest.raises(ValueError):
        TrainConfig(adam_eps=0.0)


# ---------------------------------------------------------------------------
# training loop


@pytest.fixture(scope="module")
def tiny_setup():
    dataset = generate_synthetic(6, image_size=16, seed=0)
    config = default_model_config(input_size=16, d_model=8, token_hidden=8,
                                  channel_hidden=16)
    return dataset, config


def test_train_reduces_loss_and_is_deterministic(tiny_setup):
    dataset, config = tiny_setup
    tc = TrainConfig(epochs=4, batch_size=6, seed=0)
    params_a, history_a = train(dataset, config, tc)
    params_b, history_b = train(dataset, config, tc)
    assert len(history_a) == 4
    assert history_a[-1] < history_a[0]
    assert history_a == history_b
    np.testing.assert_array_equal(params_a.head_weight.data,
                                  params_b.head_weight.data)
    np.testing.assert_array_equal(params_a.stem.data, params_b.stem.data)


def test_train_validates_inputs(tiny_setup):
    dataset, config = tiny_setup
    with pytest.raises(ValueError):
        train(dataset.subset([]), config, TrainConfig(epochs=1))
    wrong = default_model_config(input_size=32, d_model=8, token_hidden=8,
                                 channel_hidden=16)
    with pytest.raises(ShapeError):
        train(dataset, wrong, TrainConfig(epochs=1))


def test_predict_returns_labels_in_range(tiny_setup):
    dataset, config = tiny_setup
    params = init_model_params(config, np.random.default_rng(0))
    preds = predict(params, dataset.images, config, batch_size=5)
    assert len(preds) == len(dataset)
    assert all(isinstance(p, int) and 0 <= p < 3 for p in preds)


def test_predict_is_batch_size_invariant(tiny_setup):
    dataset, config = tiny_setup
    params = init_model_params(config, np.random.default_rng(1))
    a = predict(params, dataset.images, config, batch_size=3)
    b = predict(params, dataset.images, config, batch_size=18)
    assert a == b
