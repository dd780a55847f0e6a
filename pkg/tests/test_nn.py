import math

import numpy as np
import pytest

from voronoi_wta.datasets import DatasetKind, SyntheticDataset, make_splits
from voronoi_wta.geometry import Domain, assign, regular_grid
from voronoi_wta.nn import (
    AdamState,
    HeadKind,
    MDNOverflowError,
    MlpModel,
    histogram_loss,
    loss_for,
    mdn_loss,
    train,
    wta_compound_loss,
)
from voronoi_wta.streams import stream

BOX = Domain.cube(2)


def _zero_model(head, K, hidden=(4, 4), grid_shape=None):
    m = MlpModel.init(head, K, 2, np.random.default_rng(0), hidden=hidden, grid_shape=grid_shape)
    return m.with_flat(np.zeros(m.n_params))


def _set_outputs(model, out):
    """Make the model emit the constant pre-activation vector ``out``."""
    model.params["W_out"][:] = 0.0
    model.params["b_out"][:] = out
    return model


def fd_max_relative_error(model, loss_fn, x, y, step=1e-5):
    _, grads = loss_fn(model, x, y)
    analytic = np.concatenate([grads[n].ravel() for n in model.param_shapes()])
    flat = model.flat()
    numeric = np.empty_like(flat)
    for i in range(flat.size):
        up, down = flat.copy(), flat.copy()
        up[i] += step
        down[i] -= step
        numeric[i] = (loss_fn(model.with_flat(up), x, y)[0] - loss_fn(model.with_flat(down), x, y)[0]) / (2 * step)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
    return float(np.max(np.abs(analytic - numeric) / denom))


def random_case(head, seed):
    rng = np.random.default_rng(seed)
    K = int(rng.integers(2, 5))
    grid = None
    if head is HeadKind.HISTOGRAM:
        grid = (2, 2)
        K = 4
    model = MlpModel.init(head, K, 2, rng, hidden=(12, 12), grid_shape=grid)
    x = rng.random(6)
    y = rng.uniform(-0.9, 0.9, (6, 2))
    return model, x, y


# ---------------------------------------------------------------- forward


def test_zero_weights_forward():
    hs = _zero_model(HeadKind.WTA_SCORING, 3).forward(np.array([0.3]))
    np.testing.assert_array_equal(hs.points, 0.0)
    np.testing.assert_array_equal(hs.scores, 0.5)


def test_seeded_init_forward_ranges():
    m = MlpModel.init(HeadKind.WTA_SCORING, 16, 2, stream(0, "init"))
    hs = m.forward(np.array([0.5]))
    assert np.all(np.isfinite(hs.points)) and np.all(np.abs(hs.points) < 1)
    assert np.all((hs.scores > 0) & (hs.scores < 1))


def test_histogram_head_size():
    m = MlpModel.init(HeadKind.HISTOGRAM, 12, 2, np.random.default_rng(0), grid_shape=(4, 3))
    assert m.n_outputs == 12
    hs = m.forward(np.array([0.1, 0.9]))
    assert hs.points.shape == (2, 12, 2)
    with pytest.raises(ValueError):
        MlpModel.init(HeadKind.HISTOGRAM, 12, 2, np.random.default_rng(0), grid_shape=(4, 4))


def test_input_width_checked():
    m = MlpModel.init(HeadKind.WTA_SCORING, 2, 2, np.random.default_rng(0), hidden=(4, 4))
    with pytest.raises(ValueError):
        m.forward(np.zeros((3, 2)))


def test_flat_round_trip():
    m = MlpModel.init(HeadKind.MDN, 3, 2, np.random.default_rng(1), hidden=(5, 7))
    again = m.with_flat(m.flat())
    np.testing.assert_array_equal(again.flat(), m.flat())
    with pytest.raises(ValueError):
        m.with_flat(np.zeros(3))


# ---------------------------------------------------------------- losses


def test_wta_compound_loss_example():
    # hypotheses (0, 0) and (0.5, 0.5), target (0.4, 0.6): winner term 0.02, scores 0.5 give 2 log 2
    m = _set_outputs(_zero_model(HeadKind.WTA_SCORING, 2), np.concatenate([np.arctanh([0.0, 0.0, 0.5, 0.5]), [0.0, 0.0]]))
    loss, _ = wta_compound_loss(m, np.array([0.2]), np.array([[0.4, 0.6]]), beta=1.0)
    assert loss == pytest.approx(1.406294, abs=1e-6)
    assert loss == pytest.approx(0.02 + 2 * math.log(2.0), abs=1e-12)


def test_wta_beta_zero_updates_winner_only():
    rng = np.random.default_rng(3)
    m = MlpModel.init(HeadKind.WTA_SCORING, 4, 2, rng, hidden=(8, 8))
    x = np.array([0.3])
    hs = m.forward(x)
    y = hs.points[0, 2] + 0.01
    _, grads = wta_compound_loss(m, x, y[None], beta=0.0)
    cols = grads["W_out"]
    for k in range(4):
        block = cols[:, 2 * k: 2 * k + 2]
        assert np.any(block != 0) if k == 2 else np.all(block == 0)
    assert np.all(grads["W_out"][:, 8:] == 0)


def test_wta_loss_rejects_negative_beta():
    with pytest.raises(ValueError):
        wta_compound_loss(_zero_model(HeadKind.WTA_SCORING, 2), np.array([0.1]), np.zeros((1, 2)), beta=-1)


def test_mdn_loss_examples():
    m = _zero_model(HeadKind.MDN, 1)
    loss, _ = mdn_loss(m, np.array([0.4]), np.zeros((1, 2)))
    assert loss == pytest.approx(math.log(2 * math.pi), abs=1e-12)

    two = _zero_model(HeadKind.MDN, 2)
    # means 0 and 0.5, unit variances, weights (1, 0) via a large logit gap
    _set_outputs(two, np.array([0, 0, np.arctanh(0.5), np.arctanh(0.5), 0, 0, 0, -800.0]))
    loss2, _ = mdn_loss(two, np.array([0.4]), np.array([[0.1, -0.2]]))
    expected = math.log(2 * math.pi) + 0.5 * (0.1**2 + 0.2**2)
    assert loss2 == pytest.approx(expected, abs=1e-12)


def test_mdn_overflow_is_an_error():
    m = _zero_model(HeadKind.MDN, 1)
    m.params["b0"][:] = 1e300
    m.params["W1"][:] = 1.0
    m.params["W_out"][:] = 1e300
    with pytest.raises(MDNOverflowError):
        mdn_loss(m, np.array([0.4]), np.zeros((1, 2)))


def test_histogram_loss_examples():
    grid = regular_grid((2, 2), BOX)
    m = _zero_model(HeadKind.HISTOGRAM, 4, grid_shape=(2, 2))
    loss, _ = histogram_loss(m, grid, np.array([0.1]), np.array([[0.3, 0.3]]))
    assert loss == pytest.approx(4 * math.log(2), abs=1e-12)
    k = int(assign(np.array([[0.3, 0.3]]), grid)[0])
    logits = np.full(4, -40.0)
    logits[k] = 40.0
    _set_outputs(m, logits)
    assert histogram_loss(m, grid, np.array([0.1]), np.array([[0.3, 0.3]]))[0] < 1e-15


@pytest.mark.parametrize("head", list(HeadKind))
def test_gradients_match_finite_differences(head):
    worst = 0.0
    for seed in range(10):
        model, x, y = random_case(head, seed)
        worst = max(worst, fd_max_relative_error(model, loss_for(model), x, y))
    assert worst < 1e-4


# ---------------------------------------------------------------- training


def test_adam_frozen_names_untouched():
    m = MlpModel.init(HeadKind.WTA_SCORING, 2, 2, np.random.default_rng(0), hidden=(4, 4))
    before = {k: v.copy() for k, v in m.params.items()}
    _, grads = wta_compound_loss(m, np.array([0.2, 0.7]), np.array([[0.1, 0.1], [-0.3, 0.5]]))
    adam = AdamState()
    adam.update(m.params, grads, trainable={"b_out"})
    assert adam.step == 1
    for name in before:
        changed = not np.array_equal(before[name], m.params[name])
        assert changed == (name == "b_out")
    assert adam.m["b_out"].shape == m.params["b_out"].shape


@pytest.mark.parametrize("seed", [0, 1, 2])
@pytest.mark.parametrize("head", list(HeadKind))
def test_single_step_descends(head, seed):
    rng = np.random.default_rng(seed)
    grid = (2, 2) if head is HeadKind.HISTOGRAM else None
    model = MlpModel.init(head, 4, 2, rng, grid_shape=grid)
    x = rng.random(1024)
    y = rng.uniform(-0.9, 0.9, (1024, 2))
    loss_fn = loss_for(model)
    before = loss_fn(model, x, y)[0]
    trained, log = train(model, x, y, x, y, rng, epochs=1, batch_size=1024)
    assert loss_fn(trained, x, y)[0] < before
    assert log.best_epoch == 0


def _small_gaussian_run(seed):
    ds = SyntheticDataset(DatasetKind.SINGLE_GAUSSIAN)
    sp = make_splits(ds, 4000, 1000, 10, seed)
    model = MlpModel.init(HeadKind.WTA_SCORING, 16, 2, stream(seed, "init"), hidden=(32, 32))
    return train(model, sp.x_train, sp.y_train, sp.x_val, sp.y_val, stream(seed, "shuffle"),
                 epochs=3, batch_size=256)


def test_training_is_deterministic():
    a, log_a = _small_gaussian_run(4)
    b, log_b = _small_gaussian_run(4)
    np.testing.assert_array_equal(a.flat(), b.flat())
    assert log_a.val_loss == log_b.val_loss


@pytest.fixture(scope="module")
def gaussian_model():
    ds = SyntheticDataset(DatasetKind.SINGLE_GAUSSIAN)
    sp = make_splits(ds, 10_000, 2_500, 10, 0)
    model = MlpModel.init(HeadKind.WTA_SCORING, 16, 2, stream(0, "init"))
    trained, _ = train(model, sp.x_train, sp.y_train, sp.x_val, sp.y_val, stream(0, "shuffle"), epochs=30)
    return trained


def test_trained_outputs_in_range(gaussian_model):
    hs = gaussian_model.forward(np.linspace(0, 1, 11))
    assert np.all(np.abs(hs.points) < 1)
    raw = hs.scores.sum(axis=-1)
    assert np.all((raw > 0.8) & (raw < 1.25))


def test_hypotheses_are_cell_centroids(gaussian_model):
    ds = SyntheticDataset(DatasetKind.SINGLE_GAUSSIAN)
    hyp = gaussian_model.forward(np.array([0.5])).points[0]
    y = ds.sample_y(np.full(100_000, 0.5), np.random.default_rng(1))
    cells = assign(y, hyp)
    for k in np.unique(cells):
        centroid = y[cells == k].mean(axis=0)
        assert np.linalg.norm(centroid - hyp[k]) < 0.05
