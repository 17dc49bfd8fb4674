import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from beamprior.baselines import (
    aoa_prior,
    load_baseline,
    make_baseline,
    predict_prior,
    predict_prior_classifier,
    predict_prior_regressor,
    random_prior,
    save_baseline,
    train_classifier,
    train_regressor,
    uniform_prior,
)
from beamprior.codebook import dft_codebook
from beamprior.diffusion import TrainConfig
from beamprior.errors import ConfigError, ShapeError
from beamprior.metrics import score

CB = dft_codebook(32, 8)


def clusters(n_per=150, seed=0):
    rng = np.random.default_rng(seed)
    centers = rng.normal(scale=6.0, size=(8, 3))
    labels = np.repeat(np.arange(8), n_per)
    x = centers[labels] + rng.normal(scale=0.3, size=(8 * n_per, 3))
    return x, labels


@pytest.fixture(scope="module")
def separable():
    x, y = clusters()
    return x, y, train_classifier(x, y, TrainConfig(epochs=20, seed=0))


def test_classifier_separable(separable):
    x, y, model = separable
    p = predict_prior_classifier(model, x)
    assert np.mean(p.argmax(axis=1) == y) >= 0.95
    assert model.loss_trace[-1] < model.loss_trace[0]
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)


def test_classifier_deterministic(separable):
    x, y, model = separable
    again = train_classifier(x, y, TrainConfig(epochs=20, seed=0))
    for a, b in zip(model.net.params(), again.net.params()):
        np.testing.assert_array_equal(a, b)


def test_zero_weight_classifier_is_uniform():
    m = make_baseline("classifier", 5)
    for p in m.net.params():
        p[...] = 0.0
    np.testing.assert_array_equal(predict_prior(m, np.ones((3, 5))), uniform_prior(8, 3))
    with pytest.raises(ShapeError):
        predict_prior(m, np.ones((3, 4)))
    with pytest.raises(ConfigError):
        make_baseline("vae", 5)


def test_regressor_learns_mean_prior():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(4096, 5))
    p_bar = np.array([0.4, 0.25, 0.15, 0.1, 0.05, 0.05, 0.0, 0.0])
    m = train_regressor(x, np.tile(p_bar, (4096, 1)), TrainConfig(epochs=20, seed=0))
    pred = predict_prior_regressor(m, rng.normal(size=(200, 5)))
    # Adam keeps individual outputs jittering at the lr scale; the average sits on p_bar
    assert np.abs(pred.mean(axis=0) - p_bar).max() < 1e-2
    assert np.abs(pred - p_bar).max() < 5e-2
    again = train_regressor(x, np.tile(p_bar, (4096, 1)), TrainConfig(epochs=20, seed=0))
    np.testing.assert_array_equal(predict_prior(again, x[:10]), predict_prior(m, x[:10]))


def test_regressor_outputs_valid_prior():
    m = make_baseline("regressor", 3, seed=2)
    p = predict_prior_regressor(m, np.random.default_rng(1).normal(scale=10, size=(500, 3)))
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
    m.net.layers[-1].bias[:] = -1e6
    np.testing.assert_array_equal(predict_prior_regressor(m, np.zeros((2, 3))), uniform_prior(8, 2))


def test_aoa_examples():
    theta = CB.steering_angles()[3]
    np.testing.assert_array_equal(aoa_prior(theta, True, CB), np.eye(8)[3])
    np.testing.assert_array_equal(aoa_prior(0.7, False, CB), np.full(8, 0.125))


def test_aoa_matches_exhaustive_search():
    angles = np.random.default_rng(0).uniform(-np.pi, np.pi, 10_000)
    got = aoa_prior(angles, np.ones_like(angles, dtype=bool), CB).argmax(axis=1)
    sines = CB.steering_sines()
    for a, g in zip(angles, got):
        dists = [abs(np.sin(a) - sines[b]) for b in range(8)]
        assert g == min(range(8), key=lambda b: (dists[b], b))


@given(st.integers(0, 2**32 - 1))
def test_random_prior_valid(seed):
    p = random_prior(np.random.default_rng(seed))
    assert p.shape == (8,) and np.all(p > 0)
    assert abs(p.sum() - 1) < 1e-12


def test_uniform_prior():
    u = uniform_prior()
    assert u.sum() == 1.0 and u.max() - u.min() == 0


def test_random_prior_hit1_is_one_eighth():
    n = 20_000
    rng = np.random.default_rng(0)
    b_star = rng.integers(0, 8, n)
    gains = np.eye(8)[b_star] + 0.01
    rep = score(random_prior(rng, 8, n), gains, b_star)
    sigma = np.sqrt(0.125 * 0.875 / n)
    assert abs(rep.hit[0] - 0.125) < 3 * sigma


def test_baseline_checkpoint_round_trip(tmp_path, separable):
    x, _, model = separable
    save_baseline(tmp_path / "c.ckpt", model)
    back, norm, meta = load_baseline(tmp_path / "c.ckpt")
    assert back.kind == "classifier" and norm is None and back.loss_trace == model.loss_trace
    np.testing.assert_array_equal(predict_prior(back, x), predict_prior(model, x))
