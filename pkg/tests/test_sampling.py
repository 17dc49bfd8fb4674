import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from beamprior.diffusion import encode_prior, linear_schedule, make_denoiser
from beamprior.errors import ConfigError, NumericError
from beamprior.sampling import (
    SamplerConfig,
    ddim_ladder,
    ddim_sample,
    ddpm_sample,
    normalize_prior,
    sample_priors,
    ue_noise,
)

SCHED = linear_schedule()


class ExactNoise:
    """Denoiser that knows the clean target and returns exactly the injected noise."""

    n_beam = 8

    def __init__(self, z0, sched):
        self.z0, self.sched = np.asarray(z0), sched

    def predict(self, y, x, t):
        ab = self.sched.alpha_bar[np.asarray(t)][:, None]
        return (y - np.sqrt(ab) * self.z0) / np.sqrt(1 - ab)


@pytest.fixture(scope="module")
def model():
    m = make_denoiser("mlp_small", 5, seed=0)
    m.trained_T = 500
    return m


def test_ddpm_exact_denoiser_recovers_target():
    z0 = encode_prior([0.05, 0.6, 0.15, 0.1, 0.1, 0.0, 0.0, 0.0])
    oracle = ExactNoise(z0, SCHED)
    out = ddpm_sample(oracle, np.zeros((20, 3)), SCHED, rng=np.random.default_rng(0))
    assert np.abs(out - z0).max() < 0.1
    np.testing.assert_allclose(out, np.broadcast_to(z0, out.shape), atol=1e-8)


@pytest.mark.parametrize("eta", [0.0, 0.5, 1.0])
def test_ddim_exact_denoiser_recovers_target(eta):
    z0 = encode_prior([0.0, 0.0, 0.0, 0.9, 0.1, 0.0, 0.0, 0.0])
    out = ddim_sample(ExactNoise(z0, SCHED), np.zeros((20, 3)), SCHED, 50, eta, rng=np.random.default_rng(1))
    assert np.abs(out - z0).max() < 0.1


def test_ddpm_seeded_determinism_and_finiteness(model):
    x = np.random.default_rng(0).normal(size=(6, 5))
    a = ddpm_sample(model, x, SCHED, rng=np.random.default_rng(3))
    b = ddpm_sample(model, x, SCHED, rng=np.random.default_rng(3))
    np.testing.assert_array_equal(a, b)
    assert a.shape == (6, 8) and np.all(np.isfinite(a))


def test_ddim_is_function_of_initial_noise(model):
    x = np.random.default_rng(0).normal(size=(4, 5))
    yT = np.random.default_rng(9).standard_normal((4, 1, 8))
    a = ddim_sample(model, x, SCHED, 50, 0.0, noise=yT)
    b = ddim_sample(model, x, SCHED, 50, 0.0, noise=yT.copy())
    np.testing.assert_array_equal(a, b)


def test_ddpm_last_step_adds_no_noise():
    # with T = 1 the only step is t = 0, so the output ignores everything but y_T
    sched = linear_schedule(1, 1e-4, 0.02)
    m = make_denoiser("mlp_small", 3, seed=0)
    m.trained_T = 1
    noise = np.random.default_rng(0).standard_normal((2, 1, 8))
    a = ddpm_sample(m, np.zeros((2, 3)), sched, noise=noise)
    eps = m.predict(noise[:, 0], np.zeros((2, 3)), np.zeros(2, int))
    np.testing.assert_allclose(a, (noise[:, 0] - 1e-4 / np.sqrt(1e-4) * eps) / np.sqrt(1 - 1e-4), rtol=1e-13)


def test_ladder():
    np.testing.assert_array_equal(ddim_ladder(500, 500), np.arange(500))
    lad = ddim_ladder(500, 50)
    assert len(lad) == 50 and lad[0] == 0 and lad[-1] == 490 and set(np.diff(lad)) == {10}
    with pytest.raises(ConfigError):
        ddim_ladder(500, 501)


def test_sampler_config_validation(model):
    with pytest.raises(ConfigError):
        SamplerConfig(kind="ddpm", steps=50).resolved_steps(500)
    with pytest.raises(ConfigError):
        SamplerConfig(kind="ddim", steps=600).resolved_steps(500)
    with pytest.raises(ConfigError):
        SamplerConfig(kind="ddim", eta=1.5)
    with pytest.raises(ConfigError):
        SamplerConfig(kind="euler")
    with pytest.raises(ConfigError):
        ddpm_sample(model, np.zeros((1, 5)), linear_schedule(100))
    assert SamplerConfig(kind="ddim").resolved_steps(500) == 50


def test_normalize_prior_examples():
    p = np.array([0.1, 0.2, 0.3, 0.4, 0, 0, 0, 0])
    np.testing.assert_allclose(normalize_prior(2 * p - 1), p, atol=1e-12)
    np.testing.assert_array_equal(normalize_prior(np.full(8, -1.0)), np.full(8, 0.125))
    np.testing.assert_array_equal(normalize_prior(np.full(8, -3.0)), np.full(8, 0.125))
    np.testing.assert_array_equal(normalize_prior([1.0] + [-1.0] * 7), [1.0] + [0.0] * 7)
    with pytest.raises(NumericError):
        normalize_prior([np.nan] * 8)


@given(arrays(np.float64, (3, 8), elements=st.floats(-50, 50)))
def test_normalize_prior_is_distribution(z):
    p = normalize_prior(z)
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)


def test_ue_noise_streams():
    a = ue_noise(0, [3, 7], 5)
    b = ue_noise(0, [7], 5)
    np.testing.assert_array_equal(a[1], b[0])
    assert not np.array_equal(ue_noise(1, [3], 5), a[:1])
    assert not np.array_equal(ue_noise(0, [3], 5, sample_index=1), a[:1])


@pytest.mark.parametrize("kind", ["ddpm", "ddim"])
def test_sample_priors_independent_of_batching_and_jobs(model, kind):
    rng = np.random.default_rng(2)
    x = rng.normal(size=(300, 5))
    ids = np.arange(1000, 1300)
    cfg = SamplerConfig(kind=kind, seed=4)
    full = sample_priors(model, x, SCHED, cfg, ids)
    np.testing.assert_allclose(full.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(full >= 0)
    np.testing.assert_array_equal(sample_priors(model, x, SCHED, cfg, ids, jobs=2), full)
    pick = [5, 260, 299]
    np.testing.assert_allclose(sample_priors(model, x[pick], SCHED, cfg, ids[pick]), full[pick], atol=1e-12)


def test_multi_sample_average(model):
    x = np.random.default_rng(0).normal(size=(4, 5))
    one = sample_priors(model, x, SCHED, SamplerConfig(kind="ddim", seed=0), np.arange(4))
    three = sample_priors(model, x, SCHED, SamplerConfig(kind="ddim", seed=0, n_samples=3), np.arange(4))
    np.testing.assert_allclose(three.sum(axis=1), 1.0, atol=1e-12)
    assert not np.array_equal(one, three)
