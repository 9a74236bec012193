import math

import numpy as np
import pytest
from pydantic import ValidationError

from osatcom.core.errors import InvalidParameterError
from osatcom.models.schemas import FadingFamily, FadingSpec
from osatcom.services.channel_models import (
    apply_rain_attenuation,
    build_d_for,
    build_d_matrix,
    build_d_suzuki,
    draw_channel_set,
    draw_uncertainty,
    empirical_second_moment,
    fading_moments,
    sample_channel_matrix,
    sample_entries,
    sample_nakagami_amplitude,
    sample_suzuki_coefficient,
)

N = 1_000_000


def test_nakagami_unit_shape_is_rayleigh(rng):
    spec = FadingSpec(m=1.0, omega=1.0)
    r = sample_nakagami_amplitude(spec, rng, N)
    assert np.mean(r ** 2) == pytest.approx(1.0, rel=0.01)
    # Rayleigh: E[r^4] = 2 E[r^2]^2
    assert np.mean(r ** 4) == pytest.approx(2.0, rel=0.02)


def test_nakagami_unit_shape_matches_sampled_rayleigh(rng):
    nakagami = sample_nakagami_amplitude(FadingSpec(m=1.0, omega=1.0), rng, N)
    rayleigh = np.abs(sample_entries(FadingSpec(family=FadingFamily.RAYLEIGH, omega=1.0), rng, N))
    for order in range(1, 5):
        assert np.mean(nakagami ** order) == pytest.approx(np.mean(rayleigh ** order), rel=0.02)


def test_nakagami_fractional_shape_moments(rng):
    spec = FadingSpec(m=0.8, omega=1.0)
    r = sample_nakagami_amplitude(spec, rng, N)
    assert 0.99 <= np.mean(r ** 2) <= 1.01
    assert np.mean(r ** 4) == pytest.approx(1.0 + 1.0 / 0.8, rel=0.02)


def test_nakagami_rejects_bad_shape(rng):
    spec = FadingSpec.model_construct(m=-1.0, omega=1.0, log_mu=0.0, log_sigma=0.5, mean_sq=0.0)
    with pytest.raises(InvalidParameterError):
        sample_nakagami_amplitude(spec, rng, 10)


def test_fading_spec_validation():
    with pytest.raises(ValidationError):
        FadingSpec(m=-1.0)
    with pytest.raises(ValidationError):
        FadingSpec(family=FadingFamily.RAYLEIGH, mean_sq=0.3)


def test_suzuki_degenerate_shadowing(rng):
    spec = FadingSpec(family=FadingFamily.SUZUKI, log_mu=0.0, log_sigma=0.0, omega=1.0)
    h = sample_suzuki_coefficient(spec, rng, N)
    assert np.mean(np.abs(h) ** 2) == pytest.approx(1.0, rel=0.01)
    assert abs(np.mean(h)) < 5e-3


def test_suzuki_second_moment_and_zero_mean(rng):
    spec = FadingSpec(family=FadingFamily.SUZUKI, log_mu=0.0, log_sigma=0.5, omega=1.0)
    h = sample_suzuki_coefficient(spec, rng, N)
    second = np.mean(np.abs(h) ** 2)
    assert second == pytest.approx(math.exp(0.5), rel=0.02)
    assert abs(np.mean(h)) < 5e-3 * math.sqrt(second)
    assert fading_moments(spec) == (0.0, pytest.approx(math.exp(0.5)))


def test_rayleigh_entries_zero_mean_unit_variance(rng):
    spec = FadingSpec(family=FadingFamily.RAYLEIGH, omega=1.0)
    h = sample_channel_matrix(spec, 2, rng, size=250_000)
    assert np.all(np.abs(h.mean(axis=0)) < 1e-2)
    np.testing.assert_allclose(np.var(h, axis=0), np.ones((2, 2)), rtol=0.02)


def test_build_d_matrix_examples():
    np.testing.assert_allclose(build_d_matrix(0.0, 1.0, 2).d, np.diag([2.0, 2.0]))
    np.testing.assert_allclose(build_d_matrix(1.0, 1.0, 2).d, [[4.0, 2.0], [2.0, 4.0]])


def test_build_d_suzuki_examples():
    np.testing.assert_allclose(build_d_suzuki(0.0, 1.0, 2).d, np.diag([2.0, 2.0]))
    np.testing.assert_allclose(build_d_suzuki(0.5, 0.5, 2).d, np.diag([2.0, 2.0]))


def test_build_d_rejects_negative_moments():
    with pytest.raises(InvalidParameterError):
        build_d_matrix(-0.1, 1.0, 2)
    with pytest.raises(InvalidParameterError):
        build_d_suzuki(0.0, 1.0, 0)


def test_d_matrix_matches_sampled_nakagami_channels(rng, nakagami_spec):
    channels = sample_channel_matrix(nakagami_spec, 2, rng, size=N)
    expected = build_d_for(nakagami_spec, 2).d
    np.testing.assert_allclose(empirical_second_moment(channels), expected, rtol=0.02, atol=0.02 * np.abs(expected).max())


def test_d_matrix_matches_unit_mean_unit_variance_channels(rng):
    spec = FadingSpec(family=FadingFamily.LOGNORMAL, log_mu=0.0, log_sigma=0.0, mean_sq=1.0)
    alpha, beta = fading_moments(spec)
    assert (alpha, beta) == (1.0, 1.0)
    channels = sample_channel_matrix(spec, 2, rng, size=N)
    np.testing.assert_allclose(empirical_second_moment(channels), [[4.0, 2.0], [2.0, 4.0]], rtol=0.02, atol=0.08)


def test_d_suzuki_matches_sampled_channels(rng):
    spec = FadingSpec(family=FadingFamily.SUZUKI, log_mu=0.0, log_sigma=0.0, omega=1.0)
    channels = sample_channel_matrix(spec, 2, rng, size=N)
    np.testing.assert_allclose(empirical_second_moment(channels), build_d_for(spec, 2).d, rtol=0.02, atol=0.04)


def test_scalar_channel_second_moment(nakagami_spec):
    d = build_d_for(nakagami_spec, 1)
    assert d.d.shape == (1, 1)
    assert d.d[0, 0].real == pytest.approx(nakagami_spec.beta + nakagami_spec.alpha)


def test_rain_attenuation():
    assert apply_rain_attenuation(4.0, 0.0) == 4.0
    assert apply_rain_attenuation(10.0, 10.0) == 1.0
    assert apply_rain_attenuation(1.0, 3.0) == pytest.approx(0.5012, abs=1e-4)
    with pytest.raises(InvalidParameterError):
        apply_rain_attenuation(-1.0, 3.0)


def test_rain_attenuation_composes(rng):
    for _ in range(1000):
        snr, a, b = rng.uniform(0.0, 100.0), rng.uniform(0.0, 20.0), rng.uniform(0.0, 20.0)
        combined = apply_rain_attenuation(snr, a + b)
        assert combined == pytest.approx(apply_rain_attenuation(apply_rain_attenuation(snr, a), b), rel=1e-13)


def test_d_matrices_are_psd(rng):
    for _ in range(1000):
        dim = int(rng.integers(1, 6))
        alpha, beta = rng.uniform(0.0, 2.0), rng.uniform(0.0, 2.0)
        for d in (build_d_matrix(alpha, beta, dim), build_d_suzuki(0.0, beta, dim)):
            scale = np.linalg.norm(d.d)
            assert np.linalg.eigvalsh(d.d).min() >= -1e-12 * scale


def test_uncertainty_draws_respect_the_ball(rng):
    inside = draw_uncertainty(2, 0.3, rng, size=5000)
    norms = np.linalg.norm(inside.reshape(5000, -1), axis=1)
    assert norms.max() <= 0.3 + 1e-12
    on_sphere = draw_uncertainty(3, 0.3, rng, size=100, on_sphere=True)
    np.testing.assert_allclose(np.linalg.norm(on_sphere.reshape(100, -1), axis=1), 0.3, rtol=1e-12)


def test_channel_set_has_one_estimate_per_neighbor(rng, nakagami_spec):
    channels = draw_channel_set(nakagami_spec, 2, 4, -10.0, rng)
    assert channels.h1.shape == (2, 2)
    assert len(channels.h2_estimates) == 3
