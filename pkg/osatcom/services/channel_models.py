"""Fading channel realizations and the second-moment matrix D.

The SNR of a cell is Tr{Q D}, where D = E[H Hᴴ] depends only on the per-entry
moments (alpha = squared mean, beta = variance) of the main channel.
"""
import logging
import math
from typing import Optional, Tuple

import numpy as np

from osatcom.core.errors import InvalidParameterError
from osatcom.models.schemas import ChannelSet, DMatrix, FadingFamily, FadingSpec

logger = logging.getLogger(__name__)


def _check_finite(spec: FadingSpec) -> None:
    values = (spec.m, spec.omega, spec.log_mu, spec.log_sigma, spec.mean_sq)
    if not all(math.isfinite(v) for v in values):
        raise InvalidParameterError(f"non-finite fading parameter in {spec!r}")


def fading_moments(spec: FadingSpec) -> Tuple[float, float]:
    """(alpha, beta) of one channel entry for any fading family."""
    _check_finite(spec)
    return spec.alpha, spec.beta


def complex_gaussian(rng: np.random.Generator, size, power: float = 1.0) -> np.ndarray:
    scale = math.sqrt(power / 2.0)
    return scale * (rng.standard_normal(size) + 1j * rng.standard_normal(size))


def _uniform_phase(rng: np.random.Generator, size) -> np.ndarray:
    return np.exp(1j * rng.uniform(0.0, 2.0 * np.pi, size))


def sample_nakagami_amplitude(spec: FadingSpec, rng: np.random.Generator, size=None):
    """Nakagami-m amplitude via the Gamma-power transform r = sqrt(G), G ~ Gamma(m, omega/m).

    Exact for any m > 0, including the non-integer m = 0.8 the link budget uses.
    """
    if spec.m <= 0 or spec.omega <= 0:
        raise InvalidParameterError(f"Nakagami requires m > 0 and omega > 0, got m={spec.m}, omega={spec.omega}")
    _check_finite(spec)
    return np.sqrt(rng.gamma(shape=spec.m, scale=spec.omega / spec.m, size=size))


def sample_lognormal_multiplier(spec: FadingSpec, rng: np.random.Generator, size=None):
    if spec.log_sigma < 0:
        raise InvalidParameterError(f"log_sigma must be >= 0, got {spec.log_sigma}")
    _check_finite(spec)
    return rng.lognormal(mean=spec.log_mu, sigma=spec.log_sigma, size=size)


def sample_suzuki_coefficient(spec: FadingSpec, rng: np.random.Generator, size=None):
    """h = L * g with L Log-normal shadowing and g ~ CN(0, omega)."""
    _check_finite(spec)
    shadowing = sample_lognormal_multiplier(spec, rng, size)
    return shadowing * complex_gaussian(rng, size, spec.omega)


def sample_entries(spec: FadingSpec, rng: np.random.Generator, size) -> np.ndarray:
    """Independent complex entries with mean sqrt(alpha) and variance beta."""
    _check_finite(spec)
    mean = math.sqrt(spec.mean_sq)
    if spec.family == FadingFamily.RAYLEIGH:
        return complex_gaussian(rng, size, spec.omega)
    if spec.family == FadingFamily.SUZUKI:
        return sample_suzuki_coefficient(spec, rng, size)
    if spec.family == FadingFamily.NAKAGAMI:
        amplitude = sample_nakagami_amplitude(spec, rng, size)
    else:
        amplitude = sample_lognormal_multiplier(spec, rng, size)
    return mean + amplitude * _uniform_phase(rng, size)


def sample_channel_matrix(spec: FadingSpec, dim: int, rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
    """One dim x dim channel, or a (size, dim, dim) stack when size is given."""
    if dim < 1:
        raise InvalidParameterError(f"dim must be >= 1, got {dim}")
    shape = (dim, dim) if size is None else (size, dim, dim)
    return sample_entries(spec, rng, shape)


def empirical_second_moment(channels: np.ndarray) -> np.ndarray:
    """Monte Carlo estimate of E[H Hᴴ] over a (n, M, M) stack."""
    return np.einsum("nik,njk->ij", channels, channels.conj()) / channels.shape[0]


def _check_moments(alpha: float, beta: float, dim: int) -> None:
    if alpha < 0 or beta < 0:
        raise InvalidParameterError(f"alpha and beta must be >= 0, got alpha={alpha}, beta={beta}")
    if dim < 1:
        raise InvalidParameterError(f"dim must be >= 1, got {dim}")


def build_d_matrix(alpha: float, beta: float, dim: int) -> DMatrix:
    """D = M[(beta + alpha) on the diagonal, alpha elsewhere]."""
    _check_moments(alpha, beta, dim)
    d = dim * (alpha * np.ones((dim, dim)) + beta * np.eye(dim))
    return DMatrix(d=d.astype(complex), alpha=alpha, beta=beta, dim=dim)


def build_d_suzuki(alpha: float, beta: float, dim: int) -> DMatrix:
    """Zero-mean composite fading collapses D to M(beta + alpha) I."""
    _check_moments(alpha, beta, dim)
    d = dim * (alpha + beta) * np.eye(dim)
    return DMatrix(d=d.astype(complex), alpha=alpha, beta=beta, dim=dim)


def build_d_for(spec: FadingSpec, dim: int) -> DMatrix:
    alpha, beta = fading_moments(spec)
    if spec.family == FadingFamily.SUZUKI:
        return build_d_suzuki(alpha, beta, dim)
    return build_d_matrix(alpha, beta, dim)


def apply_rain_attenuation(snr_linear: float, a_r_db: float) -> float:
    """Scale a linear SNR by the rain loss 10^(-A_R/10)."""
    if snr_linear < 0:
        raise InvalidParameterError(f"snr_linear must be >= 0, got {snr_linear}")
    return snr_linear / 10.0 ** (a_r_db / 10.0)


def draw_uncertainty(dim: int, xi: float, rng: np.random.Generator, size: Optional[int] = None, on_sphere: bool = False) -> np.ndarray:
    """Error matrices uniform in (or on) the Frobenius ball of radius xi."""
    shape = (dim, dim) if size is None else (size, dim, dim)
    direction = complex_gaussian(rng, shape)
    norms = np.linalg.norm(direction.reshape(-1, dim * dim), axis=1)
    if size is None:
        norms = norms[0]
    else:
        norms = norms[:, None, None]
    direction = direction / norms
    if on_sphere:
        return xi * direction
    # 2 M^2 real degrees of freedom
    radius = xi * rng.uniform(0.0, 1.0, None if size is None else (size, 1, 1)) ** (1.0 / (2 * dim * dim))
    return radius * direction


def draw_channel_set(spec: FadingSpec, dim: int, num_cells: int, cross_gain_db: float, rng: np.random.Generator) -> ChannelSet:
    """Main channel plus one interference-channel estimate per other cell."""
    gain = math.sqrt(10.0 ** (cross_gain_db / 10.0))
    h1 = sample_channel_matrix(spec, dim, rng)
    h2 = [gain * sample_channel_matrix(spec, dim, rng) for _ in range(num_cells - 1)]
    return ChannelSet(h1=h1, h2_estimates=h2, dim=dim)
