import numpy as np
import pytest

from osatcom.models.schemas import FadingSpec, NetworkConfig


@pytest.fixture
def rng():
    """Seeded generator so Monte Carlo assertions are repeatable."""
    return np.random.default_rng(20240611)


@pytest.fixture
def nakagami_spec():
    return FadingSpec(m=0.8, omega=1.0, mean_sq=0.5)


@pytest.fixture
def small_network():
    """Two 2x2 cells with a short SNR sweep, cheap enough for the solver and Monte Carlo."""
    return NetworkConfig(
        num_cells=2,
        dim=2,
        fading=FadingSpec(m=0.8, omega=1.0, mean_sq=0.5),
        snr_sweep_db=[0.0, 5.0, 10.0],
        trials=2000,
        seed=5,
    )


def random_psd(rng: np.random.Generator, dim: int, scale: float = 1.0) -> np.ndarray:
    b = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    return scale * (b.conj().T @ b) / dim


def random_channel(rng: np.random.Generator, dim: int, scale: float = 1.0) -> np.ndarray:
    return scale * (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))) / np.sqrt(2.0)
