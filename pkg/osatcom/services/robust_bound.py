"""Worst-case inter-cell interference over a Frobenius-ball channel error.

Weights are carried as the Gram matrix Q = BᴴB. Channels act on the right of B
(row convention), so the power leaving B through H is ‖B H‖_F² = Tr{Q H Hᴴ}.
"""
import logging
import math
from typing import Optional

import numpy as np

from osatcom.core.config import get_settings
from osatcom.core.errors import DimensionMismatchError, NotPSDError
from osatcom.models.schemas import InterferenceBound, UncertaintyBall
from osatcom.services.channel_models import draw_uncertainty

logger = logging.getLogger(__name__)


def _check_square(matrix: np.ndarray, dim: int, name: str) -> None:
    if matrix.ndim != 2 or matrix.shape != (dim, dim):
        raise DimensionMismatchError(f"{name} has shape {matrix.shape}, expected ({dim}, {dim})")


def is_psd(matrix: np.ndarray, tol: Optional[float] = None) -> bool:
    """Eigenvalues >= -tol * ‖matrix‖_F count as non-negative."""
    if tol is None:
        tol = get_settings().psd_tol
    hermitian = 0.5 * (matrix + matrix.conj().T)
    scale = np.linalg.norm(matrix)
    if scale == 0:
        return True
    return bool(np.linalg.eigvalsh(hermitian).min() >= -tol * scale)


def check_psd(matrix: np.ndarray, name: str = "q") -> None:
    if not is_psd(matrix):
        raise NotPSDError(f"{name} is not positive semidefinite")


def weights_from_gram(q: np.ndarray) -> np.ndarray:
    """A weight matrix B with BᴴB = Q (B = Λ^½ Uᴴ from Q = U Λ Uᴴ)."""
    eigenvalues, vectors = np.linalg.eigh(0.5 * (q + q.conj().T))
    return np.sqrt(np.clip(eigenvalues, 0.0, None))[:, None] * vectors.conj().T


def kron_lift_norm(delta: np.ndarray, dim: int) -> float:
    """‖Δ ⊗ I_M‖_F = √M ‖Δ‖_F."""
    _check_square(delta, dim, "delta")
    return math.sqrt(dim) * float(np.linalg.norm(delta))


def effective_interference_matrix(h2_hat: np.ndarray, ball: UncertaintyBall) -> np.ndarray:
    """G = H̃H̃ᴴ + √M ξ (√M ξ + 2‖H̃‖_F) I_M."""
    dim = ball.dim
    _check_square(h2_hat, dim, "h2_hat")
    lift = math.sqrt(dim) * ball.xi
    robust_term = lift * (lift + 2.0 * float(np.linalg.norm(h2_hat)))
    return h2_hat @ h2_hat.conj().T + robust_term * np.eye(dim)


def worst_case_interference(q: np.ndarray, h2_hat: np.ndarray, ball: UncertaintyBall) -> InterferenceBound:
    _check_square(q, ball.dim, "q")
    check_psd(q)
    g = effective_interference_matrix(h2_hat, ball)
    value = float(np.real(np.trace(q @ g)))
    return InterferenceBound(value=max(value, 0.0), effective_matrix=g)


def realized_interference(b: np.ndarray, h2_true: np.ndarray) -> float:
    """‖(I_M ⊗ H₂ᵀ) vec(B)‖² with row-major vec, i.e. the power of B H₂."""
    dim = h2_true.shape[0]
    _check_square(h2_true, dim, "h2_true")
    _check_square(b, dim, "b")
    lifted = np.kron(np.eye(dim), h2_true.T)
    return float(np.linalg.norm(lifted @ b.reshape(-1)) ** 2)


def interference_trace(q: np.ndarray, h2_true: np.ndarray) -> float:
    """Tr{Q H₂ H₂ᴴ}, the trace form of realized_interference."""
    dim = h2_true.shape[0]
    _check_square(h2_true, dim, "h2_true")
    _check_square(q, dim, "q")
    return float(np.real(np.trace(q @ h2_true @ h2_true.conj().T)))


def nominal_signal_power(q: np.ndarray, h1_hat: np.ndarray) -> float:
    return interference_trace(q, h1_hat)


def worst_case_signal_lower_bound(q: np.ndarray, h1_hat: np.ndarray, ball: UncertaintyBall) -> float:
    """Reverse-triangle floor max(0, √Tr{Q H̃H̃ᴴ} - √M ξ √Tr{Q})².

    Uses ‖P - Q‖_F >= ‖P‖_F - ‖Q‖_F on the signal side; it is the comparison
    baseline, not part of the interference bound.
    """
    _check_square(q, ball.dim, "q")
    _check_square(h1_hat, ball.dim, "h1_hat")
    check_psd(q)
    nominal = max(nominal_signal_power(q, h1_hat), 0.0)
    power = max(float(np.real(np.trace(q))), 0.0)
    floor = math.sqrt(nominal) - math.sqrt(ball.dim) * ball.xi * math.sqrt(power)
    return max(floor, 0.0) ** 2


def worst_case_by_sampling(
    b: np.ndarray,
    h2_hat: np.ndarray,
    xi: float,
    rng: np.random.Generator,
    samples: int = 10_000,
    refine_steps: int = 50,
) -> float:
    """Largest realized interference found on the ξ-sphere.

    Random sphere points seed a projected gradient ascent on Δ ↦ ‖B(H̃ + Δ)‖²;
    the result is a lower estimate of the true maximum.
    """
    dim = h2_hat.shape[0]
    if xi == 0:
        return realized_interference(b, h2_hat)
    deltas = draw_uncertainty(dim, xi, rng, size=samples, on_sphere=True)
    products = np.einsum("ij,njk->nik", b, h2_hat[None, :, :] + deltas)
    powers = np.sum(np.abs(products) ** 2, axis=(1, 2))
    delta = deltas[int(np.argmax(powers))]
    best = float(powers.max())
    gram = b.conj().T @ b
    step = 0.5
    for _ in range(refine_steps):
        # gradient of ‖B(H + Δ)‖² w.r.t. conj(Δ) is BᴴB (H + Δ)
        candidate = delta + step * (gram @ (h2_hat + delta))
        candidate *= xi / np.linalg.norm(candidate)
        value = float(np.linalg.norm(b @ (h2_hat + candidate)) ** 2)
        if value > best:
            best, delta = value, candidate
        else:
            step *= 0.5
    return best
