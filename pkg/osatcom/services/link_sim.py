"""Monte Carlo link evaluation of a multi-cell CDMA down-link.

Rows of a block are symbol (chip) times and columns are streams: cell a
receives Y = S_a B_a H_1 + sum_b S_b B_b H_2,b + N. Stream k of every cell
uses Walsh code k, so despreading separates a cell's own streams while the
same-index stream of every neighbor leaks through its interference channel.

Random streams are spawned from the experiment seed with fixed spawn keys
per (cell, chunk), so results do not depend on the worker count.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import hadamard

from osatcom.core.config import get_settings
from osatcom.core.errors import DimensionMismatchError, InvalidParameterError, LengthMismatchError
from osatcom.models.schemas import (
    BeamSolution,
    CellProblem,
    ChannelSet,
    NetworkConfig,
    SolverOptions,
    SpreadingCode,
    TrialResult,
    UncertaintyBall,
)
from osatcom.services.beamform_optimizer import baseline_cell_problem, build_cell_problem, solve_cell, solve_network
from osatcom.services.channel_models import (
    build_d_for,
    complex_gaussian,
    draw_channel_set,
    draw_uncertainty,
    sample_channel_matrix,
)
from osatcom.services.robust_bound import weights_from_gram

logger = logging.getLogger(__name__)

MIN_ERRORS = 100
# streams weaker than this fraction of the strongest carry no data
_ACTIVE_STREAM_TOL = 1e-4

# spawn-key namespaces
_NETWORK_KEY = 1
_TRIAL_KEY = 3
_CONVERGENCE_KEY = 4


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


# ---------------------------------------------------------------------------
# Spreading
# ---------------------------------------------------------------------------

def walsh_codes(length: int) -> List[SpreadingCode]:
    """Rows of the Sylvester-Hadamard matrix: mutually orthogonal ±1 codes."""
    if length < 1 or length & (length - 1):
        raise InvalidParameterError(f"Walsh code length must be a power of two, got {length}")
    return [SpreadingCode(chips=row) for row in hadamard(length)]


def spread(symbols, code: SpreadingCode) -> np.ndarray:
    """Chips with shape symbols.shape + (L,)."""
    return np.multiply.outer(np.asarray(symbols), code.chips)


def despread(chips, code: SpreadingCode) -> np.ndarray:
    """Correlate the last axis with the code and normalize by its length."""
    chips = np.asarray(chips)
    if chips.shape[-1] != code.length:
        raise LengthMismatchError(f"chip block of length {chips.shape[-1]} does not match code length {code.length}")
    return (chips @ code.chips) / code.length


# ---------------------------------------------------------------------------
# Received signal
# ---------------------------------------------------------------------------

def assemble_received(
    weights: np.ndarray,
    h1: np.ndarray,
    interferers: Sequence[Tuple[np.ndarray, np.ndarray, np.ndarray]],
    noise_var: float,
    symbols: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """Y = S B H₁ + sum over (B_b, H₂_b, S_b) of S_b B_b H₂_b + N.

    Stacks broadcast: symbols (n, N, M) with h1 (n, M, M) gives n blocks. The
    atmospheric impact matrix is the identity. N is circular complex Gaussian
    with variance noise_var per entry.
    """
    if noise_var < 0:
        raise InvalidParameterError(f"noise_var must be >= 0, got {noise_var}")
    try:
        received = symbols @ weights @ h1
        for b_weights, h2, b_symbols in interferers:
            leak = b_symbols @ b_weights @ h2
            if leak.shape != received.shape:
                raise DimensionMismatchError(f"interference block {leak.shape} does not match {received.shape}")
            received = received + leak
    except ValueError as e:
        if isinstance(e, DimensionMismatchError):
            raise
        raise DimensionMismatchError(str(e)) from e
    return received + complex_gaussian(rng, received.shape, noise_var)


# ---------------------------------------------------------------------------
# Network construction
# ---------------------------------------------------------------------------

def _neighbors(cell: int, num_cells: int) -> List[int]:
    return [b for b in range(num_cells) if b != cell]


def _estimate_toward(channel_sets: Sequence[ChannelSet], source: int, target: int) -> np.ndarray:
    """Cell ``source``'s estimate of its interference channel into ``target``."""
    return channel_sets[source].h2_estimates[_neighbors(source, len(channel_sets)).index(target)]


def draw_network(config: NetworkConfig, seed: Optional[int] = None) -> List[ChannelSet]:
    """Per-cell channel estimates; cell a's draws depend only on (seed, a)."""
    seed = config.seed if seed is None else seed
    return [
        draw_channel_set(config.fading, config.dim, config.num_cells, config.cross_gain_db, _stream(seed, _NETWORK_KEY, a))
        for a in range(config.num_cells)
    ]


def _caps(config: NetworkConfig) -> List[float]:
    neighbors = config.num_cells - 1
    cap = config.i_th / neighbors if config.share_interference_cap and neighbors > 0 else config.i_th
    return [cap] * neighbors


def network_problems(config: NetworkConfig, channel_sets: Sequence[ChannelSet], xi: Optional[float] = None) -> List[CellProblem]:
    xi = config.xi if xi is None else xi
    ball = UncertaintyBall(xi=xi, dim=config.dim)
    d = build_d_for(config.fading, config.dim)
    return [
        build_cell_problem(d, channels.h2_estimates, ball, config.a_r_db, config.p_th, _caps(config))
        for channels in channel_sets
    ]


def baseline_network_problems(config: NetworkConfig, channel_sets: Sequence[ChannelSet], xi: Optional[float] = None) -> List[CellProblem]:
    xi = config.xi if xi is None else xi
    ball = UncertaintyBall(xi=xi, dim=config.dim)
    d = build_d_for(config.fading, config.dim)
    return [
        baseline_cell_problem(channels.h1, channels.h2_estimates, ball, d, config.a_r_db, config.p_th, _caps(config))
        for channels in channel_sets
    ]


# ---------------------------------------------------------------------------
# Monte Carlo BER
# ---------------------------------------------------------------------------

class _Beam:
    """Weight rows of one cell and the indices of its active streams."""

    def __init__(self, solution: BeamSolution):
        self.weights = weights_from_gram(solution.q)
        powers = np.sum(np.abs(self.weights) ** 2, axis=1)
        top = powers.max() if powers.size else 0.0
        self.streams = [k for k, p in enumerate(powers) if top > 0 and p > _ACTIVE_STREAM_TOL * top]


def _stream_code(codes: List[SpreadingCode], column: int) -> SpreadingCode:
    # a single all-ones code means spreading is off and every stream shares it
    return codes[0] if len(codes) == 1 else codes[column]


def _transmit_block(bits: np.ndarray, streams: List[int], codes: List[SpreadingCode], dim: int) -> np.ndarray:
    """(n, L, M) chip block carrying the j-th active stream on Walsh code j."""
    n = bits.shape[0]
    length = codes[0].length
    block = np.zeros((n, length, dim))
    for column, k in enumerate(streams):
        block[:, :, k] = spread(2 * bits[:, column] - 1, _stream_code(codes, column)) / math.sqrt(length)
    return block


def _chunk_errors(
    config: NetworkConfig,
    beams: List[_Beam],
    channel_sets: Sequence[ChannelSet],
    codes: List[SpreadingCode],
    cell: int,
    trials: int,
    noise_var: float,
    seed: int,
    chunk: int,
) -> int:
    rng = _stream(seed, _TRIAL_KEY, cell, chunk)
    dim = config.dim
    rain = 10.0 ** (-config.a_r_db / 10.0)
    beam = beams[cell]

    h1 = math.sqrt(rain) * sample_channel_matrix(config.fading, dim, rng, size=trials)
    bits = rng.integers(0, 2, size=(trials, len(beam.streams)))
    own = _transmit_block(bits, beam.streams, codes, dim)

    interferers = []
    for b in _neighbors(cell, config.num_cells):
        h2 = _estimate_toward(channel_sets, b, cell) + draw_uncertainty(dim, config.xi, rng, size=trials)
        b_bits = rng.integers(0, 2, size=(trials, len(beams[b].streams)))
        interferers.append((beams[b].weights, h2, _transmit_block(b_bits, beams[b].streams, codes, dim)))

    received = assemble_received(beam.weights, h1, interferers, noise_var, own, rng)
    chips_last = np.moveaxis(received, 1, -1)
    errors = 0
    for column, k in enumerate(beam.streams):
        # maximum-ratio combining against the effective row B[k] H1
        effective = np.einsum("m,nmj->nj", beam.weights[k], h1)
        code = _stream_code(codes, column)
        statistic = math.sqrt(code.length) * despread(chips_last, code)
        decided = np.real(np.sum(statistic * effective.conj(), axis=1)) >= 0
        errors += int(np.count_nonzero(decided != bits[:, column].astype(bool)))
    return errors


def ber_bpsk_montecarlo(
    config: NetworkConfig,
    solutions: Sequence[BeamSolution],
    channel_sets: Sequence[ChannelSet],
    snr_db: float,
    seed: Optional[int] = None,
) -> TrialResult:
    """Per-cell BPSK error rates at one transmit SNR point.

    The SNR point sets the sky-noise variance to p_th / 10^(snr_db/10). Every
    trial draws a fresh main channel and a fresh error inside the ξ-ball around
    each neighbor's estimate.
    """
    if len(solutions) != config.num_cells or len(channel_sets) != config.num_cells:
        raise DimensionMismatchError(f"need one solution and one channel set per cell ({config.num_cells})")
    settings = get_settings()
    seed = config.seed if seed is None else seed
    noise_var = config.p_th / 10.0 ** (snr_db / 10.0)
    beams = [_Beam(s) for s in solutions]
    codes = walsh_codes(config.spreading_factor)

    chunk = settings.chunk_trials
    sizes = [min(chunk, config.trials - start) for start in range(0, config.trials, chunk)]
    tasks = [(cell, index, size) for cell in range(config.num_cells) for index, size in enumerate(sizes)]

    def run(task):
        cell, index, size = task
        return _chunk_errors(config, beams, channel_sets, codes, cell, size, noise_var, seed, index)

    with ThreadPoolExecutor(max_workers=settings.threads) as executor:
        chunk_errors = list(executor.map(run, tasks))

    error_counts = [0] * config.num_cells
    for (cell, _, _), errors in zip(tasks, chunk_errors):
        error_counts[cell] += errors
    bits_per_cell = [config.trials * len(beam.streams) for beam in beams]

    per_cell = []
    for cell, (errors, bits) in enumerate(zip(error_counts, bits_per_cell)):
        if bits == 0:
            logger.warning(f"Cell {cell} transmits nothing; reporting a coin-flip error rate")
            per_cell.append(0.5)
        else:
            per_cell.append(errors / bits)
    if min(error_counts) < MIN_ERRORS:
        logger.warning(f"Only {min(error_counts)} errors observed at {snr_db} dB; BER estimate is coarse")

    capacities = [s.capacity for s in solutions]
    return TrialResult(
        snr_db=snr_db,
        num_cells=config.num_cells,
        xi=config.xi,
        per_cell_ber=per_cell,
        network_error=network_error_probability(per_cell),
        mean_capacity=float(np.mean(capacities)),
        solver_opt_values=capacities,
        error_counts=error_counts,
        bits_per_cell=bits_per_cell,
    )


def network_error_probability(per_cell: Sequence[float]) -> float:
    """1 - prod(1 - p_a), accumulated as a running union."""
    total = 0.0
    for p in per_cell:
        if not 0.0 <= p <= 1.0:
            raise InvalidParameterError(f"probabilities must lie in [0, 1], got {p}")
        if p == 1.0:
            return 1.0
        total = total + p - total * p
    return min(max(total, 0.0), 1.0)


def rayleigh_bpsk_ber(snr_linear: float) -> float:
    """Average coherent BPSK error rate over Rayleigh fading."""
    if snr_linear < 0:
        raise InvalidParameterError(f"snr_linear must be >= 0, got {snr_linear}")
    return 0.5 * (1.0 - math.sqrt(snr_linear / (1.0 + snr_linear)))


def solve_beams(config: NetworkConfig, channel_sets: Sequence[ChannelSet], options: Optional[SolverOptions] = None) -> List[BeamSolution]:
    return solve_network(network_problems(config, channel_sets), options)


def ber_sweep(
    config: NetworkConfig,
    options: Optional[SolverOptions] = None,
    num_cells_sweep: Optional[Sequence[int]] = None,
    xi_sweep: Optional[Sequence[float]] = None,
) -> List[TrialResult]:
    """BER over the SNR sweep for every (A, ξ) pair, re-solving beams per pair."""
    results = []
    for num_cells in num_cells_sweep or [config.num_cells]:
        for xi in xi_sweep if xi_sweep is not None else [config.xi]:
            point = config.model_copy(update={"num_cells": num_cells, "xi": xi})
            channel_sets = draw_network(point)
            solutions = solve_beams(point, channel_sets, options)
            logger.info(f"Solved {num_cells} cell(s) at xi={xi}: mean capacity {np.mean([s.capacity for s in solutions]):.4f} bits")
            for snr_db in point.snr_sweep_db:
                results.append(ber_bpsk_montecarlo(point, solutions, channel_sets, snr_db))
    return results


# ---------------------------------------------------------------------------
# Solver convergence statistics
# ---------------------------------------------------------------------------

def convergence_stats(
    ensemble: Dict[str, Sequence[CellProblem]],
    options: SolverOptions,
    runs: int,
    budgets: Sequence[int],
    seed: int,
    perturbation: float = 0.5,
    run_seeds: Optional[Sequence[int]] = None,
) -> List[dict]:
    """Spread of the objective reached within each iteration budget.

    Each run starts the dual iteration from log-normally perturbed multipliers;
    the standard deviation across runs is averaged over the problems of a
    formulation. Rows are (budget, formulation, std_dev).
    """
    if runs < 2:
        raise InvalidParameterError(f"runs must be >= 2, got {runs}")
    if run_seeds is not None and len(run_seeds) != runs:
        raise InvalidParameterError("run_seeds needs one seed per run")
    budgets = list(budgets)
    horizon = max(budgets)

    rows = []
    for formulation, problems in ensemble.items():
        spreads = np.zeros((len(problems), len(budgets)))
        for p_index, problem in enumerate(problems):
            values = np.zeros((runs, len(budgets)))
            for run in range(runs):
                rng = _stream(seed, _CONVERGENCE_KEY, p_index, run) if run_seeds is None else _stream(run_seeds[run], _CONVERGENCE_KEY, p_index)
                factors = np.exp(perturbation * rng.standard_normal(len(problem.g_list) + 1))
                start = options.model_copy(update={
                    "max_iterations": horizon,
                    "initial_mu1": list(options.initial_multiplier * factors[:-1]),
                    "initial_mu2": float(options.initial_multiplier * factors[-1]),
                })
                history = solve_cell(problem, start).history
                values[run] = [history[min(k, len(history) - 1)] for k in budgets]
            spreads[p_index] = np.std(values, axis=0)
        for b_index, budget in enumerate(budgets):
            rows.append({"budget": budget, "formulation": formulation, "std_dev": float(spreads[:, b_index].mean())})
    return rows
