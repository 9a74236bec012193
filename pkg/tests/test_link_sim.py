import math

import numpy as np
import pytest

from osatcom.core.errors import DimensionMismatchError, InvalidParameterError, LengthMismatchError
from osatcom.models.schemas import FadingFamily, FadingSpec, NetworkConfig, SolverOptions
from osatcom.services.link_sim import (
    assemble_received,
    baseline_network_problems,
    ber_bpsk_montecarlo,
    ber_sweep,
    convergence_stats,
    despread,
    draw_network,
    network_error_probability,
    network_problems,
    rayleigh_bpsk_ber,
    solve_beams,
    spread,
    walsh_codes,
)


def standard_error(p: float, bits: int) -> float:
    return math.sqrt(max(p * (1 - p), 1e-12) / bits)


# ---------------------------------------------------------------------------
# Spreading and the received block
# ---------------------------------------------------------------------------

def test_walsh_codes_are_orthogonal():
    codes = walsh_codes(8)
    chips = np.array([c.chips for c in codes])
    np.testing.assert_array_equal(chips @ chips.T, 8 * np.eye(8, dtype=int))


def test_walsh_code_length_must_be_power_of_two():
    with pytest.raises(InvalidParameterError):
        walsh_codes(6)


def test_spread_despread_round_trip():
    code = walsh_codes(4)[1]
    assert despread(spread(1.0, code), code) == 1.0
    symbols = np.array([1.0, -1.0, -1.0, 1.0])
    np.testing.assert_array_equal(despread(spread(symbols, code), code), symbols)


def test_cross_despread_cancels():
    first, second = walsh_codes(4)[1:3]
    assert despread(spread(1.0, first), second) == 0.0


def test_despread_length_mismatch():
    codes = walsh_codes(4)
    with pytest.raises(LengthMismatchError):
        despread(np.ones(8), codes[0])


def test_noiseless_single_cell_block(rng):
    h1 = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
    symbols = rng.choice([-1.0, 1.0], size=(16, 2))
    received = assemble_received(np.eye(2), h1, [], 0.0, symbols, rng)
    np.testing.assert_allclose(received, symbols @ h1, rtol=0, atol=1e-15)


def test_noise_only_block_has_the_requested_variance(rng):
    received = assemble_received(np.eye(2), np.eye(2), [], 0.3, np.zeros((250_000, 2)), rng)
    assert np.mean(np.abs(received) ** 2) == pytest.approx(0.3, rel=0.02)


def test_silent_interferer_changes_nothing():
    h1 = np.array([[1.0, 0.5], [0.2, 1.0]])
    symbols = np.ones((8, 2))
    alone = assemble_received(np.eye(2), h1, [], 0.1, symbols, np.random.default_rng(1))
    silent = [(np.zeros((2, 2)), np.eye(2), np.ones((8, 2)))]
    with_silent = assemble_received(np.eye(2), h1, silent, 0.1, symbols, np.random.default_rng(1))
    np.testing.assert_array_equal(alone, with_silent)


def test_mismatched_interference_block(rng):
    bad = [(np.eye(2), np.eye(2), np.ones((4, 2)))]
    with pytest.raises(DimensionMismatchError):
        assemble_received(np.eye(2), np.eye(2), bad, 0.1, np.ones((8, 2)), rng)


# ---------------------------------------------------------------------------
# Network error probability
# ---------------------------------------------------------------------------

def test_network_error_examples():
    assert network_error_probability([0.3]) == 0.3
    assert network_error_probability([0.1, 0.1]) == 0.19
    assert network_error_probability([0.5, 0.5, 0.5]) == 0.875
    assert network_error_probability([0.2, 1.0, 0.0]) == 1.0


def test_network_error_properties(rng):
    for _ in range(100):
        p = list(rng.uniform(0.0, 0.3, size=4))
        value = network_error_probability(p)
        assert value == pytest.approx(network_error_probability(p[::-1]), abs=1e-15)
        assert max(p) - 1e-15 <= value <= sum(p) + 1e-15


def test_network_error_rejects_out_of_range():
    with pytest.raises(InvalidParameterError):
        network_error_probability([0.1, 1.2])
    with pytest.raises(InvalidParameterError):
        network_error_probability([-0.1])


def test_rayleigh_closed_form():
    assert rayleigh_bpsk_ber(0.0) == 0.5
    assert rayleigh_bpsk_ber(10.0) == pytest.approx(0.5 * (1 - math.sqrt(10 / 11)))


# ---------------------------------------------------------------------------
# Monte Carlo BER
# ---------------------------------------------------------------------------

def rayleigh_link(trials: int) -> NetworkConfig:
    return NetworkConfig(
        num_cells=1,
        dim=1,
        fading=FadingSpec(family=FadingFamily.RAYLEIGH, omega=1.0),
        snr_sweep_db=[float(x) for x in range(16)],
        trials=trials,
        seed=17,
    )


def test_single_antenna_rayleigh_matches_closed_form():
    config = rayleigh_link(100_000)
    channel_sets = draw_network(config)
    solutions = solve_beams(config, channel_sets)
    for snr_db in config.snr_sweep_db:
        result = ber_bpsk_montecarlo(config, solutions, channel_sets, snr_db)
        expected = rayleigh_bpsk_ber(10.0 ** (snr_db / 10.0))
        assert abs(result.per_cell_ber[0] - expected) <= 3 * standard_error(expected, result.bits_per_cell[0])


def test_spreading_does_not_change_detection():
    results = []
    for factor in (1, 8):
        config = rayleigh_link(20_000).model_copy(update={"spreading_factor": factor})
        channel_sets = draw_network(config)
        solutions = solve_beams(config, channel_sets)
        results.append(ber_bpsk_montecarlo(config, solutions, channel_sets, 5.0).per_cell_ber[0])
    expected = rayleigh_bpsk_ber(10.0 ** 0.5)
    for ber in results:
        assert abs(ber - expected) <= 4 * standard_error(expected, 20_000)


def test_unspread_link_with_more_antennas_than_chips(small_network):
    config = NetworkConfig.model_validate({**small_network.model_dump(), "spreading_factor": 1, "trials": 500})
    channel_sets = draw_network(config)
    solutions = solve_beams(config, channel_sets)
    result = ber_bpsk_montecarlo(config, solutions, channel_sets, 5.0)
    assert len(result.per_cell_ber) == config.num_cells
    assert all(0.0 <= ber <= 0.5 for ber in result.per_cell_ber)
    assert all(bits > 0 for bits in result.bits_per_cell)


def test_vanishing_noise_gives_error_free_link(small_network):
    config = small_network.model_copy(update={"num_cells": 1, "trials": 500})
    channel_sets = draw_network(config)
    solutions = solve_beams(config, channel_sets)
    result = ber_bpsk_montecarlo(config, solutions, channel_sets, 200.0)
    assert result.per_cell_ber == [0.0]
    assert result.network_error == 0.0


def test_ber_falls_with_snr(small_network):
    channel_sets = draw_network(small_network)
    solutions = solve_beams(small_network, channel_sets)
    bers = [ber_bpsk_montecarlo(small_network, solutions, channel_sets, snr).network_error for snr in (0.0, 5.0, 10.0)]
    assert bers[0] > bers[1] > bers[2]


def test_result_does_not_depend_on_thread_count(monkeypatch, small_network):
    monkeypatch.setenv("OSATCOM_CHUNK_TRIALS", "300")
    channel_sets = draw_network(small_network)
    solutions = solve_beams(small_network, channel_sets)
    results = []
    for threads in ("1", "4"):
        monkeypatch.setenv("OSATCOM_THREADS", threads)
        results.append(ber_bpsk_montecarlo(small_network, solutions, channel_sets, 3.0))
    assert results[0] == results[1]


def test_one_solution_per_cell_required(small_network):
    channel_sets = draw_network(small_network)
    solutions = solve_beams(small_network, channel_sets)
    with pytest.raises(DimensionMismatchError):
        ber_bpsk_montecarlo(small_network, solutions[:1], channel_sets, 3.0)


def test_network_error_grows_with_cells_and_uncertainty(small_network):
    config = small_network.model_copy(update={"trials": 4000})
    results = ber_sweep(config, SolverOptions(), num_cells_sweep=[1, 2, 4], xi_sweep=[0.0, 0.2, 0.4])
    table = {(r.num_cells, r.xi, r.snr_db): r for r in results}
    assert len(table) == 3 * 3 * len(config.snr_sweep_db)

    def slack(r):
        return 3 * standard_error(r.network_error, min(r.bits_per_cell))

    for snr in config.snr_sweep_db:
        for xi in (0.0, 0.2, 0.4):
            series = [table[(cells, xi, snr)] for cells in (1, 2, 4)]
            for smaller, larger in zip(series, series[1:]):
                assert larger.network_error >= smaller.network_error - slack(smaller) - slack(larger)
        for cells in (1, 2, 4):
            series = [table[(cells, xi, snr)] for xi in (0.0, 0.2, 0.4)]
            for smaller, larger in zip(series, series[1:]):
                assert larger.network_error >= smaller.network_error - slack(smaller) - slack(larger)


def test_seeds_agree_within_standard_errors(small_network):
    channel_sets = draw_network(small_network)
    solutions = solve_beams(small_network, channel_sets)
    first = ber_bpsk_montecarlo(small_network, solutions, channel_sets, 3.0, seed=100)
    second = ber_bpsk_montecarlo(small_network, solutions, channel_sets, 3.0, seed=200)
    for cell in range(small_network.num_cells):
        p, q = first.per_cell_ber[cell], second.per_cell_ber[cell]
        bits = first.bits_per_cell[cell]
        assert abs(p - q) <= 3 * math.sqrt(2) * standard_error(0.5 * (p + q), bits)


# ---------------------------------------------------------------------------
# Convergence statistics
# ---------------------------------------------------------------------------

def convergence_ensemble(config: NetworkConfig):
    channel_sets = draw_network(config)
    return {
        "robust_bound": network_problems(config, channel_sets),
        "reverse_triangle": baseline_network_problems(config, channel_sets),
    }


def test_identical_seeds_give_zero_spread(small_network):
    config = small_network.model_copy(update={"xi": 0.2})
    rows = convergence_stats(convergence_ensemble(config), SolverOptions(), runs=3, budgets=[1, 5, 20], seed=0, run_seeds=[9, 9, 9])
    assert {r["formulation"] for r in rows} == {"robust_bound", "reverse_triangle"}
    assert len(rows) == 6
    for row in rows:
        assert row["std_dev"] == pytest.approx(0.0, abs=1e-12)


def test_spread_vanishes_with_budget(small_network):
    config = small_network.model_copy(update={"xi": 0.2})
    rows = convergence_stats(convergence_ensemble(config), SolverOptions(), runs=4, budgets=[0, 500], seed=1, perturbation=1.0)
    for formulation in ("robust_bound", "reverse_triangle"):
        start, end = [r["std_dev"] for r in rows if r["formulation"] == formulation]
        assert end <= start
        assert end < 1e-5


def test_convergence_needs_two_runs(small_network):
    with pytest.raises(InvalidParameterError):
        convergence_stats(convergence_ensemble(small_network), SolverOptions(), runs=1, budgets=[1], seed=0)
