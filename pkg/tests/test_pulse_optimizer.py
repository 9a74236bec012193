import math

import numpy as np
import pytest
from pydantic import ValidationError

from osatcom.core.errors import InfeasibleProblemError, InvalidParameterError
from osatcom.models.schemas import BindingConstraint, DispersionSpec, PulseConfig
from osatcom.services.pulse_optimizer import (
    average_power,
    dispersion_sweep,
    osnr,
    overlap_probability,
    papr_db,
    pulse_dispersion_spec,
    pulse_width_bounds,
    solve_pulse,
    total_dispersion,
)


def test_papr_examples():
    assert papr_db(1.0, 1.0) == 0.0
    assert papr_db(1.0, 0.5) == pytest.approx(3.0103, abs=1e-4)
    assert papr_db(1.0, 0.1) == pytest.approx(10.0, rel=1e-12)


def test_papr_rejects_wide_pulses():
    with pytest.raises(InvalidParameterError):
        papr_db(1.0, 1.5)
    with pytest.raises(InvalidParameterError):
        papr_db(1.0, 0.0)


def test_average_power_examples():
    assert average_power(1.0, 1.0, 1.0) == 1.0
    assert average_power(0.5, 2.0, 1.0) == 2.0
    assert average_power(0.3, 1.0, 1.0) == pytest.approx(0.3)


def test_osnr_examples():
    assert osnr(1.0, PulseConfig()) == 1.0
    config = PulseConfig(fiber_norm_sq=2.0, noise_var=0.5)
    assert osnr(0.5, config) == pytest.approx(2.0)
    assert osnr(0.4, config) == pytest.approx(2 * osnr(0.2, config))


def test_overlap_probability_limits():
    assert overlap_probability(1e-3, 0.5, 1.0) < 1e-12
    # boundary at (T/2) / sigma(T) = sqrt(2 ln 2)
    assert overlap_probability(1.0, 1e-12, 1.0) == pytest.approx(0.1196, abs=2e-4)


def test_overlap_probability_grows_with_width_and_kappa():
    assert overlap_probability(0.6, 0.2, 1.0) > overlap_probability(0.5, 0.2, 1.0)
    assert overlap_probability(0.5, 0.4, 1.0) > overlap_probability(0.5, 0.2, 1.0)


def test_overlap_probability_rejects_bad_kappa():
    with pytest.raises(InvalidParameterError):
        overlap_probability(0.5, 1.0, 1.0)


def test_papr_bound_binds_when_osnr_is_slack():
    solution = solve_pulse(PulseConfig(papr_th_db=3.0103, osnr_tar=0.1))
    assert solution.t1 == pytest.approx(0.5, rel=1e-5)
    assert solution.binding_constraint == BindingConstraint.PAPR
    assert solution.kappa == 0.1


def test_osnr_bound_binds():
    solution = solve_pulse(PulseConfig(papr_th_db=3.0103, osnr_tar=0.8))
    assert solution.t1 == pytest.approx(0.8, rel=1e-12)
    assert solution.binding_constraint == BindingConstraint.OSNR


def test_both_bounds_bind_together():
    solution = solve_pulse(PulseConfig(papr_th_db=-10.0 * math.log10(0.8), osnr_tar=0.8))
    assert solution.binding_constraint == BindingConstraint.BOTH


def test_zero_papr_threshold_forbids_width_reduction():
    solution = solve_pulse(PulseConfig(papr_th_db=0.0, osnr_tar=0.1))
    assert solution.t1 == 1.0
    wider_kappa = overlap_probability(1.0, 0.5, 1.0)
    assert solution.overlap_prob < wider_kappa


@pytest.mark.parametrize("papr_th, osnr_tar", [(1.0, 0.1), (3.0103, 0.1), (2.0, 0.9), (6.0, 0.3)])
def test_solution_is_the_larger_bound_and_beats_the_grid(papr_th, osnr_tar):
    config = PulseConfig(papr_th_db=papr_th, osnr_tar=osnr_tar)
    solution = solve_pulse(config)
    assert solution.t1 == pytest.approx(max(pulse_width_bounds(config)), abs=1e-12)

    widths = np.linspace(solution.t1, config.bit_period, 200)
    kappas = np.linspace(config.kappa_min, 0.99, 200)
    grid_min = min(overlap_probability(t1, kappa, config.bit_period) for t1 in widths for kappa in kappas)
    assert solution.overlap_prob <= grid_min + 1e-6


def test_infeasible_osnr_target():
    with pytest.raises(InfeasibleProblemError):
        solve_pulse(PulseConfig(osnr_tar=2.0))


def test_pulse_config_validation():
    with pytest.raises(ValidationError):
        PulseConfig(kappa_min=1.5)
    with pytest.raises(ValidationError):
        PulseConfig(bit_period=0.0)


def test_total_dispersion_examples():
    assert total_dispersion(DispersionSpec(coefficients=[0.2], length_km=50.0)) == pytest.approx(10.0)
    assert total_dispersion(DispersionSpec(coefficients=[3.0, 4.0], length_km=10.0)) == pytest.approx(50.0)


def test_negative_dispersion_coefficients_rejected():
    with pytest.raises(ValidationError):
        DispersionSpec(coefficients=[-1.0], length_km=1.0)
    with pytest.raises(InvalidParameterError):
        pulse_dispersion_spec([-1.0], 0.5, 0.5, 1.0, 10.0)


def test_dispersion_improves_with_papr_threshold_and_scales_with_length():
    config = PulseConfig(osnr_tar=0.1)
    thresholds = [0.5, 1.0, 2.0, 3.0, 4.0]
    lengths = [10.0, 20.0, 40.0]
    rows = dispersion_sweep(config, thresholds, lengths, [0.1, 0.05], 0.2)
    assert len(rows) == len(thresholds) * len(lengths)

    for length in lengths:
        series = [r["total_dispersion_ps"] for r in rows if r["length_km"] == length]
        assert all(later < earlier for earlier, later in zip(series, series[1:]))
    for papr in thresholds:
        by_length = {r["length_km"]: r["total_dispersion_ps"] for r in rows if r["papr_th_db"] == papr}
        assert by_length[20.0] == pytest.approx(2 * by_length[10.0], rel=1e-12)
        assert by_length[40.0] == pytest.approx(4 * by_length[10.0], rel=1e-12)
