"""RZ clock pulse-width selection and the RMS dispersion trend model.

A Gaussian pulse of FWHM t1 sits centered in its bit slot of width T. The
overlap probability is its tail mass past the boundary point
x1 = T/2 - kappa t1/2 toward the neighboring slot. PAPR and OSNR both bound
t1 from below, and the overlap grows with t1 and kappa, so the optimum takes
the larger lower bound and the smallest admissible kappa.
"""
import logging
import math
from typing import List, Sequence, Tuple

from scipy.stats import norm

from osatcom.core.errors import InfeasibleProblemError, InvalidParameterError
from osatcom.models.schemas import BindingConstraint, DispersionSpec, PulseConfig, PulseSolution

logger = logging.getLogger(__name__)

_FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))
_BINDING_TOL = 1e-12


def _check_width(t1: float, bit_period: float) -> None:
    if not bit_period > 0:
        raise InvalidParameterError(f"bit period must be > 0, got {bit_period}")
    if not 0 < t1 <= bit_period:
        raise InvalidParameterError(f"pulse width must satisfy 0 < t1 <= T, got t1={t1}, T={bit_period}")


def papr_db(bit_period: float, t1: float) -> float:
    _check_width(t1, bit_period)
    return 10.0 * math.log10(bit_period / t1)


def average_power(t1: float, amplitude: float, bit_period: float) -> float:
    """Closed-form clock average t1 A²/T (rectangular envelope)."""
    _check_width(t1, bit_period)
    if not amplitude > 0:
        raise InvalidParameterError(f"amplitude must be > 0, got {amplitude}")
    return t1 * amplitude ** 2 / bit_period


def osnr(t1: float, config: PulseConfig) -> float:
    return config.fiber_norm_sq * average_power(t1, config.amplitude, config.bit_period) / config.noise_var


def pulse_sigma(t1: float) -> float:
    """Standard deviation of a Gaussian pulse with FWHM t1."""
    return t1 * _FWHM_TO_SIGMA


def overlap_probability(t1: float, kappa: float, bit_period: float) -> float:
    _check_width(t1, bit_period)
    if not 0 < kappa < 1:
        raise InvalidParameterError(f"kappa must lie in (0, 1), got {kappa}")
    boundary = bit_period / 2.0 - kappa * t1 / 2.0
    return float(norm.sf(boundary / pulse_sigma(t1)))


def pulse_width_bounds(config: PulseConfig) -> Tuple[float, float]:
    """(PAPR lower bound, OSNR lower bound) on t1."""
    papr_bound = config.bit_period * 10.0 ** (-config.papr_th_db / 10.0)
    osnr_bound = config.osnr_tar * config.noise_var * config.bit_period / (config.amplitude ** 2 * config.fiber_norm_sq)
    return papr_bound, osnr_bound


def check_pulse_feasible(config: PulseConfig) -> None:
    papr_bound, osnr_bound = pulse_width_bounds(config)
    required = max(papr_bound, osnr_bound)
    if required > config.bit_period:
        raise InfeasibleProblemError(
            f"required pulse width {required:.6g} s exceeds the bit period {config.bit_period:.6g} s "
            f"(PAPR bound {papr_bound:.6g}, OSNR bound {osnr_bound:.6g})"
        )


def solve_pulse(config: PulseConfig) -> PulseSolution:
    check_pulse_feasible(config)
    papr_bound, osnr_bound = pulse_width_bounds(config)
    t1 = max(papr_bound, osnr_bound)

    if abs(papr_bound - osnr_bound) <= _BINDING_TOL * config.bit_period:
        binding = BindingConstraint.BOTH
    elif papr_bound > osnr_bound:
        binding = BindingConstraint.PAPR
    else:
        binding = BindingConstraint.OSNR

    kappa = config.kappa_min
    solution = PulseSolution(
        t1=t1,
        kappa=kappa,
        overlap_prob=overlap_probability(t1, kappa, config.bit_period),
        papr_db=papr_db(config.bit_period, t1),
        osnr=osnr(t1, config),
        binding_constraint=binding,
    )
    logger.debug(f"Pulse optimum t1={t1:.6g} kappa={kappa} binding={binding.value}")
    return solution


def total_dispersion(spec: DispersionSpec) -> float:
    """RMS of the per-km contributions, times the cable length (ps)."""
    return spec.length_km * math.sqrt(sum(c * c for c in spec.coefficients))


def pulse_dispersion_spec(
    base_coefficients: Sequence[float],
    broadening_coefficient: float,
    t1: float,
    bit_period: float,
    length_km: float,
) -> DispersionSpec:
    """Fixed modes plus one pulse-broadening term proportional to t1/T."""
    _check_width(t1, bit_period)
    if broadening_coefficient < 0:
        raise InvalidParameterError(f"broadening coefficient must be >= 0, got {broadening_coefficient}")
    coefficients = list(base_coefficients) + [broadening_coefficient * t1 / bit_period]
    try:
        return DispersionSpec(coefficients=coefficients, length_km=length_km)
    except ValueError as e:
        raise InvalidParameterError(str(e)) from e


def dispersion_sweep(
    config: PulseConfig,
    papr_thresholds_db: Sequence[float],
    lengths_km: Sequence[float],
    base_coefficients: Sequence[float],
    broadening_coefficient: float,
) -> List[dict]:
    """Rows of (length_km, papr_th_db, total_dispersion_ps) over both sweeps."""
    rows = []
    for papr_th in papr_thresholds_db:
        solution = solve_pulse(config.model_copy(update={"papr_th_db": papr_th}))
        for length in lengths_km:
            spec = pulse_dispersion_spec(base_coefficients, broadening_coefficient, solution.t1, config.bit_period, length)
            rows.append({"length_km": length, "papr_th_db": papr_th, "total_dispersion_ps": total_dispersion(spec)})
    return rows
