import math
from enum import Enum
from typing import Annotated, Dict, List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from osatcom.core.config import get_settings


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid", allow_inf_nan=False)


class MatrixModel(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)


# ---------------------------------------------------------------------------
# Channel models
# ---------------------------------------------------------------------------

class FadingFamily(str, Enum):
    NAKAGAMI = "nakagami"
    RAYLEIGH = "rayleigh"
    LOGNORMAL = "lognormal"
    SUZUKI = "suzuki"


class FadingSpec(StrictModel):
    """Per-element fading law plus its (alpha, beta) moments.

    alpha is the squared (real, positive) mean of an entry and beta its variance.
    """

    family: FadingFamily = FadingFamily.NAKAGAMI
    m: float = Field(1.0, gt=0)
    omega: float = Field(1.0, gt=0)
    log_mu: float = Field(default_factory=lambda: get_settings().log_mu)
    log_sigma: float = Field(default_factory=lambda: get_settings().log_sigma, ge=0)
    mean_sq: float = Field(0.0, ge=0)

    @model_validator(mode="after")
    def check_zero_mean_families(self):
        if self.family in (FadingFamily.RAYLEIGH, FadingFamily.SUZUKI) and self.mean_sq != 0:
            raise ValueError(f"mean_sq must be 0 for {self.family.value} fading")
        return self

    @property
    def shadowing_second_moment(self) -> float:
        return math.exp(2.0 * self.log_mu + 2.0 * self.log_sigma ** 2)

    @property
    def alpha(self) -> float:
        return self.mean_sq

    @property
    def beta(self) -> float:
        if self.family == FadingFamily.LOGNORMAL:
            return self.shadowing_second_moment
        if self.family == FadingFamily.SUZUKI:
            return self.shadowing_second_moment * self.omega
        return self.omega

    @property
    def var(self) -> float:
        return self.beta


class ChannelSet(MatrixModel):
    h1: np.ndarray
    h2_estimates: List[np.ndarray]
    dim: int

    @model_validator(mode="after")
    def check_shapes(self):
        for matrix in [self.h1, *self.h2_estimates]:
            if matrix.shape != (self.dim, self.dim):
                raise ValueError(f"channel of shape {matrix.shape} is not {self.dim}x{self.dim}")
        return self


class DMatrix(MatrixModel):
    d: np.ndarray
    alpha: float
    beta: float
    dim: int


# ---------------------------------------------------------------------------
# Robust bound
# ---------------------------------------------------------------------------

class UncertaintyBall(StrictModel):
    xi: float = Field(0.0, ge=0)
    dim: int = Field(2, ge=1)


class InterferenceBound(MatrixModel):
    value: float
    effective_matrix: np.ndarray


# ---------------------------------------------------------------------------
# Beamforming
# ---------------------------------------------------------------------------

class CellProblem(MatrixModel):
    d: DMatrix
    g_list: List[np.ndarray] = Field(default_factory=list)
    a_r_db: float = 0.0
    p_th: float = 1.0
    i_th_list: List[float] = Field(default_factory=list)
    dim: int

    @model_validator(mode="after")
    def check_lengths(self):
        if len(self.g_list) != len(self.i_th_list):
            raise ValueError("g_list and i_th_list must have the same length")
        return self


class SolverOptions(StrictModel):
    tol: float = Field(default_factory=lambda: get_settings().solver_tol, gt=0)
    max_iterations: int = Field(default_factory=lambda: get_settings().solver_max_iterations, ge=1)
    initial_radius: float = Field(default_factory=lambda: get_settings().dogleg_initial_radius, gt=0)
    initial_multiplier: float = Field(default_factory=lambda: get_settings().dogleg_initial_multiplier, gt=0)
    shrink: float = Field(default_factory=lambda: get_settings().dogleg_shrink, gt=0, lt=1)
    expand: float = Field(default_factory=lambda: get_settings().dogleg_expand, gt=1)
    accept_ratio: float = Field(default_factory=lambda: get_settings().dogleg_accept_ratio, ge=0, lt=0.25)
    min_radius: float = Field(default_factory=lambda: get_settings().dogleg_min_radius, gt=0)
    barrier_initial: float = Field(default_factory=lambda: get_settings().barrier_initial, gt=0)
    barrier_decay: float = Field(default_factory=lambda: get_settings().barrier_decay, gt=0, lt=1)
    barrier_final: float = Field(default_factory=lambda: get_settings().barrier_final, gt=0)
    initial_mu1: Optional[List[float]] = None
    initial_mu2: Optional[float] = Field(None, gt=0)


class DualState(MatrixModel):
    mu1: np.ndarray
    mu2: float
    trust_radius: float
    knee: Optional[np.ndarray] = None
    iteration: int = 0
    step_norm: float = 0.0
    predicted_decrease: float = 0.0
    stalled: bool = False

    @property
    def multipliers(self) -> np.ndarray:
        return np.append(self.mu1, self.mu2)


class BeamSolution(MatrixModel):
    q: np.ndarray
    mu1: List[float]
    mu2: float
    capacity: float
    kkt_residual: float
    complementary_slackness: float
    iterations: int
    converged: bool = True
    history: List[float] = Field(default_factory=list)


# ---------------------------------------------------------------------------
# Pulse optimizer
# ---------------------------------------------------------------------------

class PulseConfig(StrictModel):
    bit_period: float = Field(1.0, gt=0)
    amplitude: float = Field(1.0, gt=0)
    papr_th_db: float = 3.0103
    osnr_tar: float = Field(1.0, gt=0)
    fiber_norm_sq: float = Field(1.0, gt=0)
    noise_var: float = Field(1.0, gt=0)
    kappa_min: float = Field(0.1, gt=0, lt=1)


class BindingConstraint(str, Enum):
    PAPR = "papr"
    OSNR = "osnr"
    BOTH = "both"


class PulseSolution(StrictModel):
    t1: float
    kappa: float
    overlap_prob: float
    papr_db: float
    osnr: float
    binding_constraint: BindingConstraint


class DispersionSpec(StrictModel):
    coefficients: List[float] = Field(min_length=1)
    length_km: float = Field(gt=0)

    @field_validator("coefficients")
    @classmethod
    def check_coefficients(cls, value: List[float]) -> List[float]:
        if any(c < 0 for c in value):
            raise ValueError("dispersion coefficients must be non-negative")
        return value


# ---------------------------------------------------------------------------
# Link simulation
# ---------------------------------------------------------------------------

def _default_sweep() -> List[float]:
    return [float(x) for x in range(16)]


class NetworkConfig(StrictModel):
    num_cells: int = Field(2, ge=1)
    dim: int = Field(2, ge=1)
    fading: FadingSpec = Field(default_factory=lambda: FadingSpec(m=0.8, mean_sq=0.5))
    xi: float = Field(0.0, ge=0)
    a_r_db: float = 0.0
    p_th: float = Field(1.0, gt=0)
    i_th: float = Field(0.1, gt=0)
    snr_sweep_db: List[float] = Field(default_factory=_default_sweep, min_length=1)
    trials: int = Field(1000, ge=1)
    seed: int = Field(0, ge=0, le=2 ** 64 - 1)
    cross_gain_db: float = -10.0
    spreading_factor: int = Field(8, ge=1)
    share_interference_cap: bool = True

    @field_validator("spreading_factor")
    @classmethod
    def check_power_of_two(cls, value: int) -> int:
        if value & (value - 1):
            raise ValueError("spreading_factor must be a power of two")
        return value

    @model_validator(mode="after")
    def check_codes_cover_streams(self):
        if self.spreading_factor > 1 and self.spreading_factor < self.dim:
            raise ValueError("spreading_factor must be 1 or at least dim (one code per stream)")
        return self


class SpreadingCode(MatrixModel):
    chips: np.ndarray

    @field_validator("chips")
    @classmethod
    def check_chips(cls, value: np.ndarray) -> np.ndarray:
        value = np.asarray(value)
        if value.ndim != 1 or not np.all(np.isin(value, (-1, 1))):
            raise ValueError("chips must be a 1-D vector of +1/-1")
        if value.size & (value.size - 1):
            raise ValueError("code length must be a power of two")
        return value.astype(np.int64)

    @property
    def length(self) -> int:
        return int(self.chips.size)


class TrialResult(StrictModel):
    snr_db: float
    num_cells: int = 1
    xi: float = 0.0
    per_cell_ber: List[float]
    network_error: float
    mean_capacity: float
    solver_opt_values: List[float]
    error_counts: List[int]
    bits_per_cell: List[int]


# ---------------------------------------------------------------------------
# Experiment harness
# ---------------------------------------------------------------------------

class ExperimentKind(str, Enum):
    PULSE = "pulse"
    DISPERSION = "dispersion"
    BEAMFORM = "beamform"
    BER_SWEEP = "ber_sweep"
    CONVERGENCE = "convergence"


class RunStatus(str, Enum):
    OK = "ok"
    INVALID = "invalid"
    INFEASIBLE = "infeasible"
    ERROR = "error"


class PulseParameters(StrictModel):
    bit_period: float = Field(1.0, gt=0)
    amplitude: float = Field(1.0, gt=0)
    papr_th_db: List[float] = Field(default_factory=lambda: [3.0103], min_length=1)
    osnr_tar: float = Field(1.0, gt=0)
    fiber_norm_sq: float = Field(1.0, gt=0)
    noise_var: float = Field(1.0, gt=0)
    kappa_min: float = Field(0.1, gt=0, lt=1)


class DispersionParameters(StrictModel):
    pulse: PulseParameters = Field(default_factory=PulseParameters)
    base_coefficients: List[float] = Field(default_factory=lambda: [0.1])
    broadening_coefficient: float = Field(1.0, ge=0)
    lengths_km: List[float] = Field(default_factory=lambda: [10.0, 50.0, 100.0], min_length=1)


class BeamformParameters(StrictModel):
    network: NetworkConfig = Field(default_factory=NetworkConfig)
    solver: SolverOptions = Field(default_factory=SolverOptions)


class BerSweepParameters(StrictModel):
    network: NetworkConfig = Field(default_factory=NetworkConfig)
    solver: SolverOptions = Field(default_factory=SolverOptions)
    num_cells_sweep: Optional[List[int]] = None
    xi_sweep: Optional[List[float]] = None


class ConvergenceParameters(StrictModel):
    network: NetworkConfig = Field(default_factory=NetworkConfig)
    solver: SolverOptions = Field(default_factory=SolverOptions)
    runs: int = Field(10, ge=2)
    budgets: List[int] = Field(default_factory=lambda: [1, 2, 5, 10, 20, 50, 100], min_length=1)
    perturbation: float = Field(0.5, ge=0)


class ExperimentBase(StrictModel):
    output_path: str = "results"
    seed: int = Field(0, ge=0, le=2 ** 64 - 1)


class PulseExperiment(ExperimentBase):
    experiment: Literal["pulse"]
    parameters: PulseParameters = Field(default_factory=PulseParameters)


class DispersionExperiment(ExperimentBase):
    experiment: Literal["dispersion"]
    parameters: DispersionParameters = Field(default_factory=DispersionParameters)


class BeamformExperiment(ExperimentBase):
    experiment: Literal["beamform"]
    parameters: BeamformParameters = Field(default_factory=BeamformParameters)


class BerSweepExperiment(ExperimentBase):
    experiment: Literal["ber_sweep"]
    parameters: BerSweepParameters = Field(default_factory=BerSweepParameters)


class ConvergenceExperiment(ExperimentBase):
    experiment: Literal["convergence"]
    parameters: ConvergenceParameters = Field(default_factory=ConvergenceParameters)


ExperimentConfig = Annotated[
    Union[
        PulseExperiment,
        DispersionExperiment,
        BeamformExperiment,
        BerSweepExperiment,
        ConvergenceExperiment,
    ],
    Field(discriminator="experiment"),
]


class RunManifest(StrictModel):
    config_hash: str
    seed: int
    version: str
    experiment: ExperimentKind
    duration_s: float
    outputs: List[str]
    summary: Dict[str, float]


class RunReport(StrictModel):
    status: RunStatus
    problems: List[str] = Field(default_factory=list)
    outputs: List[str] = Field(default_factory=list)
    reason: Optional[str] = None
