"""Per-cell robust capacity maximization by Lagrange duality.

    max  log2(1 + 10^(-A_R/10) Tr{Q D})
    s.t. Tr{Q G_b} <= I_b   (one per neighbor, G_b from the robust bound)
         Tr{Q} <= P
         Q >= 0

For fixed multipliers the Lagrangian depends on Q only through Tr{Q D} and
Tr{Q W}, W = sum_b mu1_b G_b + mu2 I, so its maximizer is rank one along the top
generalized eigenvector of (D, W) (solve_inner). That dual function has kinks
wherever the top eigenvalue is repeated, which is exactly where several
constraints bind at once. solve_cell therefore minimizes the dual of the
log-det smoothed problem

    max  log2(1 + 10^(-A_R/10) Tr{Q D}) + eps ln det Q

whose inner maximizer Q = eps (W - gamma D)^-1 is known up to the scalar
gamma, and drives eps to zero by continuation. The multipliers move along a
projected dogleg trust-region path using the analytic dual Hessian.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import List, NamedTuple, Optional, Sequence

import numpy as np
import scipy.linalg
from scipy.optimize import brentq

from osatcom.core.config import get_settings
from osatcom.core.errors import (
    CellSolveError,
    DimensionMismatchError,
    InfeasibleProblemError,
    UnboundedInnerError,
)
from osatcom.models.schemas import BeamSolution, CellProblem, DMatrix, DualState, SolverOptions, UncertaintyBall
from osatcom.services.channel_models import apply_rain_attenuation
from osatcom.services.robust_bound import check_psd, effective_interference_matrix

logger = logging.getLogger(__name__)

LOG2E = 1.0 / math.log(2.0)
_DEGENERACY_TOL = 1e-9
_MAX_BRACKET_HALVINGS = 200


def _rain_gain(a_r_db: float) -> float:
    return 1.0 / 10.0 ** (a_r_db / 10.0)


def _snr(q: np.ndarray, d: DMatrix) -> float:
    if q.shape != d.d.shape:
        raise DimensionMismatchError(f"q has shape {q.shape}, D has shape {d.d.shape}")
    return max(float(np.real(np.trace(q @ d.d))), 0.0)


def capacity(q: np.ndarray, d: DMatrix, a_r_db: float) -> float:
    """log2(1 + 10^(-A_R/10) Tr{Q D}) in bits per channel use."""
    check_psd(q)
    return math.log2(1.0 + apply_rain_attenuation(_snr(q, d), a_r_db))


def _usage(q: np.ndarray, problem: CellProblem) -> np.ndarray:
    used = [float(np.real(np.trace(q @ g))) for g in problem.g_list]
    used.append(float(np.real(np.trace(q))))
    return np.array(used)


def _check_multipliers(mu1: Sequence[float], mu2: float) -> None:
    if any(m < 0 for m in mu1) or mu2 < 0:
        raise ValueError("multipliers must be non-negative")


def lagrangian(q: np.ndarray, problem: CellProblem, mu1: Sequence[float], mu2: float) -> float:
    """capacity(Q) - sum_b mu1_b (Tr{Q G_b} - I_b) - mu2 (Tr{Q} - P)."""
    _check_multipliers(mu1, mu2)
    value = capacity(q, problem.d, problem.a_r_db)
    used = _usage(q, problem)
    for mu, load, cap in zip(mu1, used[:-1], problem.i_th_list):
        if mu:
            value -= mu * (load - cap)
    if mu2:
        value -= mu2 * (used[-1] - problem.p_th)
    return value


def lagrangian_gradient(q: np.ndarray, problem: CellProblem, mu1: Sequence[float], mu2: float) -> np.ndarray:
    """Hermitian gradient c Dᴴ - sum_b mu1_b G_bᴴ - mu2 I, using dTr{A Q}/dQ = Aᴴ.

    c = log2(e) 10^(-A_R/10) / (1 + 10^(-A_R/10) Tr{Q D}); the directional
    derivative along a Hermitian E is Re Tr{gradient E}.
    """
    rain = _rain_gain(problem.a_r_db)
    c = LOG2E * rain / (1.0 + rain * _snr(q, problem.d))
    gradient = c * problem.d.d.conj().T - mu2 * np.eye(problem.dim)
    for mu, g in zip(mu1, problem.g_list):
        if mu:
            gradient = gradient - mu * g.conj().T
    return 0.5 * (gradient + gradient.conj().T)


def kkt_stationarity_residual(q: np.ndarray, problem: CellProblem, mu1: Sequence[float], mu2: float) -> float:
    """Stationarity violation on the active subspace of Q.

    With Z = -gradient = W - cD the semidefinite KKT pair is Z Q = 0 (the
    gradient vanishes on range(Q)) and Z >= 0 (no ascent direction into the
    cone). Returns max(‖Z Q‖_F / max(1, ‖Q‖_F), ‖negative part of Z‖_F).
    """
    z = -lagrangian_gradient(q, problem, mu1, mu2)
    on_range = float(np.linalg.norm(z @ q)) / max(1.0, float(np.linalg.norm(q)))
    inward = np.clip(-np.linalg.eigvalsh(z), 0.0, None)
    return max(on_range, float(np.linalg.norm(inward)))


class _Constraints(NamedTuple):
    matrices: List[np.ndarray]
    caps: np.ndarray
    kept: List[int]


def _constraints(problem: CellProblem) -> _Constraints:
    """Finite-cap interference constraints followed by the power constraint."""
    kept = [i for i, cap in enumerate(problem.i_th_list) if math.isfinite(cap)]
    matrices = [problem.g_list[i] for i in kept] + [np.eye(problem.dim)]
    caps = np.array([problem.i_th_list[i] for i in kept] + [problem.p_th], dtype=float)
    return _Constraints(matrices, caps, kept)


def _weighted(x: np.ndarray, cons: _Constraints) -> np.ndarray:
    w = sum(mu * a for mu, a in zip(x, cons.matrices))
    scale = max(float(np.linalg.norm(w)), 1e-300)
    if np.linalg.eigvalsh(w)[0] <= 1e-13 * scale:
        raise UnboundedInnerError("weighted constraint matrix is singular; the Lagrangian is unbounded")
    return w


# ---------------------------------------------------------------------------
# Exact inner problem
# ---------------------------------------------------------------------------

def _top_direction(d: np.ndarray, w: np.ndarray, cons: _Constraints):
    """Top generalized eigenpair of (D, W), W-normalized.

    Inside a degenerate top eigenspace the direction loading the constraints
    least (smallest vᴴ (sum_j A_j / cap_j) v) is taken.
    """
    eigenvalues, vectors = scipy.linalg.eigh(d, w)
    top = eigenvalues[-1]
    tied = np.flatnonzero(eigenvalues >= top - _DEGENERACY_TOL * max(abs(top), 1e-300))
    if tied.size == 1:
        return top, vectors[:, -1]
    basis = vectors[:, tied]
    loading = sum(a / cap for a, cap in zip(cons.matrices, cons.caps))
    _, mix = np.linalg.eigh(basis.conj().T @ loading @ basis)
    return top, basis @ mix[:, 0]


def _rank_one_maximizer(d: np.ndarray, x: np.ndarray, cons: _Constraints, rain: float) -> np.ndarray:
    lam, v = _top_direction(d, _weighted(x, cons), cons)
    power = max(LOG2E - 1.0 / (rain * lam), 0.0) if lam > 0 else 0.0
    return power * np.outer(v, v.conj())


def _inner_with_power_cap(d: np.ndarray, x: np.ndarray, cons: _Constraints, rain: float, p_th: float) -> np.ndarray:
    """Inner maximizer with Tr{Q} <= P held as a hard constraint.

    An extra multiplier nu on the identity is found by root finding on
    Tr{Q(nu)} = P; the trace is non-increasing in nu.
    """
    try:
        q = _rank_one_maximizer(d, x, cons, rain)
        if np.real(np.trace(q)) <= p_th:
            return q
    except UnboundedInnerError:
        pass

    def shifted(nu: float) -> np.ndarray:
        y = x.copy()
        y[-1] += nu
        return _rank_one_maximizer(d, y, cons, rain)

    def excess(nu: float) -> float:
        return float(np.real(np.trace(shifted(nu)))) - p_th

    hi = 1.0
    while excess(hi) >= 0:
        hi *= 2.0
    floor = hi
    lo = None
    for _ in range(_MAX_BRACKET_HALVINGS):
        try:
            if excess(floor * 0.5) > 0:
                lo = floor * 0.5
                break
        except UnboundedInnerError:
            break
        floor *= 0.5
    if lo is None:
        # the cap never binds as nu -> 0+: directions W leaves free carry no signal
        return shifted(floor)
    q = shifted(brentq(excess, lo, floor, xtol=1e-15, rtol=1e-14))
    return q * (p_th / float(np.real(np.trace(q))))


def solve_inner(problem: CellProblem, mu1: Sequence[float], mu2: float, enforce_power: bool = False) -> np.ndarray:
    """Lagrangian maximizer over PSD Q for fixed multipliers.

    With enforce_power the power cap is kept as a hard constraint; otherwise it
    is priced by mu2 alone and all-zero multipliers make the problem unbounded.
    """
    _check_multipliers(mu1, mu2)
    cons = _constraints(problem)
    x = np.array([mu1[i] for i in cons.kept] + [mu2], dtype=float)
    rain = _rain_gain(problem.a_r_db)
    if enforce_power:
        return _inner_with_power_cap(problem.d.d, x, cons, rain, problem.p_th)
    return _rank_one_maximizer(problem.d.d, x, cons, rain)


# ---------------------------------------------------------------------------
# Smoothed inner problem
# ---------------------------------------------------------------------------

class _DualPoint(NamedTuple):
    q: np.ndarray
    value: float
    slacks: np.ndarray
    hessian: np.ndarray


def _smoothed_point(d: np.ndarray, x: np.ndarray, cons: _Constraints, rain: float, eps: float) -> _DualPoint:
    """Smoothed inner maximizer, dual value, dual gradient (slacks) and dual Hessian.

    With D V = W V diag(lam), Vᴴ W V = I, the maximizer is
    Q = eps V diag(1 / (1 - gamma lam_i)) Vᴴ where gamma = f'(Tr{Q D}). gamma is
    parametrized as (1 - u) / lam_top so the top spacing is u itself.
    """
    w = _weighted(x, cons)
    lam, vectors = scipy.linalg.eigh(d, w)
    lam = np.clip(lam, 0.0, None)
    top = float(lam[-1])
    slope0 = rain * LOG2E
    dim = len(lam)

    def spacing(u: float) -> np.ndarray:
        return (top - lam + u * lam) / top

    def mismatch(log_u: float) -> float:
        u = math.exp(log_u)
        t = eps * float(np.sum(lam / spacing(u)))
        return (1.0 - u) / top * (1.0 + rain * t) - slope0

    if slope0 * top < 1.0:
        lo = math.log(1.0 - slope0 * top)
    else:
        lo = -1.0
        while mismatch(lo) <= 0:
            lo -= 2.0
    log_u = brentq(mismatch, lo, 0.0, xtol=1e-14) if mismatch(lo) > 0 else lo
    u = math.exp(log_u)
    gaps = spacing(u)

    q = eps * (vectors / gaps) @ vectors.conj().T
    q = 0.5 * (q + q.conj().T)
    t = eps * float(np.sum(lam / gaps))
    loads = np.array([float(np.real(np.trace(q @ a))) for a in cons.matrices])
    log_det_q = dim * math.log(eps) - float(np.sum(np.log(gaps))) - np.linalg.slogdet(w)[1]
    value = math.log2(1.0 + rain * t) + eps * log_det_q - eps * float(np.sum(1.0 / gaps)) + float(x @ cons.caps)

    # Hessian of the dual: (T + f'' a aᵀ / (eps - f'' Tr{QDQD})) / eps
    qa = [q @ a for a in cons.matrices]
    qd = q @ d
    n = len(x)
    gram = np.array([[float(np.real(np.trace(qa[j] @ qa[k]))) for k in range(n)] for j in range(n)])
    cross = np.array([float(np.real(np.trace(qd @ qa[j]))) for j in range(n)])
    self_term = float(np.real(np.trace(qd @ qd)))
    curvature = -rain * rain * LOG2E / (1.0 + rain * t) ** 2
    hessian = (gram + curvature * np.outer(cross, cross) / (eps - curvature * self_term)) / eps
    return _DualPoint(q, value, cons.caps - loads, 0.5 * (hessian + hessian.T))


# ---------------------------------------------------------------------------
# Dual update
# ---------------------------------------------------------------------------

def _dogleg_step(gradient: np.ndarray, hessian: Optional[np.ndarray], radius: float):
    """Dogleg step on the model g·p + ½ pᵀHp inside ‖p‖ <= radius; also returns the knee."""
    norm_g = float(np.linalg.norm(gradient))
    if norm_g == 0:
        zero = np.zeros_like(gradient)
        return zero, zero
    if hessian is None:
        cauchy = -min(1.0, radius / norm_g) * gradient
        return cauchy, cauchy

    curvature = float(gradient @ hessian @ gradient)
    tau = norm_g ** 2 / curvature if curvature > 0 else math.inf
    knee = -min(tau, radius / norm_g) * gradient
    ridge = 1e-14 * max(float(np.trace(hessian)) / len(gradient), 1e-300)
    try:
        newton = -np.linalg.solve(hessian + ridge * np.eye(len(gradient)), gradient)
    except np.linalg.LinAlgError:
        return knee, knee
    if not np.all(np.isfinite(newton)) or float(gradient @ newton) >= 0:
        return knee, knee
    if np.linalg.norm(newton) <= radius:
        return newton, knee
    if np.linalg.norm(knee) >= radius * (1 - 1e-12):
        return knee, knee
    # walk from the knee toward the Newton point until the boundary
    leg = newton - knee
    a = float(leg @ leg)
    b = 2.0 * float(knee @ leg)
    c = float(knee @ knee) - radius ** 2
    s = (-b + math.sqrt(max(b * b - 4 * a * c, 0.0))) / (2 * a)
    return knee + s * leg, knee


def dogleg_dual_update(
    state: DualState,
    constraint_slacks: Sequence[float],
    curvature: Optional[np.ndarray] = None,
    reduction_ratio: Optional[float] = None,
    options: Optional[SolverOptions] = None,
) -> DualState:
    """Propose the next multipliers along the projected dogleg path.

    The slacks are the dual gradient. reduction_ratio (actual over predicted dual
    decrease of the step that produced ``state``) resizes the trust region first:
    shrink below 0.25, expand above 0.75 when that step reached the boundary.
    Without curvature the path reduces to a projected steepest step.
    """
    options = options or SolverOptions()
    radius = state.trust_radius
    if reduction_ratio is not None:
        if reduction_ratio < 0.25:
            radius *= options.shrink
        elif reduction_ratio > 0.75 and state.step_norm >= 0.99 * state.trust_radius:
            radius *= options.expand
    if radius < options.min_radius:
        return state.model_copy(update={"trust_radius": radius, "stalled": True, "step_norm": 0.0, "predicted_decrease": 0.0})

    x = state.multipliers
    g = np.asarray(constraint_slacks, dtype=float)
    free = (x > 0) | (g < 0)
    step = np.zeros_like(x)
    knee_full = np.zeros_like(x)
    if free.any():
        sub_h = curvature[np.ix_(free, free)] if curvature is not None else None
        step[free], knee_full[free] = _dogleg_step(g[free], sub_h, radius)

    def predicted(d: np.ndarray) -> float:
        quad = 0.5 * float(d @ curvature @ d) if curvature is not None else 0.0
        return -(float(g @ d) + quad)

    new_x = np.maximum(x + step, 0.0)
    moved = new_x - x
    if free.any() and predicted(moved) <= 0:
        # projection spoiled the model decrease: fall back to projected steepest descent
        t = radius / max(float(np.linalg.norm(g[free])), 1e-300)
        new_x = np.where(free, np.maximum(x - t * g, 0.0), x)
        moved = new_x - x

    return DualState(
        mu1=new_x[:-1],
        mu2=float(new_x[-1]),
        trust_radius=radius,
        knee=np.maximum(x + knee_full, 0.0),
        iteration=state.iteration + 1,
        step_norm=float(np.linalg.norm(moved)),
        predicted_decrease=predicted(moved),
        stalled=False,
    )


# ---------------------------------------------------------------------------
# Cell and network solves
# ---------------------------------------------------------------------------

def _validate(problem: CellProblem) -> None:
    if problem.p_th <= 0 or any(cap <= 0 for cap in problem.i_th_list):
        raise InfeasibleProblemError("power and interference caps must be positive")
    shape = (problem.dim, problem.dim)
    if problem.d.d.shape != shape or any(g.shape != shape for g in problem.g_list):
        raise DimensionMismatchError(f"problem matrices must be {problem.dim}x{problem.dim}")
    check_psd(problem.d.d, "D")
    for g in problem.g_list:
        check_psd(g, "G")


def _feasible(q: np.ndarray, problem: CellProblem) -> np.ndarray:
    """Scale Q down onto the feasible set (a no-op when it already is)."""
    cons = _constraints(problem)
    loads = np.array([float(np.real(np.trace(q @ a))) for a in cons.matrices])
    ratios = [cap / load for cap, load in zip(cons.caps, loads) if load > cap]
    return q * min(ratios) if ratios else q


def _expand_mu1(problem: CellProblem, cons: _Constraints, x: np.ndarray) -> List[float]:
    mu1 = [0.0] * len(problem.g_list)
    for position, index in enumerate(cons.kept):
        mu1[index] = float(x[position])
    return mu1


def _complementary_slackness(q: np.ndarray, problem: CellProblem, mu1: Sequence[float], mu2: float) -> float:
    used = _usage(q, problem)
    terms = [abs(mu * (load - cap)) for mu, load, cap in zip(mu1, used[:-1], problem.i_th_list) if mu]
    return (max(terms) if terms else 0.0) + abs(mu2 * (used[-1] - problem.p_th))


def _stage_done(point: _DualPoint, x: np.ndarray, caps: np.ndarray, tol: float) -> bool:
    violation = float(np.max(np.clip(-point.slacks, 0.0, None) / caps))
    complementarity = float(np.max(np.abs(x * point.slacks)))
    return violation < 1e-2 * tol and complementarity < 1e-1 * tol


def solve_cell(problem: CellProblem, options: Optional[SolverOptions] = None) -> BeamSolution:
    """Robust capacity-optimal weight Gram matrix for one cell."""
    options = options or SolverOptions()
    _validate(problem)
    cons = _constraints(problem)
    rain = _rain_gain(problem.a_r_db)
    d = problem.d.d

    if np.linalg.norm(d) == 0:
        zero = np.zeros((problem.dim, problem.dim), dtype=complex)
        return BeamSolution(q=zero, mu1=[0.0] * len(problem.g_list), mu2=0.0, capacity=0.0,
                            kkt_residual=0.0, complementary_slackness=0.0, iterations=0, history=[0.0])

    x0 = np.full(len(cons.caps), options.initial_multiplier)
    if options.initial_mu1 is not None:
        if len(options.initial_mu1) != len(problem.g_list):
            raise DimensionMismatchError("initial_mu1 needs one entry per interference constraint")
        x0[:-1] = [options.initial_mu1[i] for i in cons.kept]
    if options.initial_mu2 is not None:
        x0[-1] = options.initial_mu2

    eps = max(options.barrier_initial, options.barrier_final)
    state = DualState(mu1=x0[:-1], mu2=float(x0[-1]), trust_radius=options.initial_radius)
    point = _smoothed_point(d, state.multipliers, cons, rain, eps)
    history: List[float] = []
    ratio = None
    converged = False
    iterations = 0
    for iterations in range(options.max_iterations + 1):
        while eps > options.barrier_final and _stage_done(point, state.multipliers, cons.caps, max(options.tol, 10 * eps)):
            eps = max(eps * options.barrier_decay, options.barrier_final)
            point = _smoothed_point(d, state.multipliers, cons, rain, eps)
            ratio = None
            logger.debug(f"iter {iterations}: smoothing lowered to {eps:.1e}")

        q = _feasible(point.q, problem)
        history.append(math.log2(1.0 + rain * _snr(q, problem.d)))
        if eps <= options.barrier_final and _stage_done(point, state.multipliers, cons.caps, options.tol):
            converged = True
            break
        if iterations == options.max_iterations:
            break

        trial = dogleg_dual_update(state, point.slacks, point.hessian, ratio, options)
        if trial.stalled:
            logger.warning(f"Dual iteration stalled at radius {trial.trust_radius:.3e} after {iterations} iterations")
            break
        try:
            trial_point = _smoothed_point(d, trial.multipliers, cons, rain, eps)
            actual = point.value - trial_point.value
        except UnboundedInnerError:
            trial_point, actual = None, -math.inf

        noise = 1e-14 * (1.0 + abs(point.value))
        ratio = actual / trial.predicted_decrease if trial.predicted_decrease > 0 else -1.0
        if trial_point is not None and (ratio > options.accept_ratio or (trial.predicted_decrease < noise and actual > -noise)):
            state, point = trial, trial_point
        else:
            state = state.model_copy(update={
                "trust_radius": trial.trust_radius,
                "step_norm": trial.step_norm,
                "iteration": trial.iteration,
            })
            ratio = min(ratio, 0.0)
        logger.debug(f"iter {iterations}: dual={point.value:.12g} radius={state.trust_radius:.3e} ratio={ratio:.3g}")

    if not converged:
        logger.warning(f"Dual solver stopped without convergence after {iterations} iterations; returning best iterate")

    q = _feasible(point.q, problem)
    x = state.multipliers
    mu1 = _expand_mu1(problem, cons, x)
    mu2 = float(x[-1])
    return BeamSolution(
        q=q,
        mu1=mu1,
        mu2=mu2,
        capacity=math.log2(1.0 + rain * _snr(q, problem.d)),
        kkt_residual=kkt_stationarity_residual(q, problem, mu1, mu2),
        complementary_slackness=_complementary_slackness(q, problem, mu1, mu2),
        iterations=iterations,
        converged=converged,
        history=history,
    )


def solve_network(problems: Sequence[CellProblem], options: Optional[SolverOptions] = None) -> List[BeamSolution]:
    """Solve every cell independently; results come back in input order."""
    settings = get_settings()

    def solve(indexed):
        index, problem = indexed
        try:
            return solve_cell(problem, options)
        except Exception as e:
            raise CellSolveError(index, e) from e

    with ThreadPoolExecutor(max_workers=settings.threads) as executor:
        return list(executor.map(solve, enumerate(problems)))


def build_cell_problem(
    d: DMatrix,
    h2_estimates: Sequence[np.ndarray],
    ball: UncertaintyBall,
    a_r_db: float,
    p_th: float,
    i_th_list: Sequence[float],
) -> CellProblem:
    """Robust problem: one worst-case interference matrix G_b per neighbor estimate."""
    if len(h2_estimates) != len(i_th_list):
        raise DimensionMismatchError("one interference cap is needed per neighbor channel")
    g_list = [effective_interference_matrix(h2, ball) for h2 in h2_estimates]
    return CellProblem(d=d, g_list=g_list, a_r_db=a_r_db, p_th=p_th, i_th_list=list(i_th_list), dim=ball.dim)


def _clip_psd(matrix: np.ndarray) -> np.ndarray:
    eigenvalues, vectors = np.linalg.eigh(0.5 * (matrix + matrix.conj().T))
    return (vectors * np.clip(eigenvalues, 0.0, None)) @ vectors.conj().T


def baseline_cell_problem(
    h1_hat: np.ndarray,
    h2_estimates: Sequence[np.ndarray],
    ball: UncertaintyBall,
    d: DMatrix,
    a_r_db: float,
    p_th: float,
    i_th_list: Sequence[float],
) -> CellProblem:
    """Comparison formulation: reverse-triangle signal floor, nominal interference.

    The signal term uses the estimate H̃₁ shrunk by the error radius,
    D = [H̃₁H̃₁ᴴ - √M ξ (2‖H̃₁‖_F - √M ξ) I]₊, and interference is priced at the
    estimates alone (ξ = 0).
    """
    dim = ball.dim
    if h1_hat.shape != (dim, dim):
        raise DimensionMismatchError(f"h1_hat has shape {h1_hat.shape}, expected ({dim}, {dim})")
    lift = math.sqrt(dim) * ball.xi
    norm = float(np.linalg.norm(h1_hat))
    if lift >= norm:
        signal = np.zeros((dim, dim), dtype=complex)
    else:
        signal = _clip_psd(h1_hat @ h1_hat.conj().T - lift * (2.0 * norm - lift) * np.eye(dim))
    base_d = DMatrix(d=signal.astype(complex), alpha=d.alpha, beta=d.beta, dim=dim)
    nominal = UncertaintyBall(xi=0.0, dim=dim)
    return build_cell_problem(base_d, h2_estimates, nominal, a_r_db, p_th, i_th_list)
