"""
Stability and steady-state diagnostics for the autonomous law f_t = sigma(a - B f)
and its residual form u_t = -B sigma(u).

All matrices are taken in quadrature coordinates (operator_matrix), where the
L2(Y) norm is Euclidean and the discretized B keeps its spectrum.
"""
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
import numpy.typing as npt
from dataclasses_json import dataclass_json
from scipy.linalg import expm
from scipy.optimize import curve_fit

from .activation import Activation, require_zero_at_origin
from .dynamics import ControlParams, Trajectory
from .errors import InvalidArgumentError, PreconditionError
from .grid import (
    Field,
    Grid,
    KernelSlice,
    check_field,
    check_kernel,
    from_coordinates,
    integrate,
    kernel_norm,
    operator_matrix,
    to_coordinates,
)

logger = logging.getLogger(__name__)

ZERO_TOL = 1e-10
SYMMETRY_TOL = 1e-9
IN_RANGE_RTOL = 1e-8
SLACK_FLOOR = 1e-12
MIN_GROWTH_STEPS = 8
EXP_PREFERENCE = 0.5


class Verdict(str, Enum):
    LINEARLY_ASYMPT_STABLE = "linearly_asympt_stable"
    LINEARLY_UNSTABLE = "linearly_unstable"
    MARGINAL = "marginal"
    INCONCLUSIVE = "inconclusive"


class RankOneCase(str, Enum):
    CASE1_STABLE = "case1_stable"
    CASE2_UNSTABLE = "case2_unstable"
    CASE3I_ONESIDED_PLUS = "case3i_onesided_plus"
    CASE3II_ONESIDED_MINUS = "case3ii_onesided_minus"
    CASE3III_HIGHER_ORDER = "case3iii_higher_order"
    NONSMOOTH = "nonsmooth"


# ============================================================================
# REPORT TYPES
# ============================================================================

@dataclass_json
@dataclass
class SteadyStateReport:
    f_e: List[float]
    residual: float
    in_range: bool
    nullspace_dim: int
    rank: int

    @property
    def unique(self) -> bool:
        return self.in_range and self.nullspace_dim == 0


@dataclass_json
@dataclass
class SpectralReport:
    sym_eigenvalues: List[float]
    eigenvalues_real: List[float]
    eigenvalues_imag: List[float]
    singular_values: List[float]
    gram_matrix: List[List[float]]
    rank: int
    N: int
    tn_invertible: bool
    dn_tn_posdef: bool
    slope_at_origin: float
    verdict: Verdict


@dataclass_json
@dataclass
class RankOneVerdict:
    case_tag: RankOneCase
    integrals: Tuple[float, float, float]
    quadratic_coeff: Optional[float] = None
    cubic_coeff: Optional[float] = None


@dataclass_json
@dataclass
class GrowthFit:
    model: str
    rate: float
    fit_residual: float
    intercept: float = 0.0


@dataclass_json
@dataclass
class LyapunovTrace:
    """
    Per stored step: int Sigma(u), the symmetric energy 1/2 <f, B f> - (a, f)
    (when computed) and the dissipation int sigma(u) u, plus running integrals
    of the dissipation terms and the per-step increase each series may show
    under explicit Euler.
    """
    times: List[float]
    sigma_integral: List[float]
    dissipation: List[float]
    cumulative_kernel_dissipation: List[float]
    cumulative_dissipation: List[float]
    sigma_slack: List[float]
    energy: Optional[List[float]] = None
    energy_slack: Optional[List[float]] = None

    def sigma_violations(self) -> List[int]:
        return _violations(self.sigma_integral, self.sigma_slack)

    def energy_violations(self) -> List[int]:
        if self.energy is None:
            return []
        return _violations(self.energy, self.energy_slack)


def _violations(series: List[float], slack: List[float]) -> List[int]:
    s = np.asarray(series)
    return [int(l) for l in np.nonzero(np.diff(s) > np.asarray(slack))[0]]


# ============================================================================
# HELPERS
# ============================================================================

def _autonomous(params: ControlParams) -> Tuple[Field, KernelSlice]:
    if not params.autonomous:
        raise PreconditionError("analysis needs time-constant (autonomous) controls")
    return params.a[0], params.b[0]


def _rank(singular_values: np.ndarray) -> int:
    if singular_values.size == 0 or singular_values[0] <= 0:
        return 0
    return int(np.sum(singular_values > ZERO_TOL * singular_values[0]))


def _is_symmetric(matrix: np.ndarray) -> bool:
    scale = max(float(np.max(np.abs(matrix))), 1.0)
    return float(np.max(np.abs(matrix - matrix.T))) <= SYMMETRY_TOL * scale


def slope_at_origin(act: Activation) -> float:
    """sigma'(0) for smooth kinds; the right derivative for the ReLU family."""
    taylor = act.taylor_at_zero()
    return taylor[0] if taylor is not None else float(act.deriv(1.0))


# ============================================================================
# STEADY STATES
# ============================================================================

def find_steady_state(a: Field, b: KernelSlice, grid: Grid) -> SteadyStateReport:
    """
    Minimum-norm least-squares solution of B f = a. Steady states exist iff
    a lies in R(B) and are unique iff N(B) is trivial.
    """
    a = check_field(a, grid, "bias")
    matrix = operator_matrix(b, grid)
    rhs = to_coordinates(a, grid)
    U, S, Vt = np.linalg.svd(matrix)
    rank = _rank(S)
    coeffs = (U[:, :rank].T @ rhs) / S[:rank]
    x = Vt[:rank].T @ coeffs
    residual = float(np.linalg.norm(matrix @ x - rhs))
    in_range = residual <= IN_RANGE_RTOL * float(np.linalg.norm(rhs))
    report = SteadyStateReport(
        f_e=from_coordinates(x, grid).tolist(),
        residual=residual,
        in_range=bool(in_range),
        nullspace_dim=grid.n - rank,
        rank=rank,
    )
    if report.nullspace_dim > 0:
        logger.info(f"📊 N(B) has dimension {report.nullspace_dim}: steady states are not unique")
    return report


def classify_relu_steady_state(a: Field, b: KernelSlice, f_e: Field, grid: Grid) -> str:
    """
    For ReLU every f with a - B f <= 0 is steady. Returns "interior" when
    sup(a - B f_e) < 0 (a whole neighbourhood is steady), "boundary" when it is 0
    and "not_steady" otherwise.
    """
    a = check_field(a, grid, "bias")
    bf = check_kernel(b, grid) @ (grid.weights * check_field(f_e, grid, "candidate"))
    u_max = float(np.max(a - bf))
    tol = ZERO_TOL * max(1.0, float(np.max(np.abs(a))), float(np.max(np.abs(bf))))
    if u_max < -tol:
        return "interior"
    if u_max <= tol:
        return "boundary"
    return "not_steady"


def equilibrium_orthogonality_check(u_e: Field, b: KernelSlice, act: Activation, grid: Grid) -> float:
    """
    For symmetric B, an equilibrium u_e in R(B) with sigma(u_e) in N(B) has
    u_e sigma(u_e) = 0. Returns ||u_e sigma(u_e)||_{L1}.
    """
    u_e = check_field(u_e, grid, "equilibrium")
    matrix = operator_matrix(b, grid)
    if not _is_symmetric(matrix):
        raise PreconditionError("kernel is not symmetric")
    if not require_zero_at_origin(act, "the equilibrium orthogonality check"):
        raise PreconditionError(f"{act.name} violates s*sigma(s) >= 0")

    op_norm = float(np.linalg.norm(matrix, ord=2))
    s_coords = to_coordinates(act.eval(u_e), grid)
    image = matrix @ s_coords
    if np.linalg.norm(image) > IN_RANGE_RTOL * op_norm * np.linalg.norm(s_coords):
        raise PreconditionError("sigma(u_e) is not in N(B)")

    u_coords = to_coordinates(u_e, grid)
    U, S, _ = np.linalg.svd(matrix)
    rng = U[:, : _rank(S)]
    off_range = u_coords - rng @ (rng.T @ u_coords)
    if np.linalg.norm(off_range) > IN_RANGE_RTOL * np.linalg.norm(u_coords):
        raise PreconditionError("u_e is not in R(B)")
    return integrate(np.abs(u_e * act.eval(u_e)), grid)


# ============================================================================
# SPECTRAL ANALYSIS
# ============================================================================

def spectral_report(b: KernelSlice, act: Activation, grid: Grid, N: Optional[int] = None) -> SpectralReport:
    """
    Spectrum of B_s = (B + B^T)/2, eigenvalues of B, SVD B = sum mu_l phi_l (psi_l, .),
    the Gram matrix T_N[l, m] = (psi_l, phi_m) of the top-N singular pairs and the
    definiteness of D_N T_N, D_N = diag(mu_1..mu_N).

    Verdict: an eigenvalue of B with negative real part means linear instability;
    else invertible T_N with positive-definite D_N T_N means asymptotic stability;
    else an eigenvalue on the imaginary axis means marginal; else inconclusive.
    """
    matrix = operator_matrix(b, grid)
    sym_eigs = np.linalg.eigvalsh(0.5 * (matrix + matrix.T))
    eigs = np.linalg.eigvals(matrix)
    order = np.lexsort((eigs.imag, eigs.real))
    eigs = eigs[order]
    U, S, Vt = np.linalg.svd(matrix)
    rank = _rank(S)

    if N is None:
        N = rank
    if N < 0:
        raise InvalidArgumentError(f"rank cutoff must be non-negative, got {N}")
    if N > rank:
        logger.warning(f"⚠️ Rank cutoff {N} exceeds numerical rank {rank}; clamping")
        N = rank

    gram = Vt[:N] @ U[:, :N]
    tn_invertible = False
    posdef = False
    if N > 0:
        sv_gram = np.linalg.svd(gram, compute_uv=False)
        tn_invertible = bool(sv_gram[-1] > ZERO_TOL * max(1.0, sv_gram[0]))
        dt_mat = S[:N, None] * gram
        sym_dt = np.linalg.eigvalsh(0.5 * (dt_mat + dt_mat.T))
        posdef = bool(sym_dt[0] > ZERO_TOL * float(S[0]))

    scale = float(np.max(np.abs(eigs))) if eigs.size else 0.0
    tol = ZERO_TOL * scale
    slope = slope_at_origin(act)
    if float(np.min(eigs.real)) < -tol:
        verdict = Verdict.LINEARLY_UNSTABLE
    elif tn_invertible and posdef:
        verdict = Verdict.LINEARLY_ASYMPT_STABLE
    elif np.any(np.abs(eigs.real) <= tol):
        verdict = Verdict.MARGINAL
    else:
        verdict = Verdict.INCONCLUSIVE
    logger.info(f"📊 Spectral verdict: {verdict.value} (rank {rank}, N={N})")
    return SpectralReport(
        sym_eigenvalues=sym_eigs.tolist(),
        eigenvalues_real=eigs.real.tolist(),
        eigenvalues_imag=eigs.imag.tolist(),
        singular_values=S.tolist(),
        gram_matrix=gram.tolist(),
        rank=rank,
        N=int(N),
        tn_invertible=tn_invertible,
        dn_tn_posdef=posdef,
        slope_at_origin=slope,
        verdict=verdict,
    )


def eigenpairs(b: KernelSlice, grid: Grid) -> Tuple[npt.NDArray[np.float64], npt.NDArray[np.float64]]:
    """
    Eigenvalues (descending) and eigenfunctions (rows, unit quadrature norm)
    of a symmetric kernel operator.
    """
    matrix = operator_matrix(b, grid)
    if not _is_symmetric(matrix):
        raise InvalidArgumentError("eigenpairs needs a symmetric kernel")
    values, vectors = np.linalg.eigh(0.5 * (matrix + matrix.T))
    order = np.argsort(values)[::-1]
    funcs = np.stack([from_coordinates(vectors[:, k], grid) for k in order])
    return values[order], funcs


def linearized_response(b: KernelSlice, act: Activation, w_I: Field, t: float, grid: Grid) -> Field:
    """w(t) = exp(-sigma'(0) B t) w_I."""
    matrix = operator_matrix(b, grid)
    x0 = to_coordinates(w_I, grid)
    return from_coordinates(expm(-slope_at_origin(act) * t * matrix) @ x0, grid)


def linearized_decay_rates(b: KernelSlice, act: Activation, grid: Grid) -> npt.NDArray[np.float64]:
    """sigma'(0) Re(omega_l), descending."""
    eigs = np.linalg.eigvals(operator_matrix(b, grid))
    return np.sort(slope_at_origin(act) * eigs.real)[::-1]


# ============================================================================
# RANK-ONE CASE TABLE
# ============================================================================

def rank_one_case(i1: float, i2: float, i3: float, taylor: Optional[Tuple[float, float, float]]) -> RankOneVerdict:
    """
    Local behaviour of u = 0 for u_t = -B sigma(u), B = phi (psi, .), from
    g(beta) = i1 s1 beta + i2 s2 beta^2 / 2 + i3 s3 beta^3 / 6 with
    (s1, s2, s3) = (sigma'(0), sigma''(0), sigma'''(0)).
    """
    integrals = (float(i1), float(i2), float(i3))
    if taylor is None:
        return RankOneVerdict(case_tag=RankOneCase.NONSMOOTH, integrals=integrals)
    _, s2, s3 = taylor
    if i1 > ZERO_TOL:
        return RankOneVerdict(case_tag=RankOneCase.CASE1_STABLE, integrals=integrals)
    if i1 < -ZERO_TOL:
        return RankOneVerdict(case_tag=RankOneCase.CASE2_UNSTABLE, integrals=integrals)
    quadratic = s2 * i2
    if quadratic > ZERO_TOL:
        return RankOneVerdict(case_tag=RankOneCase.CASE3I_ONESIDED_PLUS, integrals=integrals, quadratic_coeff=quadratic)
    if quadratic < -ZERO_TOL:
        return RankOneVerdict(case_tag=RankOneCase.CASE3II_ONESIDED_MINUS, integrals=integrals, quadratic_coeff=quadratic)
    # only the cubic term is reported; higher orders are not examined
    return RankOneVerdict(
        case_tag=RankOneCase.CASE3III_HIGHER_ORDER,
        integrals=integrals,
        quadratic_coeff=quadratic,
        cubic_coeff=s3 * i3,
    )


def classify_rank_one(phi: Field, psi: Field, act: Activation, grid: Grid) -> RankOneVerdict:
    """Case table for the kernel b(y, z) = phi(y) psi(z)."""
    phi = check_field(phi, grid, "phi")
    psi = check_field(psi, grid, "psi")
    i1 = integrate(phi * psi, grid)
    i2 = integrate(phi ** 2 * psi, grid)
    i3 = integrate(phi ** 3 * psi, grid)
    verdict = rank_one_case(i1, i2, i3, act.taylor_at_zero())
    logger.info(f"📊 Rank-one verdict: {verdict.case_tag.value} (int phi psi = {i1:.3e})")
    return verdict


# ============================================================================
# LYAPUNOV TRACES
# ============================================================================

def lyapunov_trace(
    traj: Trajectory,
    params: ControlParams,
    act: Activation,
    grid: Grid,
    energy: Optional[bool] = None,
) -> LyapunovTrace:
    """
    energy=None computes the symmetric energy only for symmetric kernels,
    energy=True requires it and energy=False skips it.
    """
    a, b = _autonomous(params)
    if not traj.complete:
        raise InvalidArgumentError("Lyapunov trace needs a complete trajectory")
    require_zero_at_origin(act, "the Lyapunov trace")
    w, dt = grid.weights, traj.time_grid.dt
    states = traj.states
    u = a[None, :] - (states * w) @ b.T
    sig = act.eval(u)
    sigma_integral = act.antideriv(u) @ w
    dissipation = (sig * u) @ w
    kernel_diss = np.einsum("li,i,ij,j,lj->l", sig, w, b, w, sig)

    cum_kernel = np.concatenate([[0.0], np.cumsum(dt * kernel_diss[:-1])])
    cum_diss = np.concatenate([[0.0], np.cumsum(dt * dissipation[:-1])])

    du = np.diff(u, axis=0)
    sigma_slack = 0.5 * act.sup_deriv * np.einsum("li,i,li->l", du, w, du) + SLACK_FLOOR

    trace = LyapunovTrace(
        times=traj.times.tolist(),
        sigma_integral=sigma_integral.tolist(),
        dissipation=dissipation.tolist(),
        cumulative_kernel_dissipation=cum_kernel.tolist(),
        cumulative_dissipation=cum_diss.tolist(),
        sigma_slack=sigma_slack.tolist(),
    )

    matrix = operator_matrix(b, grid)
    symmetric = _is_symmetric(matrix)
    if energy and not symmetric:
        raise InvalidArgumentError("symmetric energy requested for a non-symmetric kernel")
    if energy is False or not symmetric:
        return trace

    values, vectors = np.linalg.eigh(0.5 * (matrix + matrix.T))
    if values[0] < -ZERO_TOL * max(float(np.max(np.abs(values))), 1e-300):
        logger.warning("⚠️ Kernel is indefinite; B^1/2 is taken on the positive part only")
    root = np.sqrt(np.clip(values, 0.0, None))
    coords = states * np.sqrt(w)
    half_norm = 0.5 * np.sum((coords @ vectors * root) ** 2, axis=1)
    trace.energy = (half_norm - states @ (w * a)).tolist()
    df = np.diff(states, axis=0)
    lam_max = max(float(values[-1]), 0.0)
    trace.energy_slack = (0.5 * lam_max * np.einsum("li,i,li->l", df, w, df) + SLACK_FLOOR).tolist()
    return trace


# ============================================================================
# GROWTH AND CONDITIONING
# ============================================================================

def _rms(residual: np.ndarray) -> float:
    return float(np.sqrt(np.mean(residual ** 2)))


def growth_fit(traj: Trajectory, grid: Grid) -> GrowthFit:
    """
    Fit ||f(t)|| against c1 + c2 t and c e^{rho t}. Bounded activations give
    linear growth at most. The exponential model is chosen only for rho > 0
    and a residual under half of the linear one.
    """
    if traj.states.shape[0] < MIN_GROWTH_STEPS + 1:
        raise InvalidArgumentError(f"growth fit needs at least {MIN_GROWTH_STEPS} steps")
    t = traj.times
    y = np.sqrt(np.maximum((traj.states ** 2) @ grid.weights, 0.0))
    if np.ptp(y) <= ZERO_TOL * max(1.0, float(np.max(y))):
        return GrowthFit(model="linear", rate=0.0, fit_residual=0.0, intercept=float(y[0]))

    slope, intercept = np.polyfit(t, y, 1)
    lin_res = _rms(y - (intercept + slope * t))
    linear = GrowthFit(model="linear", rate=float(slope), fit_residual=lin_res, intercept=float(intercept))
    act = traj.activation
    if act is not None and act.bounded:
        return linear
    # a zero state (e.g. f_I = 0) drops out of the exponential fit
    positive = y > 0
    if np.count_nonzero(positive) < MIN_GROWTH_STEPS:
        return linear
    tp, yp = t[positive], y[positive]

    rho0, logc0 = np.polyfit(tp, np.log(yp), 1)
    try:
        (c, rho), _ = curve_fit(lambda s, c, r: c * np.exp(r * s), tp, yp, p0=(math.exp(logc0), rho0), maxfev=5000)
    except (RuntimeError, ValueError):
        c, rho = math.exp(logc0), rho0
    exp_res = _rms(y - c * np.exp(rho * t))
    logger.debug(f"📊 Growth fit: linear rms {lin_res:.3e}, exponential rms {exp_res:.3e} (rho={rho:.4g})")
    if rho > 0 and exp_res < EXP_PREFERENCE * lin_res:
        return GrowthFit(model="exponential", rate=float(rho), fit_residual=exp_res, intercept=float(c))
    return linear


def conditioning_bound(params: ControlParams, act: Activation, grid: Grid) -> npt.NDArray[np.float64]:
    """sup|sigma'| * ||b(., ., t_l)||_{L2(YxY)} per slice."""
    return np.array([act.sup_deriv * kernel_norm(params.b[l], grid) for l in range(params.steps)])


def linearized_operator_norm(params: ControlParams, traj: Trajectory, act: Activation, l: int, grid: Grid) -> float:
    """L2 operator norm of v -> sigma'(u^l) B_{b^l} v."""
    s = params.slice_index(l)
    u = params.a[s] - params.b[s] @ (grid.weights * traj.states[l])
    matrix = act.deriv(u)[:, None] * operator_matrix(params.b[s], grid)
    return float(np.linalg.norm(matrix, ord=2))
