"""
Canonical instances shared by the tests and the demo: random smooth tracking
problems, rank-one ReLU instances, kernels with prescribed spectra and the
training problems used to exercise ppa and pmp.
"""
from typing import Sequence, Tuple

import numpy as np

from .activation import Activation
from .control import TrainingProblem
from .dynamics import ControlParams, RankOneSpec, forward_solve
from .grid import Grid, TimeGrid, kernel_from_operator, make_grid, make_time_grid, norm, to_coordinates
from .objective import LossSpec

TANH = Activation("tanh")
RELU = Activation("relu")


def normalized(f: np.ndarray, grid: Grid) -> np.ndarray:
    return np.asarray(f, dtype=float) / norm(f, grid)


def random_controls(
    grid: Grid, time_grid: TimeGrid, rng: np.random.Generator, a_scale: float = 0.5, b_scale: float = 0.5
) -> ControlParams:
    a = a_scale * rng.standard_normal((time_grid.steps, grid.n))
    b = b_scale * rng.standard_normal((time_grid.steps, grid.n, grid.n))
    return ControlParams(a=a, b=b)


def random_smooth_instance(
    seed: int, n: int = 16, steps: int = 32, T: float = 1.0, lam: float = 0.0
) -> Tuple[Grid, TimeGrid, ControlParams, np.ndarray, LossSpec]:
    """Random time-dependent controls, smooth initial field and an off-trajectory target."""
    rng = np.random.default_rng(seed)
    grid = make_grid(n)
    time_grid = make_time_grid(T, steps)
    params = random_controls(grid, time_grid, rng)
    f_I = np.sin(np.pi * grid.nodes) + 0.3 * rng.standard_normal(n)
    target = f_I + 0.5 * rng.standard_normal(n)
    return grid, time_grid, params, f_I, LossSpec.tracking(target, lam=lam)


# ============================================================================
# RANK-ONE RELU INSTANCES
# ============================================================================

def rank_one_instance(grid: Grid, branch: str = "positive") -> RankOneSpec:
    """
    positive: lambda_I > 0 with alpha > 0 (saturating growth).
    negative: lambda_I < 0 with beta > 0 (exponential growth on psi^-).
    """
    y = grid.nodes
    psi = normalized(np.cos(np.pi * y), grid)
    if branch == "positive":
        phi = normalized(np.cos(np.pi * y) + 0.5, grid)
        return RankOneSpec(phi=phi, psi=psi, a0=1.0, f_I=0.1 * np.ones(grid.n))
    phi = -psi
    return RankOneSpec(phi=phi, psi=psi, a0=-1.0, f_I=np.zeros(grid.n))


# ============================================================================
# KERNELS
# ============================================================================

def orthonormal_basis(grid: Grid, seed: int = 0) -> np.ndarray:
    """Orthonormal columns in quadrature coordinates, first column along the constants."""
    rng = np.random.default_rng(seed)
    m = rng.standard_normal((grid.n, grid.n))
    m[:, 0] = to_coordinates(np.ones(grid.n), grid)
    q, r = np.linalg.qr(m)
    return q * np.sign(np.diag(r))[None, :]


def kernel_with_spectrum(grid: Grid, eigenvalues: Sequence[float], seed: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    """
    Symmetric kernel whose operator has the given leading eigenvalues (the rest
    zero). Returns the kernel and the eigenvector matrix in quadrature coordinates.
    """
    q = orthonormal_basis(grid, seed)
    values = np.zeros(grid.n)
    values[: len(eigenvalues)] = eigenvalues
    return kernel_from_operator(q @ np.diag(values) @ q.T, grid), q


def psd_symmetric_part_kernel(grid: Grid, seed: int, skew: float = 0.5) -> np.ndarray:
    """Non-symmetric kernel with positive semidefinite symmetric part."""
    rng = np.random.default_rng(seed)
    m = rng.standard_normal((grid.n, grid.n))
    s = rng.standard_normal((grid.n, grid.n))
    op = m @ m.T / grid.n + skew * (s - s.T)
    return kernel_from_operator(op, grid)


def nonnormal_unstable_kernel(grid: Grid) -> np.ndarray:
    """Upper-triangular operator with eigenvalues (1, -0.5, 1, ...) and a large off-diagonal coupling."""
    op = np.eye(grid.n)
    op[1, 1] = -0.5
    op[0, 1] = 3.0
    return kernel_from_operator(op, grid)


# ============================================================================
# TRAINING PROBLEMS
# ============================================================================

def reachable_tracking_problem(n: int = 8, steps: int = 16, T: float = 1.0, seed: int = 7) -> TrainingProblem:
    """Target produced by known smooth controls; training starts from zero controls."""
    grid = make_grid(n)
    time_grid = make_time_grid(T, steps)
    y = grid.nodes
    a_true = np.broadcast_to(0.5 * np.sin(np.pi * y), (steps, n))
    rng = np.random.default_rng(seed)
    b_true = np.broadcast_to(0.2 * rng.standard_normal((n, n)), (steps, n, n))
    f_I = np.cos(np.pi * y)
    target = forward_solve(ControlParams(a=a_true, b=b_true), f_I, TANH, grid, time_grid).final
    return TrainingProblem(
        grid=grid, time_grid=time_grid, act=TANH, f_I=f_I,
        spec=LossSpec.tracking(target), params0=ControlParams.zeros(grid, time_grid),
    )


def unreachable_pmp_problem(n: int = 8, steps: int = 40, T: float = 0.5) -> TrainingProblem:
    """Positive initial field and a far target: the box maximizer is the constant corner (a_hi, b_lo)."""
    grid = make_grid(n)
    time_grid = make_time_grid(T, steps)
    f_I = 0.5 + 0.25 * grid.nodes
    return TrainingProblem(
        grid=grid, time_grid=time_grid, act=TANH, f_I=f_I,
        spec=LossSpec.tracking(np.full(n, 10.0)), params0=ControlParams.zeros(grid, time_grid),
    )
