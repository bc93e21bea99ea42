"""
Discretization of the neuron domain Y (an interval) and the depth interval [0, T].

Fields are 1-D float arrays with one value per node, kernel slices are square
arrays with entry (i, j) = kernel(y_i, z_j). Integrals use composite trapezoid
weights w_i, so the discrete operator is B ~ K diag(w) (weight on the right).

Adjoint identity: with <f, g> = sum_i w_i f_i g_i the adjoint of K diag(w) is
diag(w)^-1 (K diag(w))^T diag(w) = K^T diag(w), i.e. transposing the kernel
samples gives B_{b^T} = B_b^*.
"""
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np
import numpy.typing as npt

from .errors import InvalidArgumentError

Field = npt.NDArray[np.float64]
KernelSlice = npt.NDArray[np.float64]

WEIGHT_SUM_RTOL = 1e-12


# ============================================================================
# GRID TYPES
# ============================================================================

@dataclass(frozen=True)
class Grid:
    """Quadrature nodes/weights over Y = [y_lo, y_hi]."""
    nodes: Field
    weights: Field
    y_lo: float
    y_hi: float

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float)
        weights = np.array(self.weights, dtype=float)
        if nodes.ndim != 1 or nodes.shape != weights.shape:
            raise InvalidArgumentError("grid nodes and weights must be 1-D arrays of equal length")
        if np.any(np.diff(nodes) <= 0):
            raise InvalidArgumentError("grid nodes must be strictly increasing")
        if np.any(weights <= 0):
            raise InvalidArgumentError("quadrature weights must be strictly positive")
        length = self.y_hi - self.y_lo
        if abs(weights.sum() - length) > WEIGHT_SUM_RTOL * max(abs(length), 1.0):
            raise InvalidArgumentError("quadrature weights must sum to |Y|")
        nodes.flags.writeable = False
        weights.flags.writeable = False
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @property
    def n(self) -> int:
        return int(self.nodes.size)

    @property
    def length(self) -> float:
        return float(self.y_hi - self.y_lo)

    @property
    def domain(self) -> Tuple[float, float]:
        return (self.y_lo, self.y_hi)

    @property
    def sqrt_weights(self) -> Field:
        return np.sqrt(self.weights)

    def constant(self, value: float) -> Field:
        return np.full(self.n, float(value))


@dataclass(frozen=True)
class TimeGrid:
    """Uniform depth grid t_l = l*dt, l = 0..steps."""
    T: float
    steps: int
    times: Field = field(init=False, repr=False)

    def __post_init__(self):
        if not np.isfinite(self.T) or self.T <= 0:
            raise InvalidArgumentError(f"final depth T must be positive, got {self.T}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise InvalidArgumentError(f"steps must be an integer >= 1, got {self.steps}")
        times = np.linspace(0.0, self.T, int(self.steps) + 1)
        times.flags.writeable = False
        object.__setattr__(self, "steps", int(self.steps))
        object.__setattr__(self, "times", times)

    @property
    def dt(self) -> float:
        return self.T / self.steps


def make_grid(n: int, domain: Tuple[float, float] = (0.0, 1.0)) -> Grid:
    """Uniform nodes including both endpoints, composite trapezoid weights."""
    y_lo, y_hi = float(domain[0]), float(domain[1])
    if int(n) != n or n < 2:
        raise InvalidArgumentError(f"grid needs at least 2 nodes, got {n}")
    if not (np.isfinite(y_lo) and np.isfinite(y_hi)) or y_hi <= y_lo:
        raise InvalidArgumentError(f"domain must be a non-degenerate interval, got {domain}")
    nodes = np.linspace(y_lo, y_hi, int(n))
    h = (y_hi - y_lo) / (n - 1)
    weights = np.full(int(n), h)
    weights[0] = weights[-1] = 0.5 * h
    # rescale away the rounding in n*h so the weights sum to |Y|
    weights *= (y_hi - y_lo) / weights.sum()
    return Grid(nodes=nodes, weights=weights, y_lo=y_lo, y_hi=y_hi)


def make_time_grid(T: float, steps: int) -> TimeGrid:
    return TimeGrid(T=float(T), steps=steps)


# ============================================================================
# VALIDATION
# ============================================================================

def check_field(f, grid: Grid, name: str = "field") -> Field:
    arr = np.asarray(f, dtype=float)
    if arr.shape != (grid.n,):
        raise InvalidArgumentError(f"{name} has shape {arr.shape}, expected ({grid.n},)")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name} has non-finite entries")
    return arr


def check_kernel(k, grid: Grid, name: str = "kernel") -> KernelSlice:
    arr = np.asarray(k, dtype=float)
    if arr.shape != (grid.n, grid.n):
        raise InvalidArgumentError(f"{name} has shape {arr.shape}, expected ({grid.n}, {grid.n})")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name} has non-finite entries")
    return arr


# ============================================================================
# QUADRATURE
# ============================================================================

def integrate(f: Field, grid: Grid) -> float:
    return float(np.dot(grid.weights, check_field(f, grid)))


def inner_product(f: Field, g: Field, grid: Grid) -> float:
    """sum_i w_i f_i g_i"""
    f = check_field(f, grid, "f")
    g = check_field(g, grid, "g")
    return float(np.dot(grid.weights * f, g))


def norm(f: Field, grid: Grid) -> float:
    return float(np.sqrt(max(inner_product(f, f, grid), 0.0)))


def apply_kernel(k: KernelSlice, f: Field, grid: Grid) -> Field:
    """(B f)(y_i) = sum_j k_ij w_j f_j"""
    k = check_kernel(k, grid)
    f = check_field(f, grid, "f")
    return k @ (grid.weights * f)


def transpose_kernel(k: KernelSlice) -> KernelSlice:
    return np.ascontiguousarray(np.asarray(k, dtype=float).T)


def kernel_norm(k: KernelSlice, grid: Grid) -> float:
    """||k||_{L2(Y x Y)}, which bounds the L2 operator norm of B_k."""
    k = check_kernel(k, grid)
    w = grid.weights
    return float(np.sqrt(np.einsum("i,ij,j->", w, k * k, w)))


def operator_matrix(k: KernelSlice, grid: Grid) -> npt.NDArray[np.float64]:
    """
    W^1/2 K W^1/2: the discrete operator written in coordinates where the
    quadrature norm is Euclidean. Similar to K diag(w), so it shares its spectrum.
    """
    k = check_kernel(k, grid)
    s = grid.sqrt_weights
    return s[:, None] * k * s[None, :]


def kernel_from_operator(matrix, grid: Grid) -> KernelSlice:
    """Inverse of operator_matrix."""
    m = np.asarray(matrix, dtype=float)
    if m.shape != (grid.n, grid.n):
        raise InvalidArgumentError(f"operator matrix has shape {m.shape}, expected ({grid.n}, {grid.n})")
    s = grid.sqrt_weights
    return m / (s[:, None] * s[None, :])


def to_coordinates(f: Field, grid: Grid) -> Field:
    """Nodal values -> coordinates with Euclidean norm equal to the L2 norm."""
    return grid.sqrt_weights * check_field(f, grid)


def from_coordinates(v, grid: Grid) -> Field:
    return np.asarray(v, dtype=float) / grid.sqrt_weights
