"""
Co-state (adjoint) solver and terminal conditions.

The backward recursion is the exact transpose of the Euler forward step under
the quadrature inner product:

    r^l = r^{l+1} - dt * B_{(b^l)^T}( sigma'(u^l) r^{l+1} ),   r^steps = r_T,

a consistent discretization of r_t = B_{b^T}(sigma'(u) r) integrated backward
from t = T. With this recursion <r_T, g(T)> equals the sum over steps of the
forcing terms of the tangent equation, for every direction.
"""
import logging
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from .activation import Activation
from .dynamics import ControlParams, Trajectory, residuals
from .errors import InvalidArgumentError, PreconditionError
from .grid import Field, Grid, KernelSlice, TimeGrid, check_field, check_kernel, kernel_norm

logger = logging.getLogger(__name__)

CONDITIONING_SLACK = 1e-10


@dataclass(frozen=True)
class CostateTrajectory:
    """states[l] = r(., t_l); states[steps] is the terminal field."""
    states: npt.NDArray[np.float64]
    grid: Grid
    time_grid: TimeGrid

    @property
    def terminal(self) -> Field:
        return self.states[-1]

    def at(self, l: int) -> Field:
        return self.states[l]


def backward_step_norm(params: ControlParams, traj: Trajectory, act: Activation, l: int) -> float:
    """L2(Y) operator norm of r -> r - dt B_{(b^l)^T}(sigma'(u^l) r)."""
    grid = traj.grid
    u = residuals(params, traj)[l]
    step = np.eye(grid.n) - traj.time_grid.dt * params.b[l].T * (grid.weights * act.deriv(u))[None, :]
    s = grid.sqrt_weights
    return float(np.linalg.norm(s[:, None] * step / s[None, :], ord=2))


def adjoint_solve(
    params: ControlParams,
    traj: Trajectory,
    act: Activation,
    r_T: Field,
    check_conditioning: bool = False,
) -> CostateTrajectory:
    """
    Backward sweep from r_T. With check_conditioning every step is checked
    against 1 + dt * sup|sigma'| * ||b^l||_{L2(YxY)}.
    """
    if traj.activation is not None and traj.activation != act:
        raise InvalidArgumentError(
            f"trajectory was integrated with {traj.activation.name}, adjoint called with {act.name}"
        )
    grid, time_grid = traj.grid, traj.time_grid
    slopes = act.deriv(residuals(params, traj))
    r_T = check_field(r_T, grid, "terminal co-state")

    dt = time_grid.dt
    w = grid.weights
    r = np.empty((time_grid.steps + 1, grid.n))
    r[-1] = r_T
    for l in range(time_grid.steps - 1, -1, -1):
        r[l] = r[l + 1] - dt * (params.b[l].T @ (w * slopes[l] * r[l + 1]))
        if check_conditioning:
            bound = 1.0 + dt * act.sup_deriv * kernel_norm(params.b[l], grid)
            measured = backward_step_norm(params, traj, act, l)
            if measured > bound * (1.0 + CONDITIONING_SLACK):
                raise PreconditionError(
                    f"backward step {l} has norm {measured:.6g} above the bound {bound:.6g}"
                )
    logger.debug(f"✅ Adjoint solve done: |r(0)|_inf={np.max(np.abs(r[0])):.4g}")
    return CostateTrajectory(r, grid, time_grid)


# ============================================================================
# TERMINAL CONDITIONS
# ============================================================================

def terminal_tracking(f_T: Field, target: Field) -> Field:
    """r_T = f(T) - target."""
    f_T = np.asarray(f_T, dtype=float)
    target = np.asarray(target, dtype=float)
    if f_T.shape != target.shape or f_T.ndim != 1:
        raise InvalidArgumentError(f"final state {f_T.shape} and target {target.shape} differ in shape")
    return f_T - target


def terminal_classification(
    f_T: Field,
    W: KernelSlice,
    mu: Field,
    link: Activation,
    label: Field,
    grid: Grid,
) -> Field:
    """
    r(z) = int_Y (C_pre(y) - C(y)) h'(O(y)) W(y, z) dy with O = B_W f(T) + mu.
    The y-integration runs over the first kernel argument (adjoint of the classifier).
    """
    f_T = check_field(f_T, grid, "final state")
    W = check_kernel(W, grid, "classifier kernel")
    mu = check_field(mu, grid, "classifier bias")
    label = check_field(label, grid, "label")
    out = W @ (grid.weights * f_T) + mu
    misfit = link.eval(out) - label
    return W.T @ (grid.weights * misfit * link.deriv(out))
