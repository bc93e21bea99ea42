"""
Forward solver for f_t = sigma(a - B_b f), the residual u = a - B_b f, the tangent
(Gateaux) linearization and the rank-one ReLU closed-form solutions.

Controls are piecewise constant in time: slice l acts on [t_l, t_{l+1}).
"""
import logging
from dataclasses import dataclass, replace as dc_replace
from typing import Optional

import numpy as np
import numpy.typing as npt

from .activation import Activation
from .errors import DivergenceError, InvalidArgumentError
from .grid import (
    Field,
    Grid,
    KernelSlice,
    TimeGrid,
    check_field,
    integrate,
)

logger = logging.getLogger(__name__)

DIVERGENCE_GUARD = 1e12
RANK_ONE_NORM_TOL = 1e-9
DEGENERATE_RATE = 1e-14
INTEGRATORS = ("euler", "rk4")


# ============================================================================
# CONTROLS AND TRAJECTORIES
# ============================================================================

@dataclass(frozen=True)
class ControlParams:
    """
    Bias a[l, i] = a(y_i, t_l) and kernel b[l, i, j] = b(y_i, z_j, t_l),
    one slice per time step.
    """
    a: npt.NDArray[np.float64]
    b: npt.NDArray[np.float64]
    time_constant: bool = False

    def __post_init__(self):
        a = np.array(self.a, dtype=float)
        b = np.array(self.b, dtype=float)
        if a.ndim != 2 or b.ndim != 3 or b.shape != (a.shape[0], a.shape[1], a.shape[1]):
            raise InvalidArgumentError(
                f"controls need a: (steps, n) and b: (steps, n, n), got {a.shape} and {b.shape}"
            )
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise InvalidArgumentError("controls have non-finite entries")
        a.flags.writeable = False
        b.flags.writeable = False
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def steps(self) -> int:
        return int(self.a.shape[0])

    @property
    def n(self) -> int:
        return int(self.a.shape[1])

    @classmethod
    def constant(cls, a: Field, b: KernelSlice, steps: int) -> "ControlParams":
        """Autonomous controls broadcast over every time slice."""
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        return cls(
            a=np.broadcast_to(a, (steps,) + a.shape).copy(),
            b=np.broadcast_to(b, (steps,) + b.shape).copy(),
            time_constant=True,
        )

    @classmethod
    def zeros(cls, grid: Grid, time_grid: TimeGrid) -> "ControlParams":
        return cls.constant(np.zeros(grid.n), np.zeros((grid.n, grid.n)), time_grid.steps)

    def with_values(self, a=None, b=None) -> "ControlParams":
        new = dc_replace(
            self,
            a=self.a if a is None else a,
            b=self.b if b is None else b,
            time_constant=False,
        )
        return dc_replace(new, time_constant=new.detect_time_constant())

    def detect_time_constant(self) -> bool:
        return bool(np.all(self.a == self.a[0]) and np.all(self.b == self.b[0]))

    @property
    def autonomous(self) -> bool:
        return self.time_constant or self.detect_time_constant()

    def slice_index(self, l: int) -> int:
        """Slice acting at grid time t_l; l = steps reuses the last slice."""
        return min(int(l), self.steps - 1)

    def check(self, grid: Grid, time_grid: TimeGrid) -> None:
        if self.n != grid.n:
            raise InvalidArgumentError(f"controls have {self.n} nodes, grid has {grid.n}")
        if self.steps != time_grid.steps:
            raise InvalidArgumentError(
                f"controls have {self.steps} time slices, time grid has {time_grid.steps} steps"
            )


@dataclass(frozen=True)
class Trajectory:
    """states[l] = f(., t_l) for l = 0..steps (fewer when a solve aborted)."""
    states: npt.NDArray[np.float64]
    grid: Grid
    time_grid: TimeGrid
    activation: Optional[Activation] = None

    @property
    def final(self) -> Field:
        return self.states[-1]

    @property
    def complete(self) -> bool:
        return self.states.shape[0] == self.time_grid.steps + 1

    @property
    def times(self) -> Field:
        return self.time_grid.times[: self.states.shape[0]]

    def at(self, l: int) -> Field:
        return self.states[l]


def _check_trajectory(params: ControlParams, traj: Trajectory) -> None:
    params.check(traj.grid, traj.time_grid)
    if not traj.complete:
        raise InvalidArgumentError("trajectory is incomplete (aborted solve?)")


# ============================================================================
# FORWARD SOLVE
# ============================================================================

def _rhs(a_l: Field, b_l: KernelSlice, f: Field, act: Activation, weights: Field) -> Field:
    return act.eval(a_l - b_l @ (weights * f))


def forward_solve(
    params: ControlParams,
    f_I: Field,
    act: Activation,
    grid: Grid,
    time_grid: TimeGrid,
    integrator: str = "euler",
) -> Trajectory:
    """
    Integrate f_t = sigma(a - B_b f), f(0) = f_I.

    Euler: f^{l+1} = f^l + dt * sigma(a^l - B_{b^l} f^l). The rk4 option holds the
    control slice frozen over each step and is meant for forward-only studies;
    gradients assume Euler.
    """
    params.check(grid, time_grid)
    f0 = check_field(f_I, grid, "initial field")
    if integrator not in INTEGRATORS:
        raise InvalidArgumentError(f"integrator must be one of {INTEGRATORS}, got '{integrator}'")

    dt = time_grid.dt
    w = grid.weights
    states = np.empty((time_grid.steps + 1, grid.n))
    states[0] = f0
    f = f0
    for l in range(time_grid.steps):
        a_l, b_l = params.a[l], params.b[l]
        if integrator == "euler":
            f = f + dt * _rhs(a_l, b_l, f, act, w)
        else:
            k1 = _rhs(a_l, b_l, f, act, w)
            k2 = _rhs(a_l, b_l, f + 0.5 * dt * k1, act, w)
            k3 = _rhs(a_l, b_l, f + 0.5 * dt * k2, act, w)
            k4 = _rhs(a_l, b_l, f + dt * k3, act, w)
            f = f + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        max_norm = float(np.max(np.abs(f))) if np.all(np.isfinite(f)) else float("inf")
        if max_norm > DIVERGENCE_GUARD:
            partial = Trajectory(states[: l + 1].copy(), grid, time_grid, act)
            logger.error(f"❌ Forward solve diverged at step {l + 1} (max-norm {max_norm:.3g})")
            raise DivergenceError(step=l + 1, max_norm=max_norm, partial=partial)
        states[l + 1] = f
    logger.debug(f"✅ Forward solve done: {time_grid.steps} {integrator} steps, |f(T)|_inf={np.max(np.abs(f)):.4g}")
    return Trajectory(states, grid, time_grid, act)


def residual(params: ControlParams, traj: Trajectory, l: int) -> Field:
    """u^l = a^l - B_{b^l} f^l, 0 <= l <= steps."""
    params.check(traj.grid, traj.time_grid)
    if int(l) != l or l < 0 or l >= traj.states.shape[0]:
        raise InvalidArgumentError(f"step index {l} out of range [0, {traj.states.shape[0] - 1}]")
    s = params.slice_index(l)
    return params.a[s] - params.b[s] @ (traj.grid.weights * traj.states[l])


def residuals(params: ControlParams, traj: Trajectory) -> npt.NDArray[np.float64]:
    """u^l for l = 0..steps-1 (the residuals the Euler steps evaluate sigma at)."""
    _check_trajectory(params, traj)
    wf = traj.states[:-1] * traj.grid.weights
    return params.a - np.einsum("lij,lj->li", params.b, wf)


# ============================================================================
# TANGENT (GATEAUX) SOLVE
# ============================================================================

def tangent_solve(
    params: ControlParams,
    traj: Trajectory,
    act: Activation,
    dir_a: Optional[npt.NDArray[np.float64]] = None,
    dir_b: Optional[npt.NDArray[np.float64]] = None,
) -> Trajectory:
    """
    Linearization of the discrete forward map in direction (alpha, beta):
    g^{l+1} = g^l + dt * sigma'(u^l) (alpha^l - B_{b^l} g^l - B_{beta^l} f^l), g^0 = 0.
    """
    _check_trajectory(params, traj)
    steps, n = params.steps, params.n
    alpha = np.zeros((steps, n)) if dir_a is None else np.asarray(dir_a, dtype=float)
    beta = np.zeros((steps, n, n)) if dir_b is None else np.asarray(dir_b, dtype=float)
    if alpha.shape != (steps, n):
        raise InvalidArgumentError(f"bias direction has shape {alpha.shape}, expected {(steps, n)}")
    if beta.shape != (steps, n, n):
        raise InvalidArgumentError(f"kernel direction has shape {beta.shape}, expected {(steps, n, n)}")

    w = traj.grid.weights
    dt = traj.time_grid.dt
    slopes = act.deriv(residuals(params, traj))
    g = np.zeros((steps + 1, n))
    for l in range(steps):
        forcing = alpha[l] - params.b[l] @ (w * g[l]) - beta[l] @ (w * traj.states[l])
        g[l + 1] = g[l] + dt * slopes[l] * forcing
    return Trajectory(g, traj.grid, traj.time_grid, act)


# ============================================================================
# RANK-ONE RELU CLOSED FORM
# ============================================================================

@dataclass(frozen=True)
class RankOneSpec:
    """
    Rank-one kernel b(y, z) = psi(y) phi(z) with bias a = a0 psi, so that
    u(., t) = lambda(t) psi stays on the line spanned by psi.
    """
    phi: Field
    psi: Field
    a0: float
    f_I: Field

    def validate(self, grid: Grid) -> None:
        phi = check_field(self.phi, grid, "phi")
        psi = check_field(self.psi, grid, "psi")
        check_field(self.f_I, grid, "f_I")
        for name, v in (("phi", phi), ("psi", psi)):
            if abs(integrate(v * v, grid) - 1.0) > RANK_ONE_NORM_TOL:
                raise InvalidArgumentError(f"{name} must have unit L2 norm under the grid quadrature")

    def kernel(self) -> KernelSlice:
        return np.outer(self.psi, self.phi)

    def bias(self) -> Field:
        return self.a0 * np.asarray(self.psi, dtype=float)

    def controls(self, time_grid: TimeGrid) -> ControlParams:
        return ControlParams.constant(self.bias(), self.kernel(), time_grid.steps)

    def lambda_I(self, grid: Grid) -> float:
        return float(self.a0 - integrate(np.asarray(self.f_I) * self.phi, grid))

    def alpha(self, grid: Grid) -> float:
        return integrate(np.maximum(self.psi, 0.0) * self.phi, grid)

    def beta(self, grid: Grid) -> float:
        return integrate(np.maximum(-np.asarray(self.psi), 0.0) * self.phi, grid)


def rank_one_relu_solution(spec: RankOneSpec, t: float, grid: Grid) -> Field:
    """
    Closed-form ReLU solution for the rank-one instance:
      lambda_I >= 0: f_I + (lambda_I/alpha) psi^+ (1 - e^{-alpha t})
      lambda_I <  0: f_I + (|lambda_I|/beta) psi^- (e^{beta t} - 1)
    with the linear-in-t branch when alpha (resp. beta) vanishes.
    """
    spec.validate(grid)
    f_I = np.asarray(spec.f_I, dtype=float)
    psi = np.asarray(spec.psi, dtype=float)
    lam = spec.lambda_I(grid)
    if lam >= 0:
        rate = spec.alpha(grid)
        profile = np.maximum(psi, 0.0)
        # (1 - e^{-alpha t}) / alpha
        growth = t if abs(rate) <= DEGENERATE_RATE else -np.expm1(-rate * t) / rate
    else:
        rate = spec.beta(grid)
        profile = np.maximum(-psi, 0.0)
        # (e^{beta t} - 1) / beta
        growth = t if abs(rate) <= DEGENERATE_RATE else np.expm1(rate * t) / rate
    return f_I + abs(lam) * growth * profile


def equilibrium_drift_solution(u_e: Field, f_I: Field, act: Activation, t: float) -> Field:
    """f_I + t sigma(u_e): the linearly growing solution when sigma(u_e) lies in N(B)."""
    return np.asarray(f_I, dtype=float) + t * act.eval(u_e)
