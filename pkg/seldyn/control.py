"""
Hamiltonian, box maximization of the Hamiltonian and the training algorithms:
proximal point (ppa), Pontryagin successive approximation (pmp) and plain
gradient descent (gd).
"""
import logging
from dataclasses import dataclass, field
from typing import List, Literal, Optional, Tuple, TypedDict

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel, Field as PydField, model_validator

from .activation import Activation
from .adjoint import CostateTrajectory, adjoint_solve
from .dynamics import ControlParams, Trajectory, forward_solve
from .errors import DivergenceError, InvalidArgumentError
from .grid import Field, Grid, KernelSlice, TimeGrid, check_field, check_kernel, norm
from .objective import (
    ClassifierParams,
    LossSpec,
    ParamGradient,
    gradient,
    loss,
    loss_and_gradient,
    terminal_costate,
)
from .settings import worker_pool

logger = logging.getLogger(__name__)

DEGENERATE_COSTATE = 1e-12
STEP_GROWTH = 1.5
STEP_SHRINK = 0.5


# ============================================================================
# CONFIGURATION MODELS
# ============================================================================

class ControlBox(BaseModel):
    """Admissible set [a_lo, a_hi] x [b_lo, b_hi]."""
    a_lo: float = -1.0
    a_hi: float = 1.0
    b_lo: float = -1.0
    b_hi: float = 1.0

    @model_validator(mode="after")
    def check_order(self):
        if self.a_lo > self.a_hi:
            raise ValueError(f"a_lo ({self.a_lo}) exceeds a_hi ({self.a_hi})")
        if self.b_lo > self.b_hi:
            raise ValueError(f"b_lo ({self.b_lo}) exceeds b_hi ({self.b_hi})")
        return self


class TrainConfig(BaseModel):
    algo: Literal["ppa", "pmp", "gd"] = "ppa"
    tau: float = PydField(default=1.0, gt=0)
    inner_iters: int = PydField(default=10, ge=1)
    inner_step: float = PydField(default=0.5, gt=0)
    max_iters: int = PydField(default=100, ge=0)
    tol: float = PydField(default=1e-8, ge=0)
    damping: float = PydField(default=0.5, ge=0, le=1)
    box: Optional[ControlBox] = None
    # accepted for config compatibility; every trainer is deterministic
    seed: int = 0

    @model_validator(mode="after")
    def check_box(self):
        if self.algo == "pmp" and self.box is None:
            raise ValueError("pmp training needs a control box")
        return self


# ============================================================================
# PROBLEM / RESULT / ITERATION STATE
# ============================================================================

@dataclass(frozen=True)
class TrainingProblem:
    grid: Grid
    time_grid: TimeGrid
    act: Activation
    f_I: Field
    spec: LossSpec
    params0: ControlParams


@dataclass
class TrainResult:
    algo: str
    params: ControlParams
    classifier: Optional[ClassifierParams]
    loss_history: List[float]
    grad_norm_history: List[float]
    hamiltonian_history: List[float] = field(default_factory=list)
    descent_slack: List[float] = field(default_factory=list)
    control_change: List[float] = field(default_factory=list)
    degenerate_steps: List[int] = field(default_factory=list)
    converged: bool = False
    iterations: int = 0

    @property
    def final_loss(self) -> float:
        return self.loss_history[-1]


class TrainState(TypedDict):
    """
    Per-iteration bookkeeping shared by the trainers.

    Attributes:
        iteration: iterations completed
        loss: loss at the current iterate
        grad_norm: L2 norm of the gradient at the current iterate
        step: current inner step size (ppa/gd)
        converged: stopping test satisfied
    """
    iteration: int
    loss: float
    grad_norm: float
    step: float
    converged: bool


def create_initial_state(loss_value: float, grad_norm: float, step: float) -> TrainState:
    return {
        "iteration": 0,
        "loss": loss_value,
        "grad_norm": grad_norm,
        "step": step,
        "converged": False,
    }


# ============================================================================
# HAMILTONIAN
# ============================================================================

def affine_functional(a: Field, b: KernelSlice, f: Field, grid: Grid) -> Field:
    """T_f(a, b) = a - B_b f, pointwise in y."""
    a = check_field(a, grid, "bias")
    b = check_kernel(b, grid)
    f = check_field(f, grid, "state")
    return a - b @ (grid.weights * f)


def hamiltonian(f: Field, r: Field, a: Field, b: KernelSlice, act: Activation, grid: Grid) -> float:
    """H = int_Y sigma(a - B_b f) r dy."""
    r = check_field(r, grid, "co-state")
    return float(np.dot(grid.weights * act.eval(affine_functional(a, b, f, grid)), r))


def extremize_affine_functional(f: Field, box: ControlBox) -> Tuple[Tuple[float, npt.NDArray], Tuple[float, npt.NDArray]]:
    """
    Rows maximizing and minimizing T_f over the box: ((a_plus, b_plus_row), (a_minus, b_minus_row)).
    The row is b(y, .) and does not depend on y.
    """
    f = np.asarray(f, dtype=float)
    nonneg = f >= 0
    b_plus = np.where(nonneg, box.b_lo, box.b_hi)
    b_minus = np.where(nonneg, box.b_hi, box.b_lo)
    return (box.a_hi, b_plus), (box.a_lo, b_minus)


def maximize_hamiltonian_box(
    f: Field, r: Field, box: ControlBox, act: Activation, grid: Grid
) -> Tuple[Field, KernelSlice]:
    """
    Pointwise maximizer of H over the box. sigma is non-decreasing, so rows with
    r(y) >= 0 maximize T_f and rows with r(y) < 0 minimize it; r(y) = 0 takes the
    maximizing branch.
    """
    f = check_field(f, grid, "state")
    r = check_field(r, grid, "co-state")
    (a_plus, b_plus), (a_minus, b_minus) = extremize_affine_functional(f, box)
    up = r >= 0
    a = np.where(up, a_plus, a_minus).astype(float)
    b = np.where(up[:, None], b_plus[None, :], b_minus[None, :]).astype(float)
    return a, b


def hamiltonian_profile(
    traj: Trajectory, costate: CostateTrajectory, params: ControlParams, act: Activation, grid: Grid
) -> npt.NDArray[np.float64]:
    """H_l = <sigma(a^l - B_{b^l} f^l), r^{l+1}> for every slice."""
    return np.array([
        hamiltonian(traj.states[l], costate.states[l + 1], params.a[l], params.b[l], act, grid)
        for l in range(params.steps)
    ])


# ============================================================================
# HELPERS
# ============================================================================

def _sq_dist(x: np.ndarray, y: np.ndarray, block: str, grid: Grid, time_grid: TimeGrid) -> float:
    """Squared L2 distance of one parameter block."""
    d = x - y
    w, dt = grid.weights, time_grid.dt
    if block == "a":
        return dt * float(np.einsum("li,i,li->", d, w, d))
    if block == "b":
        return dt * float(np.einsum("lij,i,j,lij->", d, w, w, d))
    if block == "W":
        return float(np.einsum("ij,i,j,ij->", d, w, w, d))
    return float(np.dot(w * d, d))


class _Evaluator:
    """Loss/gradient at a full parameter set {a, b[, W, mu]}."""

    def __init__(self, problem: TrainingProblem):
        self.problem = problem
        self.calls = 0

    def __call__(self, x: dict) -> Tuple[float, ParamGradient]:
        p = self.problem
        self.calls += 1
        params = ControlParams(a=x["a"], b=x["b"])
        spec = p.spec
        if "W" in x:
            spec = spec.with_classifier(ClassifierParams(W=x["W"], mu=x["mu"], link=spec.classifier.link))
        value, grad, _, _ = loss_and_gradient(params, spec, p.f_I, p.act, p.grid, p.time_grid)
        return value, grad


def _initial_point(problem: TrainingProblem) -> dict:
    x = {"a": np.array(problem.params0.a), "b": np.array(problem.params0.b)}
    if problem.spec.is_classification:
        x["W"] = np.array(problem.spec.classifier.W)
        x["mu"] = np.array(problem.spec.classifier.mu)
    return x


def _grad_block(grad: ParamGradient, block: str) -> np.ndarray:
    return grad.blocks()[block]


def _result(problem: TrainingProblem, algo: str, x: dict, **kwargs) -> TrainResult:
    classifier = None
    if "W" in x:
        classifier = ClassifierParams(W=x["W"], mu=x["mu"], link=problem.spec.classifier.link)
    elif problem.spec.is_classification:
        classifier = problem.spec.classifier
    params = problem.params0.with_values(a=x["a"], b=x["b"])
    return TrainResult(algo=algo, params=params, classifier=classifier, **kwargs)


# ============================================================================
# PROXIMAL POINT ALGORITHM
# ============================================================================

def train_ppa(problem: TrainingProblem, cfg: TrainConfig) -> TrainResult:
    """
    Block proximal point iterations
        a^{k+1} = argmin_a J(a, b^k) + |a - a^k|^2 / 2 tau,  then b, then (W, mu).
    Each argmin is approximated by cfg.inner_iters gradient steps on the prox
    objective, warm-started at the anchor; a step is kept only when it lowers
    the prox objective, so J never increases.
    """
    if cfg.algo != "ppa":
        raise InvalidArgumentError(f"train_ppa called with algo '{cfg.algo}'")
    grid, tg = problem.grid, problem.time_grid
    evaluate = _Evaluator(problem)
    x = _initial_point(problem)
    blocks = [["a"], ["b"]] + ([["W", "mu"]] if "W" in x else [])

    value, grad = evaluate(x)
    state = create_initial_state(value, grad.norm(grid, tg), cfg.inner_step)
    loss_hist, gnorm_hist, slack_hist = [value], [state["grad_norm"]], []
    logger.info(f"🚀 PPA start: J={value:.6e}, |grad|={state['grad_norm']:.3e}, tau={cfg.tau}")

    while state["iteration"] < cfg.max_iters:
        if state["grad_norm"] <= cfg.tol:
            state["converged"] = True
            break
        j_start = value
        moved = 0.0
        for names in blocks:
            anchor = {k: x[k].copy() for k in names}
            j_anchor = value
            phi = value
            for _ in range(cfg.inner_iters):
                eta = state["step"]
                trial = dict(x)
                for k in names:
                    direction = _grad_block(grad, k) + (x[k] - anchor[k]) / cfg.tau
                    trial[k] = x[k] - eta * direction
                try:
                    t_value, t_grad = evaluate(trial)
                except DivergenceError:
                    state["step"] = eta * STEP_SHRINK
                    continue
                t_phi = t_value + sum(_sq_dist(trial[k], anchor[k], k, grid, tg) for k in names) / (2 * cfg.tau)
                if t_phi <= phi:
                    x, value, grad, phi = trial, t_value, t_grad, t_phi
                    state["step"] = eta * STEP_GROWTH
                else:
                    state["step"] = eta * STEP_SHRINK
            block_move = sum(_sq_dist(x[k], anchor[k], k, grid, tg) for k in names)
            moved += block_move
            logger.debug(f"   block {'/'.join(names)}: J {j_anchor:.6e} -> {value:.6e}")
        slack_hist.append(value - j_start + moved / (2 * cfg.tau))
        state["iteration"] += 1
        state["loss"] = value
        state["grad_norm"] = grad.norm(grid, tg)
        loss_hist.append(value)
        gnorm_hist.append(state["grad_norm"])
        logger.debug(f"📊 PPA iter {state['iteration']}: J={value:.6e}, |grad|={state['grad_norm']:.3e}")
    else:
        state["converged"] = state["grad_norm"] <= cfg.tol

    logger.info(
        f"{'✅' if state['converged'] else '⚠️'} PPA finished after {state['iteration']} iterations: "
        f"J={value:.6e}, |grad|={state['grad_norm']:.3e}"
    )
    return _result(problem, "ppa", x, loss_history=loss_hist, grad_norm_history=gnorm_hist,
                   descent_slack=slack_hist, converged=state["converged"], iterations=state["iteration"])


# ============================================================================
# GRADIENT DESCENT
# ============================================================================

def train_gd(problem: TrainingProblem, cfg: TrainConfig) -> TrainResult:
    """Explicit gradient descent on all blocks at once with the same step control as ppa."""
    if cfg.algo != "gd":
        raise InvalidArgumentError(f"train_gd called with algo '{cfg.algo}'")
    grid, tg = problem.grid, problem.time_grid
    evaluate = _Evaluator(problem)
    x = _initial_point(problem)
    value, grad = evaluate(x)
    state = create_initial_state(value, grad.norm(grid, tg), cfg.inner_step)
    loss_hist, gnorm_hist = [value], [state["grad_norm"]]
    logger.info(f"🚀 GD start: J={value:.6e}, |grad|={state['grad_norm']:.3e}")

    while state["iteration"] < cfg.max_iters:
        if state["grad_norm"] <= cfg.tol:
            state["converged"] = True
            break
        eta = state["step"]
        trial = {k: x[k] - eta * _grad_block(grad, k) for k in x}
        try:
            t_value, t_grad = evaluate(trial)
            accepted = t_value <= value
        except DivergenceError:
            accepted = False
        if accepted:
            x, value, grad = trial, t_value, t_grad
            state["step"] = eta * STEP_GROWTH
        else:
            state["step"] = eta * STEP_SHRINK
        state["iteration"] += 1
        state["loss"] = value
        state["grad_norm"] = grad.norm(grid, tg)
        loss_hist.append(value)
        gnorm_hist.append(state["grad_norm"])
    else:
        state["converged"] = state["grad_norm"] <= cfg.tol

    logger.info(f"{'✅' if state['converged'] else '⚠️'} GD finished after {state['iteration']} iterations: J={value:.6e}")
    return _result(problem, "gd", x, loss_history=loss_hist, grad_norm_history=gnorm_hist,
                   converged=state["converged"], iterations=state["iteration"])


# ============================================================================
# PONTRYAGIN SUCCESSIVE APPROXIMATION
# ============================================================================

def train_pmp(problem: TrainingProblem, cfg: TrainConfig) -> TrainResult:
    """
    Successive approximation: forward solve, backward solve from
    r(T) = -(dJ/df(T)) (target - f(T) for tracking), slice-wise Hamiltonian
    maximization over the box, then the damped update
        a^{k+1} = (1 - damping) a_hat + damping a^k   (same for b).
    Stops when the controls move less than cfg.tol in sup-norm.
    Non-convergence is reported, not raised.
    """
    if cfg.algo != "pmp" or cfg.box is None:
        raise InvalidArgumentError("train_pmp needs algo 'pmp' and a control box")
    grid, tg, act, spec = problem.grid, problem.time_grid, problem.act, problem.spec
    box = cfg.box
    params = problem.params0
    loss_hist, gnorm_hist, ham_hist, change_hist = [], [], [], []
    degenerate: set = set()
    converged = False
    iterations = 0
    logger.info(f"🚀 PMP start: box a in [{box.a_lo}, {box.a_hi}], b in [{box.b_lo}, {box.b_hi}], damping={cfg.damping}")

    while True:
        traj = forward_solve(params, problem.f_I, act, grid, tg)
        value = loss(traj, params, spec, grid)
        costate = adjoint_solve(params, traj, act, -terminal_costate(traj.final, spec, grid))
        profile = hamiltonian_profile(traj, costate, params, act, grid)
        loss_hist.append(value)
        ham_hist.append(tg.dt * float(np.sum(profile)))
        loss_costate = CostateTrajectory(-costate.states, grid, tg)
        gnorm_hist.append(gradient(traj, loss_costate, params, spec, act, grid).norm(grid, tg))
        if converged or iterations >= cfg.max_iters:
            break

        for l in range(tg.steps):
            if norm(costate.states[l + 1], grid) < DEGENERATE_COSTATE and l not in degenerate:
                degenerate.add(l)
                logger.warning(f"⚠️ Co-state vanishes at step {l + 1}; maximizer falls back to the tie-break")

        def solve_slice(l: int):
            return maximize_hamiltonian_box(traj.states[l], costate.states[l + 1], box, act, grid)

        with worker_pool() as pool:
            slices = [solve_slice(l) for l in range(tg.steps)] if pool is None else list(pool.map(solve_slice, range(tg.steps)))
        a_hat = np.stack([s[0] for s in slices])
        b_hat = np.stack([s[1] for s in slices])
        a_new = (1.0 - cfg.damping) * a_hat + cfg.damping * params.a
        b_new = (1.0 - cfg.damping) * b_hat + cfg.damping * params.b
        change = max(float(np.max(np.abs(a_new - params.a))), float(np.max(np.abs(b_new - params.b))))
        change_hist.append(change)
        params = params.with_values(a=a_new, b=b_new)
        iterations += 1
        converged = change <= cfg.tol
        logger.debug(f"📊 PMP iter {iterations}: J={value:.6e}, H={ham_hist[-1]:.6e}, change={change:.3e}")

    logger.info(
        f"{'✅' if converged else '⚠️'} PMP finished after {iterations} iterations: "
        f"J={loss_hist[-1]:.6e}, converged={converged}"
    )
    classifier = spec.classifier if spec.is_classification else None
    return TrainResult(
        algo="pmp", params=params, classifier=classifier, loss_history=loss_hist,
        grad_norm_history=gnorm_hist, hamiltonian_history=ham_hist, control_change=change_hist,
        degenerate_steps=sorted(degenerate), converged=converged, iterations=iterations,
    )


def train(problem: TrainingProblem, cfg: TrainConfig) -> TrainResult:
    if cfg.algo == "ppa":
        return train_ppa(problem, cfg)
    if cfg.algo == "pmp":
        return train_pmp(problem, cfg)
    return train_gd(problem, cfg)
