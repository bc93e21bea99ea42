"""
Classifier head, losses, Tikhonov regularizer and parameter gradients.

Gradients are L2 densities: the derivative of the discrete loss with respect to
the array entry a[l, i] is dt * w_i * grad_a[l, i], for b[l, i, j] it is
dt * w_i * w_j * grad_b[l, i, j], for W[i, j] it is w_i * w_j * grad_W[i, j]
and for mu[i] it is w_i * grad_mu[i].
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
import numpy.typing as npt

from .activation import Activation, ActivationKind
from .adjoint import CostateTrajectory, adjoint_solve, terminal_classification, terminal_tracking
from .dynamics import ControlParams, Trajectory, forward_solve, residuals
from .errors import DivergenceError, InvalidArgumentError
from .grid import Field, Grid, KernelSlice, TimeGrid, check_field, check_kernel
from .settings import worker_pool

logger = logging.getLogger(__name__)

FD_BATCH = 128


# ============================================================================
# TYPES
# ============================================================================

@dataclass(frozen=True)
class ClassifierParams:
    """Output O(y) = int W(y, z) f(z, T) dz + mu(y), prediction h(O)."""
    W: KernelSlice
    mu: Field
    link: Activation = field(default_factory=lambda: Activation(ActivationKind.LOGISTIC))

    def __post_init__(self):
        W = np.array(self.W, dtype=float)
        mu = np.array(self.mu, dtype=float)
        if W.ndim != 2 or W.shape != (mu.size, mu.size) or mu.ndim != 1:
            raise InvalidArgumentError(f"classifier needs W: (n, n) and mu: (n,), got {W.shape} and {mu.shape}")
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(mu))):
            raise InvalidArgumentError("classifier parameters have non-finite entries")
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "mu", mu)

    @classmethod
    def zeros(cls, grid: Grid) -> "ClassifierParams":
        return cls(W=np.zeros((grid.n, grid.n)), mu=np.zeros(grid.n))


@dataclass(frozen=True)
class LossSpec:
    kind: Literal["tracking", "classification"]
    target: Optional[Field] = None
    label: Optional[Field] = None
    classifier: Optional[ClassifierParams] = None
    lam: float = 0.0

    def __post_init__(self):
        if self.kind not in ("tracking", "classification"):
            raise InvalidArgumentError(f"unknown loss kind '{self.kind}'")
        if not np.isfinite(self.lam) or self.lam < 0:
            raise InvalidArgumentError(f"regularization weight must be >= 0, got {self.lam}")
        if self.kind == "tracking" and self.target is None:
            raise InvalidArgumentError("tracking loss needs a target field")
        if self.kind == "classification" and (self.label is None or self.classifier is None):
            raise InvalidArgumentError("classification loss needs a label field and classifier parameters")

    @classmethod
    def tracking(cls, target: Field, lam: float = 0.0) -> "LossSpec":
        return cls(kind="tracking", target=np.asarray(target, dtype=float), lam=float(lam))

    @classmethod
    def classification(cls, label: Field, classifier: ClassifierParams, lam: float = 0.0) -> "LossSpec":
        return cls(kind="classification", label=np.asarray(label, dtype=float),
                   classifier=classifier, lam=float(lam))

    @property
    def is_classification(self) -> bool:
        return self.kind == "classification"

    def with_classifier(self, classifier: ClassifierParams) -> "LossSpec":
        return LossSpec(kind=self.kind, target=self.target, label=self.label,
                        classifier=classifier, lam=self.lam)


@dataclass(frozen=True)
class ParamGradient:
    grad_a: npt.NDArray[np.float64]
    grad_b: npt.NDArray[np.float64]
    grad_W: Optional[KernelSlice] = None
    grad_mu: Optional[Field] = None

    def blocks(self) -> Dict[str, np.ndarray]:
        out = {"a": self.grad_a, "b": self.grad_b}
        if self.grad_W is not None:
            out["W"] = self.grad_W
        if self.grad_mu is not None:
            out["mu"] = self.grad_mu
        return out

    def pair(self, direction: "ParamGradient", grid: Grid, time_grid: TimeGrid) -> float:
        """Quadrature contraction <self, direction>; with a direction it is the directional derivative."""
        w, dt = grid.weights, time_grid.dt
        total = dt * float(np.einsum("li,i,li->", self.grad_a, w, direction.grad_a))
        total += dt * float(np.einsum("lij,i,j,lij->", self.grad_b, w, w, direction.grad_b))
        if self.grad_W is not None and direction.grad_W is not None:
            total += float(np.einsum("ij,i,j,ij->", self.grad_W, w, w, direction.grad_W))
        if self.grad_mu is not None and direction.grad_mu is not None:
            total += float(np.dot(w * self.grad_mu, direction.grad_mu))
        return total

    def norm(self, grid: Grid, time_grid: TimeGrid) -> float:
        return float(np.sqrt(max(self.pair(self, grid, time_grid), 0.0)))

    def max_abs(self) -> float:
        return max(float(np.max(np.abs(v))) if v.size else 0.0 for v in self.blocks().values())


# ============================================================================
# CLASSIFIER AND LOSS
# ============================================================================

def classifier_output(f_T: Field, cls: ClassifierParams, grid: Grid) -> Field:
    f_T = check_field(f_T, grid, "final state")
    check_kernel(cls.W, grid, "classifier kernel")
    check_field(cls.mu, grid, "classifier bias")
    return cls.W @ (grid.weights * f_T) + cls.mu


def classify(f_T: Field, cls: ClassifierParams, grid: Grid) -> Field:
    """C_pre = h(O_T)."""
    return cls.link.eval(classifier_output(f_T, cls, grid))


def regularizer(
    params: ControlParams,
    classifier: Optional[ClassifierParams],
    time_grid: TimeGrid,
    grid: Grid,
) -> float:
    """
    R = 1/2 [int mu^2 + sum_l dt int a^2] + 1/2 [int int W^2 + sum_l dt int int b^2];
    the W and mu terms enter only for a classification head.
    """
    w, dt = grid.weights, time_grid.dt
    value = 0.5 * dt * float(np.einsum("li,i,li->", params.a, w, params.a))
    value += 0.5 * dt * float(np.einsum("lij,i,j,lij->", params.b, w, w, params.b))
    if classifier is not None:
        value += 0.5 * float(np.dot(w * classifier.mu, classifier.mu))
        value += 0.5 * float(np.einsum("ij,i,j,ij->", classifier.W, w, w, classifier.W))
    return value


def misfit(f_T: Field, spec: LossSpec, grid: Grid) -> float:
    """Unregularized part of the loss."""
    if spec.is_classification:
        err = classify(f_T, spec.classifier, grid) - check_field(spec.label, grid, "label")
    else:
        err = terminal_tracking(check_field(f_T, grid, "final state"), check_field(spec.target, grid, "target"))
    return 0.5 * float(np.dot(grid.weights * err, err))


def loss(traj: Trajectory, params: ControlParams, spec: LossSpec, grid: Grid) -> float:
    if not traj.complete:
        raise InvalidArgumentError("loss needs a complete trajectory")
    params.check(grid, traj.time_grid)
    value = misfit(traj.final, spec, grid)
    if spec.lam > 0:
        value += spec.lam * regularizer(params, spec.classifier, traj.time_grid, grid)
    return value


def terminal_costate(f_T: Field, spec: LossSpec, grid: Grid) -> Field:
    """Terminal co-state of the loss: the density of dJ/df(T)."""
    if spec.is_classification:
        cls = spec.classifier
        return terminal_classification(f_T, cls.W, cls.mu, cls.link, spec.label, grid)
    return terminal_tracking(f_T, spec.target)


# ============================================================================
# GRADIENTS
# ============================================================================

def gradient(
    traj: Trajectory,
    costate: CostateTrajectory,
    params: ControlParams,
    spec: LossSpec,
    act: Activation,
    grid: Grid,
) -> ParamGradient:
    """
    grad_a[l] = sigma'(u^l) r^{l+1}, grad_b[l](y, z) = -f^l(z) sigma'(u^l(y)) r^{l+1}(y),
    grad_W(y, z) = (C_pre - C)(y) h'(O(y)) f_T(z), grad_mu = (C_pre - C) h'(O),
    each plus lam times the parameter.
    """
    if costate.states.shape != traj.states.shape:
        raise InvalidArgumentError(
            f"co-state shape {costate.states.shape} does not match trajectory {traj.states.shape}"
        )
    params.check(grid, traj.time_grid)
    weighted = act.deriv(residuals(params, traj)) * costate.states[1:]
    grad_a = weighted.copy()
    grad_b = -np.einsum("li,lj->lij", weighted, traj.states[:-1])
    grad_W = grad_mu = None
    if spec.is_classification:
        cls = spec.classifier
        out = classifier_output(traj.final, cls, grid)
        err = cls.link.eval(out) - spec.label
        grad_mu = err * cls.link.deriv(out)
        grad_W = np.outer(grad_mu, traj.final)
    if spec.lam > 0:
        grad_a += spec.lam * params.a
        grad_b += spec.lam * params.b
        if spec.is_classification:
            grad_W = grad_W + spec.lam * spec.classifier.W
            grad_mu = grad_mu + spec.lam * spec.classifier.mu
    return ParamGradient(grad_a=grad_a, grad_b=grad_b, grad_W=grad_W, grad_mu=grad_mu)


def loss_and_gradient(
    params: ControlParams,
    spec: LossSpec,
    f_I: Field,
    act: Activation,
    grid: Grid,
    time_grid: TimeGrid,
) -> Tuple[float, ParamGradient, Trajectory, CostateTrajectory]:
    """Forward solve, terminal condition, backward solve and gradient assembly."""
    traj = forward_solve(params, f_I, act, grid, time_grid)
    value = loss(traj, params, spec, grid)
    costate = adjoint_solve(params, traj, act, terminal_costate(traj.final, spec, grid))
    return value, gradient(traj, costate, params, spec, act, grid), traj, costate


# ============================================================================
# FINITE-DIFFERENCE ORACLE
# ============================================================================

def _batched_losses(
    a: np.ndarray,
    b: np.ndarray,
    W: Optional[np.ndarray],
    mu: Optional[np.ndarray],
    spec: LossSpec,
    f_I: Field,
    act: Activation,
    grid: Grid,
    time_grid: TimeGrid,
) -> np.ndarray:
    """Losses of a batch of parameter sets, Euler-integrated side by side."""
    w, dt = grid.weights, time_grid.dt
    f = np.broadcast_to(f_I, (a.shape[0], grid.n)).copy()
    for l in range(time_grid.steps):
        f = f + dt * act.eval(a[:, l] - np.einsum("mij,mj->mi", b[:, l], w * f))
        max_norm = float(np.max(np.abs(f))) if np.all(np.isfinite(f)) else float("inf")
        if max_norm > 1e12:
            raise DivergenceError(step=l + 1, max_norm=max_norm)
    if spec.is_classification:
        out = np.einsum("mij,mj->mi", W, w * f) + mu
        err = spec.classifier.link.eval(out) - spec.label
    else:
        err = f - spec.target
    values = 0.5 * np.einsum("mi,i,mi->m", err, w, err)
    if spec.lam > 0:
        reg = 0.5 * dt * np.einsum("mli,i,mli->m", a, w, a)
        reg += 0.5 * dt * np.einsum("mlij,i,j,mlij->m", b, w, w, b)
        if spec.is_classification:
            reg += 0.5 * np.einsum("mi,i,mi->m", mu, w, mu)
            reg += 0.5 * np.einsum("mij,i,j,mij->m", W, w, w, W)
        values = values + spec.lam * reg
    return values


def finite_diff_gradient(
    params: ControlParams,
    spec: LossSpec,
    f_I: Field,
    act: Activation,
    grid: Grid,
    time_grid: TimeGrid,
    h: float = 1e-5,
) -> ParamGradient:
    """
    Central differences of loss(forward_solve(.)) over every parameter entry,
    divided by the quadrature measure of the entry so the result is a density
    comparable with `gradient`. Perturbed solves run in batches on the worker pool.
    """
    if not np.isfinite(h) or h == 0:
        raise InvalidArgumentError(f"finite-difference step must be non-zero, got {h}")
    params.check(grid, time_grid)
    f_I = check_field(f_I, grid, "initial field")
    steps, n = params.steps, params.n
    cls = spec.classifier if spec.is_classification else None

    # (block, flat index) for every entry
    entries: List[Tuple[str, int]] = [("a", k) for k in range(steps * n)]
    entries += [("b", k) for k in range(steps * n * n)]
    if cls is not None:
        entries += [("W", k) for k in range(n * n)] + [("mu", k) for k in range(n)]

    def run_chunk(chunk: List[Tuple[str, int]]) -> np.ndarray:
        m = 2 * len(chunk)
        a = np.broadcast_to(params.a, (m,) + params.a.shape).copy()
        b = np.broadcast_to(params.b, (m,) + params.b.shape).copy()
        W = mu = None
        if cls is not None:
            W = np.broadcast_to(cls.W, (m, n, n)).copy()
            mu = np.broadcast_to(cls.mu, (m, n)).copy()
        blocks = {"a": a, "b": b, "W": W, "mu": mu}
        for k, (name, idx) in enumerate(chunk):
            target = blocks[name]
            flat_plus = target[2 * k].reshape(-1)
            flat_minus = target[2 * k + 1].reshape(-1)
            flat_plus[idx] += h
            flat_minus[idx] -= h
        values = _batched_losses(a, b, W, mu, spec, f_I, act, grid, time_grid)
        return (values[0::2] - values[1::2]) / (2.0 * h)

    chunks = [entries[i: i + FD_BATCH] for i in range(0, len(entries), FD_BATCH)]
    with worker_pool() as pool:
        if pool is None:
            parts = [run_chunk(c) for c in chunks]
        else:
            parts = list(pool.map(run_chunk, chunks))
    raw = np.concatenate(parts) if parts else np.zeros(0)

    w, dt = grid.weights, time_grid.dt
    pos = 0
    grad_a = raw[pos: pos + steps * n].reshape(steps, n) / (dt * w[None, :])
    pos += steps * n
    grad_b = raw[pos: pos + steps * n * n].reshape(steps, n, n) / (dt * np.outer(w, w)[None, :, :])
    pos += steps * n * n
    grad_W = grad_mu = None
    if cls is not None:
        grad_W = raw[pos: pos + n * n].reshape(n, n) / np.outer(w, w)
        pos += n * n
        grad_mu = raw[pos: pos + n] / w
    logger.debug(f"📊 Finite-difference gradient over {len(entries)} entries (h={h:g})")
    return ParamGradient(grad_a=grad_a, grad_b=grad_b, grad_W=grad_W, grad_mu=grad_mu)


def relative_error(g: np.ndarray, h: np.ndarray) -> float:
    """max|g - h| / max(max|g|, max|h|, 1e-300)."""
    g = np.asarray(g, dtype=float)
    h = np.asarray(h, dtype=float)
    if g.shape != h.shape:
        raise InvalidArgumentError(f"cannot compare shapes {g.shape} and {h.shape}")
    if g.size == 0:
        return 0.0
    scale = max(float(np.max(np.abs(g))), float(np.max(np.abs(h))), 1e-300)
    return float(np.max(np.abs(g - h))) / scale
