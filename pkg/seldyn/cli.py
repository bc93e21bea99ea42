"""
Experiment runner.

    python -m seldyn {forward,train,analyze,gradcheck} --config CONFIG.json [--out DIR] [--verbose] [--threads N]

Exit codes: 0 success, 1 unexpected failure, 2 config/file error,
3 divergence or non-convergence, 4 precondition violation.
"""
import argparse
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import storage
from .activation import Activation, ActivationKind, parse_activation
from .control import TrainingProblem, train
from .dynamics import ControlParams, RankOneSpec, forward_solve, rank_one_relu_solution, residuals
from .errors import ConfigError, DivergenceError, NonConvergenceError, PreconditionError, SeldynError
from .grid import Grid, TimeGrid, make_grid, make_time_grid, norm
from .objective import (
    ClassifierParams,
    LossSpec,
    finite_diff_gradient,
    gradient,
    loss_and_gradient,
    misfit,
    relative_error,
)
from .report import (
    AnalyzeSummary,
    ForwardSummary,
    GradcheckBlock,
    GradcheckSummary,
    RunReport,
    TrainSummary,
)
from .schema import ExperimentConfig, FieldSource, KernelSource, load_config
from .settings import configure_logging, set_thread_cap
from .stability import (
    classify_rank_one,
    classify_relu_steady_state,
    conditioning_bound,
    find_steady_state,
    growth_fit,
    lyapunov_trace,
    spectral_report,
    MIN_GROWTH_STEPS,
)

logger = logging.getLogger(__name__)

GRADCHECK_TOL = 1e-5
ZERO_GRADIENT = 1e-12
KINK_FACTOR = 10.0


# ============================================================================
# PROBLEM ASSEMBLY
# ============================================================================

@dataclass
class Experiment:
    config: ExperimentConfig
    grid: Grid
    time_grid: TimeGrid
    act: Activation
    f_I: np.ndarray
    params: ControlParams
    rank_one: Optional[RankOneSpec] = None
    spec: Optional[LossSpec] = None


def _field(src: FieldSource, cfg: ExperimentConfig, grid: Grid) -> np.ndarray:
    if src.constant is not None:
        return grid.constant(src.constant)
    return storage.read_field(cfg.resolve(src.path), grid)


def _kernel(src: KernelSource, cfg: ExperimentConfig, grid: Grid) -> np.ndarray:
    if src.constant is not None:
        return np.full((grid.n, grid.n), float(src.constant))
    return storage.read_kernel(cfg.resolve(src.path), grid)


def assemble(cfg: ExperimentConfig) -> Experiment:
    grid = make_grid(cfg.grid.n, (cfg.grid.y_lo, cfg.grid.y_hi))
    time_grid = make_time_grid(cfg.time.T, cfg.time.steps)
    act = parse_activation(cfg.activation)
    f_I = _field(cfg.initial_field, cfg, grid)

    ctl = cfg.controls
    rank_one = None
    if ctl.b.rank_one is not None:
        src = ctl.b.rank_one
        rank_one = RankOneSpec(phi=_field(src.phi, cfg, grid), psi=_field(src.psi, cfg, grid), a0=src.a0, f_I=f_I)
        rank_one.validate(grid)
        params = rank_one.controls(time_grid)
    else:
        if ctl.a.path is not None:
            a, a_timed = storage.read_bias(cfg.resolve(ctl.a.path), grid, time_grid)
        else:
            a, a_timed = np.full((time_grid.steps, grid.n), float(ctl.a.constant)), False
        if ctl.b.path is not None:
            b, b_timed = storage.read_kernel_series(cfg.resolve(ctl.b.path), grid, time_grid)
        else:
            b, b_timed = np.full((time_grid.steps, grid.n, grid.n), float(ctl.b.constant)), False
        params = ControlParams(a=a, b=b, time_constant=not (a_timed or b_timed))

    spec = None
    if cfg.loss is not None:
        if cfg.loss.kind == "tracking":
            spec = LossSpec.tracking(_field(cfg.loss.target, cfg, grid), lam=cfg.loss.lam)
        else:
            cls = ClassifierParams(W=_kernel(cfg.loss.classifier.W, cfg, grid), mu=_field(cfg.loss.classifier.mu, cfg, grid))
            spec = LossSpec.classification(_field(cfg.loss.label, cfg, grid), cls, lam=cfg.loss.lam)
    return Experiment(cfg, grid, time_grid, act, f_I, params, rank_one, spec)


# ============================================================================
# COMMANDS
# ============================================================================

def cmd_forward(exp: Experiment, out: Path, report: RunReport) -> int:
    t0 = time.perf_counter()
    try:
        traj = forward_solve(exp.params, exp.f_I, exp.act, exp.grid, exp.time_grid, exp.config.integrator)
    except DivergenceError as e:
        if e.partial is not None:
            report.add_artifact(storage.write_trajectory(out / "trajectory_partial.csv", e.partial), out)
        report.forward = ForwardSummary(integrator=exp.config.integrator, final_norm=float(e.max_norm), diverged_at=e.step)
        raise
    report.timings["forward"] = time.perf_counter() - t0
    report.add_artifact(storage.write_trajectory(out / "trajectory.csv", traj), out)
    summary = ForwardSummary(integrator=exp.config.integrator, final_norm=norm(traj.final, exp.grid))

    if exp.params.autonomous:
        trace = lyapunov_trace(traj, exp.params, exp.act, exp.grid)
        header = ["t", "sigma_integral", "dissipation"] + (["energy"] if trace.energy is not None else [])
        columns = [trace.times, trace.sigma_integral, trace.dissipation] + ([trace.energy] if trace.energy is not None else [])
        report.add_artifact(storage.write_rows(out / "lyapunov.csv", header, zip(*columns)), out)
        summary.sigma_monotone = not trace.sigma_violations()
        if trace.energy is not None:
            summary.energy_monotone = not trace.energy_violations()
    else:
        logger.info("📊 Time-dependent controls: Lyapunov trace skipped")

    if exp.time_grid.steps >= MIN_GROWTH_STEPS:
        summary.growth = growth_fit(traj, exp.grid)

    if exp.rank_one is not None and exp.act.kind == ActivationKind.RELU:
        exact = np.stack([rank_one_relu_solution(exp.rank_one, t, exp.grid) for t in traj.times])
        report.add_artifact(storage.write_series(out / "closed_form.csv", exact, traj.times, exp.grid), out)
        summary.closed_form_error = norm(traj.final - exact[-1], exp.grid)
        logger.info(f"📊 Closed-form L2 error at T: {summary.closed_form_error:.3e}")
    report.forward = summary
    return 0


def cmd_train(exp: Experiment, out: Path, report: RunReport) -> int:
    cfg = exp.config
    if exp.spec is None or cfg.train is None:
        raise ConfigError("train needs 'loss' and 'train' sections")
    problem = TrainingProblem(grid=exp.grid, time_grid=exp.time_grid, act=exp.act,
                              f_I=exp.f_I, spec=exp.spec, params0=exp.params)
    t0 = time.perf_counter()
    try:
        result = train(problem, cfg.train)
    except DivergenceError as e:
        report.train = TrainSummary(algo=cfg.train.algo, converged=False, iterations=0, final_loss=None,
                                    loss_history=[], grad_norm_history=[], diverged_at=e.step)
        raise
    report.timings["train"] = time.perf_counter() - t0

    for path in storage.write_controls(out, result.params, exp.grid, exp.time_grid):
        report.add_artifact(path, out)
    if result.classifier is not None:
        report.add_artifact(storage.write_kernel(out / "W.csv", result.classifier.W, exp.grid), out)
        report.add_artifact(storage.write_field(out / "mu.csv", result.classifier.mu, exp.grid), out)
    report.add_artifact(storage.write_history(out / "loss_history.csv", result.loss_history), out)
    if result.hamiltonian_history:
        report.add_artifact(storage.write_history(out / "hamiltonian_history.csv", result.hamiltonian_history), out)
    report.train = TrainSummary.from_result(result)
    if not result.converged:
        raise NonConvergenceError(f"{result.algo} stopped after {result.iterations} iterations without meeting tol")
    return 0


def cmd_analyze(exp: Experiment, out: Path, report: RunReport) -> int:
    if not exp.params.autonomous:
        raise PreconditionError("analyze needs time-constant controls")
    a, b = exp.params.a[0], exp.params.b[0]
    spectral = spectral_report(b, exp.act, exp.grid, exp.config.rank_cutoff)
    steady = find_steady_state(a, b, exp.grid)
    summary = AnalyzeSummary(
        spectral=spectral,
        steady_state=steady,
        conditioning=conditioning_bound(exp.params, exp.act, exp.grid).tolist(),
    )
    if exp.rank_one is not None:
        # b(y, z) = psi(y) phi(z): psi is the output profile
        summary.rank_one = classify_rank_one(exp.rank_one.psi, exp.rank_one.phi, exp.act, exp.grid)
    if exp.act.kind == ActivationKind.RELU:
        summary.relu_steady_state = classify_relu_steady_state(a, b, np.array(steady.f_e), exp.grid)

    n_eig = len(spectral.eigenvalues_real)
    rows = zip(range(n_eig), spectral.sym_eigenvalues, spectral.eigenvalues_real,
               spectral.eigenvalues_imag, spectral.singular_values)
    report.add_artifact(storage.write_rows(out / "spectrum.csv", ("index", "sym_eig", "eig_re", "eig_im", "singular"), rows), out)
    report.add_artifact(storage.write_field(out / "steady_state.csv", np.array(steady.f_e), exp.grid), out)
    report.add_artifact(storage.write_history(out / "conditioning.csv", summary.conditioning), out)
    report.analyze = summary
    return 0


def _kink_mask(exp: Experiment, traj, h: float) -> np.ndarray:
    """Rows (l, i) whose residual sits within reach of the ReLU kink under an h perturbation."""
    u = residuals(exp.params, traj)
    reach = KINK_FACTOR * h * np.maximum(1.0, np.max(np.abs(traj.states[:-1]), axis=1))
    return np.abs(u) <= reach[:, None]


def cmd_gradcheck(exp: Experiment, out: Path, report: RunReport) -> int:
    if exp.spec is None:
        raise ConfigError("gradcheck needs a 'loss' section")
    h = exp.config.fd_step
    if not exp.act.smooth:
        logger.warning(f"⚠️ {exp.act.name} is not smooth: entries next to the kink are excluded")
    t0 = time.perf_counter()
    _, grad, traj, costate = loss_and_gradient(exp.params, exp.spec, exp.f_I, exp.act, exp.grid, exp.time_grid)
    fd = finite_diff_gradient(exp.params, exp.spec, exp.f_I, exp.act, exp.grid, exp.time_grid, h)
    report.timings["gradcheck"] = time.perf_counter() - t0

    reg_error = None
    if exp.spec.lam > 0:
        plain = LossSpec(kind=exp.spec.kind, target=exp.spec.target, label=exp.spec.label,
                         classifier=exp.spec.classifier, lam=0.0)
        base = gradient(traj, costate, exp.params, plain, exp.act, exp.grid)
        reg_error = max(
            relative_error(grad.grad_a - base.grad_a, exp.spec.lam * exp.params.a),
            relative_error(grad.grad_b - base.grad_b, exp.spec.lam * exp.params.b),
        )

    zero_misfit = misfit(traj.final, exp.spec, exp.grid) == 0.0
    if (zero_misfit and exp.spec.lam == 0) or (grad.max_abs() <= ZERO_GRADIENT and fd.max_abs() <= ZERO_GRADIENT / h):
        notice = "zero misfit: both gradients vanish, comparison skipped"
        logger.info(f"📊 {notice}")
        report.gradcheck = GradcheckSummary(blocks=[], max_rel_error=0.0, passed=True, skipped=True,
                                            regularizer_error=reg_error, notice=notice)
        return 0

    mask_rows = _kink_mask(exp, traj, h) if not exp.act.smooth else np.zeros(exp.params.a.shape, dtype=bool)
    blocks: List[GradcheckBlock] = []
    fd_blocks = fd.blocks()
    for name, g in grad.blocks().items():
        d = fd_blocks[name]
        keep = np.ones(g.shape, dtype=bool)
        if name == "a":
            keep = ~mask_rows
        elif name == "b":
            keep = np.broadcast_to(~mask_rows[:, :, None], g.shape)
        gk, dk = g[keep], d[keep]
        scale = max(float(np.max(np.abs(gk), initial=0.0)), float(np.max(np.abs(dk), initial=0.0)), 1e-300)
        blocks.append(GradcheckBlock(
            block=name,
            max_rel_error=relative_error(gk, dk),
            mean_rel_error=float(np.mean(np.abs(gk - dk))) / scale if gk.size else 0.0,
            entries=int(gk.size),
            masked=int(g.size - gk.size),
        ))
    worst = max(b.max_rel_error for b in blocks)
    passed = worst <= GRADCHECK_TOL and (reg_error is None or reg_error <= 1e-12)
    rows = [(b.block, b.max_rel_error, b.mean_rel_error, b.entries, b.masked) for b in blocks]
    report.add_artifact(storage.write_rows(out / "gradcheck.csv", ("block", "max_rel_error", "mean_rel_error", "entries", "masked"), rows), out)
    report.gradcheck = GradcheckSummary(blocks=blocks, max_rel_error=worst, passed=passed, regularizer_error=reg_error)
    logger.info(f"{'✅' if passed else '❌'} Gradient check: max relative error {worst:.3e}")
    return 0 if passed else 3


COMMANDS = {
    "forward": cmd_forward,
    "train": cmd_train,
    "analyze": cmd_analyze,
    "gradcheck": cmd_gradcheck,
}


# ============================================================================
# ENTRY POINT
# ============================================================================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seldyn", description="Selection dynamics for continuum residual networks")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="experiment configuration (JSON)")
        p.add_argument("--out", default=None, help="output directory (defaults to the config's 'output')")
        p.add_argument("--verbose", action="store_true", help="debug logging")
        p.add_argument("--threads", type=int, default=None, help="override SELDYN_THREADS")
    return parser


def run(command: str, config_path: str, out: Optional[str] = None) -> int:
    report = RunReport(command=command, config={})
    out_dir = None
    try:
        cfg = load_config(config_path)
        report.config = cfg.echo()
        out_dir = Path(out) if out is not None else cfg.resolve(cfg.output)
        out_dir.mkdir(parents=True, exist_ok=True)
        logger.info(f"🚀 {command}: {config_path} -> {out_dir}")
        code = COMMANDS[command](assemble(cfg), out_dir, report)
    except SeldynError as e:
        logger.error(f"❌ {e.detail}")
        report.status = "error"
        report.message = e.detail
        code = e.exit_code
    except Exception as e:
        logger.exception(f"❌ unexpected failure in {command}")
        report.status = "error"
        report.message = f"{type(e).__name__}: {e}"
        code = SeldynError.exit_code
    report.exit_code = code
    if out_dir is not None:
        report.write(out_dir)
    if code == 0:
        logger.info(f"✅ {command} finished")
    return code


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)
    set_thread_cap(args.threads)
    return run(args.command, args.config, args.out)
