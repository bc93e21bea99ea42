"""
Tests for the forward solver, residuals, tangent solver and rank-one closed forms.
"""
import numpy as np
import pytest
from numpy.testing import assert_allclose

from seldyn.activation import Activation
from seldyn.dynamics import (
    ControlParams,
    RankOneSpec,
    equilibrium_drift_solution,
    forward_solve,
    rank_one_relu_solution,
    residual,
    tangent_solve,
)
from seldyn.errors import DivergenceError, InvalidArgumentError
from seldyn.fixtures import RELU, TANH, normalized, random_controls, rank_one_instance
from seldyn.grid import integrate, kernel_norm, make_grid, make_time_grid, norm


def test_zero_controls_keep_initial_field():
    g = make_grid(9)
    tg = make_time_grid(1.0, 20)
    f_I = np.sin(3 * g.nodes)
    traj = forward_solve(ControlParams.zeros(g, tg), f_I, TANH, g, tg)
    assert traj.states.shape == (21, 9)
    assert_allclose(traj.states, np.broadcast_to(f_I, traj.states.shape))


def test_constant_bias_relu_is_exact():
    g = make_grid(5)
    tg = make_time_grid(1.0, 10)
    f_I = g.nodes ** 2
    params = ControlParams.constant(np.ones(g.n), np.zeros((g.n, g.n)), tg.steps)
    traj = forward_solve(params, f_I, RELU, g, tg)
    for l, t in enumerate(tg.times):
        assert_allclose(traj.states[l], f_I + t, rtol=1e-14, atol=1e-14)


def test_rk4_matches_euler_on_constant_rate():
    g = make_grid(5)
    tg = make_time_grid(1.0, 10)
    params = ControlParams.constant(np.ones(g.n), np.zeros((g.n, g.n)), tg.steps)
    traj = forward_solve(params, np.zeros(g.n), RELU, g, tg, integrator="rk4")
    assert_allclose(traj.final, 1.0, rtol=1e-13)


def test_rk4_more_accurate_than_euler():
    g = make_grid(17)
    tg = make_time_grid(1.0, 20)
    spec = rank_one_instance(g, "positive")
    params = spec.controls(tg)
    exact = rank_one_relu_solution(spec, 1.0, g)
    euler = forward_solve(params, spec.f_I, RELU, g, tg).final
    rk4 = forward_solve(params, spec.f_I, RELU, g, tg, integrator="rk4").final
    assert norm(rk4 - exact, g) < norm(euler - exact, g)


def test_unknown_integrator():
    g = make_grid(3)
    tg = make_time_grid(1.0, 2)
    with pytest.raises(InvalidArgumentError):
        forward_solve(ControlParams.zeros(g, tg), np.zeros(3), TANH, g, tg, integrator="midpoint")


def test_shape_checks():
    g = make_grid(4)
    tg = make_time_grid(1.0, 3)
    with pytest.raises(InvalidArgumentError):
        forward_solve(ControlParams.zeros(g, make_time_grid(1.0, 4)), np.zeros(4), TANH, g, tg)
    with pytest.raises(InvalidArgumentError):
        forward_solve(ControlParams.zeros(g, tg), np.zeros(5), TANH, g, tg)
    with pytest.raises(InvalidArgumentError):
        ControlParams(a=np.zeros((3, 4)), b=np.zeros((3, 4, 5)))


def test_with_values_replaces_and_detects_time_constant():
    g = make_grid(3)
    tg = make_time_grid(1.0, 4)
    params = ControlParams.constant(np.ones(g.n), np.zeros((g.n, g.n)), tg.steps)
    shifted = params.with_values(a=params.a + 1.0)
    assert_allclose(shifted.a, 2.0)
    assert_allclose(shifted.b, params.b)
    assert shifted.autonomous
    a = params.a.copy()
    a[-1] = 0.0
    varying = params.with_values(a=a)
    assert not varying.autonomous
    assert_allclose(params.a, 1.0)


def test_divergence_reports_step_and_partial():
    g = make_grid(4)
    tg = make_time_grid(40.0, 40)
    # f_t = f with dt = 1 doubles f each step
    params = ControlParams.constant(np.zeros(g.n), -np.ones((g.n, g.n)), tg.steps)
    with pytest.raises(DivergenceError) as info:
        forward_solve(params, np.ones(g.n), RELU, g, tg)
    err = info.value
    assert err.step == 40
    assert err.max_norm > 1e12
    assert err.partial.states.shape[0] == err.step
    assert err.exit_code == 3


def test_residual_examples():
    g = make_grid(6)
    tg = make_time_grid(1.0, 4)
    a = np.linspace(-1, 1, g.n)
    params = ControlParams.constant(a, np.zeros((g.n, g.n)), tg.steps)
    traj = forward_solve(params, np.cos(g.nodes), TANH, g, tg)
    for l in range(tg.steps + 1):
        assert_allclose(residual(params, traj, l), a)
    with pytest.raises(InvalidArgumentError):
        residual(params, traj, tg.steps + 1)
    with pytest.raises(InvalidArgumentError):
        residual(params, traj, -1)

    params = ControlParams.constant(a, np.ones((g.n, g.n)), tg.steps)
    traj = forward_solve(params, np.zeros(g.n), RELU, g, make_time_grid(1.0, 4))
    assert_allclose(residual(params, traj, 0), a)


def test_residual_vanishes_for_balanced_rank_one():
    g = make_grid(11)
    tg = make_time_grid(1.0, 5)
    phi = normalized(np.ones(g.n), g)
    f_I = 2.0 * phi
    spec = RankOneSpec(phi=phi, psi=phi, a0=integrate(f_I * phi, g), f_I=f_I)
    assert spec.lambda_I(g) == pytest.approx(0.0, abs=1e-14)
    traj = forward_solve(spec.controls(tg), f_I, RELU, g, tg)
    assert_allclose(residual(spec.controls(tg), traj, 0), 0.0, atol=1e-13)


def test_tangent_zero_direction():
    g = make_grid(5)
    tg = make_time_grid(1.0, 6)
    params = random_controls(g, tg, np.random.default_rng(0))
    traj = forward_solve(params, np.ones(g.n), TANH, g, tg)
    assert_allclose(tangent_solve(params, traj, TANH).states, 0.0)


def test_tangent_decoupled_recursion():
    g = make_grid(5)
    tg = make_time_grid(1.0, 8)
    rng = np.random.default_rng(1)
    a = rng.standard_normal((tg.steps, g.n))
    params = ControlParams(a=a, b=np.zeros((tg.steps, g.n, g.n)))
    traj = forward_solve(params, np.zeros(g.n), TANH, g, tg)
    alpha = rng.standard_normal((tg.steps, g.n))
    g_T = tangent_solve(params, traj, TANH, dir_a=alpha).final
    assert_allclose(g_T, np.sum(tg.dt * TANH.deriv(a) * alpha, axis=0), rtol=1e-12)


def test_tangent_shape_mismatch():
    g = make_grid(4)
    tg = make_time_grid(1.0, 3)
    params = ControlParams.zeros(g, tg)
    traj = forward_solve(params, np.ones(g.n), TANH, g, tg)
    with pytest.raises(InvalidArgumentError):
        tangent_solve(params, traj, TANH, dir_a=np.zeros((2, g.n)))
    with pytest.raises(InvalidArgumentError):
        tangent_solve(params, traj, TANH, dir_b=np.zeros((3, g.n, g.n + 1)))


@pytest.mark.parametrize("seed", range(3))
def test_tangent_is_derivative_of_discrete_map(seed):
    g = make_grid(7)
    tg = make_time_grid(1.0, 12)
    rng = np.random.default_rng(seed)
    params = random_controls(g, tg, rng)
    f_I = rng.standard_normal(g.n)
    alpha = rng.standard_normal((tg.steps, g.n))
    beta = rng.standard_normal((tg.steps, g.n, g.n))
    traj = forward_solve(params, f_I, TANH, g, tg)
    g_T = tangent_solve(params, traj, TANH, alpha, beta).final

    errors = []
    for eps in (1e-3, 1e-4, 1e-5):
        moved = params.with_values(a=params.a + eps * alpha, b=params.b + eps * beta)
        quotient = (forward_solve(moved, f_I, TANH, g, tg).final - traj.final) / eps
        errors.append(np.max(np.abs(quotient - g_T)))
    # first order in eps
    assert errors[1] < 0.2 * errors[0]
    assert errors[2] < 0.2 * errors[1]
    assert errors[0] < 1e-2 * max(1.0, np.max(np.abs(g_T)))


def test_rank_one_spec_validation():
    g = make_grid(9)
    with pytest.raises(InvalidArgumentError):
        RankOneSpec(phi=np.ones(g.n) * 2, psi=np.ones(g.n), a0=0.0, f_I=np.zeros(g.n)).validate(g)


def test_rank_one_closed_form_examples():
    g = make_grid(21)
    phi = normalized(np.ones(g.n), g)
    f_I = 0.5 * phi
    balanced = RankOneSpec(phi=phi, psi=phi, a0=integrate(f_I * phi, g), f_I=f_I)
    for t in (0.0, 1.0, 10.0):
        assert_allclose(rank_one_relu_solution(balanced, t, g), f_I, atol=1e-13)

    pos = rank_one_instance(g, "positive")
    lam, alpha = pos.lambda_I(g), pos.alpha(g)
    assert lam > 0 and alpha > 0
    limit = pos.f_I + lam / alpha * np.maximum(pos.psi, 0.0)
    assert_allclose(rank_one_relu_solution(pos, 60.0, g), limit, rtol=1e-10)

    psi = normalized(np.cos(np.pi * g.nodes), g)
    phi = normalized(np.cos(np.pi * g.nodes) + 0.5, g)
    neg = RankOneSpec(phi=phi, psi=psi, a0=-1.0, f_I=np.zeros(g.n))
    lam, beta = neg.lambda_I(g), neg.beta(g)
    assert lam < 0 and beta < 0
    limit = neg.f_I + abs(lam) / abs(beta) * np.maximum(-psi, 0.0)
    assert_allclose(rank_one_relu_solution(neg, 400.0, g), limit, rtol=1e-10, atol=1e-12)


def test_rank_one_degenerate_rate_is_linear():
    g = make_grid(11)
    # psi >= 0 with phi orthogonal to it gives alpha = 0
    psi = normalized(np.ones(g.n), g)
    phi = normalized(np.cos(np.pi * g.nodes), g)
    spec = RankOneSpec(phi=phi, psi=psi, a0=1.0, f_I=np.zeros(g.n))
    assert abs(spec.alpha(g)) < 1e-14
    assert_allclose(rank_one_relu_solution(spec, 2.0, g), 2.0 * spec.lambda_I(g) * psi, rtol=1e-12)


@pytest.mark.parametrize("branch", ["positive", "negative"])
def test_forward_converges_to_closed_form(branch):
    g = make_grid(17)
    spec = rank_one_instance(g, branch)
    exact = rank_one_relu_solution(spec, 1.0, g)
    errs = []
    for steps in (250, 500, 1000):
        tg = make_time_grid(1.0, steps)
        errs.append(norm(forward_solve(spec.controls(tg), spec.f_I, RELU, g, tg).final - exact, g))
    assert errs[2] < errs[1] < errs[0]
    assert 1.8 <= errs[1] / errs[2] <= 2.2


def test_equilibrium_drift_solution():
    g = make_grid(5)
    u_e = np.linspace(-1, 1, g.n)
    f = equilibrium_drift_solution(u_e, np.zeros(g.n), RELU, 3.0)
    assert_allclose(f, 3.0 * np.maximum(u_e, 0.0))


@pytest.mark.parametrize("seed", range(10))
def test_continuous_dependence_bound(seed):
    g = make_grid(10)
    tg = make_time_grid(1.0, 50)
    rng = np.random.default_rng(seed)
    params = random_controls(g, tg, rng)
    f1, f2 = rng.standard_normal((2, g.n))
    t1 = forward_solve(params, f1, TANH, g, tg)
    t2 = forward_solve(params, f2, TANH, g, tg)
    L = TANH.sup_deriv * max(kernel_norm(params.b[l], g) for l in range(tg.steps))
    d0 = norm(f1 - f2, g)
    for l, t in enumerate(tg.times):
        assert norm(t1.states[l] - t2.states[l], g) <= np.exp(L * t) * d0 * 1.05


@pytest.mark.parametrize("act", [Activation("tanh"), Activation("arctan")], ids=lambda a: a.name)
def test_bounded_slope_growth(act):
    g = make_grid(10)
    tg = make_time_grid(2.0, 40)
    rng = np.random.default_rng(4)
    params = random_controls(g, tg, rng, a_scale=3.0, b_scale=3.0)
    f_I = rng.standard_normal(g.n)
    traj = forward_solve(params, f_I, act, g, tg)
    for l, t in enumerate(tg.times):
        assert norm(traj.states[l], g) <= norm(f_I, g) + t * act.sup_abs * np.sqrt(g.length) + 1e-12


@pytest.mark.parametrize("seed", range(5))
def test_relu_l1_exponential_bound(seed):
    g = make_grid(10)
    tg = make_time_grid(1.0, 100)
    rng = np.random.default_rng(seed)
    a = rng.standard_normal(g.n)
    b = rng.standard_normal((g.n, g.n))
    params = ControlParams.constant(a, b, tg.steps)
    f_I = rng.standard_normal(g.n)
    traj = forward_solve(params, f_I, RELU, g, tg)
    l1 = lambda f: integrate(np.abs(f), g)
    for l, t in enumerate(tg.times):
        bound = (l1(f_I) + t * l1(a)) * np.exp(np.max(np.abs(b)) * t)
        assert l1(traj.states[l]) <= 1.05 * bound


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
