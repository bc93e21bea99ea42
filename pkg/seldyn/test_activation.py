"""
Tests for the activation family.
"""
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.integrate import quad

from seldyn.activation import (
    Activation,
    ActivationKind,
    antideriv,
    deriv,
    eval as act_eval,
    parse_activation,
)
from seldyn.errors import InvalidArgumentError

ALL = [
    Activation("relu"),
    Activation("leaky_relu", 0.1),
    Activation("elu", 1.0),
    Activation("tanh"),
    Activation("arctan"),
    Activation("logistic"),
]
SMOOTH = [a for a in ALL if a.smooth]
ZERO_AT_ORIGIN = [a for a in ALL if a.zero_at_origin]


def test_eval_examples():
    relu = Activation("relu")
    assert act_eval(relu, -1.0) == 0.0
    assert act_eval(relu, 2.0) == 2.0
    assert act_eval(Activation("elu", 1.0), -50.0) == pytest.approx(-1.0, abs=1e-12)


def test_deriv_examples():
    assert deriv(Activation("tanh"), 0.0) == 1.0
    assert deriv(Activation("relu"), 0.0) == 0.0
    assert deriv(Activation("logistic"), 0.0) == 0.25


def test_antideriv_examples():
    relu = Activation("relu")
    assert antideriv(relu, 2.0) == pytest.approx(2.0)
    assert antideriv(relu, -3.0) == 0.0
    assert antideriv(Activation("tanh"), 1.0) == pytest.approx(math.log(math.cosh(1.0)), abs=1e-12)
    assert antideriv(Activation("tanh"), 1.0) == pytest.approx(0.4338, abs=1e-4)


@pytest.mark.parametrize("act", ALL, ids=lambda a: a.name)
def test_antideriv_matches_quadrature(act):
    for s in (-2.5, -0.3, 0.0, 0.7, 3.0):
        expected, _ = quad(lambda x: float(act.eval(x)), 0.0, s)
        assert float(act.antideriv(s)) == pytest.approx(expected, abs=1e-9)


@pytest.mark.parametrize("act", ALL, ids=lambda a: a.name)
def test_monotone_and_sigma_zero(act):
    s = np.linspace(-5, 5, 1001)
    assert np.all(np.diff(act.eval(s)) >= 0)
    assert float(act.antideriv(0.0)) == 0.0
    if act.zero_at_origin:
        assert float(act.eval(0.0)) == 0.0


@pytest.mark.parametrize("act", ZERO_AT_ORIGIN, ids=lambda a: a.name)
def test_antideriv_nonnegative(act):
    s = np.linspace(-6, 6, 241)
    assert np.all(act.antideriv(s) >= -1e-15)


@pytest.mark.parametrize("act", SMOOTH, ids=lambda a: a.name)
def test_deriv_matches_central_differences(act):
    h = 1e-5
    s = np.linspace(-3, 3, 61)
    fd = (act.eval(s + h) - act.eval(s - h)) / (2 * h)
    assert_allclose(act.deriv(s), fd, atol=1e-9)


@pytest.mark.parametrize("act", [a for a in ALL if not a.smooth], ids=lambda a: a.name)
def test_deriv_away_from_kink(act):
    h = 1e-6
    s = np.concatenate([np.linspace(-3, -0.1, 20), np.linspace(0.1, 3, 20)])
    fd = (act.eval(s + h) - act.eval(s - h)) / (2 * h)
    assert_allclose(act.deriv(s), fd, atol=1e-6)


@pytest.mark.parametrize("act", ALL, ids=lambda a: a.name)
def test_lipschitz_by_sampling(act):
    rng = np.random.default_rng(11)
    s, t = rng.uniform(-10, 10, (2, 5000))
    ratio = np.abs(act.eval(s) - act.eval(t)) / np.abs(s - t)
    assert np.max(ratio) <= act.lipschitz + 1e-12
    assert np.max(np.abs(act.deriv(s))) <= act.sup_deriv


def test_taylor_coefficients():
    assert Activation("tanh").taylor_at_zero() == (1.0, 0.0, -2.0)
    assert Activation("relu").taylor_at_zero() is None
    s1, s2, s3 = Activation("arctan").taylor_at_zero()
    h = 1e-3
    act = Activation("arctan")
    third = (act.eval(2 * h) - 2 * act.eval(h) + 2 * act.eval(-h) - act.eval(-2 * h)) / (2 * h ** 3)
    assert third == pytest.approx(s3, rel=1e-4)


def test_bounds():
    assert Activation("tanh").bounded and Activation("tanh").sup_abs == 1.0
    assert not Activation("relu").bounded
    assert Activation("logistic").sup_deriv == 0.25


@pytest.mark.parametrize("spec, kind, param", [
    ("relu", ActivationKind.RELU, 0.0),
    ("leaky_relu:0.2", ActivationKind.LEAKY_RELU, 0.2),
    ("leaky_relu", ActivationKind.LEAKY_RELU, 0.1),
    ("elu:0.5", ActivationKind.ELU, 0.5),
    ("TANH", ActivationKind.TANH, 0.0),
    ("logistic", ActivationKind.LOGISTIC, 0.0),
])
def test_parse_activation(spec, kind, param):
    act = parse_activation(spec)
    assert act.kind == kind
    assert act.param == param


@pytest.mark.parametrize("spec", ["", "softplus", "tanh:2", "elu:abc", "elu:-1", "leaky_relu:2"])
def test_parse_activation_rejects(spec):
    with pytest.raises(InvalidArgumentError):
        parse_activation(spec)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
