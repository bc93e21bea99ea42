"""
Activation family sigma with derivative sigma' and antiderivative Sigma (Sigma' = sigma).

All functions are vectorized over numpy arrays and accept scalars.
"""
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple

import numpy as np
from scipy.special import expit

from .errors import InvalidArgumentError

logger = logging.getLogger(__name__)

LOG2 = math.log(2.0)


class ActivationKind(str, Enum):
    RELU = "relu"
    LEAKY_RELU = "leaky_relu"
    ELU = "elu"
    TANH = "tanh"
    ARCTAN = "arctan"
    LOGISTIC = "logistic"


NONSMOOTH_KINDS = {ActivationKind.RELU, ActivationKind.LEAKY_RELU, ActivationKind.ELU}

DEFAULT_PARAMS = {
    ActivationKind.LEAKY_RELU: 0.1,
    ActivationKind.ELU: 1.0,
}


@dataclass(frozen=True)
class Activation:
    """
    Tagged activation. `param` is the negative-side slope for leaky_relu and
    alpha for elu; ignored otherwise.
    """
    kind: ActivationKind
    param: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", ActivationKind(self.kind))
        if self.param is None:
            object.__setattr__(self, "param", DEFAULT_PARAMS.get(self.kind, 0.0))
        object.__setattr__(self, "param", float(self.param))
        if self.kind == ActivationKind.LEAKY_RELU and not (0.0 <= self.param <= 1.0):
            raise InvalidArgumentError(f"leaky_relu slope must lie in [0, 1], got {self.param}")
        if self.kind == ActivationKind.ELU and self.param <= 0.0:
            raise InvalidArgumentError(f"elu alpha must be positive, got {self.param}")

    # ------------------------------------------------------------------
    # values
    # ------------------------------------------------------------------

    def eval(self, s):
        s = np.asarray(s, dtype=float)
        k = self.kind
        if k == ActivationKind.RELU:
            out = np.maximum(s, 0.0)
        elif k == ActivationKind.LEAKY_RELU:
            out = np.where(s > 0, s, self.param * s)
        elif k == ActivationKind.ELU:
            out = np.where(s > 0, s, self.param * np.expm1(np.minimum(s, 0.0)))
        elif k == ActivationKind.TANH:
            out = np.tanh(s)
        elif k == ActivationKind.ARCTAN:
            out = np.arctan(s)
        else:
            out = expit(s)
        return out

    def deriv(self, s):
        """sigma'(s); the ReLU family uses the left slope at the kink s = 0."""
        s = np.asarray(s, dtype=float)
        k = self.kind
        if k == ActivationKind.RELU:
            out = np.where(s > 0, 1.0, 0.0)
        elif k == ActivationKind.LEAKY_RELU:
            out = np.where(s > 0, 1.0, self.param)
        elif k == ActivationKind.ELU:
            out = np.where(s > 0, 1.0, self.param * np.exp(np.minimum(s, 0.0)))
        elif k == ActivationKind.TANH:
            out = 1.0 - np.tanh(s) ** 2
        elif k == ActivationKind.ARCTAN:
            out = 1.0 / (1.0 + s * s)
        else:
            h = expit(s)
            out = h * (1.0 - h)
        return out

    def antideriv(self, s):
        """Sigma(s) = int_0^s sigma, closed form per kind."""
        s = np.asarray(s, dtype=float)
        k = self.kind
        if k == ActivationKind.RELU:
            out = 0.5 * np.maximum(s, 0.0) ** 2
        elif k == ActivationKind.LEAKY_RELU:
            out = np.where(s > 0, 0.5 * s * s, 0.5 * self.param * s * s)
        elif k == ActivationKind.ELU:
            neg = np.minimum(s, 0.0)
            out = np.where(s > 0, 0.5 * s * s, self.param * (np.expm1(neg) - neg))
        elif k == ActivationKind.TANH:
            a = np.abs(s)
            # log cosh(s) without overflow
            out = a + np.log1p(np.exp(-2.0 * a)) - LOG2
        elif k == ActivationKind.ARCTAN:
            out = s * np.arctan(s) - 0.5 * np.log1p(s * s)
        else:
            out = np.logaddexp(0.0, s) - LOG2
        return out

    # ------------------------------------------------------------------
    # properties used by the analyses
    # ------------------------------------------------------------------

    @property
    def smooth(self) -> bool:
        return self.kind not in NONSMOOTH_KINDS

    @property
    def zero_at_origin(self) -> bool:
        return self.kind != ActivationKind.LOGISTIC

    @property
    def sup_deriv(self) -> float:
        k = self.kind
        if k == ActivationKind.LEAKY_RELU:
            return max(1.0, self.param)
        if k == ActivationKind.ELU:
            return max(1.0, self.param)
        if k == ActivationKind.LOGISTIC:
            return 0.25
        return 1.0

    @property
    def lipschitz(self) -> float:
        return self.sup_deriv

    @property
    def sup_abs(self) -> float:
        """sup |sigma|; infinite for the unbounded kinds."""
        k = self.kind
        if k == ActivationKind.TANH:
            return 1.0
        if k == ActivationKind.ARCTAN:
            return math.pi / 2.0
        if k == ActivationKind.LOGISTIC:
            return 1.0
        return math.inf

    @property
    def bounded(self) -> bool:
        return math.isfinite(self.sup_abs)

    def taylor_at_zero(self) -> Optional[Tuple[float, float, float]]:
        """(sigma'(0), sigma''(0), sigma'''(0)) for smooth kinds, None otherwise."""
        k = self.kind
        if k == ActivationKind.TANH:
            return (1.0, 0.0, -2.0)
        if k == ActivationKind.ARCTAN:
            return (1.0, 0.0, -2.0)
        if k == ActivationKind.LOGISTIC:
            return (0.25, 0.0, -0.125)
        return None

    @property
    def name(self) -> str:
        if self.kind in DEFAULT_PARAMS:
            return f"{self.kind.value}:{self.param:g}"
        return self.kind.value


# ============================================================================
# MODULE-LEVEL OPERATIONS
# ============================================================================

def eval(act: Activation, s):  # noqa: A001 - mirrors the operation name
    return act.eval(s)


def deriv(act: Activation, s):
    return act.deriv(s)


def antideriv(act: Activation, s):
    return act.antideriv(s)


def parse_activation(spec: str) -> Activation:
    """Parse "relu", "leaky_relu:0.1", "elu:1.0", "tanh", "arctan", "logistic"."""
    if not isinstance(spec, str) or not spec.strip():
        raise InvalidArgumentError(f"activation name must be a non-empty string, got {spec!r}")
    name, _, raw = spec.strip().partition(":")
    try:
        kind = ActivationKind(name.strip().lower())
    except ValueError:
        raise InvalidArgumentError(f"unknown activation '{name}'")
    if raw:
        if kind not in DEFAULT_PARAMS:
            raise InvalidArgumentError(f"activation '{name}' takes no parameter")
        try:
            param = float(raw)
        except ValueError:
            raise InvalidArgumentError(f"activation parameter '{raw}' is not a number")
        return Activation(kind, param)
    return Activation(kind)


def require_zero_at_origin(act: Activation, purpose: str) -> bool:
    """Warn when a sigma(0)=0 diagnostic is asked of the logistic link."""
    if not act.zero_at_origin:
        logger.warning(f"⚠️ {act.name} has sigma(0) != 0; {purpose} assumes sigma(0) = 0")
        return False
    return True
