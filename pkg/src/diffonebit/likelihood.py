"""Negative log-likelihoods of 1-bit observations and their gradients.

Two families are supported: the probit surrogate for sign measurements with
Gaussian pre-quantization noise, and the logistic (binary cross-entropy)
model. Both are written in terms of the margins ``y_i * a_i.x`` so each bit
costs one special-function call.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc, erfcx, expit

from .errors import InvalidArgument
from .measurement import LOGISTIC, PROBIT, as_signal

SQRT2 = math.sqrt(2.0)
SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
SATURATION = 40.0


def _check_finite(u):
    u = np.asarray(u, dtype=np.float64)
    if np.any(np.isnan(u)):
        raise InvalidArgument("NaN passed to a normal-CDF routine")
    return u


def log_norm_cdf(u):
    """log Phi(u), accurate in both tails.

    Left of zero this uses the scaled complementary error function,
    ``Phi(u) = erfcx(t) exp(-t^2) / 2`` with ``t = -u/sqrt(2)``, so the
    result never underflows. Right of zero ``log1p`` keeps the tiny
    deficit ``1 - Phi(u)``.
    """
    u = _check_finite(u)
    t = -u / SQRT2
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        left = np.log(0.5 * erfcx(np.maximum(t, 0.0))) - np.maximum(t, 0.0) ** 2
        right = np.log1p(-0.5 * erfc(np.maximum(u, 0.0) / SQRT2))
    out = np.where(u < 0, left, right)
    return out if out.ndim else float(out)


def inverse_mills(u):
    """phi(u) / Phi(u), the gradient kernel of log Phi.

    For negative u this equals ``sqrt(2/pi) / erfcx(-u/sqrt(2))`` exactly,
    which behaves like ``-u`` far in the tail without overflowing.
    """
    u = _check_finite(u)
    t = np.maximum(-u / SQRT2, 0.0)
    up = np.maximum(u, 0.0)
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        left = SQRT_2_OVER_PI / erfcx(t)
        right = np.exp(-0.5 * up * up) / math.sqrt(2.0 * math.pi) / (1.0 - 0.5 * erfc(up / SQRT2))
    out = np.where(u < 0, left, right)
    return out if out.ndim else float(out)


def softplus(u):
    """log(1 + exp(u)) without overflow."""
    return np.logaddexp(0.0, u)


@dataclass(frozen=True)
class DataFidelity:
    """Negative log-likelihood family: ``probit`` (with sigma > 0), ``logistic`` or ``null``."""

    family: str
    sigma: float = 1.0

    def __post_init__(self):
        if self.family not in (PROBIT, LOGISTIC, "null"):
            raise InvalidArgument(f"unknown fidelity family {self.family!r}")
        if self.family == PROBIT and not (np.isfinite(self.sigma) and self.sigma > 0):
            raise InvalidArgument(f"probit fidelity needs sigma > 0, got {self.sigma}")

    @classmethod
    def probit(cls, sigma):
        return cls(PROBIT, float(sigma))

    @classmethod
    def logistic(cls):
        return cls(LOGISTIC, 0.0)

    @classmethod
    def null(cls):
        return cls("null", 0.0)

    @classmethod
    def matching(cls, obs, sigma=None):
        """Fidelity matched to ``obs``; ``sigma`` overrides the probit noise level."""
        if obs.model == LOGISTIC:
            return cls.logistic()
        sigma = obs.sigma if sigma is None else sigma
        if sigma <= 0:
            raise InvalidArgument(
                "observation was simulated without noise; pass a positive probit sigma for recovery"
            )
        return cls.probit(sigma)


def check_compatible(fidelity, obs, op):
    if fidelity.family != "null" and fidelity.family != obs.model:
        raise InvalidArgument(
            f"fidelity family {fidelity.family!r} does not match observation model {obs.model!r}"
        )
    if obs.m != op.rows:
        raise InvalidArgument(f"observation has {obs.m} bits, operator has {op.rows} rows")


def margins(fidelity, obs, u, counter=None):
    """Scaled signed margins ``y * u / sigma`` (probit, clamped) or ``y * u`` (logistic)."""
    y = obs.bits.astype(np.float64)
    if fidelity.family == PROBIT:
        z = y * u / fidelity.sigma
        if counter is not None:
            counter["clamped"] = counter.get("clamped", 0) + int(np.count_nonzero(np.abs(z) > SATURATION))
        return np.clip(z, -SATURATION, SATURATION)
    return y * u


def nll_from_measurements(fidelity, obs, u, counter=None):
    """NLL given precomputed ``u = A x``; ``u`` may carry leading batch axes."""
    if fidelity.family == "null":
        return np.zeros(np.shape(u)[:-1]) if np.ndim(u) > 1 else 0.0
    z = margins(fidelity, obs, u, counter)
    if fidelity.family == PROBIT:
        return -np.sum(log_norm_cdf(z), axis=-1)
    return np.sum(softplus(-z), axis=-1)


def nll(fidelity, obs, op, x, counter=None):
    """Negative log-likelihood of ``obs`` at signal ``x``.

    ``counter``, if given, is a dict whose ``"clamped"`` entry is incremented
    by the number of probit margins that hit the saturation clamp.
    """
    check_compatible(fidelity, obs, op)
    x = as_signal(x, op.cols)
    if fidelity.family == "null":
        return 0.0
    return float(nll_from_measurements(fidelity, obs, op.apply(x), counter))


def nll_grad(fidelity, obs, op, x, counter=None):
    check_compatible(fidelity, obs, op)
    x = as_signal(x, op.cols)
    if fidelity.family == "null":
        return np.zeros(op.cols)
    y = obs.bits.astype(np.float64)
    z = margins(fidelity, obs, op.apply(x), counter)
    if fidelity.family == PROBIT:
        w = -y * inverse_mills(z) / fidelity.sigma
    else:
        w = -y * expit(-z)
    return op.adjoint(w)
