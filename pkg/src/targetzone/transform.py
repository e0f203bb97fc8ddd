"""Closed-form maps between the three equivalent forms of the value-function ODE.

Three unknowns describe the same solution:

* ``V`` -- the value function, solving the reduced HJB equation
  ``(s^2/2) V'' + b V' - lam V - (g V' + 1)^2 / (4 eta) = 0``;
* ``W`` -- an affine image of ``V`` solving the Lasry-Lions type equation
  ``-W'' + (W')^2 + (2 lam / s^2) W = f``;
* ``U = V / (-log d)`` -- the bounded factor left after dividing out the
  logarithmic blow-up, where ``d`` is a distance-like function to the barriers.

Every function here accepts scalars or numpy arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import (
    ModelParams,
    eval_drift,
    eval_drift_antiderivative,
    eval_drift_derivative,
)

DEFAULT_EPSILON = 0.00176
DISTANCE_KINDS = ("quadratic", "sine")


class DomainError(ValueError):
    """Raised when a point lies outside the region where a map is defined."""


@dataclass(frozen=True)
class DistanceFn:
    """Distance-like function vanishing at both barriers with unit slope there.

    ``epsilon`` is the regularization level used by ``d_eps = eps + (1 - eps) d``
    inside the U-equation coefficients. The reconstruction of ``V`` always uses
    the unregularized ``d``.
    """

    kind: str
    beta_minus: float
    beta_plus: float
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        if self.kind not in DISTANCE_KINDS:
            raise ValueError(f"distance kind must be one of {DISTANCE_KINDS}, got {self.kind!r}")
        if not self.beta_minus < self.beta_plus:
            raise ValueError("beta_minus must be below beta_plus")
        if not 0.0 <= self.epsilon < 1.0:
            raise ValueError(f"epsilon must lie in [0, 1), got {self.epsilon}")

    @classmethod
    def for_params(cls, p: ModelParams, kind: str = "quadratic", epsilon: float = DEFAULT_EPSILON):
        return cls(kind, p.beta_minus, p.beta_plus, float(epsilon))

    def with_epsilon(self, epsilon: float) -> "DistanceFn":
        return DistanceFn(self.kind, self.beta_minus, self.beta_plus, float(epsilon))


@dataclass(frozen=True)
class TransformAnchor:
    """Lower limit ``x0`` of the drift integral in the V <-> W relation."""

    x0: float

    @classmethod
    def midpoint(cls, p: ModelParams) -> "TransformAnchor":
        return cls(p.midpoint)

    def check(self, p: ModelParams) -> "TransformAnchor":
        if not p.beta_minus < self.x0 < p.beta_plus:
            raise DomainError(f"anchor x0={self.x0} must lie strictly inside ({p.beta_minus}, {p.beta_plus})")
        return self


def _check_closed(df: DistanceFn, x) -> None:
    xa = np.asarray(x)
    if np.any(xa < df.beta_minus) or np.any(xa > df.beta_plus) or np.any(np.isnan(xa)):
        raise DomainError(f"x outside [{df.beta_minus}, {df.beta_plus}]")


def _check_open(df: DistanceFn, x) -> None:
    xa = np.asarray(x)
    if np.any(xa <= df.beta_minus) or np.any(xa >= df.beta_plus) or np.any(np.isnan(xa)):
        raise DomainError(f"x must lie strictly inside ({df.beta_minus}, {df.beta_plus})")


def _raw_distance(kind: str, bm: float, bp: float, x):
    width = bp - bm
    if kind == "quadratic":
        d = (x - bm) * (bp - x) / width
        d1 = (bm + bp - 2.0 * x) / width
        d2 = np.full_like(np.asarray(x, dtype=float), -2.0 / width)
    else:
        arg = math.pi * (x - bm) / width
        d = width / math.pi * np.sin(arg)
        d1 = np.cos(arg)
        d2 = -math.pi / width * np.sin(arg)
    if np.ndim(d) == 0:
        return float(d), float(d1), float(d2)
    return d, d1, d2


def d_eval(df: DistanceFn, x, regularized: bool = False):
    """Return ``(d, d', d'')`` at ``x``; with ``regularized`` the values of ``d_eps``."""
    _check_closed(df, x)
    d, d1, d2 = _raw_distance(df.kind, df.beta_minus, df.beta_plus, x)
    if regularized:
        e = df.epsilon
        return e + (1.0 - e) * d, (1.0 - e) * d1, (1.0 - e) * d2
    return d, d1, d2


def f_eval(p: ModelParams, a: TransformAnchor, x):
    """Source term of the Lasry-Lions form."""
    s2 = p.sigma**2
    s4 = s2 * s2
    b = eval_drift(p.drift, x)
    db = eval_drift_derivative(p.drift, x, 1)
    ib = eval_drift_antiderivative(p.drift, a.x0, x)
    return (
        -p.gamma / (s4 * p.eta) * b
        + db / s2
        + b * b / s4
        + p.gamma * p.lam / (s4 * p.eta) * x
        - 2.0 * p.lam / s4 * ib
    )


def _w_scale(p: ModelParams) -> float:
    return p.gamma / (2.0 * p.eta * p.sigma**2)


def w_from_v(p: ModelParams, a: TransformAnchor, x, V):
    ib = eval_drift_antiderivative(p.drift, a.x0, x)
    return _w_scale(p) * (p.gamma * V + x - 2.0 * p.eta / p.gamma * ib)


def v_from_w(p: ModelParams, a: TransformAnchor, x, W):
    ib = eval_drift_antiderivative(p.drift, a.x0, x)
    return (W / _w_scale(p) - x + 2.0 * p.eta / p.gamma * ib) / p.gamma


def w_derivatives_from_v(p: ModelParams, x, V1, V2):
    """``(W', W'')`` from ``(V', V'')``; the anchor drops out of the derivatives."""
    k = _w_scale(p)
    b = eval_drift(p.drift, x)
    db = eval_drift_derivative(p.drift, x, 1)
    W1 = k * (p.gamma * V1 + 1.0 - 2.0 * p.eta / p.gamma * b)
    W2 = k * (p.gamma * V2 - 2.0 * p.eta / p.gamma * db)
    return W1, W2


def v_from_u(df: DistanceFn, x, U):
    """``V = -U log d`` with the unregularized distance."""
    _check_open(df, x)
    d, _, _ = _raw_distance(df.kind, df.beta_minus, df.beta_plus, x)
    return -U * np.log(d)


def u_from_v(df: DistanceFn, x, V):
    _check_open(df, x)
    d, _, _ = _raw_distance(df.kind, df.beta_minus, df.beta_plus, x)
    logd = np.log(d)
    if np.any(logd == 0.0):
        raise DomainError("degenerate point: d(x) == 1, U = V / (-log d) is undefined")
    return V / -logd


def v_derivatives_from_u(df: DistanceFn, x, U, U1, U2):
    """``(V, V', V'')`` of ``V = -U log d`` (unregularized d)."""
    _check_open(df, x)
    d, d1, d2 = _raw_distance(df.kind, df.beta_minus, df.beta_plus, x)
    L = np.log(d)
    r1 = d1 / d
    V = -U * L
    V1 = -U1 * L - U * r1
    V2 = -U2 * L - 2.0 * U1 * r1 - U * (d2 / d - r1 * r1)
    return V, V1, V2


def u_derivatives_from_v(df: DistanceFn, x, V, V1, V2):
    """Inverse of :func:`v_derivatives_from_u`."""
    U = u_from_v(df, x, V)
    d, d1, d2 = _raw_distance(df.kind, df.beta_minus, df.beta_plus, x)
    L = np.log(d)
    r1 = d1 / d
    U1 = -(V1 + U * r1) / L
    U2 = -(V2 + 2.0 * U1 * r1 + U * (d2 / d - r1 * r1)) / L
    return U, U1, U2


def residual_reduced_hjb(p: ModelParams, x, V, V1, V2):
    b = eval_drift(p.drift, x)
    return 0.5 * p.sigma**2 * V2 + V1 * b - p.lam * V - (p.gamma * V1 + 1.0) ** 2 / (4.0 * p.eta)


def residual_ll(p: ModelParams, x, W, W1, W2, f):
    return -W2 + W1 * W1 + 2.0 * p.lam / p.sigma**2 * W - f


def residual_u_ode(p: ModelParams, df: DistanceFn, x, U, U1, U2):
    """Left-hand side of the U-equation, with ``d_eps`` in every coefficient.

    With ``df.epsilon == 0`` this equals ``-4 eta d^2`` times the reduced-HJB
    residual of ``V = -U log d``.
    """
    d, d1, d2 = d_eval(df, x, regularized=True)
    L = np.log(d)
    b = eval_drift(p.drift, x)
    eta, g, s2, lam = p.eta, p.gamma, p.sigma**2, p.lam
    return (
        4.0 * eta * b * (U * d * d1 + U1 * d * d * L)
        + (g * U * d1 + g * U1 * d * L - d) ** 2
        + 2.0 * eta * s2 * (2.0 * d * d1 * U1 + U2 * d * d * L + U * (d * d2 - d1 * d1))
        - 4.0 * eta * lam * U * d * d * L
    )
