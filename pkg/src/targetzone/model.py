"""Problem constants and the polynomial drift of the exchange rate."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np


class ModelError(ValueError):
    """Raised when model parameters violate an invariant."""


@dataclass(frozen=True)
class DriftSpec:
    """Polynomial drift ``b(x) = sum_k c_k x**k`` (ascending coefficients)."""

    coefficients: tuple[float, ...] = (0.0,)

    def __post_init__(self):
        coeffs = tuple(float(c) for c in self.coefficients)
        if not coeffs:
            raise ModelError("drift needs at least one coefficient")
        if not all(math.isfinite(c) for c in coeffs):
            raise ModelError("drift coefficients must be finite")
        object.__setattr__(self, "coefficients", coeffs)

    @property
    def degree(self) -> int:
        return len(self.coefficients) - 1

    def derivative_coefficients(self, order: int = 1) -> tuple[float, ...]:
        c = list(self.coefficients)
        for _ in range(order):
            c = [k * c[k] for k in range(1, len(c))] or [0.0]
        return tuple(c)

    def antiderivative_coefficients(self) -> tuple[float, ...]:
        # constant of integration 0, so P(0) = 0
        return (0.0,) + tuple(c / (k + 1) for k, c in enumerate(self.coefficients))


def _horner(coeffs: Sequence[float], x):
    acc = np.zeros_like(np.asarray(x, dtype=float)) + coeffs[-1]
    for c in reversed(coeffs[:-1]):
        acc = acc * x + c
    return acc if np.ndim(acc) else float(acc)


def eval_drift(d: DriftSpec, x):
    """Evaluate ``b(x)`` by Horner's rule. Accepts scalars or arrays."""
    return _horner(d.coefficients, x)


def eval_drift_derivative(d: DriftSpec, x, order: int = 1):
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    return _horner(d.derivative_coefficients(order), x)


def eval_drift_antiderivative(d: DriftSpec, x0, x):
    """Exact ``int_{x0}^{x} b(y) dy``."""
    anti = d.antiderivative_coefficients()
    return _horner(anti, x) - _horner(anti, x0)


@dataclass(frozen=True)
class ModelParams:
    """Market and preference constants of the target-zone problem.

    ``lam`` is the effective discount ``rho + theta``; it is derived on
    construction and never passed in. To specify the effective discount
    directly use :meth:`with_lambda`.
    """

    beta_minus: float
    beta_plus: float
    sigma: float
    eta: float
    gamma: float
    rho: float = 0.0
    theta: float = 0.0
    drift: DriftSpec = field(default_factory=DriftSpec)
    lam: float = field(init=False)

    def __post_init__(self):
        for name in ("beta_minus", "beta_plus", "sigma", "eta", "gamma", "rho", "theta"):
            object.__setattr__(self, name, float(getattr(self, name)))
        object.__setattr__(self, "lam", self.rho + self.theta)
        validate_params(self)

    @classmethod
    def with_lambda(cls, *, lam: float, **kwargs) -> "ModelParams":
        """Build parameters from an effective discount (stored as ``rho``)."""
        return cls(rho=lam, theta=0.0, **kwargs)

    @property
    def width(self) -> float:
        return self.beta_plus - self.beta_minus

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.beta_minus + self.beta_plus)

    @property
    def blowup_coefficient(self) -> float:
        """``2 sigma^2 eta / gamma^2``, the log-divergence rate of V and U's boundary value."""
        return 2.0 * self.sigma**2 * self.eta / self.gamma**2

    def replace(self, **changes) -> "ModelParams":
        changes.pop("lam", None)
        return replace(self, **changes)


def validate_params(p: ModelParams) -> ModelParams:
    """Check every invariant and return ``p``; raise :class:`ModelError` otherwise."""
    values = {
        "beta_minus": p.beta_minus,
        "beta_plus": p.beta_plus,
        "sigma": p.sigma,
        "eta": p.eta,
        "gamma": p.gamma,
        "rho": p.rho,
        "theta": p.theta,
    }
    for name, v in values.items():
        if not math.isfinite(v):
            raise ModelError(f"{name} must be finite (got {v})")
    if p.beta_minus == p.beta_plus:
        raise ModelError("degenerate interval: beta_minus == beta_plus")
    if p.beta_minus > p.beta_plus:
        raise ModelError("beta_minus must be below beta_plus")
    for name in ("sigma", "eta", "gamma"):
        if values[name] <= 0:
            raise ModelError(f"{name} must be positive (got {values[name]})")
    for name in ("rho", "theta"):
        if values[name] < 0:
            raise ModelError(f"{name} must be non-negative (got {values[name]})")
    if not p.rho + p.theta > 0:
        raise ModelError("lambda = rho + theta must be positive")
    if not isinstance(p.drift, DriftSpec):
        raise ModelError("drift must be a DriftSpec")
    return p
