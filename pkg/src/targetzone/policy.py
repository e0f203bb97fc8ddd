"""Value function and feedback control reconstructed from the U grid solution."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bvp import GridSolution
from .model import ModelParams, eval_drift
from .transform import (
    DistanceFn,
    DomainError,
    _raw_distance,
    residual_reduced_hjb,
    v_derivatives_from_u,
)

VALUE_TABLE_HEADER = "x,U,V,V_prime,u_hat,residual"


def _fmt(v: float) -> str:
    return "%.17g" % v


@dataclass(frozen=True, eq=False)
class PolicyFn:
    """Feedback policy built on a :class:`GridSolution`.

    ``U`` is interpolated by cubic Hermite pieces over the grid cells using
    the node values and the stencil derivatives; the logarithmic singularity
    is carried analytically by ``V = -U log d`` with the unregularized ``d``.
    Only the open interval is valid input.
    """

    solution: GridSolution
    distance: DistanceFn
    params: ModelParams

    def __post_init__(self):
        g = self.solution.grid
        if not (self.distance.beta_minus == self.params.beta_minus == g.nodes[0]
                and self.distance.beta_plus == self.params.beta_plus == g.nodes[-1]):
            raise ValueError("grid, distance function and parameters disagree on the interval")

    # -- interpolation of U ------------------------------------------------
    def _check(self, x) -> np.ndarray:
        xa = np.asarray(x, dtype=float)
        if np.any(~(xa > self.params.beta_minus)) or np.any(~(xa < self.params.beta_plus)):
            raise DomainError(
                f"x must lie strictly inside ({self.params.beta_minus}, {self.params.beta_plus})")
        return xa

    def _hermite(self, xa: np.ndarray):
        g = self.solution.grid
        nodes, y, m = g.nodes, self.solution.values, self.solution.derivative_values
        i = np.clip(np.searchsorted(nodes, xa, side="right") - 1, 0, g.n - 2)
        h = g.h
        t = (xa - nodes[i]) / h
        t2 = t * t
        t3 = t2 * t
        y0, y1, m0, m1 = y[i], y[i + 1], m[i], m[i + 1]
        U = (2 * t3 - 3 * t2 + 1) * y0 + (t3 - 2 * t2 + t) * h * m0 + (-2 * t3 + 3 * t2) * y1 + (t3 - t2) * h * m1
        U1 = ((6 * t2 - 6 * t) * y0 + (3 * t2 - 4 * t + 1) * h * m0 + (6 * t - 6 * t2) * y1
              + (3 * t2 - 2 * t) * h * m1) / h
        return U, U1

    @staticmethod
    def _out(v, scalar: bool):
        return float(v) if scalar else v

    def u_factor_at(self, x):
        """Interpolated ``U(x)`` and ``U'(x)``."""
        xa = self._check(x)
        U, U1 = self._hermite(xa)
        s = xa.ndim == 0
        return self._out(U, s), self._out(U1, s)

    # -- value function and control ---------------------------------------
    def value_at(self, x):
        xa = self._check(x)
        U, _ = self._hermite(xa)
        d, _, _ = _raw_distance(self.distance.kind, self.params.beta_minus, self.params.beta_plus, xa)
        return self._out(-U * np.log(d), xa.ndim == 0)

    def value_derivative_at(self, x):
        xa = self._check(x)
        U, U1 = self._hermite(xa)
        d, d1, _ = _raw_distance(self.distance.kind, self.params.beta_minus, self.params.beta_plus, xa)
        return self._out(-U1 * np.log(d) - U * d1 / d, xa.ndim == 0)

    def control_at(self, x):
        """``u = -(g V'(x) + 1) / (2 eta)``."""
        V1 = self.value_derivative_at(x)
        return -(self.params.gamma * V1 + 1.0) / (2.0 * self.params.eta)

    def control_at_u_form(self, x):
        """Same control written through U: ``(g / 2 eta)(U d'/d + U' log d - 1/g)``."""
        xa = self._check(x)
        U, U1 = self._hermite(xa)
        d, d1, _ = _raw_distance(self.distance.kind, self.params.beta_minus, self.params.beta_plus, xa)
        p = self.params
        u = p.gamma / (2.0 * p.eta) * (U * d1 / d + U1 * np.log(d) - 1.0 / p.gamma)
        return self._out(u, xa.ndim == 0)

    # -- node-based diagnostics -------------------------------------------
    def node_derivatives(self):
        """``(x, V, V', V'')`` at interior nodes from the solver stencil."""
        s = self.solution
        x = s.grid.nodes[1:-1]
        V, V1, V2 = v_derivatives_from_u(self.distance, x, s.values[1:-1], s.derivative_values[1:-1],
                                         s.second_derivative_values[1:-1])
        return x, V, V1, V2

    def node_hjb_residuals(self):
        x, V, V1, V2 = self.node_derivatives()
        return x, V, residual_reduced_hjb(self.params, x, V, V1, V2)


def hamiltonian(p: ModelParams, x, u, V, V1, V2):
    """``V'(b + g u) + (s^2/2) V'' + u + eta u^2 - lam V``."""
    b = eval_drift(p.drift, x)
    return V1 * (b + p.gamma * u) + 0.5 * p.sigma**2 * V2 + u + p.eta * u * u - p.lam * V


def fit_blowup_rate(pf: PolicyFn, side: str, eps_range=(1e-3, 1e-2), n_samples: int = 25):
    """Sample ``V(beta -+ e) / (-log e)`` for log-spaced ``e`` in ``eps_range``.

    Returns ``(ratio at the smallest e, max relative deviation from 2 s^2 eta / g^2)``.
    """
    if side not in ("lower", "upper"):
        raise ValueError("side must be 'lower' or 'upper'")
    lo, hi = map(float, eps_range)
    p = pf.params
    if not 0 < lo < hi:
        raise ValueError("eps_range must be an increasing pair of positive numbers")
    if hi >= p.width / 4:
        raise ValueError(f"eps_range must stay below a quarter of the interval width ({p.width / 4})")
    if lo < pf.solution.grid.h:
        raise ValueError(f"eps_range starts below the grid resolution h={pf.solution.grid.h:.3g}")
    eps = np.geomspace(lo, hi, n_samples)
    x = p.beta_minus + eps if side == "lower" else p.beta_plus - eps
    ratio = pf.value_at(x) / -np.log(eps)
    c = p.blowup_coefficient
    return float(ratio[0]), float(np.max(np.abs(ratio / c - 1.0)))


def control_sign_band(pf: PolicyFn, side: str) -> float:
    """Largest node distance ``delta`` from the barrier over which the control
    keeps its inward sign (positive near ``beta_-``, negative near ``beta_+``).

    Scans interior nodes outward from the barrier; 0 means the first interior
    node already has the wrong sign.
    """
    g = pf.solution.grid
    x = g.nodes[1:-1]
    u = pf.control_at(x)
    if side == "lower":
        bad = np.nonzero(~(u > 0))[0]
        return float(x[bad[0]] - g.nodes[0]) if bad.size else float(g.nodes[-1] - g.nodes[0])
    if side == "upper":
        bad = np.nonzero(~(u < 0))[0]
        return float(g.nodes[-1] - x[bad[-1]]) if bad.size else float(g.nodes[-1] - g.nodes[0])
    raise ValueError("side must be 'lower' or 'upper'")


def value_table_rows(pf: PolicyFn):
    s = pf.solution
    nodes = s.grid.nodes
    x, V, res = pf.node_hjb_residuals()
    _, _, V1, _ = pf.node_derivatives()
    u = -(pf.params.gamma * V1 + 1.0) / (2.0 * pf.params.eta)
    rows = [[_fmt(nodes[0]), _fmt(s.values[0]), "", "", "", ""]]
    for k in range(x.size):
        rows.append([_fmt(x[k]), _fmt(s.values[k + 1]), _fmt(V[k]), _fmt(V1[k]), _fmt(u[k]), _fmt(res[k])])
    rows.append([_fmt(nodes[-1]), _fmt(s.values[-1]), "", "", "", ""])
    return rows


def write_value_table(pf: PolicyFn, path) -> Path:
    """Write one row per grid node; boundary rows leave V, V', u and residual empty.

    Interior V' and u come from the solver stencil so that the residual column
    is self-consistent.
    """
    path = Path(path)
    lines = [VALUE_TABLE_HEADER] + [",".join(r) for r in value_table_rows(pf)]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
    return path


def read_value_table(path):
    """Parse a value table; empty fields become NaN."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != VALUE_TABLE_HEADER:
            raise ValueError(f"unexpected header {header!r}")
        for line in fh:
            if line.strip():
                rows.append([float(v) if v else math.nan for v in line.rstrip("\n").split(",")])
    return np.array(rows)
