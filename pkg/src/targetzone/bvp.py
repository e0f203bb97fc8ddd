"""Finite-difference Newton solvers for the U boundary-value problem and the
truncated Lasry-Lions problems.

All systems share one shape: unknowns on a uniform grid, both end values
pinned, a three-point stencil at interior nodes. :func:`newton_step` works on
any object exposing ``residual``, ``jacobian`` and ``roundoff_floor``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg.lapack import dgtsv

from .model import ModelParams, eval_drift
from .transform import DEFAULT_EPSILON, DistanceFn, TransformAnchor, d_eval, f_eval

log = logging.getLogger(__name__)

_EPS = np.finfo(float).eps


class SolverError(RuntimeError):
    """Newton failed: non-convergence, failed line search or singular Jacobian."""

    def __init__(self, message: str, *, stage: float | None = None, node: int | None = None,
                 residual: float | None = None):
        super().__init__(message)
        self.stage = stage
        self.node = node
        self.residual = residual


@dataclass(frozen=True, eq=False)
class Grid:
    n: int
    nodes: np.ndarray
    h: float

    @classmethod
    def uniform(cls, lo: float, hi: float, n: int) -> "Grid":
        if n < 3:
            raise ValueError("grid needs at least 3 nodes")
        nodes = np.linspace(lo, hi, n)
        nodes.flags.writeable = False
        return cls(n, nodes, (hi - lo) / (n - 1))

    @property
    def interior(self) -> np.ndarray:
        return self.nodes[1:-1]


@dataclass(frozen=True)
class SolverConfig:
    tolerance: float = 1e-9
    max_newton_iters: int = 50
    min_step: float = 2.0**-30
    epsilon_schedule: tuple[float, ...] = (0.1, 0.01, DEFAULT_EPSILON)
    grid_n: int = 2001

    def __post_init__(self):
        sched = tuple(float(e) for e in self.epsilon_schedule)
        object.__setattr__(self, "epsilon_schedule", sched)
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_newton_iters < 1:
            raise ValueError("max_newton_iters must be >= 1")
        if not 0 < self.min_step <= 1:
            raise ValueError("min_step must lie in (0, 1]")
        if not sched:
            raise ValueError("epsilon_schedule must not be empty")
        if any(not 0.0 <= e < 1.0 for e in sched):
            raise ValueError("epsilon_schedule entries must lie in [0, 1)")
        if any(b >= a for a, b in zip(sched, sched[1:])):
            raise ValueError("epsilon_schedule must be strictly decreasing")
        if self.grid_n < 3:
            raise ValueError("grid_n must be >= 3")

    @property
    def target_epsilon(self) -> float:
        return self.epsilon_schedule[-1]


@dataclass(frozen=True)
class StageReport:
    epsilon: float
    newton_iterations: int
    residual_norm: float


@dataclass(frozen=True, eq=False)
class GridSolution:
    """U on the grid, with stencil derivatives and solver diagnostics."""

    grid: Grid
    values: np.ndarray
    derivative_values: np.ndarray
    second_derivative_values: np.ndarray
    residual_norm: float
    newton_iterations: int
    epsilon_used: float
    tolerance_used: float
    stages: tuple[StageReport, ...] = field(default_factory=tuple)


@dataclass(frozen=True, eq=False)
class TruncatedSolution:
    grid: Grid
    boundary_value: float
    values: np.ndarray
    residual_norm: float
    newton_iterations: int


@dataclass(frozen=True)
class StepInfo:
    step_length: float
    residual_before: float
    residual_after: float
    merit_before: float
    merit_after: float
    update_norm: float


def stencil_derivatives(values: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray]:
    """First and second derivatives from the three-point stencil.

    Interior nodes use central differences; the end nodes use second-order
    one-sided formulas.
    """
    u = values
    d1 = np.empty_like(u)
    d2 = np.empty_like(u)
    d1[1:-1] = (u[2:] - u[:-2]) / (2.0 * h)
    d2[1:-1] = (u[2:] - 2.0 * u[1:-1] + u[:-2]) / (h * h)
    if u.size >= 4:
        d1[0] = (-3.0 * u[0] + 4.0 * u[1] - u[2]) / (2.0 * h)
        d1[-1] = (3.0 * u[-1] - 4.0 * u[-2] + u[-3]) / (2.0 * h)
        d2[0] = (2.0 * u[0] - 5.0 * u[1] + 4.0 * u[2] - u[3]) / (h * h)
        d2[-1] = (2.0 * u[-1] - 5.0 * u[-2] + 4.0 * u[-3] - u[-4]) / (h * h)
    else:
        d1[0] = (u[1] - u[0]) / h
        d1[-1] = (u[-1] - u[-2]) / h
        d2[0] = d2[1]
        d2[-1] = d2[-2]
    return d1, d2


class _ThreePointSystem:
    grid: Grid

    def residual(self, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def jacobian(self, u: np.ndarray):
        """Return ``(sub, diag, sup)``: coefficients of ``u[i-1], u[i], u[i+1]``
        in the linearized residual at interior node ``i``."""
        raise NotImplementedError

    def roundoff_floor(self, u: np.ndarray) -> float:
        # rounding level of the stencil: eps * max_i sum_j |J_ij| |u_j|
        sub, diag, sup = self.jacobian(u)
        scale = np.abs(sub) * np.abs(u[:-2]) + np.abs(diag) * np.abs(u[1:-1]) + np.abs(sup) * np.abs(u[2:])
        return float(2.0 * _EPS * np.max(scale))


class UOdeSystem(_ThreePointSystem):
    """Central-difference discretization of the U-equation with ``d_eps`` coefficients.

    The residual is expanded as ``A^2 + kU U + kP U' + kPP U''`` with
    ``A = g d' U + g d log(d) U' - d``; coefficients are precomputed per node.
    """

    def __init__(self, p: ModelParams, df: DistanceFn, grid: Grid):
        self.grid = grid
        x = grid.interior
        d, d1, d2 = d_eval(df, x, regularized=True)
        L = np.log(d)
        b = eval_drift(p.drift, x)
        eta, g, s2, lam = p.eta, p.gamma, p.sigma**2, p.lam
        self._a_u = g * d1
        self._a_p = g * d * L
        self._a_0 = -d
        self._k_u = 4 * eta * b * d * d1 + 2 * eta * s2 * (d * d2 - d1 * d1) - 4 * eta * lam * d * d * L
        self._k_p = 4 * eta * b * d * d * L + 4 * eta * s2 * d * d1
        self._k_pp = 2 * eta * s2 * d * d * L

    def _derivs(self, u):
        h = self.grid.h
        return (u[2:] - u[:-2]) / (2 * h), (u[2:] - 2 * u[1:-1] + u[:-2]) / (h * h)

    def residual(self, u):
        ui = u[1:-1]
        u1, u2 = self._derivs(u)
        A = self._a_u * ui + self._a_p * u1 + self._a_0
        return A * A + self._k_u * ui + self._k_p * u1 + self._k_pp * u2

    def jacobian(self, u):
        h = self.grid.h
        ui = u[1:-1]
        u1, _ = self._derivs(u)
        A = self._a_u * ui + self._a_p * u1 + self._a_0
        j_u = 2 * A * self._a_u + self._k_u
        j_p = 2 * A * self._a_p + self._k_p
        j_pp = self._k_pp
        return (-j_p / (2 * h) + j_pp / h**2, j_u - 2 * j_pp / h**2, j_p / (2 * h) + j_pp / h**2)


class LasryLionsSystem(_ThreePointSystem):
    """Discretization of ``-W'' + (W')^2 + (2 lam / s^2) W = f``.

    ``stencil="exponential"`` replaces ``-W'' + (W')^2`` at node i by
    ``(expm1(W_i - W_{i+1}) + expm1(W_i - W_{i-1})) / h^2``, the exact image of
    ``phi''/phi`` under ``phi = exp(-W)``. It is second-order consistent, its
    Jacobian is an M-matrix, and it stays well-posed for large boundary values.
    ``stencil="central"`` uses plain central differences; ``quadratic=False``
    drops the ``(W')^2`` term (linear problem, for testing Newton).
    """

    def __init__(self, p: ModelParams, a: TransformAnchor, grid: Grid, *,
                 stencil: str = "exponential", quadratic: bool = True):
        if stencil not in ("exponential", "central"):
            raise ValueError(f"unknown stencil {stencil!r}")
        if stencil == "exponential" and not quadratic:
            raise ValueError("the exponential stencil always carries the quadratic term")
        self.grid = grid
        self.stencil = stencil
        self.quadratic = quadratic
        self.k = 2.0 * p.lam / p.sigma**2
        self.f_all = f_eval(p, a, grid.nodes)
        self.f = self.f_all[1:-1]

    def residual(self, w):
        h2 = self.grid.h ** 2
        wi = w[1:-1]
        if self.stencil == "exponential":
            with np.errstate(over="ignore"):
                return (np.expm1(wi - w[2:]) + np.expm1(wi - w[:-2])) / h2 + self.k * wi - self.f
        w1 = (w[2:] - w[:-2]) / (2 * self.grid.h)
        out = -(w[2:] - 2 * wi + w[:-2]) / h2 + self.k * wi - self.f
        return out + w1 * w1 if self.quadratic else out

    def jacobian(self, w):
        h, h2 = self.grid.h, self.grid.h ** 2
        wi = w[1:-1]
        if self.stencil == "exponential":
            with np.errstate(over="ignore"):
                ep = np.exp(wi - w[2:])
                em = np.exp(wi - w[:-2])
            return -em / h2, (ep + em) / h2 + self.k, -ep / h2
        q = (w[2:] - w[:-2]) / (2 * h) / h if self.quadratic else 0.0
        ones = np.ones_like(wi)
        return -ones / h2 - q, 2 * ones / h2 + self.k, -ones / h2 + q


def _solve_tridiagonal(sub, diag, sup, rhs):
    _, _, _, x, info = dgtsv(sub[1:].copy(), diag.copy(), sup[:-1].copy(), rhs.copy())
    if info > 0:
        raise SolverError(f"singular Jacobian: zero pivot at interior node {info}", node=int(info))
    if info < 0:  # pragma: no cover - argument error from LAPACK
        raise SolverError(f"dgtsv rejected argument {-info}")
    return x


def effective_tolerance(system: _ThreePointSystem, u: np.ndarray, tolerance: float) -> float:
    return max(tolerance, system.roundoff_floor(u))


def newton_step(u: np.ndarray, system: _ThreePointSystem, cfg: SolverConfig):
    """One damped Newton step; returns ``(u_next, StepInfo)``.

    End values are never touched. The step length starts at 1 and is halved
    until the Euclidean norm of the residual decreases. An iterate already
    within tolerance is returned unchanged.
    """
    F = system.residual(u)
    r0 = float(np.max(np.abs(F)))
    m0 = float(np.linalg.norm(F))
    if r0 <= effective_tolerance(system, u, cfg.tolerance):
        return u, StepInfo(0.0, r0, r0, m0, m0, 0.0)
    sub, diag, sup = system.jacobian(u)
    delta = _solve_tridiagonal(sub, diag, sup, -F)
    t = 1.0
    while t >= cfg.min_step:
        trial = u.copy()
        trial[1:-1] += t * delta
        Ft = system.residual(trial)
        if np.all(np.isfinite(Ft)):
            mt = float(np.linalg.norm(Ft))
            if mt < m0:
                info = StepInfo(t, r0, float(np.max(np.abs(Ft))), m0, mt, float(t * np.max(np.abs(delta))))
                return trial, info
        t *= 0.5
    raise SolverError(f"line search failed to reduce the residual (max-norm {r0:.3e})", residual=r0)


def _newton(u0: np.ndarray, system: _ThreePointSystem, cfg: SolverConfig, stage: float | None):
    u = u0.copy()
    for it in range(cfg.max_newton_iters + 1):
        F = system.residual(u)
        r = float(np.max(np.abs(F)))
        if not np.isfinite(r):
            raise SolverError("residual is not finite", stage=stage, residual=r)
        tol = effective_tolerance(system, u, cfg.tolerance)
        if r <= tol:
            return u, it, r, tol
        if it == cfg.max_newton_iters:
            break
        try:
            u, _ = newton_step(u, system, cfg)
        except SolverError as exc:
            label = f" at epsilon={stage}" if stage is not None else ""
            raise SolverError(f"{exc}{label} (iteration {it}, |U|_max={np.max(np.abs(u)):.4g})",
                              stage=stage, node=exc.node, residual=r) from None
    label = f" at epsilon={stage}" if stage is not None else ""
    raise SolverError(
        f"Newton did not converge{label} after {cfg.max_newton_iters} iterations: "
        f"residual {r:.3e} > {tol:.3e}, |U|_max={np.max(np.abs(u)):.4g}",
        stage=stage, residual=r)


def _grid_for(p: ModelParams, cfg: SolverConfig) -> Grid:
    return Grid.uniform(p.beta_minus, p.beta_plus, cfg.grid_n)


def solve_u_bvp(p: ModelParams, df: DistanceFn, cfg: SolverConfig,
                initial: np.ndarray | None = None) -> GridSolution:
    """Solve the U-equation at ``df.epsilon`` with ``U(beta_+-) = 2 s^2 eta / g^2``."""
    if cfg.grid_n < 101:
        raise ValueError("solve_u_bvp needs grid_n >= 101")
    grid = _grid_for(p, cfg)
    c = p.blowup_coefficient
    u0 = np.full(grid.n, c) if initial is None else np.array(initial, dtype=float)
    if u0.shape != (grid.n,):
        raise ValueError("initial guess has the wrong shape")
    u0[0] = c
    u0[-1] = c
    system = UOdeSystem(p, df, grid)
    u, its, r, tol = _newton(u0, system, cfg, stage=df.epsilon)
    log.debug("epsilon=%g: %d Newton iterations, residual %.3e", df.epsilon, its, r)
    d1, d2 = stencil_derivatives(u, grid.h)
    u.flags.writeable = False
    return GridSolution(grid, u, d1, d2, r, its, df.epsilon, tol,
                        (StageReport(df.epsilon, its, r),))


def continuation_solve(p: ModelParams, df: DistanceFn, cfg: SolverConfig) -> GridSolution:
    """Solve along ``cfg.epsilon_schedule``, warm-starting each stage.

    The first stage starts from the constant ``U = 2 s^2 eta / g^2``; the
    returned solution is the one at the last (target) epsilon.
    """
    stages: list[StageReport] = []
    previous = None
    total = 0
    sol = None
    for eps in cfg.epsilon_schedule:
        sol = solve_u_bvp(p, df.with_epsilon(eps), cfg, initial=previous)
        stages.append(sol.stages[0])
        total += sol.newton_iterations
        previous = np.array(sol.values)
    assert sol is not None
    return GridSolution(sol.grid, sol.values, sol.derivative_values, sol.second_derivative_values,
                        sol.residual_norm, total, cfg.target_epsilon, sol.tolerance_used, tuple(stages))


def solve_truncated_w(p: ModelParams, a: TransformAnchor, boundary_value: float, cfg: SolverConfig, *,
                      stencil: str = "exponential", quadratic: bool = True) -> TruncatedSolution:
    """Solve the Lasry-Lions equation with finite end values ``W(beta_+-) = boundary_value``."""
    R = float(boundary_value)
    if not np.isfinite(R):
        raise ValueError("boundary_value must be finite")
    a.check(p)
    grid = _grid_for(p, cfg)
    system = LasryLionsSystem(p, a, grid, stencil=stencil, quadratic=quadratic)
    guess = min(p.sigma**2 * float(np.mean(system.f_all)) / (2.0 * p.lam), R)
    w0 = np.full(grid.n, guess)
    w0[0] = R
    w0[-1] = R
    w, its, r, _ = _newton(w0, system, cfg, stage=None)
    w.flags.writeable = False
    return TruncatedSolution(grid, R, w, r, its)
