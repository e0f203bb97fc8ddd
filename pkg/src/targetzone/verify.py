"""Machine-checkable invariant suite.

Each check measures one property of a configured problem and returns
:class:`CheckResult` records (name, measured value, threshold, verdict).
"""

from __future__ import annotations

import dataclasses
import math
import time
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .bvp import GridSolution, SolverConfig, continuation_solve, solve_truncated_w
from .model import ModelParams, eval_drift
from .policy import PolicyFn, fit_blowup_rate, hamiltonian
from .simulator import FINE_DT, SimConfig, estimate_cost, near_barrier_stats, simulate_path
from .transform import (
    DistanceFn,
    TransformAnchor,
    f_eval,
    residual_ll,
    residual_reduced_hjb,
    u_from_v,
    v_from_u,
    v_from_w,
    w_derivatives_from_v,
    w_from_v,
)

SEEDS = tuple(range(10))


@dataclass(frozen=True)
class CheckResult:
    name: str
    measured: float
    threshold: float
    passed: bool
    detail: str = ""

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        extra = f"  ({self.detail})" if self.detail else ""
        return f"{self.name}: measured={self.measured:.6g} threshold={self.threshold:.6g} {verdict}{extra}"


@dataclass
class Context:
    """A configured problem plus lazily computed, shared artifacts."""

    params: ModelParams
    distance: DistanceFn
    anchor: TransformAnchor
    solver: SolverConfig = field(default_factory=SolverConfig)
    preset: str | None = None
    x_start: float | None = None
    tighten: float = 1.0
    solve_seconds: float = math.nan

    @cached_property
    def solution(self) -> GridSolution:
        t0 = time.perf_counter()
        sol = continuation_solve(self.params, self.distance, self.solver)
        self.solve_seconds = time.perf_counter() - t0
        return sol

    @cached_property
    def policy(self) -> PolicyFn:
        return PolicyFn(self.solution, self.distance, self.params)

    @property
    def start(self) -> float:
        return self.params.midpoint if self.x_start is None else self.x_start


def _interior_v(ctx: Context):
    s = ctx.solution
    x = s.grid.nodes[1:-1]
    return x, v_from_u(ctx.distance, x, s.values[1:-1])


def check_boundary(ctx: Context):
    s = ctx.solution
    c = ctx.params.blowup_coefficient
    err = max(abs(s.values[0] - c), abs(s.values[-1] - c))
    ok = err == 0.0 and ctx.solve_seconds < 1.0
    return [CheckResult("boundary", err, 0.0, ok,
                        f"U(ends)={s.values[0]!r}, 2s^2eta/g^2={c!r}, solve {ctx.solve_seconds:.3f}s < 1s")]


def check_hjb_residual(ctx: Context, band: float = 0.02):
    s = ctx.solution
    x, V, res = ctx.policy.node_hjb_residuals()
    p = ctx.params
    keep = (x >= p.beta_minus + band * p.width) & (x <= p.beta_plus - band * p.width)
    rel = np.abs(res[keep]) / (1.0 + np.abs(V[keep]))
    worst = int(np.argmax(rel))
    thr = 1e-3 / ctx.tighten
    ok = bool(rel[worst] <= thr) and ctx.solve_seconds < 10.0
    return [CheckResult("hjb_residual", float(rel[worst]), thr, ok,
                        f"worst at x={x[keep][worst]:.4f}, discrete residual {s.residual_norm:.2e}")]


def check_blowup(ctx: Context, eps_range=(1e-3, 1e-2)):
    out = []
    for side in ("lower", "upper"):
        coef, dev = fit_blowup_rate(ctx.policy, side, eps_range)
        out.append(CheckResult(f"blowup_{side}", dev, 0.05, dev <= 0.05,
                               f"ratio at smallest eps {coef:.5g}, target {ctx.params.blowup_coefficient:.5g}"))
    return out


def _random_smooth(rng: np.random.Generator, x):
    """Random ``V = a0 + a1 x + a2 x^2 + a3 sin(w x + phi)`` with exact derivatives at ``x``."""
    a = rng.normal(size=4)
    w = rng.uniform(0.5, 6.0)
    phi = rng.uniform(0, 2 * np.pi)
    s, c = np.sin(w * x + phi), np.cos(w * x + phi)
    V = a[0] + a[1] * x + a[2] * x * x + a[3] * s
    V1 = a[1] + 2 * a[2] * x + a[3] * w * c
    V2 = 2 * a[2] - a[3] * w * w * s
    return V, V1, V2


def check_transform(ctx: Context, n: int = 1000, seed: int = 20240611):
    """Residual proportionality and round trips over random smooth test functions.

    The proportionality error is measured relative to the largest single term
    of the scaled HJB expression, the natural magnitude of a residual.
    """
    rng = np.random.default_rng(seed)
    p, df, a = ctx.params, ctx.distance, ctx.anchor
    k = p.gamma**2 / (p.sigma**4 * p.eta)
    worst_prop = worst_vw = worst_uv = 0.0
    for _ in range(n):
        x = rng.uniform(p.beta_minus, p.beta_plus)
        if x in (p.beta_minus, p.beta_plus):
            continue
        V, V1, V2 = _random_smooth(rng, x)
        W = w_from_v(p, a, x, V)
        W1, W2 = w_derivatives_from_v(p, x, V1, V2)
        ll = residual_ll(p, x, W, W1, W2, f_eval(p, a, x))
        hjb = residual_reduced_hjb(p, x, V, V1, V2)
        b = eval_drift(p.drift, x)
        scale = k * max(abs(0.5 * p.sigma**2 * V2), abs(b * V1), abs(p.lam * V),
                        (p.gamma * V1 + 1) ** 2 / (4 * p.eta), 1e-300)
        worst_prop = max(worst_prop, abs(ll + k * hjb) / scale)
        worst_vw = max(worst_vw, abs(v_from_w(p, a, x, W) - V) / max(1.0, abs(V)))
        U = rng.uniform(0.01, 5.0)
        Vu = v_from_u(df, x, U)
        if abs(Vu / U) > 1e-3:  # keep away from d(x) = 1 where U is undefined
            worst_uv = max(worst_uv, abs(u_from_v(df, x, Vu) - U) / max(1.0, abs(U)))
    t1, t2 = 1e-10 / ctx.tighten, 1e-13 / ctx.tighten
    return [
        CheckResult("transform_proportionality", worst_prop, t1, worst_prop <= t1),
        CheckResult("transform_roundtrip_vw", worst_vw, t2, worst_vw <= t2),
        CheckResult("transform_roundtrip_uv", worst_uv, t2, worst_uv <= t2),
    ]


def check_truncation(ctx: Context, boundary_values=(4.0, 8.0, 16.0), middle: float = 0.8):
    p = ctx.params
    sols = [solve_truncated_w(p, ctx.anchor, R, ctx.solver) for R in boundary_values]
    tol = ctx.solver.tolerance
    mono = max(float(np.max(lo.values - hi.values)) for lo, hi in zip(sols, sols[1:]))
    x, V = _interior_v(ctx)
    W_u = w_from_v(p, ctx.anchor, x, V)
    lo_x = p.beta_minus + 0.5 * (1 - middle) * p.width
    hi_x = p.beta_plus - 0.5 * (1 - middle) * p.width
    keep = (x >= lo_x) & (x <= hi_x)
    gaps = [float(np.max(s.values[1:-1][keep] - W_u[keep])) for s in sols]
    upper = max(gaps)
    mid = int(np.argmin(np.abs(x - p.midpoint)))
    detail = ", ".join(f"W_{R:g}(mid)={s.values[1:-1][mid]:.5g}" for R, s in zip(boundary_values, sols))
    return [
        CheckResult("truncation_monotone", mono, tol, mono <= tol, detail),
        CheckResult("truncation_upper_bound", upper, tol, upper <= tol,
                    f"W from U-solution at mid {W_u[mid]:.5g}; max W_R - W_U per R: "
                    + ", ".join(f"{g:.3g}" for g in gaps)),
    ]


def check_lower_bound(ctx: Context):
    _, V = _interior_v(ctx)
    bound = -1.0 / (4 * ctx.params.eta * ctx.params.lam)
    m = float(np.min(V))
    return [CheckResult("lower_bound", m, bound - 1e-6, m >= bound - 1e-6, f"bound -1/(4 eta lam) = {bound:.6g}")]


def check_minimizer(ctx: Context, n: int = 1000, seed: int = 7):
    rng = np.random.default_rng(seed)
    p = ctx.params
    x, V, V1, V2 = ctx.policy.node_derivatives()
    idx = rng.integers(0, x.size, n)
    xs, Vs, V1s, V2s = x[idx], V[idx], V1[idx], V2[idx]
    uh = -(p.gamma * V1s + 1) / (2 * p.eta)
    ur = uh + rng.normal(size=n) * 10 * (1 + np.abs(uh))
    h_hat = hamiltonian(p, xs, uh, Vs, V1s, V2s)
    gap = float(np.max(h_hat - hamiltonian(p, xs, ur, Vs, V1s, V2s)))
    b = eval_drift(p.drift, xs)
    scale = np.maximum.reduce([np.ones(n), np.abs(V1s * b), np.abs(0.5 * p.sigma**2 * V2s), np.abs(p.lam * Vs),
                               (p.gamma * V1s + 1) ** 2 / (4 * p.eta)])
    eq = float(np.max(np.abs(h_hat - residual_reduced_hjb(p, xs, Vs, V1s, V2s)) / scale))
    t1, t2 = 1e-9 / ctx.tighten, 1e-12 / ctx.tighten
    return [
        CheckResult("minimizer", gap, t1, gap <= t1, "max H(u_hat) - H(u_random)"),
        CheckResult("minimizer_reduction", eq, t2, eq <= t2, "|H(u_hat) - reduced residual| / (1 + largest term)"),
    ]


def check_monte_carlo(ctx: Context, n_paths: int = 200, dt: float = 1e-4, lam_T: float = 7.0, seed: int = 0):
    p = ctx.params
    cfg = SimConfig(x_start=ctx.start, horizon_T=lam_T / p.lam, dt=dt, seed=seed, n_paths=n_paths)
    est = estimate_cost(p, ctx.policy, cfg)
    v = ctx.policy.value_at(ctx.start)
    err = abs(est.mean - v)
    thr = max(3 * est.stderr, 0.05 * abs(v) + 0.01)
    return [CheckResult("monte_carlo", err, thr, err <= thr,
                        f"J={est.mean:.5g}+-{est.stderr:.3g}, V({ctx.start:g})={v:.5g}, clamps={est.clamp_events}")]


def fine_step_paths(ctx: Context, seeds=SEEDS):
    return [simulate_path(ctx.params, ctx.policy, SimConfig(x_start=ctx.start, horizon_T=1.0, dt=FINE_DT, seed=s))
            for s in seeds]


def check_containment(ctx: Context, seeds=SEEDS, records=None):
    p = ctx.params
    recs = records if records is not None else fine_step_paths(ctx, seeds)
    clamps = sum(r.clamp_events for r in recs)
    outside = sum(int(not (p.beta_minus < r.min_x and r.max_x < p.beta_plus)) + int(r.exited) for r in recs)
    bad = clamps + outside
    return [CheckResult("containment", float(bad), 0.0, bad == 0,
                        f"{clamps} clamp events in {sum(1 for r in recs if r.clamp_events)} of {len(recs)} paths")]


def check_qualitative(ctx: Context, seeds=SEEDS, records=None, band: float = 0.05, need: int = 8):
    """Regime proxies for the two presets; not applicable to other parameter sets."""
    p = ctx.params
    if ctx.preset not in ("fig2", "fig3"):
        return []
    recs = records if records is not None else fine_step_paths(ctx, seeds)
    if ctx.preset == "fig2":
        good = sum((r.min_x - p.beta_minus > band) and (p.beta_plus - r.max_x > band) for r in recs)
        return [CheckResult("qualitative_fig2", float(good), float(need), good >= need,
                            f"paths keeping > {band} from both barriers")]
    stats = [near_barrier_stats(r, p, band) for r in recs]
    good = sum(frac >= 0.05 and nondec for frac, nondec in stats)
    detail = "near-barrier fraction / inventory non-decreasing: " + ", ".join(
        f"{f:.3f}/{'y' if nd else 'n'}" for f, nd in stats)
    return [CheckResult("qualitative_fig3", float(good), float(need), good >= need, detail)]


def check_convergence(ctx: Context, sizes=(501, 1001, 2001)):
    sols = [continuation_solve(ctx.params, ctx.distance, dataclasses.replace(ctx.solver, grid_n=n)) for n in sizes]
    errs = []
    for coarse, fine in zip(sols, sols[1:]):
        step = (fine.grid.n - 1) // (coarse.grid.n - 1)
        errs.append(float(np.max(np.abs(fine.values[::step] - coarse.values))))
    orders = [math.log2(e0 / e1) for e0, e1 in zip(errs, errs[1:])]
    worst = min(orders, key=lambda o: abs(o - 2.0))
    ok = all(1.6 <= o <= 2.4 for o in orders)
    return [CheckResult("convergence_order", worst, 2.0, ok,
                        "orders " + ", ".join(f"{o:.3f}" for o in orders) + " must lie in [1.6, 2.4]")]


CHECKS = {
    "boundary": check_boundary,
    "hjb_residual": check_hjb_residual,
    "blowup": check_blowup,
    "transform": check_transform,
    "truncation": check_truncation,
    "lower_bound": check_lower_bound,
    "minimizer": check_minimizer,
    "monte_carlo": check_monte_carlo,
    "containment": check_containment,
    "qualitative": check_qualitative,
    "convergence": check_convergence,
}


def run_checks(ctx: Context, names=None) -> list[CheckResult]:
    names = list(CHECKS) if not names else list(names)
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise KeyError(f"unknown check(s): {', '.join(unknown)}; available: {', '.join(CHECKS)}")
    records = None
    out: list[CheckResult] = []
    for name in names:
        if name in ("containment", "qualitative"):
            if records is None:
                records = fine_step_paths(ctx)
            out.extend(CHECKS[name](ctx, records=records))
        else:
            out.extend(CHECKS[name](ctx))
    return out


def preset_context(preset: str, solver: SolverConfig | None = None) -> Context:
    from .config import PRESETS, build_run_config, merge_layers

    rc = build_run_config(merge_layers(preset))
    return Context(rc.params, rc.distance, rc.anchor, solver or rc.solver, preset, float(PRESETS[preset]["x_start"]))


__all__ = ["CHECKS", "CheckResult", "Context", "preset_context", "run_checks"]
