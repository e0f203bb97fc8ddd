"""Euler-Maruyama simulation of the controlled exchange rate and Monte Carlo cost estimates."""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .model import ModelParams, eval_drift
from .policy import PolicyFn

PATH_HEADER = "t,x,u,inventory,cost"
COST_HEADER = "mean,stderr,n_paths,T,dt,tail_bound,V_at_start"
FINE_DT = 1.6e-6


@dataclass(frozen=True)
class SimConfig:
    """Simulation settings.

    ``clamp_margin=None`` selects ``1e-4`` times the interval width. The last
    three fields are test hooks: ``force_control`` replaces the feedback
    control by a constant, ``sigma_override`` replaces the volatility, and
    ``enforce_band=False`` removes the barriers altogether.
    """

    x_start: float
    horizon_T: float = 1.0
    dt: float = FINE_DT
    seed: int = 0
    n_paths: int = 1
    clamp_margin: float | None = None
    record_stride: int = 1
    force_control: float | None = None
    sigma_override: float | None = None
    enforce_band: bool = True

    def __post_init__(self):
        if not self.horizon_T > 0:
            raise ValueError("horizon_T must be positive")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.dt > self.horizon_T:
            raise ValueError("dt must not exceed horizon_T")
        if not 0 <= int(self.seed) < 2**64 or int(self.seed) != self.seed:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if int(self.n_paths) < 1:
            raise ValueError("n_paths must be >= 1")
        if int(self.record_stride) < 1:
            raise ValueError("record_stride must be >= 1")
        if self.clamp_margin is not None and not self.clamp_margin >= 0:
            raise ValueError("clamp_margin must be non-negative")
        if self.sigma_override is not None and not self.sigma_override >= 0:
            raise ValueError("sigma_override must be non-negative")

    @property
    def n_steps(self) -> int:
        # guard against T/dt landing a hair above an integer
        return max(1, math.ceil(round(self.horizon_T / self.dt, 9)))

    def margin_for(self, p: ModelParams) -> float:
        return 1e-4 * p.width if self.clamp_margin is None else float(self.clamp_margin)

    def validate_for(self, p: ModelParams) -> "SimConfig":
        m = self.margin_for(p)
        if self.enforce_band and not p.beta_minus + m < self.x_start < p.beta_plus - m:
            raise ValueError(f"x_start={self.x_start} must lie strictly inside the clamp band "
                             f"({p.beta_minus + m}, {p.beta_plus - m})")
        if 2 * m >= p.width:
            raise ValueError("clamp_margin leaves no room inside the interval")
        return self


@dataclass(frozen=True, eq=False)
class PathRecord:
    path_index: int
    times: np.ndarray
    x: np.ndarray
    u: np.ndarray
    inventory: np.ndarray
    cost: np.ndarray
    clamp_events: int
    exited: bool
    min_x: float
    max_x: float
    steps: int

    @property
    def final_cost(self) -> float:
        return float(self.cost[-1])


@dataclass(frozen=True, eq=False)
class CostEstimate:
    mean: float
    stderr: float
    n_paths: int
    horizon_T: float
    dt: float
    tail_bound: float
    path_costs: np.ndarray = field(repr=False)
    clamp_events: int = 0


@dataclass(frozen=True)
class BreachSummary:
    total_clamp_events: int
    total_steps: int
    clamp_fraction: float
    min_distance_lower: tuple[float, ...]
    min_distance_upper: tuple[float, ...]
    exited_paths: int


def rng_for(seed: int, path_index: int) -> np.random.Generator:
    """Counter-based stream for path ``path_index``, independent of any other path."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=(int(path_index),))))


def euler_step(p: ModelParams, pf: PolicyFn | None, x: float, dt: float, dB: float, *,
               margin: float = 0.0, force_control: float | None = None, sigma: float | None = None):
    """One Euler-Maruyama step; returns ``(x_next, u_used, clamped)``.

    A proposal outside ``(beta_- + margin, beta_+ - margin)`` is replaced by
    the nearest band edge and flagged.
    """
    u = float(force_control) if force_control is not None else float(pf.control_at(x))
    s = p.sigma if sigma is None else sigma
    xp = x + (eval_drift(p.drift, x) + p.gamma * u) * dt + s * dB
    lo, hi = p.beta_minus + margin, p.beta_plus - margin
    if lo < xp < hi:
        return xp, u, False
    return (lo if xp <= lo else hi), u, True


def _policy_arrays(pf: PolicyFn | None, cfg: SimConfig):
    if pf is None:
        if cfg.force_control is None:
            raise ValueError("a policy is required unless force_control is set")
        nodes, U, dU = _kernels.empty_policy_arrays()
        return nodes, U, dU, 0
    s = pf.solution
    return (np.ascontiguousarray(s.grid.nodes), np.ascontiguousarray(s.values),
            np.ascontiguousarray(s.derivative_values), _kernels.KIND_CODES[pf.distance.kind])


def simulate_path(p: ModelParams, pf: PolicyFn | None, cfg: SimConfig, path_index: int = 0) -> PathRecord:
    """Simulate one path over ``ceil(T/dt)`` steps, recording every ``record_stride``-th
    step plus the final state."""
    cfg.validate_for(p)
    n = cfg.n_steps
    stride = int(cfg.record_stride)
    dB = rng_for(cfg.seed, path_index).standard_normal(n) * math.sqrt(cfg.dt)
    rows = -(-n // stride) + 1
    out = [np.empty(rows) for _ in range(5)]
    nodes, U, dU, kind = _policy_arrays(pf, cfg)
    sigma = p.sigma if cfg.sigma_override is None else float(cfg.sigma_override)
    used, clamps, exited, mn, mx, steps = _kernels.simulate(
        float(cfg.x_start), dB, float(cfg.dt), p.beta_minus, p.beta_plus, cfg.margin_for(p),
        bool(cfg.enforce_band), np.asarray(p.drift.coefficients), sigma, p.gamma, p.eta, p.lam,
        cfg.force_control is not None, 0.0 if cfg.force_control is None else float(cfg.force_control),
        nodes, U, dU, kind, stride, *out)
    t, x, u, inv, cost = (a[:used] for a in out)
    return PathRecord(int(path_index), t, x, u, inv, cost, int(clamps), bool(exited), float(mn), float(mx),
                      int(steps))


def _final_cost(p, pf, cfg, i):
    rec = simulate_path(p, pf, cfg, i)
    return rec.final_cost, rec.clamp_events


def estimate_cost(p: ModelParams, pf: PolicyFn | None, cfg: SimConfig, workers: int | None = None) -> CostEstimate:
    """Monte Carlo mean and standard error of the discounted cost truncated at ``horizon_T``.

    Paths run on a thread pool (the compiled loop releases the GIL); results
    are stored by path index, so the estimate does not depend on scheduling.
    """
    n = int(cfg.n_paths)
    if n < 2:
        raise ValueError("n_paths must be ≥ 2 for stderr")
    cfg.validate_for(p)
    costs = np.empty(n)
    clamps = np.zeros(n, dtype=np.int64)
    workers = workers or os.cpu_count() or 1
    if workers == 1:
        for i in range(n):
            costs[i], clamps[i] = _final_cost(p, pf, cfg, i)
    else:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            for i, (c, k) in enumerate(ex.map(lambda i: _final_cost(p, pf, cfg, i), range(n))):
                costs[i], clamps[i] = c, k
    mean = float(np.mean(costs))
    stderr = float(np.std(costs, ddof=1) / math.sqrt(n))
    tail = math.exp(-p.lam * cfg.horizon_T) / (4.0 * p.eta * p.lam)
    return CostEstimate(mean, stderr, n, float(cfg.horizon_T), float(cfg.dt), tail, costs, int(clamps.sum()))


def breach_stats(p: ModelParams, records) -> BreachSummary:
    records = list(records)
    if not records:
        raise ValueError("breach_stats needs at least one path")
    total = sum(r.clamp_events for r in records)
    steps = sum(r.steps for r in records)
    return BreachSummary(
        int(total), int(steps), total / steps if steps else 0.0,
        tuple(r.min_x - p.beta_minus for r in records),
        tuple(p.beta_plus - r.max_x for r in records),
        sum(r.exited for r in records),
    )


def near_barrier_stats(rec: PathRecord, p: ModelParams, band: float = 0.05):
    """Time fraction within ``band`` of ``beta_-`` and whether inventory never
    decreases over steps started there. Needs ``record_stride == 1``."""
    if rec.times.size > 1 and rec.steps + 1 != rec.times.size:
        raise ValueError("near-barrier statistics need an unthinned path (record_stride = 1)")
    near = rec.x[:-1] < p.beta_minus + band
    frac = float(np.mean(near)) if near.size else 0.0
    dinv = np.diff(rec.inventory)
    non_decreasing = bool(np.all(dinv[near] >= 0.0))
    return frac, non_decreasing


def write_path_csv(rec: PathRecord, path) -> Path:
    path = Path(path)
    cols = np.column_stack([rec.times, rec.x, rec.u, rec.inventory, rec.cost])
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(PATH_HEADER + "\n")
        np.savetxt(fh, cols, fmt="%.17g", delimiter=",")
    return path


def write_breach_csv(summary: BreachSummary, records, path) -> Path:
    path = Path(path)
    lines = ["path_index,clamp_events,exited,min_dist_lower,min_dist_upper,steps"]
    for r, dl, du in zip(records, summary.min_distance_lower, summary.min_distance_upper):
        lines.append(f"{r.path_index},{r.clamp_events},{int(r.exited)},{dl:.17g},{du:.17g},{r.steps}")
    lines.append(f"total,{summary.total_clamp_events},{summary.exited_paths},,,{summary.total_steps}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
    return path


def format_cost_line(est: CostEstimate, v_at_start: float) -> str:
    vals = (est.mean, est.stderr, est.n_paths, est.horizon_T, est.dt, est.tail_bound, v_at_start)
    return ",".join("%d" % v if isinstance(v, int) else "%.17g" % v for v in vals)
