"""Run configuration: presets, flat ``key = value`` files and layered overrides.

Precedence, lowest first: built-in defaults, preset, config file, command-line
flags. Later layers replace earlier ones key by key and every replacement of
a preset value is logged. Setting ``lambda`` in a layer discards ``rho`` and
``theta`` from lower layers and vice versa.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

from .bvp import SolverConfig
from .model import DriftSpec, ModelParams
from .simulator import FINE_DT, SimConfig
from .transform import DISTANCE_KINDS, DistanceFn, TransformAnchor

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Invalid, missing or unknown configuration key."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


PRESETS: dict[str, dict[str, str]] = {
    "fig2": {
        "beta_minus": "0", "beta_plus": "1", "sigma": "0.25", "eta": "6", "gamma": "1",
        "lambda": "0.5", "drift": "-0.5,0,0.5", "x_start": "0.4",
    },
    "fig3": {
        "beta_minus": "0", "beta_plus": "1", "sigma": "0.4", "eta": "0.6", "gamma": "2",
        "lambda": "1", "drift": "-1,0,0,0,0,0,1", "x_start": "0.2",
    },
}

DEFAULTS: dict[str, str] = {
    "drift": "0",
    "distance": "quadratic",
    "grid_n": "2001",
    "solver_tolerance": "1e-9",
    "max_newton_iters": "50",
    "epsilon_schedule": "0.1,0.01,0.00176",
    "seed": "0",
    "record_stride": "1",
    "output_dir": "out",
}

MODEL_KEYS = ("beta_minus", "beta_plus", "sigma", "eta", "gamma", "lambda", "rho", "theta", "drift")
TRANSFORM_KEYS = ("distance", "anchor")
SOLVER_KEYS = ("grid_n", "solver_tolerance", "max_newton_iters", "epsilon_schedule")
SIM_KEYS = ("x_start", "horizon_T", "dt", "seed", "n_paths", "clamp_margin", "record_stride")
ALL_KEYS = MODEL_KEYS + TRANSFORM_KEYS + SOLVER_KEYS + SIM_KEYS + ("output_dir", "preset")
REQUIRED_MODEL_KEYS = ("beta_minus", "beta_plus", "sigma", "eta", "gamma")

# simulate draws plot paths at the fine step; evaluate estimates the cost
MODE_SIM_DEFAULTS = {
    "simulate": {"dt": FINE_DT, "n_paths": 1, "horizon_T": 1.0},
    "evaluate": {"dt": 1e-4, "n_paths": 200, "horizon_T": None},
}


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in ALL_KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}", key)
        out[key] = value
    return out


def load_config_file(path) -> dict[str, str]:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {p}: {exc.strerror}") from None
    return parse_config_text(text, str(p))


def _apply(merged: dict[str, str], layer: dict[str, str], name: str, from_preset: set[str]) -> None:
    if "lambda" in layer:
        for k in ("rho", "theta"):
            merged.pop(k, None)
    if "rho" in layer or "theta" in layer:
        merged.pop("lambda", None)
    for k, v in layer.items():
        if k in from_preset and merged.get(k) != v:
            log.info("%s overrides preset value %s = %s with %s", name, k, merged.get(k), v)
        merged[k] = v


def merge_layers(preset: str | None = None, file_values: dict[str, str] | None = None,
                 flag_values: dict[str, str] | None = None) -> dict[str, str]:
    file_values = dict(file_values or {})
    flag_values = dict(flag_values or {})
    preset = flag_values.pop("preset", None) or preset or file_values.pop("preset", None)
    file_values.pop("preset", None)
    merged = dict(DEFAULTS)
    from_preset: set[str] = set()
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r} (choose from {', '.join(PRESETS)})", "preset")
        _apply(merged, PRESETS[preset], "preset", set())
        from_preset = set(PRESETS[preset])
        merged["preset"] = preset
    _apply(merged, file_values, "config file", from_preset)
    _apply(merged, flag_values, "command line", from_preset)
    return merged


def _float(values, key):
    try:
        v = float(values[key])
    except KeyError:
        raise ConfigError(f"missing required key {key!r}", key) from None
    except ValueError:
        raise ConfigError(f"key {key!r}: not a number: {values[key]!r}", key) from None
    if not math.isfinite(v):
        raise ConfigError(f"key {key!r} must be finite", key)
    return v


def _int(values, key):
    try:
        return int(values[key])
    except KeyError:
        raise ConfigError(f"missing required key {key!r}", key) from None
    except ValueError:
        raise ConfigError(f"key {key!r}: not an integer: {values[key]!r}", key) from None


def _float_list(values, key):
    try:
        return tuple(float(s) for s in values[key].split(",") if s.strip())
    except ValueError:
        raise ConfigError(f"key {key!r}: expected comma-separated numbers, got {values[key]!r}", key) from None


@dataclass(frozen=True)
class RunConfig:
    params: ModelParams
    distance: DistanceFn
    anchor: TransformAnchor
    solver: SolverConfig
    values: dict
    preset: str | None
    output_dir: Path

    def sim_config(self, mode: str, **overrides) -> SimConfig:
        """Simulation settings; keys left unset take the defaults of ``mode``."""
        v = self.values
        defaults = MODE_SIM_DEFAULTS[mode]
        T = _float(v, "horizon_T") if "horizon_T" in v else defaults["horizon_T"]
        if T is None:
            T = 7.0 / self.params.lam  # tail factor exp(-7)
        kw = dict(
            x_start=_float(v, "x_start") if "x_start" in v else self.params.midpoint,
            horizon_T=T,
            dt=_float(v, "dt") if "dt" in v else defaults["dt"],
            seed=_int(v, "seed"),
            n_paths=_int(v, "n_paths") if "n_paths" in v else defaults["n_paths"],
            clamp_margin=_float(v, "clamp_margin") if "clamp_margin" in v else None,
            record_stride=_int(v, "record_stride"),
        )
        kw.update(overrides)
        try:
            return SimConfig(**kw).validate_for(self.params)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None


def build_run_config(values: dict[str, str]) -> RunConfig:
    for key in REQUIRED_MODEL_KEYS:
        if key not in values:
            raise ConfigError(f"missing required key {key!r} (set it or choose a preset)", key)
    if "lambda" not in values and "rho" not in values:
        raise ConfigError("missing required key 'lambda' (or 'rho' and 'theta')", "lambda")
    common = {k: _float(values, k) for k in REQUIRED_MODEL_KEYS}
    try:
        drift = DriftSpec(_float_list(values, "drift"))
        if "lambda" in values:
            params = ModelParams.with_lambda(lam=_float(values, "lambda"), drift=drift, **common)
        else:
            theta = _float(values, "theta") if "theta" in values else 0.0
            params = ModelParams(rho=_float(values, "rho"), theta=theta, drift=drift, **common)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    kind = values.get("distance", "quadratic")
    if kind not in DISTANCE_KINDS:
        raise ConfigError(f"key 'distance' must be one of {DISTANCE_KINDS}", "distance")
    try:
        solver = SolverConfig(
            tolerance=_float(values, "solver_tolerance"),
            max_newton_iters=_int(values, "max_newton_iters"),
            epsilon_schedule=_float_list(values, "epsilon_schedule"),
            grid_n=_int(values, "grid_n"),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"solver settings: {exc}") from None
    distance = DistanceFn.for_params(params, kind, solver.target_epsilon)
    anchor = TransformAnchor(_float(values, "anchor")) if "anchor" in values else TransformAnchor.midpoint(params)
    try:
        anchor.check(params)
    except ValueError as exc:
        raise ConfigError(str(exc), "anchor") from None
    return RunConfig(params, distance, anchor, solver, dict(values), values.get("preset"),
                     Path(values.get("output_dir", "out")))


def dump_config(values: dict[str, str]) -> str:
    """Effective configuration as ``key = value`` lines in a stable order."""
    lines = [f"{k} = {values[k]}" for k in ALL_KEYS if k in values]
    return "\n".join(lines) + "\n"
