"""Acceptance gate: one test per criterion.

Every test prints one line per measured quantity (name, measured value,
threshold, PASS/FAIL) and then asserts that all of them passed. The lines are
repeated in the pytest terminal summary.
"""

import pytest

from conftest import ACCEPTANCE_LINES
from targetzone.verify import (
    fine_step_paths,
    check_blowup,
    check_boundary,
    check_containment,
    check_convergence,
    check_hjb_residual,
    check_lower_bound,
    check_minimizer,
    check_monte_carlo,
    check_qualitative,
    check_transform,
    check_truncation,
    preset_context,
)

PRESETS = ("fig2", "fig3")


@pytest.fixture(scope="module")
def contexts():
    return {name: preset_context(name) for name in PRESETS}


@pytest.fixture(scope="module")
def fine_records(contexts):
    return {name: fine_step_paths(ctx) for name, ctx in contexts.items()}


def report(criterion: str, results):
    assert results, "no measurement produced"
    for r in results:
        line = f"[{criterion}] {r.line()}"
        print(line)
        ACCEPTANCE_LINES.append(line)
    failed = [r.name for r in results if not r.passed]
    assert not failed, f"{criterion}: failed {', '.join(failed)}"


def tagged(name, results):
    return [type(r)(f"{name}/{r.name}", r.measured, r.threshold, r.passed, r.detail) for r in results]


def test_boundary_condition(contexts):
    results = []
    for name, expected in (("fig2", 0.75), ("fig3", 0.048)):
        ctx = contexts[name]
        results += tagged(name, check_boundary(ctx))
        got = ctx.solution.values[0]
        err = abs(got - expected) / expected
        results.append(type(results[0])(f"{name}/boundary_arithmetic", err, 1e-15, err <= 1e-15,
                                        f"U(beta-)={got!r} vs {expected}"))
    report("boundary", results)


def test_hjb_residual(contexts):
    report("hjb-residual", [r for n in PRESETS for r in tagged(n, check_hjb_residual(contexts[n]))])


def test_blowup_rate(contexts):
    report("blowup-rate", [r for n in PRESETS for r in tagged(n, check_blowup(contexts[n]))])


def test_transform_consistency(contexts):
    report("transform", [r for n in PRESETS for r in tagged(n, check_transform(contexts[n]))])


def test_truncation_monotonicity(contexts):
    report("truncation", [r for n in PRESETS for r in tagged(n, check_truncation(contexts[n]))])


def test_value_lower_bound(contexts):
    results = [r for n in PRESETS for r in tagged(n, check_lower_bound(contexts[n]))]
    assert results[0].threshold == pytest.approx(-1 / 12 - 1e-6)
    report("lower-bound", results)


def test_minimizer_property(contexts):
    report("minimizer", [r for n in PRESETS for r in tagged(n, check_minimizer(contexts[n]))])


def test_monte_carlo_optimality(contexts):
    report("monte-carlo", tagged("fig2", check_monte_carlo(contexts["fig2"], n_paths=200, dt=1e-4, lam_T=7.0)))


def test_containment(contexts, fine_records):
    report("containment", [r for n in PRESETS
                  for r in tagged(n, check_containment(contexts[n], records=fine_records[n]))])


def test_qualitative_regimes(contexts, fine_records):
    report("regimes", [r for n in PRESETS
                   for r in tagged(n, check_qualitative(contexts[n], records=fine_records[n]))])


def test_grid_self_convergence(contexts):
    report("convergence", [r for n in PRESETS for r in tagged(n, check_convergence(contexts[n]))])
