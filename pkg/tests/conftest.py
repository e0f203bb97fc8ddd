import pytest

from targetzone.bvp import SolverConfig, continuation_solve
from targetzone.model import DriftSpec, ModelParams
from targetzone.policy import PolicyFn
from targetzone.transform import DistanceFn, TransformAnchor

ACCEPTANCE_LINES: list[str] = []


def fig2_params():
    return ModelParams.with_lambda(lam=0.5, beta_minus=0.0, beta_plus=1.0, sigma=0.25, eta=6.0, gamma=1.0,
                                   drift=DriftSpec((-0.5, 0.0, 0.5)))


def fig3_params():
    return ModelParams.with_lambda(lam=1.0, beta_minus=0.0, beta_plus=1.0, sigma=0.4, eta=0.6, gamma=2.0,
                                   drift=DriftSpec((-1.0, 0, 0, 0, 0, 0, 1.0)))


PRESET_PARAMS = {"fig2": fig2_params, "fig3": fig3_params}


@pytest.fixture(scope="session")
def fig2():
    return fig2_params()


@pytest.fixture(scope="session")
def fig3():
    return fig3_params()


def _policy(p):
    df = DistanceFn.for_params(p)
    return PolicyFn(continuation_solve(p, df, SolverConfig()), df, p)


@pytest.fixture(scope="session")
def fig2_policy(fig2):
    return _policy(fig2)


@pytest.fixture(scope="session")
def fig3_policy(fig3):
    return _policy(fig3)


@pytest.fixture(scope="session", params=["fig2", "fig3"])
def preset_policy(request, fig2_policy, fig3_policy):
    return {"fig2": fig2_policy, "fig3": fig3_policy}[request.param]


@pytest.fixture
def anchor_mid():
    return TransformAnchor(0.5)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
