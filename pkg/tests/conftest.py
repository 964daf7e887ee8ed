import numpy as np
import pytest

from sbireduce import tasks


class LinearGaussian(tasks.Task):
    """x | theta ~ N(theta, 0.1^2), theta ~ N(0, 1); the posterior is Gaussian in closed form."""

    name = "linear_gaussian"
    dim_theta = 1
    dim_x = 1
    noise = 0.1

    def __init__(self):
        self.prior_mean = np.zeros(1)
        self.prior_cov = np.eye(1)
        self.theta_true = np.array([0.5])
        self.x_obs = np.array([0.5])

    def posterior_moments(self):
        prec = 1.0 + 1.0 / self.noise**2
        return self.x_obs / self.noise**2 / prec, np.sqrt(np.array([1.0 / prec]))

    def _simulate(self, theta, rng):
        return theta + self.noise * rng.standard_normal(theta.shape)

    def _reference(self, n, rng):
        m, s = self.posterior_moments()
        return m + s * rng.standard_normal((n, 1))


@pytest.fixture(scope="session")
def linear_gaussian():
    tasks.register_task(LinearGaussian)
    return tasks.get_task("linear_gaussian")


_ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def report():
    """Record one acceptance verdict; the terminal summary prints them in order."""

    def _report(criterion: int, ok: bool, detail: str) -> bool:
        _ACCEPTANCE[criterion] = (bool(ok), detail)
        print(f"criterion {criterion}: {'PASS' if ok else 'FAIL'} | {detail}")
        return ok

    return _report


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'} | {detail}")
