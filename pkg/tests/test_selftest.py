from stcguide.models.problem import ProblemConfig
from stcguide.services.ocp import LandingProblem
from stcguide.services.selftest import gradient_suite


def test_gradient_suite_passes_on_the_default_vehicle():
    suite = gradient_suite(LandingProblem.from_config(ProblemConfig()), seed=0, points=3)
    assert suite.cases == 3
    assert suite.passed, suite.failures


def test_injected_jacobian_fault_is_reported_by_entry():
    suite = gradient_suite(LandingProblem.from_config(ProblemConfig()), seed=0, points=2, inject_fault=True)
    assert not suite.passed
    assert all("dynamics A[4,0]" in failure for failure in suite.failures)
    assert all(failure.startswith("seed ") for failure in suite.failures)
