import numpy as np
import pytest

from scorekf import NoiseModel

ALL_MODELS = {
    "gaussian": NoiseModel.gaussian(),
    "logistic": NoiseModel.logistic(),
    "student_t5": NoiseModel.student_t(5),
    "mixture": NoiseModel.symmetric_mixture(1.5, 0.6),
}


@pytest.fixture(params=list(ALL_MODELS), ids=list(ALL_MODELS))
def model(request):
    return ALL_MODELS[request.param]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance verdicts, printed once at the end of the session
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    def record(key: str, passed: bool, detail: str) -> bool:
        ACCEPTANCE[key] = (bool(passed), detail)
        print(f"criterion {key}: {'PASS' if passed else 'FAIL'} ({detail})")
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int("".join(c for c in k if c.isdigit())), k)):
        passed, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if passed else 'FAIL'}  {detail}")
