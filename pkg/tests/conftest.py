import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "repo", deadline=None, max_examples=30, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("repo")


def random_state(rng, n_qubits, batch=None):
    shape = (1 << n_qubits,) if batch is None else (batch, 1 << n_qubits)
    psi = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    return psi / np.linalg.norm(psi, axis=-1, keepdims=True)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    module = __import__("sys").modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in module.summary_lines():
        terminalreporter.write_line(line)
