import numpy as np
import pytest
import torch


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)


ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Criterion number -> (passed, detail); printed in the terminal summary."""
    return request.config.stash.setdefault(ACCEPTANCE, {})


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    log = config.stash.get(ACCEPTANCE, {})
    if not log:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(log):
        ok, detail = log[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
