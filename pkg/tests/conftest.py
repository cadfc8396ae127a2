import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cmba import dynlearn, netcore  # noqa: E402
from cmba.swarmsim import EnvSpec  # noqa: E402

QUICK_TRAIN = netcore.TrainConfig(epochs=10, lr_grid=(1e-3,), batch_size=128)


@pytest.fixture(scope="session")
def model4():
    """A small but usable dynamics model for the default 4-agent swarm."""
    data = dynlearn.collect_transitions(EnvSpec(), "mixed", 30000, 0)
    return dynlearn.train_dynamics(data, QUICK_TRAIN, hidden=(128, 128))


@pytest.fixture(scope="session")
def model2():
    data = dynlearn.collect_transitions(EnvSpec(n_agents=2), "mixed", 10000, 1)
    return dynlearn.train_dynamics(data, QUICK_TRAIN, hidden=(64, 64))


def pytest_terminal_summary(terminalreporter):
    import acceptance_log
    if acceptance_log.LINES:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_log.LINES:
            terminalreporter.write_line(line)
