import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from andft.data_synth import DatasetSpec, generate_dataset  # noqa: E402


@pytest.fixture(scope="session")
def small_dataset():
    return generate_dataset(DatasetSpec(M_train=600, M_test=300, seed=3))


ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def record_criterion(request):
    """Store a one-line PASS/FAIL verdict that the terminal summary prints."""
    store = request.config.stash.setdefault(ACCEPTANCE, {})

    def record(number: int, passed: bool, detail: str) -> None:
        store[number] = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"

    return record


def pytest_terminal_summary(terminalreporter, config):
    store = config.stash.get(ACCEPTANCE, {})
    if store:
        terminalreporter.section("acceptance")
        for number in sorted(store):
            terminalreporter.write_line(store[number])
