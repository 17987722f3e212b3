"""Shared fixtures, plus the session-wide MetricsReport recorder behind the
acceptance summary printed at the end of every run."""

from __future__ import annotations

import pytest

from alphafair.evaluation import REPORT_HOOKS

# Every MetricsReport built anywhere in the session (in-process) lands here.
EMITTED_REPORTS: list = []
ACCEPTANCE_LINES: dict[str, str] = {}

REPORT_HOOKS.append(EMITTED_REPORTS.append)


def pytest_configure(config):
    config.addinivalue_line("markers", "run_last: run after every other test in the session")


def pytest_collection_modifyitems(session, config, items):
    items.sort(key=lambda item: item.get_closest_marker("run_last") is not None)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES, key=lambda k: int(k[1:])):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


@pytest.fixture
def acceptance():
    """Record (and print) the one-line verdict for an acceptance criterion."""

    def record(cid: str, ok: bool, detail: str) -> None:
        line = f"{cid} {'PASS' if ok else 'FAIL'} {detail}"
        ACCEPTANCE_LINES[cid] = line
        print(line)

    return record


@pytest.fixture
def emitted_reports():
    return EMITTED_REPORTS


@pytest.fixture
def dead_unit_mlp():
    """One-hidden-unit MLP where some samples sit on the dead side of the ReLU.

    Dead samples (x = -1) have loss ln 2 but a gradient only through the
    output bias; live, correctly classified samples (x = 4, y = 1) have a
    smaller loss but a larger gradient. The last sample (x = 4, y = 0) is
    misclassified and has the largest loss.
    """
    import numpy as np

    from alphafair.model import Layout, Model

    lay = Layout(n_features=1, n_classes=2, hidden=1)
    # W1, b1, W2 (1 x 2), b2
    model = Model(np.array([1.0, 0.0, -0.1, 0.1, 0.0, 0.0]), lay)
    x = np.array([[-1.0], [-1.0], [4.0], [4.0], [4.0], [4.0]])
    y = np.array([1, 1, 1, 1, 1, 0])
    return model, x, y
