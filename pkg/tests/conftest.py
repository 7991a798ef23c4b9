import numpy as np
import pytest

from fairneg.dataset import GroupMap, InteractionTable, SyntheticSpec, split, synthesize


@pytest.fixture
def toy_table():
    # 3 users x 5 items
    pairs = [(0, 0), (0, 2), (1, 1), (1, 2), (1, 4), (2, 3)]
    return InteractionTable.from_pairs(pairs, 3, 5)


@pytest.fixture
def toy_groups():
    return GroupMap(np.array([0, 0, 1, 1, 1]), ("a", "b"))


@pytest.fixture(scope="session")
def small_data():
    spec = SyntheticSpec(num_users=60, num_items=40, density=0.15, item_share=(0.5, 0.5),
                         feedback_share=(0.8, 0.2), seed=3)
    table, groups = synthesize(spec)
    return split(table, 0), groups, table


# acceptance lines are collected here and echoed once at the end of the session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
