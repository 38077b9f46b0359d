import logging

import numpy as np
import pytest

from plmatch.dataset import PartialLabelDataset

# tiny classes in glass trigger the expected stratification warning
logging.getLogger("plmatch.evaluation").setLevel(logging.ERROR)


def random_dataset(rng: np.random.Generator, m: int, q: int, max_size: int, d: int = 3) -> PartialLabelDataset:
    """Random features with random candidate sets that always contain the truth."""
    truth = rng.integers(0, q, size=m)
    cands = []
    for y in truth:
        size = int(rng.integers(1, min(max_size, q) + 1))
        others = rng.choice([lab for lab in range(q) if lab != y], size=size - 1, replace=False)
        cands.append(tuple(sorted([int(y), *map(int, others)])))
    x = rng.standard_normal((m, d))
    return PartialLabelDataset(x, tuple(cands), q, truth)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance criteria register their verdicts here for the terminal summary
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
