from pathlib import Path

import numpy as np
import pytest

from cpabaug.basis import build_basis
from cpabaug.dataset_io import read_dataset
from cpabaug.prior import build_prior

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def basis():
    return build_basis(4, 4)


@pytest.fixture(scope="session")
def prior(basis):
    return build_prior(basis)


@pytest.fixture(scope="session")
def mnist():
    """10,000 real MNIST digits (see scripts/build_mnist_subset.py)."""
    return read_dataset(DATA / "mnist-subset-images-idx3-ubyte", DATA / "mnist-subset-labels-idx1-ubyte")


def prior_direction(prior, rng, n_sd):
    """A prior-shaped ``theta`` whose Mahalanobis length is exactly ``n_sd``."""
    z = rng.standard_normal(prior.d)
    return prior.factor @ (z / np.linalg.norm(z)) * n_sd


ACCEPTANCE_LINES = []


def acceptance_line(criterion, ok, detail):
    """Record and print one pass/fail line for an acceptance criterion."""
    line = f"[criterion {criterion}] {'PASS' if ok else 'FAIL'}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
