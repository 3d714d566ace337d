"""Shared model instances used across the test modules."""

from pathlib import Path

import numpy as np
import pytest

from perfmix import Dataset, DPMixtureSpec, FiniteMixtureSpec
from perfmix.io import read_dataset

ROOT = Path(__file__).resolve().parents[1]
DATA = ROOT / "data"
CONFIGS = ROOT / "configs"


def two_component_spec():
    """Two known-variance components with weight-0.8 data, means boxed."""
    return FiniteMixtureSpec(p=2, xi=[2.5, 3.5], tau=[0.9, 0.8], gamma=[1.0, 1.0],
                             mu_bounds=[(0.2, 4.12), (1.0, 5.2)], lambda_known=[1 / 0.9, 1 / 0.5])


def dp_toy_spec():
    """Two slots, shared precision 20, fixed concentration 1."""
    return DPMixtureSpec(M=2, mu0=1.98, psi=2.33, alpha=1.0, mu_bounds=(0.45, 3.7), lambda_known=20.0)


def galaxy_spec():
    return DPMixtureSpec(M=5, eta=4.0, zeta=1.0, mu0=20.0, psi=33.3, alpha_prior=(10.0, 0.5),
                         alpha_bounds=(0.08, 100.0), mu_bounds=(9.5, 34.5), lambda_bounds=(0.01, 20.0))


@pytest.fixture(scope="session")
def two_component():
    return read_dataset(DATA / "two_component.txt"), two_component_spec()


@pytest.fixture(scope="session")
def dp_toy():
    return read_dataset(DATA / "dp_toy.txt"), dp_toy_spec()


@pytest.fixture(scope="session")
def galaxy():
    return read_dataset(DATA / "galaxy.txt"), galaxy_spec()


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


def small_dataset(values):
    return Dataset(np.asarray(values, dtype=float))


ACCEPTANCE_LINES = []


def report_acceptance(number, title, passed, detail):
    """Record and print one acceptance verdict line."""
    line = f"ACCEPTANCE {number} {title}: {'PASS' if passed else 'FAIL'} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
