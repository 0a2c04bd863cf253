"""Shared fixtures for the simulator tests."""

import os
import tempfile

import numpy as np
import pytest

from functions.atomic_model import caesium, d1_line_table, d2_line_table
from functions.run_db import init_db
from functions.spectral import CombParams, FrequencyGrid, gaussian_comb_spectrum

TESTS_DIR = os.path.dirname(os.path.abspath(__file__))
PROJECT_ROOT = os.path.dirname(os.path.dirname(TESTS_DIR))
SCENARIO_DIR = os.path.join(PROJECT_ROOT, "scenarios")


def scenario_path(name: str) -> str:
    return os.path.join(SCENARIO_DIR, f"{name}.cfg")


@pytest.fixture
def cs():
    """Caesium at room temperature."""
    return caesium(294.0)


@pytest.fixture
def d2_table(cs):
    return d2_line_table(cs)


@pytest.fixture
def d1_table(cs):
    return d1_line_table(cs)


@pytest.fixture
def test_db():
    """Create a temporary run ledger."""
    fd, db_path = tempfile.mkstemp(suffix='.db')
    os.close(fd)

    conn = init_db(db_path)
    conn.close()

    yield db_path

    if os.path.exists(db_path):
        os.remove(db_path)


@pytest.fixture
def comb_spectrum():
    """Six-tooth Gaussian comb: 100 MHz spacing, 30 MHz teeth, d=0.8 on d0=0.15."""
    grid = FrequencyGrid.symmetric(0.0, 1e9, 20001)
    params = CombParams.build(100e6, 30e6, 0.8, 0.15, 6, first_tooth=-250e6)
    return gaussian_comb_spectrum(grid, params), params


def centred_comb(grid: FrequencyGrid, delta: float, finesse: float, d: float, m_teeth: int,
                 centre: float = 0.0, d0: float = 0.0):
    """Gaussian comb of ``m_teeth`` teeth centred on ``centre``."""
    first = centre - 0.5 * (m_teeth - 1) * delta
    params = CombParams.build(delta, delta / finesse, d, d0, m_teeth, first_tooth=first)
    return gaussian_comb_spectrum(grid, params)


def peak_in_window(trace, lo: float, hi: float):
    """(time, intensity) of the sample maximum of a trace inside [lo, hi]."""
    mask = (trace.times >= lo) & (trace.times <= hi)
    i = int(np.argmax(trace.intensity[mask]))
    return float(trace.times[mask][i]), float(trace.intensity[mask][i])
