import numpy as np
import pytest

from app.dataset import validate_and_sort
from app.models import DesignMode, Hyperparameters, Subject

# Small precision on both coefficients: a vague base measure
VAGUE = Hyperparameters(C=((1e-3, 0.0), (0.0, 1e-1)))


def build_dataset(r, x=None, y=None, t=None, cutoff=0.0, mode=DesignMode.SHARP):
    n = len(r)
    x = np.zeros(n) if x is None else x
    y = np.zeros(n) if y is None else y
    subjects = [
        Subject(id=f"s{i}", r=float(r[i]), x=float(x[i]), y=float(y[i]), t=None if t is None else int(t[i]))
        for i in range(n)
    ]
    return validate_and_sort(subjects, cutoff, mode=mode)


@pytest.fixture
def make_dataset():
    return build_dataset


@pytest.fixture(scope="session")
def vague_hyper():
    return VAGUE


@pytest.fixture(scope="session")
def two_line_data():
    """n = 8: x jumps between the fourth and fifth subject"""
    rng = np.random.default_rng(7)
    r = np.linspace(-1.0, 1.0, 8)
    x = np.where(r < 0, 0.5 * r, 3.0 + 0.5 * r) + 0.05 * rng.standard_normal(8)
    y = (r >= 0).astype(float) + 0.3 * rng.standard_normal(8)
    return build_dataset(r, x=x, y=y)
