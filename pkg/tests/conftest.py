import numpy as np
import pytest

from roughkit.gaussian_paths import lift_path, lift_values, sample_fbm


@pytest.fixture(scope="session")
def grid64():
    return np.linspace(0.0, 1.0, 65)


@pytest.fixture(scope="session")
def fbm_lift(grid64):
    """A fixed H = 0.4 sample in d = 2 lifted to level 3."""
    return lift_path(sample_fbm(0.4, grid64, 2, seed=11), 3)


def linear_lift(times, v, N):
    v = np.atleast_1d(np.asarray(v, dtype=float))
    return lift_values(times, np.outer(times - times[0], v), N)
