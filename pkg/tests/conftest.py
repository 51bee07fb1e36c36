import numpy as np
import pytest
from scipy.special import expit

from pswinfer.data import Dataset


def synthetic(seed: int, n: int = 200, p: int = 5, pz: float = 0.4, py: float = 0.35,
              effect: float = -0.3, ps_strength: float = 0.5) -> Dataset:
    """Confounded binary-outcome cohort with a logistic PS and outcome model."""
    g = np.random.default_rng(seed)
    x = g.standard_normal((n, p))
    if p >= 2:
        x[:, -1] = (x[:, -1] > 0).astype(float)
    lin = np.log(pz / (1 - pz)) + ps_strength * x @ np.linspace(1.0, -0.5, p)
    z = (g.random(n) < expit(lin)).astype(float)
    ly = np.log(py / (1 - py)) + effect * z + 0.4 * x @ np.linspace(-0.5, 1.0, p)
    y = (g.random(n) < expit(ly)).astype(float)
    # keep both arms and both outcomes present
    z[:2] = (1, 0)
    y[:2] = (1, 0)
    y[2:4] = (0, 1)
    return Dataset(y, z, x)


def case_study_like(seed: int, n: int = 743) -> Dataset:
    """About 10% treated and a control event rate near 34%, seven covariates."""
    return synthetic(seed, n=n, p=7, pz=0.08, py=0.34, effect=-0.5, ps_strength=0.6)


@pytest.fixture
def make_dataset():
    return synthetic


@pytest.fixture
def small_dataset():
    return synthetic(7, n=120, p=3)
