"""Shared builders for randomized model scenarios."""

import numpy as np
import pytest

from sailr import CoefficientTable, Grid, ModelParams


def random_params(rng, t_max=50.0, varying=False, xi_zero=False):
    """A valid parameter draw with moderate rates (k1, k2 bounded away from 0)."""
    def table(lo, hi):
        if varying and rng.random() < 0.5:
            n = rng.integers(2, 5)
            knots = np.sort(rng.uniform(0.0, t_max, n))
            knots[0] = 0.0
            knots[-1] = t_max
            return CoefficientTable(knots, rng.uniform(lo, hi, n))
        return CoefficientTable.constant(rng.uniform(lo, hi))

    return ModelParams(
        sigma=rng.uniform(0.05, 0.5),
        mu_A=rng.uniform(0.05, 0.5),
        mu_I=rng.uniform(0.05, 0.5),
        mu_L=rng.uniform(0.05, 0.5),
        l_A=rng.uniform(0.0, 1.0),
        l_I=rng.uniform(0.05, 1.0),
        beta_I=table(0.05, 0.6),
        beta_A=table(0.05, 0.6),
        xi=CoefficientTable.constant(0.0) if xi_zero else table(0.0, 0.2),
    )


def random_state(rng, min_frac=0.02):
    """Nonnegative compartments summing to 1, none vanishingly small."""
    x = rng.uniform(min_frac, 1.0, 5)
    return x / x.sum()


@pytest.fixture
def rng():
    return np.random.default_rng(20260810)


def small_grid(T=2.0, M=400):
    return Grid(0.0, T, M)
