"""Shared builders for small synthetic datasets used across the suite."""

import numpy as np
import pytest

from odpscreen import BinaryOutcome, Dataset, SurvivalOutcome


def make_binary_dataset(n=60, p=5, q=2, seed=0, beta=None):
    """Random two-arm binary dataset; optional true interaction slopes."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, p))
    z = rng.standard_normal((n, q))
    t = np.where(rng.random(n) < 0.5, 1.0, -1.0)
    # force both arms even at tiny n
    t[0], t[1] = 1.0, -1.0
    index = np.zeros(n)
    if beta is not None:
        index = t * (x @ np.asarray(beta, dtype=np.float64))
    prob = 1.0 / (1.0 + np.exp(-index))
    y = (rng.random(n) < prob).astype(np.float64)
    # both classes must appear for a stable logistic fit
    y[0], y[1] = 1.0, 0.0
    return Dataset(BinaryOutcome(y), t, x, z)


def make_survival_dataset(n=60, p=5, q=2, seed=0, beta=None):
    """Random two-arm survival dataset with uniform censoring."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, p))
    z = rng.standard_normal((n, q))
    t = np.where(rng.random(n) < 0.5, 1.0, -1.0)
    t[0], t[1] = 1.0, -1.0
    index = np.zeros(n)
    if beta is not None:
        index = t * (x @ np.asarray(beta, dtype=np.float64))
    latent = rng.exponential(scale=np.exp(index))
    censor = rng.uniform(0.5, 3.0, size=n)
    time = np.minimum(latent, censor)
    event = (latent <= censor).astype(np.float64)
    event[0], event[1] = 1.0, 1.0
    return Dataset(SurvivalOutcome(time, event), t, x, z)


@pytest.fixture
def binary_dataset():
    return make_binary_dataset()


@pytest.fixture
def survival_dataset():
    return make_survival_dataset()
