import numpy as np
import pytest

from multipipe import Dataset


def random_correlation(j, rng, strength=1.0):
    """Random correlation matrix from a Gram construction."""
    a = rng.standard_normal((j, j + 2))
    cov = a @ a.T + (1.0 - strength) * j * np.eye(j)
    d = np.sqrt(np.diag(cov))
    corr = cov / np.outer(d, d)
    np.fill_diagonal(corr, 1.0)
    return corr


def random_spd(j, rng, jitter=0.05):
    a = rng.standard_normal((j, j + 3))
    return a @ a.T / j + jitter * np.eye(j)


def two_group_dataset(rng, n_per_group=12, j=4, beta=0.5, noise=0.8):
    """Small balanced two-group dataset with a shared latent component."""
    n = 2 * n_per_group
    exposure = np.repeat([1.0, 0.0], n_per_group)
    latent = beta * exposure + rng.standard_normal(n)
    values = latent[:, None] + noise * rng.standard_normal((n, j))
    records = []
    for i in range(n):
        for k in range(j):
            records.append((f"s{i:03d}", f"p{k}", float(values[i, k]), int(exposure[i])))
    return Dataset.from_records(records)


def one_group_dataset(rng, n=20, j=3, shift=0.4, noise=0.5):
    values = shift + noise * rng.standard_normal((n, j)) + rng.standard_normal((n, 1))
    records = []
    for i in range(n):
        for k in range(j):
            records.append((f"s{i:03d}", f"p{k}", float(values[i, k])))
    return Dataset.from_records(records)


@pytest.fixture
def rng():
    return np.random.default_rng(20260814)
