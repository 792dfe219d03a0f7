import numpy as np
import pytest

from partann import Dataset


def clustered_vectors(rng, n, dim, clusters=64, spread=0.3):
    """Gaussian mixture with anisotropically spread centers (per-axis scale
    decays geometrically, giving the sample matrix a clear spectral gap);
    used wherever a test needs data where locality-aware segmentation and
    principal-direction splits can pay off."""
    scales = 3.0 * 0.85 ** np.arange(dim)
    centers = rng.standard_normal((clusters, dim)) * scales
    labels = rng.integers(0, clusters, size=n)
    return (centers[labels] + spread * rng.standard_normal((n, dim))).astype(
        np.float32)


@pytest.fixture(scope="session")
def small_data():
    rng = np.random.default_rng(7)
    return Dataset.from_vectors(rng.standard_normal((2000, 16)).astype(np.float32))


@pytest.fixture(scope="session")
def small_clustered():
    rng = np.random.default_rng(9)
    return Dataset.from_vectors(clustered_vectors(rng, 3000, 16))


@pytest.fixture(scope="session")
def small_queries():
    rng = np.random.default_rng(8)
    return rng.standard_normal((50, 16)).astype(np.float32)
