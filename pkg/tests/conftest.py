import numpy as np
import pytest

from sqg_lab.spectral import Field, Grid2D


@pytest.fixture(scope="session")
def grid64():
    return Grid2D(64, L=16.0 * np.pi)


@pytest.fixture(scope="session")
def grid128():
    return Grid2D(128, L=16.0 * np.pi)


def random_band_limited(grid, seed, kmax_frac=1.0, mean_free=True):
    """Random real field supported strictly inside the dealiasing band."""
    rng = np.random.default_rng(seed)
    keep = int(grid.dealias_keep * kmax_frac)
    absf = np.abs(grid.freqs)
    mask = (absf[:, None] <= keep) & (absf[None, :] <= keep)
    coeffs = np.zeros((grid.n, grid.n), dtype=np.complex128)
    m = int(mask.sum())
    coeffs[mask] = rng.normal(size=m) + 1j * rng.normal(size=m)
    f = Field.from_spectral(grid, coeffs, mean_free=mean_free)
    return f.dealiased()


@pytest.fixture()
def rng():
    return np.random.default_rng(20260822)
