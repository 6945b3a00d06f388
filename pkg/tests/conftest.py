import numpy as np
import pytest

from metocal.data_model import AlignedDataset, CovariateId, Quantity

HS = Quantity("hs", "m")
W = Quantity("w", "m/s")
TM = Quantity("tm", "s")


@pytest.fixture
def hs():
    return HS


@pytest.fixture
def w():
    return W


def make_dataset(y, columns, ens_sd=None, response=HS, horizon=24):
    """AlignedDataset from plain arrays, times just an increasing grid."""
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    if ens_sd is None:
        ens_sd = np.full(n, 0.4)
    return AlignedDataset(
        response=response,
        horizon=horizon,
        times=np.arange(400_000, 400_000 + 6 * n, 6, dtype=np.int64),
        y=y,
        columns={cov: np.asarray(col, dtype=np.float64) for cov, col in columns.items()},
        ens_sd=np.asarray(ens_sd, dtype=np.float64),
    )


def gaussian_design(rng, n, covs, loc=2.0, scale=1.0):
    """Random covariate columns keyed by the given CovariateIds."""
    return {cov: rng.normal(loc, scale, n) for cov in covs}
