import numpy as np
import pytest

from edd_har import data as D
from edd_har.models import ArchConfig

# small enough that a forward/backward pass costs microseconds
TINY_ARCH = ArchConfig(filters=(4, 6, 8), kernels=(5, 4, 3), dropout=0.1, head_units=8)


@pytest.fixture
def tiny_arch():
    return TINY_ARCH


@pytest.fixture(scope="session")
def small_synthetic():
    """Normalised train / val split of a 600-window synthetic corpus."""
    ds, meta = D.make_synthetic(D.SyntheticConfig(windows=600, length=32))
    train, val = D.train_val_split(ds, meta, 0)
    train, (val,), _ = D.normalize(train, val)
    return train, val


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
