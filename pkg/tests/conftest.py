import numpy as np
import pytest

from semdtm.arrays import NdArray


def nd(values, mask=None, name=""):
    return NdArray(np.array(values, dtype=np.float64), mask, name)


def random_array(rng, max_side=8, rank=None, masked=False, lo=-100.0, hi=100.0):
    """Small random NdArray; with masked=True roughly a third of cells are
    masked (never all of them)."""
    if rank is None:
        rank = int(rng.integers(1, 4))
    shape = tuple(int(rng.integers(1, max_side + 1)) for _ in range(rank))
    vals = rng.uniform(lo, hi, size=shape)
    mask = None
    if masked and rng.integers(2):
        mask = rng.uniform(size=shape) < 0.3
        if mask.all():
            mask.flat[0] = False
    return NdArray(vals, mask)


@pytest.fixture
def rng():
    return np.random.default_rng(20260810)


@pytest.fixture
def demo_dir(tmp_path):
    from semdtm.scenarios import write_demo

    write_demo(tmp_path / "demo")
    return tmp_path / "demo"
