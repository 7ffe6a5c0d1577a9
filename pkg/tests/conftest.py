import numpy as np
import pytest

from clqg.field import FieldLadder, GridSpec, ScaleLadder, sample_field_ladder
from clqg.kernels import KernelSpec


def make_constant_ladder(nx=16, J=3, value=0.0, var=None, periodic=False):
    """Synthetic ladder with X_j identically ``value`` and prescribed variances.

    Plug-in oracle inputs: the exact-variance formulas become closed form.
    """
    grid = GridSpec(nx=nx, ny=nx, periodic=periodic)
    fl = FieldLadder(
        spec=KernelSpec(family="MFF", mass=1.0),
        grid=grid,
        ladder=ScaleLadder(J=J),
        seed=0,
    )
    shape = (nx, nx)
    for j in range(J + 1):
        if j == 0:
            fl.fields.append(np.zeros(shape))
            fl.variances.append(np.zeros(shape))
        else:
            fl.fields.append(np.full(shape, float(value)))
            v = j * np.log(2.0) if var is None else var
            fl.variances.append(np.full(shape, float(v)))
    return fl


@pytest.fixture(scope="session")
def mff_spec():
    return KernelSpec(family="MFF", mass=1.0)


@pytest.fixture(scope="session")
def small_mff_ladder(mff_spec):
    grid = GridSpec(nx=64, ny=64)
    return sample_field_ladder(mff_spec, grid, ScaleLadder(J=5), seed=2024)


@pytest.fixture(scope="session")
def torus_mff_ladder():
    spec = KernelSpec(family="MFF", mass=8.0)
    grid = GridSpec(nx=64, ny=64, periodic=True)
    return sample_field_ladder(spec, grid, ScaleLadder(J=5), seed=77)
