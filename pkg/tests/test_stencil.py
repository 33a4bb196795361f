import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from halfcrystal import stencil
from halfcrystal.spectral import build_nn_kernel

compiled = pytest.mark.skipif(stencil.BACKEND != "cython", reason="compiled extension not built")


def _direct(field, shape, offsets, mats):
    """Reference ``sum_o M(o) f(x - o)`` with np.roll."""
    B, _, nin = field.shape
    f = field.reshape((B,) + shape + (nin,))
    out = np.zeros((B,) + shape + (mats.shape[1],))
    for off, M in zip(offsets, mats):
        shifted = np.roll(f, shift=off, axis=tuple(range(1, 1 + len(shape))))
        out += shifted @ M.T
    return out.reshape(B, -1, mats.shape[1])


def test_neighbor_table_wraps():
    nbr = stencil.neighbor_table((4,), [(1,), (-1,), (0,)])
    assert nbr[0].tolist() == [3, 0, 1, 2]
    assert nbr[1].tolist() == [1, 2, 3, 0]
    assert nbr[2].tolist() == [0, 1, 2, 3]


@given(
    st.sampled_from([(7,), (4, 5), (3, 4, 2)]),
    st.integers(1, 3),
    st.integers(1, 3),
    st.integers(0, 2**31),
)
def test_python_backend_matches_roll(shape, nin, nout, seed):
    rng = np.random.default_rng(seed)
    d = len(shape)
    offsets = [tuple(rng.integers(-2, 3, size=d)) for _ in range(3)]
    mats = rng.normal(size=(3, nout, nin))
    field = rng.normal(size=(2, int(np.prod(shape)), nin))
    nbr = stencil.neighbor_table(shape, offsets)
    got = stencil.apply_stencil(field, nbr, mats, backend="python")
    assert np.allclose(got, _direct(field, shape, offsets, mats), atol=1e-12)


@compiled
@given(st.sampled_from([(9,), (6, 4)]), st.integers(1, 3), st.integers(0, 2**31))
def test_backends_agree_on_stencil(shape, n, seed):
    rng = np.random.default_rng(seed)
    offsets = [tuple(rng.integers(-2, 3, size=len(shape))) for _ in range(4)]
    mats = rng.normal(size=(4, n, n))
    field = rng.normal(size=(3, int(np.prod(shape)), n))
    nbr = stencil.neighbor_table(shape, offsets)
    a = stencil.apply_stencil(field, nbr, mats, backend="python")
    b = stencil.apply_stencil(field, nbr, mats, backend="cython")
    assert np.allclose(a, b, rtol=1e-13, atol=1e-13)


@compiled
def test_backends_agree_on_verlet(rng):
    k = build_nn_kernel(1, 2, [1.0, 0.5], [0.3, 0.7])
    offs, mats = k.stacked()
    nbr = stencil.neighbor_table((64,), [tuple(o) for o in offs])
    u0, v0 = rng.normal(size=(64, 2)), rng.normal(size=(64, 2))
    ua, va = stencil.verlet(u0, v0, nbr, mats, 0.01, 200, backend="python")
    ub, vb = stencil.verlet(u0, v0, nbr, mats, 0.01, 200, backend="cython")
    assert np.allclose(ua, ub, atol=1e-12) and np.allclose(va, vb, atol=1e-12)
    assert not np.shares_memory(ua, u0)


def test_stencil_validates_shapes():
    nbr = stencil.neighbor_table((5,), [(0,)])
    with pytest.raises(ValueError):
        stencil.apply_stencil(np.zeros((1, 5, 2)), nbr, np.zeros((1, 2, 3)), backend="python")
    with pytest.raises(ValueError):
        stencil.apply_stencil(np.zeros((1, 4, 2)), nbr, np.zeros((1, 2, 2)), backend="python")
    with pytest.raises(ValueError):
        stencil.apply_stencil(np.zeros((1, 5, 2)), nbr, np.zeros((1, 2, 2)), backend="fortran")


def test_environment_forces_fallback():
    env = dict(os.environ, HALFCRYSTAL_PURE_PYTHON="1")
    out = subprocess.run(
        [sys.executable, "-c", "from halfcrystal import stencil; print(stencil.BACKEND)"],
        env=env, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "python"


@pytest.mark.parametrize("backend", ["python", pytest.param("cython", marks=compiled)])
def test_out_of_range_neighbor_is_rejected(backend):
    nbr = stencil.neighbor_table((5,), [(0,)])
    nbr[0, 0] = 99
    with pytest.raises(ValueError):
        stencil.apply_stencil(np.zeros((1, 5, 1)), nbr, np.zeros((1, 1, 1)), backend=backend)
    with pytest.raises(ValueError):
        stencil.verlet(np.zeros((5, 1)), np.zeros((5, 1)), nbr, np.zeros((1, 1, 1)), 0.1, 1, backend=backend)
