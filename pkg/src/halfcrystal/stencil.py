"""Finite-support convolution on periodic lattice boxes.

The compiled ``_stencil`` extension is used when it was built; otherwise the
numpy implementation in ``_stencil_py`` is selected. Set the environment
variable ``HALFCRYSTAL_PURE_PYTHON=1`` to force the fallback.
"""
from __future__ import annotations

import os

import numpy as np

from . import _stencil_py

if os.environ.get("HALFCRYSTAL_PURE_PYTHON"):
    _impl = _stencil_py
    BACKEND = "python"
else:
    try:
        from . import _stencil as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _stencil_py
        BACKEND = "python"


def neighbor_table(shape, offsets) -> np.ndarray:
    """Flat index of ``x - offset`` for every site ``x`` of a periodic box.

    Returns an ``(len(offsets), prod(shape))`` array of ``np.intp``.
    """
    shape = tuple(int(s) for s in shape)
    grids = np.indices(shape).reshape(len(shape), -1)
    table = np.empty((len(offsets), grids.shape[1]), dtype=np.intp)
    for s, off in enumerate(offsets):
        shifted = [(grids[a] - off[a]) % shape[a] for a in range(len(shape))]
        table[s] = np.ravel_multi_index(shifted, shape)
    return table


def apply_stencil(field, nbr, mats, backend=None):
    """Apply ``sum_o M(o) f(x - o)`` to a batch of flattened fields.

    ``field`` has shape ``(batch, sites, n_in)``, ``mats`` ``(S, n_out, n_in)``.
    """
    impl = _select(backend)
    field = np.ascontiguousarray(field, dtype=np.float64)
    mats = np.ascontiguousarray(mats, dtype=np.float64)
    nbr = _check_table(nbr, field.shape[1])
    return impl.apply_stencil(field, nbr, mats)


def verlet(u, v, nbr, mats, dt, nsteps, backend=None):
    impl = _select(backend)
    return impl.verlet(
        np.ascontiguousarray(u, dtype=np.float64),
        np.ascontiguousarray(v, dtype=np.float64),
        _check_table(nbr, np.shape(u)[0]),
        np.ascontiguousarray(mats, dtype=np.float64),
        float(dt),
        int(nsteps),
    )


def _check_table(nbr, sites: int) -> np.ndarray:
    # the compiled kernels index without bounds checks
    nbr = np.ascontiguousarray(nbr, dtype=np.intp)
    if nbr.size and (nbr.min() < 0 or nbr.max() >= sites):
        raise ValueError("neighbour table refers to sites outside the field")
    return nbr


def _select(backend):
    if backend is None:
        return _impl
    if backend == "python":
        return _stencil_py
    if backend == "cython":
        from . import _stencil  # type: ignore[attr-defined]

        return _stencil
    raise ValueError(f"unknown stencil backend {backend!r}")
