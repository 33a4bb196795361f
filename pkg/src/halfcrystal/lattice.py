"""Lattice points, periodic boxes, torus grids and the discrete Fourier
conventions shared by the rest of the package.

Fourier convention: ``f_hat(theta) = sum_z f(z) exp(i z.theta)`` and
``f(z) = (2 pi)^-d int exp(-i z.theta) f_hat(theta) dtheta``.  On a grid of
``N`` points per axis the integral is the (midpoint or left-point) rule.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


def reflect(z: Sequence[int]) -> tuple[int, ...]:
    """Mirror image across the boundary layer: ``(z1, zbar) -> (-z1, zbar)``."""
    z = tuple(int(c) for c in z)
    return (-z[0],) + z[1:]


def in_halfspace(z: Sequence[int]) -> bool:
    return int(z[0]) > 0


def on_boundary(z: Sequence[int]) -> bool:
    return int(z[0]) == 0


def signed_coords(n: int) -> np.ndarray:
    """Integer coordinates of a periodic axis of length n, wrapped to [-n/2, n/2)."""
    return np.rint(np.fft.fftfreq(n) * n).astype(np.int64)


@dataclass(frozen=True)
class TorusGrid:
    """Uniform grid on the torus ``[0, 2 pi)^d``.

    With ``offset`` the nodes are shifted by half a cell so that no node lies
    on ``theta_i = 0``.
    """

    d: int
    N: tuple[int, ...]
    offset: bool = False

    def __init__(self, d: int, N, offset: bool = False):
        if d < 1:
            raise ValueError("d must be >= 1")
        if np.ndim(N) == 0:
            N = (int(N),) * d
        N = tuple(int(v) for v in N)
        if len(N) != d:
            raise ValueError("need one grid size per axis")
        if any(v < 2 or v % 2 for v in N):
            raise ValueError("grid sizes must be even and >= 2")
        object.__setattr__(self, "d", int(d))
        object.__setattr__(self, "N", N)
        object.__setattr__(self, "offset", bool(offset))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.N

    @property
    def size(self) -> int:
        return int(np.prod(self.N))

    def axis(self, a: int) -> np.ndarray:
        n = self.N[a]
        return 2 * np.pi * (np.arange(n) + 0.5 * self.offset) / n

    def thetas(self) -> np.ndarray:
        """All nodes, shape ``(*N, d)``."""
        mesh = np.meshgrid(*[self.axis(a) for a in range(self.d)], indexing="ij")
        return np.stack(mesh, axis=-1)

    def refined(self, factor: int = 2) -> "TorusGrid":
        return TorusGrid(self.d, tuple(factor * v for v in self.N), self.offset)

    def to_dict(self) -> dict:
        return {"d": self.d, "N": list(self.N), "offset": self.offset}


@dataclass(frozen=True)
class Box:
    """Finite lattice box.

    Full flavour: a periodic box whose coordinates are wrapped to
    ``[-L/2, L/2)`` on every axis.  Half flavour: axis 0 holds the slab
    ``z1 = 0 .. L1-1`` next to the boundary (``z1 = 0`` is the boundary
    layer); remaining axes are periodic and wrapped as above.  Half-space
    evolutions run on the doubled periodic box of extent ``2 L1`` in axis 0.
    """

    L: tuple[int, ...]
    half: bool = False

    def __init__(self, L, half: bool = False):
        if np.ndim(L) == 0:
            L = (int(L),)
        L = tuple(int(v) for v in L)
        if any(v < 2 for v in L):
            raise ValueError("box extents must be >= 2")
        object.__setattr__(self, "L", L)
        object.__setattr__(self, "half", bool(half))

    @property
    def d(self) -> int:
        return len(self.L)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.L

    @property
    def sites(self) -> int:
        return int(np.prod(self.L))

    def doubled(self) -> "Box":
        """Periodic box carrying the odd extension of a half box."""
        if not self.half:
            raise ValueError("only half boxes have an odd extension")
        return Box((2 * self.L[0],) + self.L[1:], half=False)

    def grid(self) -> TorusGrid:
        """Torus grid dual to the periodic box used for evolution."""
        target = self.doubled() if self.half else self
        return TorusGrid(target.d, target.L, offset=False)

    def axis_coords(self, a: int) -> np.ndarray:
        if self.half and a == 0:
            return np.arange(self.L[0], dtype=np.int64)
        return signed_coords(self.L[a])

    def coords(self) -> np.ndarray:
        """Lattice coordinates of every site, shape ``(*L, d)``."""
        mesh = np.meshgrid(*[self.axis_coords(a) for a in range(self.d)], indexing="ij")
        return np.stack(mesh, axis=-1)

    def index(self, z: Sequence[int]) -> tuple[int, ...]:
        """Array index of lattice point z (periodic axes wrap)."""
        z = tuple(int(c) for c in z)
        if len(z) != self.d:
            raise ValueError(f"point {z} has wrong dimension for box {self.L}")
        idx = []
        for a, c in enumerate(z):
            if self.half and a == 0:
                if not 0 <= c < self.L[0]:
                    raise IndexError(f"z1={c} outside half box of extent {self.L[0]}")
                idx.append(c)
            else:
                if not -self.L[a] // 2 <= c < self.L[a] - self.L[a] // 2:
                    raise IndexError(f"coordinate {c} outside periodic axis {self.L[a]}")
                idx.append(c % self.L[a])
        return tuple(idx)

    def to_dict(self) -> dict:
        return {"L": list(self.L), "half": self.half}


def fourier(f: np.ndarray, grid: TorusGrid, ndim_tail: int = 0) -> np.ndarray:
    """Lattice Fourier transform ``sum_z f(z) exp(i z.theta)`` on the grid nodes.

    ``f`` is stored periodically (index = z mod N); trailing ``ndim_tail``
    axes are component axes.
    """
    axes = tuple(range(grid.d))
    if grid.offset:
        f = f * _offset_phase(grid, ndim_tail, sign=+1)
    return np.fft.ifftn(f, axes=axes) * grid.size


def inverse_fourier(F: np.ndarray, grid: TorusGrid, ndim_tail: int = 0) -> np.ndarray:
    """Quadrature of ``(2 pi)^-d int exp(-i z.theta) F(theta) dtheta`` for every z.

    The result is periodic in z with period N (index = z mod N).
    """
    axes = tuple(range(grid.d))
    if grid.offset:
        # exp(-i z.(theta_k + pi/N)) factorises into the FFT kernel and a z-phase
        out = np.fft.fftn(F, axes=axes) / grid.size
        return out * _offset_phase(grid, ndim_tail, sign=-1)
    return np.fft.fftn(F, axes=axes) / grid.size


def _offset_phase(grid: TorusGrid, ndim_tail: int, sign: int) -> np.ndarray:
    phase = np.ones(grid.N, dtype=complex)
    for a in range(grid.d):
        z = signed_coords(grid.N[a])
        shape = [1] * grid.d
        shape[a] = grid.N[a]
        phase = phase * np.exp(sign * 1j * np.pi * z / grid.N[a]).reshape(shape)
    return phase.reshape(grid.N + (1,) * ndim_tail)
