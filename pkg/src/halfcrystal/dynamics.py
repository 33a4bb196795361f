"""Exact evolution of lattice fields on full space and on the half-space.

The propagator symbol is

    G_hat_t = [[cos(Omega t),          sin(Omega t) Omega^-1],
               [-Omega sin(Omega t),   cos(Omega t)         ]]

applied once per requested time in Fourier space.  Half-space solutions with
zero boundary value at ``z1 = 0`` are obtained either from the antisymmetrised
Green function (image method) or by evolving the odd extension of the data
on a box doubled along the first axis.
"""
from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import stencil
from .lattice import Box, TorusGrid, fourier, inverse_fourier
from .spectral import InteractionKernel, SpectralTable

DENSE_SITE_LIMIT = 4096
# boundary values accepted on input, relative to the sup of the field;
# evolved states carry round-off of order 1e-16 on the layer z1 = 0
BOUNDARY_RTOL = 1e-12


class BoundaryViolation(ValueError):
    pass


class SupportViolation(ValueError):
    pass


class GridMismatch(ValueError):
    pass


class StabilityError(ValueError):
    pass


class SizeLimitExceeded(ValueError):
    pass


class GuardWarning(UserWarning):
    """Evolution time exceeds the wrap-around horizon of the box."""


@dataclass
class FieldState:
    """Displacement ``u`` and velocity ``v`` on a box, each of shape ``(*L, n)``."""

    box: Box
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        if self.u.shape != self.v.shape or self.u.shape[:-1] != self.box.shape:
            raise ValueError(
                f"field shapes {self.u.shape}/{self.v.shape} do not match box {self.box.shape}"
            )

    @property
    def n(self) -> int:
        return self.u.shape[-1]

    @property
    def half(self) -> bool:
        return self.box.half

    @classmethod
    def zeros(cls, box: Box, n: int) -> "FieldState":
        return cls(box, np.zeros(box.shape + (n,)), np.zeros(box.shape + (n,)))

    @classmethod
    def from_stacked(cls, box: Box, Y: np.ndarray) -> "FieldState":
        n = Y.shape[-1] // 2
        return cls(box, Y[..., :n], Y[..., n:])

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.u, self.v], axis=-1)

    def boundary_max(self) -> float:
        """Largest magnitude on the boundary layer ``z1 = 0`` (half flavour)."""
        return float(max(np.abs(self.u[0]).max(), np.abs(self.v[0]).max()))

    def check_boundary(self, tol: float | None = None) -> None:
        """Raise unless the boundary layer vanishes.

        The default tolerance is ``BOUNDARY_RTOL`` times the field's sup norm.
        """
        if tol is None:
            tol = BOUNDARY_RTOL * float(np.abs(self.stacked()).max())
        if self.half and self.boundary_max() > tol:
            raise BoundaryViolation(
                f"half-space data must vanish at z1 = 0 (found {self.boundary_max():.3g})"
            )


def pairing(Y: FieldState, Psi: FieldState) -> float:
    """``<Y, Psi> = sum_z (u . psi0 + v . psi1)`` over the box."""
    return float(np.sum(Y.u * Psi.u) + np.sum(Y.v * Psi.v))


# -- propagator ----------------------------------------------------------------


@dataclass
class PropagatorSymbol:
    table: SpectralTable
    t: float
    matrix: np.ndarray  # (*N, 2n, 2n)

    def blocks(self):
        n = self.table.n
        G = self.matrix
        return G[..., :n, :n], G[..., :n, n:], G[..., n:, :n], G[..., n:, n:]

    def determinant(self) -> np.ndarray:
        return np.linalg.det(self.matrix)


def propagator_hat(table: SpectralTable, t: float) -> PropagatorSymbol:
    n = table.n
    cos_t = table.matrix_function(lambda w: np.cos(w * t))
    sin_over = table.sin_over_omega(t)
    w_sin = table.matrix_function(lambda w: w * np.sin(w * t))
    G = np.empty(table.shape + (2 * n, 2 * n), dtype=complex)
    G[..., :n, :n] = cos_t
    G[..., :n, n:] = sin_over
    G[..., n:, :n] = -w_sin
    G[..., n:, n:] = cos_t
    return PropagatorSymbol(table, float(t), G)


def propagator_at(kernel: InteractionKernel, thetas: np.ndarray, t: float) -> np.ndarray:
    """Closed-form ``G_hat_t`` at arbitrary nodes ``(..., d)``, shape ``(..., 2n, 2n)``."""
    V = kernel.symbol(np.asarray(thetas, dtype=float))
    V = 0.5 * (V + np.conj(np.swapaxes(V, -1, -2)))
    lam, U = np.linalg.eigh(V)
    w = np.sqrt(np.clip(lam, 0.0, None))

    def fn(vals):
        return np.einsum("...ik,...k,...jk->...ij", U, vals, U.conj())

    n = kernel.n
    G = np.empty(V.shape[:-2] + (2 * n, 2 * n), dtype=complex)
    G[..., :n, :n] = fn(np.cos(w * t))
    G[..., :n, n:] = fn(t * np.sinc(w * t / np.pi))
    G[..., n:, :n] = -fn(w * np.sin(w * t))
    G[..., n:, n:] = G[..., :n, :n]
    return G


def generator_at(kernel: InteractionKernel, thetas: np.ndarray) -> np.ndarray:
    """``A_hat(theta) = [[0, I], [-V_hat, 0]]`` at arbitrary nodes."""
    V = kernel.symbol(np.asarray(thetas, dtype=float))
    n = kernel.n
    A = np.zeros(V.shape[:-2] + (2 * n, 2 * n), dtype=complex)
    A[..., :n, n:] = np.eye(n)
    A[..., n:, :n] = -V
    return A


def generator_symbol(table: SpectralTable) -> np.ndarray:
    """``A_hat(theta) = [[0, I], [-V_hat, 0]]`` at every node."""
    n = table.n
    A = np.zeros(table.shape + (2 * n, 2 * n), dtype=complex)
    A[..., :n, n:] = np.eye(n)
    A[..., n:, :n] = -table.vhat
    return A


def _check_grid(table: SpectralTable, box: Box) -> Box:
    periodic = box.doubled() if box.half else box
    if table.grid.offset or table.grid.shape != periodic.shape:
        raise GridMismatch(
            f"table grid {table.grid.shape} (offset={table.grid.offset}) does not match "
            f"periodic box {periodic.shape}"
        )
    return periodic


def green_function(table: SpectralTable, t: float, box: Box | None = None) -> np.ndarray:
    """Real-space Green function ``G_t(z)`` on the periodic box, ``(*L, 2n, 2n)``.

    Stored periodically: index ``z mod L``.
    """
    if box is not None:
        _check_grid(table, box)
    elif table.grid.offset:
        raise GridMismatch("Green functions need a non-offset grid")
    G = inverse_fourier(propagator_hat(table, t).matrix, table.grid, ndim_tail=2)
    imag = float(np.abs(G.imag).max())
    if imag > 1e-10 * max(1.0, float(np.abs(G.real).max())):
        raise ArithmeticError(f"Green function has imaginary part {imag:.3g}")
    return G.real


def _apply_symbol(sym: np.ndarray, Y: np.ndarray, grid: TorusGrid, adjoint: bool = False) -> np.ndarray:
    Yh = fourier(Y, grid, ndim_tail=1)
    if adjoint:
        out = np.einsum("...ji,...j->...i", sym.conj(), Yh)
    else:
        out = np.einsum("...ij,...j->...i", sym, Yh)
    res = inverse_fourier(out, grid, ndim_tail=1)
    return res.real


def evolve_full(X0: FieldState, table: SpectralTable, t: float) -> FieldState:
    """Evolve a periodic full-space state by time ``t`` in one spectral step."""
    if X0.half:
        raise ValueError("evolve_full expects a full-space state")
    _check_grid(table, X0.box)
    if t == 0:
        return FieldState(X0.box, X0.u.copy(), X0.v.copy())
    G = propagator_hat(table, t).matrix
    return FieldState.from_stacked(X0.box, _apply_symbol(G, X0.stacked(), table.grid))


# -- half space ----------------------------------------------------------------


def odd_extension(Y: np.ndarray, L1: int) -> np.ndarray:
    """Extend half-box data (axis 0 = ``z1 = 0..L1-1``) oddly to a ``2 L1`` periodic box."""
    out = np.zeros((2 * L1,) + Y.shape[1:], dtype=Y.dtype)
    out[:L1] = Y
    out[L1 + 1 :] = -Y[1:][::-1]
    out[0] = 0.0
    return out


def reflected_embedding(Y: np.ndarray, L1: int) -> np.ndarray:
    """``R(w) = Y(w~)`` placed on the doubled box (nonzero only for ``w1 < 0``)."""
    out = np.zeros((2 * L1,) + Y.shape[1:], dtype=Y.dtype)
    out[L1 + 1 :] = Y[1:][::-1]
    return out


def horizon(box: Box, vmax: float, r_obs: float = 0.0, r0: float = 0.0) -> float:
    """Largest |t| for which the half box is free of wrap-around effects.

    Requires ``L1 > 2 (vmax t + r_obs + r0)``.
    """
    if vmax <= 0:
        return float("inf")
    return max(0.0, (box.L[0] / 2 - r_obs - r0) / vmax)


def _guard(box: Box, table: SpectralTable, t: float, r_obs=0.0, r0=0.0):
    if abs(t) > horizon(box, table.max_group_velocity(), r_obs, r0):
        warnings.warn(
            f"t={t} exceeds the wrap-around horizon of a half box with L1={box.L[0]}",
            GuardWarning,
            stacklevel=3,
        )


def evolve_half(Y0: FieldState, table: SpectralTable, t: float, method: str = "odd-extension") -> FieldState:
    """Evolve half-space data with zero boundary value at ``z1 = 0``.

    ``method="odd-extension"`` evolves the odd extension on the doubled box;
    ``method="image"`` sums the antisymmetrised Green function
    ``G_t(z - z') - G_t(z - z'~)`` against the data.
    """
    if not Y0.half:
        raise ValueError("evolve_half expects a half-space state")
    Y0.check_boundary()
    _check_grid(table, Y0.box)
    _guard(Y0.box, table, t)
    L1 = Y0.box.L[0]
    if method == "odd-extension":
        X = odd_extension(Y0.stacked(), L1)
        G = propagator_hat(table, t).matrix
        Y = _apply_symbol(G, X, table.grid)[:L1]
    elif method == "image":
        if Y0.box.sites <= DENSE_SITE_LIMIT:
            M = halfspace_green_matrix(table, t, Y0.box)
            Y = (M @ Y0.stacked().reshape(-1)).reshape(Y0.box.shape + (2 * Y0.n,))
        else:
            G = green_function(table, t)
            Gh = fourier(G, table.grid, ndim_tail=2)
            Ys = Y0.stacked()
            direct = np.zeros((2 * L1,) + Ys.shape[1:])
            direct[:L1] = Ys
            conv = lambda F: inverse_fourier(
                np.einsum("...ij,...j->...i", Gh, fourier(F, table.grid, ndim_tail=1)),
                table.grid,
                ndim_tail=1,
            ).real
            Y = (conv(direct) - conv(reflected_embedding(Ys, L1)))[:L1]
    else:
        raise ValueError(f"unknown half-space method {method!r}")
    return FieldState.from_stacked(Y0.box, Y)


def halfspace_green_matrix(table: SpectralTable, t: float, box: Box) -> np.ndarray:
    """Dense ``G_{t,+}(z, z')`` over all half-box sites, ``(S*2n, S*2n)``.

    Row ``(z, i)``, column ``(z', j)`` holds ``[G_t(z - z') - G_t(z - z'~)]_ij``.
    """
    if not box.half:
        raise ValueError("need a half box")
    if box.sites > DENSE_SITE_LIMIT:
        raise SizeLimitExceeded(f"dense propagation limited to {DENSE_SITE_LIMIT} sites, box has {box.sites}")
    periodic = _check_grid(table, box)
    G = green_function(table, t, box)
    m = G.shape[-1]
    idx = np.indices(box.shape).reshape(box.d, -1).T  # (S, d) array indices
    coords = idx.copy()  # half box: axis0 index == z1, periodic axes index == z mod L
    diff = (coords[:, None, :] - coords[None, :, :]) % np.array(periodic.shape)
    refl = coords.copy()
    refl[:, 0] = -refl[:, 0]
    diff_r = (coords[:, None, :] - refl[None, :, :]) % np.array(periodic.shape)
    A = G[tuple(diff[..., a] for a in range(box.d))] - G[tuple(diff_r[..., a] for a in range(box.d))]
    S = idx.shape[0]
    return A.transpose(0, 2, 1, 3).reshape(S * m, S * m)


def adjoint_evolve(Psi: FieldState, table: SpectralTable, t: float) -> FieldState:
    """Transposed evolution of a test function: ``Phi(., t) = U'_+(t) Psi``.

    Returns ``Phi`` on the doubled periodic box (full flavour, axis 0 stored
    periodically) so that ``<U_+(t) Y0, Psi>_+ = <Y0, Phi(., t)>_+``.
    """
    if not Psi.half:
        raise ValueError("test functions live on the half box")
    Psi.check_boundary()
    L1 = Psi.box.L[0]
    if np.abs(Psi.stacked()[-1]).max() > 0:
        raise SupportViolation("test function must vanish on the far edge of the half box")
    _check_grid(table, Psi.box)
    periodic = Psi.box.doubled()
    X = odd_extension(Psi.stacked(), L1)
    if t == 0:
        return FieldState.from_stacked(periodic, X)
    G = propagator_hat(table, t).matrix
    return FieldState.from_stacked(periodic, _apply_symbol(G, X, table.grid, adjoint=True))


def halfspace_pairing(Y: FieldState, Phi: FieldState) -> float:
    """``<Y, Phi>_+`` of half-box data with a field on the doubled box."""
    L1 = Y.box.L[0]
    return float(np.sum(Y.u * Phi.u[:L1]) + np.sum(Y.v * Phi.v[:L1]))


# -- energy, norms -------------------------------------------------------------


def _kernel_stencil(kernel: InteractionKernel, shape):
    offs, mats = kernel.stacked()
    return stencil.neighbor_table(shape, offs), mats


def apply_kernel(kernel: InteractionKernel, u: np.ndarray, backend=None) -> np.ndarray:
    """``(V u)(z) = sum_z' V(z - z') u(z')`` with periodic wrap; ``u`` is ``(*L, n)``."""
    shape = u.shape[:-1]
    nbr, mats = _kernel_stencil(kernel, shape)
    out = stencil.apply_stencil(u.reshape(1, -1, kernel.n), nbr, mats, backend=backend)
    return out.reshape(u.shape)


def energy(X: FieldState, kernel: InteractionKernel, backend=None) -> float:
    """``1/2 sum_z (|v(z)|^2 + (V u)(z) . u(z))`` on the periodic box."""
    Vu = apply_kernel(kernel, X.u, backend=backend)
    return 0.5 * float(np.sum(X.v**2) + np.sum(Vu * X.u))


def weighted_norm(Y: FieldState, alpha: float) -> float:
    """``(sum_z |Y(z)|^2 (1 + |z|^2)^alpha)^(1/2)`` over the box."""
    z2 = np.sum(Y.box.coords().astype(float) ** 2, axis=-1)
    w = (1.0 + z2) ** alpha
    dens = np.sum(Y.u**2, axis=-1) + np.sum(Y.v**2, axis=-1)
    return float(np.sqrt(np.sum(w * dens)))


def timestep_oracle(X0: FieldState, kernel: InteractionKernel, t: float, dt: float, backend=None) -> FieldState:
    """Velocity-Verlet integration of ``u'' = -V u`` on the periodic box.

    Independent of the spectral machinery; used only to cross-check it.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    wmax = np.sqrt(kernel.norm_bound())
    if dt * wmax >= 0.5:
        raise StabilityError(f"dt*omega_max = {dt * wmax:.3g} >= 0.5")
    nsteps = int(round(abs(t) / dt))
    if nsteps == 0:
        return FieldState(X0.box, X0.u.copy(), X0.v.copy())
    step = t / nsteps
    nbr, mats = _kernel_stencil(kernel, X0.box.shape)
    n = kernel.n
    u, v = stencil.verlet(X0.u.reshape(-1, n), X0.v.reshape(-1, n), nbr, mats, step, nsteps, backend=backend)
    return FieldState(X0.box, u.reshape(X0.u.shape), v.reshape(X0.v.shape))


# -- snapshot files -------------------------------------------------------------

_MAGIC = b"HCSNAP01"


def save_snapshot(path, state: FieldState, meta: dict | None = None) -> Path:
    """Flat binary snapshot plus a JSON sidecar (``<path>.json``).

    Layout (little endian): magic, u32 d, u32 n, u32 flavour (0 full, 1 half),
    u32 L per axis, then float64 payload: u row-major, then v row-major.
    """
    path = Path(path)
    d, n = state.box.d, state.n
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<III", d, n, int(state.half)))
        fh.write(struct.pack(f"<{d}I", *state.box.L))
        fh.write(np.ascontiguousarray(state.u, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(state.v, dtype="<f8").tobytes())
    side = {"d": d, "n": n, "L": list(state.box.L), "flavor": "half" if state.half else "full"}
    side.update(meta or {})
    Path(str(path) + ".json").write_text(json.dumps(side, indent=2, sort_keys=True))
    return path


def load_snapshot(path) -> tuple[FieldState, dict]:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:8] != _MAGIC:
        raise ValueError(f"{path} is not a field snapshot")
    d, n, half = struct.unpack_from("<III", raw, 8)
    L = struct.unpack_from(f"<{d}I", raw, 20)
    off = 20 + 4 * d
    count = int(np.prod(L)) * n
    data = np.frombuffer(raw, dtype="<f8", offset=off)
    if data.size != 2 * count:
        raise ValueError(f"{path}: payload size mismatch")
    u = data[:count].reshape(tuple(L) + (n,)).copy()
    v = data[count:].reshape(tuple(L) + (n,)).copy()
    side_path = Path(str(path) + ".json")
    meta = json.loads(side_path.read_text()) if side_path.exists() else {}
    return FieldState(Box(L, half=bool(half)), u, v), meta


def export_slice_csv(path, state: FieldState, fixed=None) -> Path:
    """CSV of a 1-d slice along axis 0 (other coordinates fixed, default 0)."""
    box = state.box
    fixed = tuple(fixed) if fixed is not None else (0,) * (box.d - 1)
    n = state.n
    rows = []
    for c in box.axis_coords(0):
        idx = box.index((int(c),) + fixed)
        vals = list(state.u[idx]) + list(state.v[idx])
        rows.append(f"{int(c)}," + ",".join(f"{x:.17e}" for x in vals))
    header = "z1," + ",".join([f"u{k}" for k in range(n)] + [f"v{k}" for k in range(n)])
    Path(path).write_text(header + "\n" + "\n".join(rows) + "\n")
    return Path(path)
