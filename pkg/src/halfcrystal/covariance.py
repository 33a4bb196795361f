"""Limit covariance of the half-space dynamics, exact covariance propagation,
ensemble estimates, the small-instance splitting oracle and normality tests.

Symbols carry the ``(u, v)`` block structure as ``2n x 2n`` matrices.  Band
projections act blockwise as ``diag(Pi_sigma, Pi_sigma)``.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from .dynamics import (
    FieldState,
    adjoint_evolve,
    green_function,
    halfspace_green_matrix,
    propagator_hat,
)
from .fields import CovarianceSpec, EnsembleAccumulator, InsufficientSamples, ramp_profile
from .lattice import Box, TorusGrid, fourier, inverse_fourier
from .spectral import AcousticPointError, SpectralTable, build_spectral_table, nn_dispersion

REAL_TOL = 1e-9


class OutOfBox(IndexError):
    pass


def c_matrix(table: SpectralTable) -> np.ndarray:
    """``C = [[0, Omega^-1], [-Omega, 0]]`` at every node, ``(*N, 2n, 2n)``."""
    n = table.n
    C = np.zeros(table.shape + (2 * n, 2 * n), dtype=complex)
    C[..., :n, n:] = table.inverse_omega()
    C[..., n:, :n] = -table.omega_matrix()
    return C


def _herm(A: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(A, -1, -2))


def band_sandwich(table: SpectralTable, A: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """``sum_sigma w_sigma P_sigma A P_sigma`` with ``P_sigma = diag(Pi_sigma, Pi_sigma)``.

    ``weights[..., k]`` is the weight of the band holding eigen-index ``k``.
    Evaluated in the eigenbasis, where the sandwich is a masked product.
    """
    n = table.n
    U = table.eigvecs
    UU = np.zeros(table.shape + (2 * n, 2 * n), dtype=complex)
    UU[..., :n, :n] = U
    UU[..., n:, n:] = U
    mask = np.tile(table.same_band_mask(), (1,) * len(table.shape) + (2, 2))
    w = np.tile(weights, (1,) * len(table.shape) + (2,))
    inner = np.einsum("...ki,...kl,...lj->...ij", UU.conj(), A, UU)
    inner = inner * mask * w[..., :, None]
    return np.einsum("...ik,...kl,...jl->...ij", UU, inner, UU.conj())


@dataclass
class LimitCovariance:
    """Limit symbols on an offset grid and the tabulated correlation ``q_inf(z)``."""

    table: SpectralTable
    plus: np.ndarray
    minus: np.ndarray
    C: np.ndarray
    _pos: dict = field(default_factory=dict, repr=False)

    @property
    def total(self) -> np.ndarray:
        return self.plus + self.minus

    @property
    def grid(self) -> TorusGrid:
        return self.table.grid

    def position_table(self, part: str = "total") -> np.ndarray:
        """``q(z)`` stored periodically on the grid, ``(*N, 2n, 2n)`` real."""
        if part not in self._pos:
            sym = {"total": self.total, "plus": self.plus, "minus": self.minus}[part]
            q = inverse_fourier(sym, self.grid, ndim_tail=2)
            scale = max(1.0, float(np.abs(q.real).max()))
            if float(np.abs(q.imag).max()) > REAL_TOL * scale:
                raise ArithmeticError(f"limit correlation not real ({np.abs(q.imag).max():.3g})")
            self._pos[part] = q.real
        return self._pos[part]

    def at(self, z, part: str = "total") -> np.ndarray:
        z = np.asarray(z, dtype=np.int64)
        N = np.array(self.grid.shape)
        if np.any(z < -N // 2) or np.any(z >= N - N // 2):
            raise OutOfBox(f"offset {z.tolist()} outside tabulated range {self.grid.shape}")
        return self.position_table(part)[tuple(np.moveaxis(np.mod(z, N), -1, 0))]

    def hermitian_defect(self) -> float:
        return float(np.abs(self.plus - _herm(self.plus)).max())


def limit_symbol(spec: CovarianceSpec, table: SpectralTable) -> LimitCovariance:
    """Limit symbols from the initial symbol ``q0_hat`` and the band structure.

    ``plus = 1/4 sum_sigma P (q0 + C q0 C^*) P`` and
    ``minus = i/4 sum_sigma sign(d_1 omega_sigma) P (C q0 - q0 C^*) P``.
    """
    q0 = spec.symbol(table.thetas())
    if q0.shape[-1] != 2 * table.n:
        raise ValueError("spec and kernel component counts differ")
    C = c_matrix(table)
    Ch = _herm(C)
    plus = band_sandwich(table, q0 + C @ q0 @ Ch, np.full(table.omega.shape, 0.25))
    minus = band_sandwich(table, C @ q0 - q0 @ Ch, 0.25j * table.sign1)
    return LimitCovariance(table, plus, minus, C)


def nn_limit_symbol(spec: CovarianceSpec, table: SpectralTable) -> np.ndarray:
    """Componentwise closed form for diagonal nearest-neighbour kernels.

    With per-component frequencies ``omega_k`` and
    ``chi_kl = [omega_k == omega_l]``:
    ``q_inf_kl = 1/4 chi_kl M_kl`` where ``M^11 = omega^2 M^00``,
    ``M^00 = q00 + q11/omega^2 - i s (q01 - q10)/omega``,
    ``M^01 = -M^10 = q01 - q10 + i s (omega^2 q00 + q11)/omega``,
    ``s = sign(sin theta_1)``.
    """
    kernel = table.kernel
    if kernel.family != "nearest-neighbor":
        raise ValueError("closed form applies to nearest-neighbour kernels only")
    n = kernel.n
    th = table.thetas()
    w = nn_dispersion(kernel, th)  # (..., n)
    if np.any(w < 1e-9):
        raise AcousticPointError("closed form needs omega > 0 on every node")
    s = np.sign(np.sin(th[..., 0]))[..., None, None]
    q = spec.symbol(th)
    q00, q01, q10, q11 = q[..., :n, :n], q[..., :n, n:], q[..., n:, :n], q[..., n:, n:]
    wk = w[..., :, None]
    chi = (np.abs(w[..., :, None] - w[..., None, :]) <= table.merge_tol).astype(float)
    M00 = q00 + q11 / wk**2 - 1j * s * (q01 - q10) / wk
    M11 = wk**2 * M00
    M01 = (q01 - q10) + 1j * s * (wk**2 * q00 + q11) / wk
    out = np.empty(q.shape, dtype=complex)
    out[..., :n, :n] = 0.25 * chi * M00
    out[..., n:, n:] = 0.25 * chi * M11
    out[..., :n, n:] = 0.25 * chi * M01
    out[..., n:, :n] = -0.25 * chi * M01
    return out


def limit_field(spec: CovarianceSpec, kernel, N: int) -> LimitCovariance:
    """Limit covariance tabulated on an offset grid of ``N`` nodes per axis."""
    grid = TorusGrid(kernel.d, N, offset=True)
    return limit_symbol(spec, build_spectral_table(kernel, grid))


def _four_terms(lim: LimitCovariance, z: np.ndarray, zp: np.ndarray) -> np.ndarray:
    zt = z.copy()
    zt[..., 0] *= -1
    zpt = zp.copy()
    zpt[..., 0] *= -1
    # grouped so that z1 = 0 or z1' = 0 cancels exactly
    return (lim.at(z - zp) - lim.at(zt - zp)) - (lim.at(z - zpt) - lim.at(zt - zpt))


def limit_halfspace(lim: LimitCovariance, z, zp) -> np.ndarray:
    """``Q_inf(z, z') = q(z - z') - q(z - z'~) - q(z~ - z') + q(z~ - z'~)``."""
    return _four_terms(lim, np.asarray(z, dtype=np.int64), np.asarray(zp, dtype=np.int64))


def limit_covariance_field(lim: LimitCovariance, probes: Sequence) -> "CovarianceField":
    P = np.asarray(probes, dtype=np.int64).reshape(len(probes), -1)
    Z = np.broadcast_to(P[:, None, :], (len(P), len(P), P.shape[1]))
    Zp = np.broadcast_to(P[None, :, :], (len(P), len(P), P.shape[1]))
    Q = _four_terms(lim, Z.copy(), Zp.copy())  # (P, P, m, m)
    return CovarianceField(probes, Q.transpose(0, 2, 1, 3), "limit-theoretical")


def dense_limit_covariance(lim: LimitCovariance, box: Box) -> np.ndarray:
    """``Q_inf`` between all sites of a half box, ``(S m, S m)``."""
    coords = box.coords().reshape(-1, box.d)
    return limit_covariance_field(lim, coords).dense()


# -- covariance fields ------------------------------------------------------------


@dataclass
class CovarianceField:
    """Blocks ``Q(z, z')`` on a probe set, stored as ``(P, m, P, m)``."""

    probes: Sequence
    Q: np.ndarray
    provenance: str
    stderr: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.probes = [tuple(int(c) for c in np.atleast_1d(p)) for p in self.probes]

    @property
    def m(self) -> int:
        return self.Q.shape[1]

    def pair(self, a: int, b: int) -> np.ndarray:
        return self.Q[a, :, b, :]

    def dense(self) -> np.ndarray:
        P, m = len(self.probes), self.m
        return self.Q.reshape(P * m, P * m)

    def exchange_defect(self) -> float:
        """``max |Q(z, z') - Q(z', z)^T|``."""
        return float(np.abs(self.Q - self.Q.transpose(2, 3, 0, 1)).max())

    def pair_norms(self) -> np.ndarray:
        return np.sqrt(np.sum(self.Q**2, axis=(1, 3)))

    def diagonal_norms(self) -> np.ndarray:
        """Spectral norm of ``Q(z, z)`` per probe."""
        return np.array([np.linalg.norm(self.pair(a, a), 2) for a in range(len(self.probes))])

    def error_vs(self, ref: "CovarianceField") -> float:
        """``max_pairs |Q - Q_ref|_F / max_pairs |Q_ref|_F``."""
        if ref.probes != self.probes:
            raise ValueError("probe sets differ")
        diff = np.sqrt(np.sum((self.Q - ref.Q) ** 2, axis=(1, 3)))
        return float(diff.max() / ref.pair_norms().max())

    def to_csv(self, path) -> Path:
        n = self.m // 2
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["z", "zp", "i", "j", "k", "l", "value", "stderr"])
            for a, z in enumerate(self.probes):
                for b, zp in enumerate(self.probes):
                    for r in range(self.m):
                        for c in range(self.m):
                            se = "" if self.stderr is None else repr(float(self.stderr[a, r, b, c]))
                            w.writerow(
                                [" ".join(map(str, z)), " ".join(map(str, zp)), r // n, c // n, r % n, c % n,
                                 repr(float(self.Q[a, r, b, c])), se]
                            )
        return Path(path)

    def summary(self, ref: "CovarianceField | None" = None) -> dict:
        out = {
            "provenance": self.provenance,
            "probes": [list(p) for p in self.probes],
            "max_pair_norm": float(self.pair_norms().max()),
            "exchange_defect": self.exchange_defect(),
            **self.meta,
        }
        if ref is not None:
            out["relative_error"] = self.error_vs(ref)
        return out

    def to_json(self, path, ref=None) -> Path:
        Path(path).write_text(json.dumps(self.summary(ref), indent=2, sort_keys=True))
        return Path(path)


def subfield(Q_dense: np.ndarray, box: Box, probes: Sequence, m: int, provenance: str) -> CovarianceField:
    """Restrict a dense ``(S m, S m)`` covariance to probe points."""
    flat = [np.ravel_multi_index(box.index(p), box.shape) for p in probes]
    S = box.sites
    Q4 = Q_dense.reshape(S, m, S, m)[np.ix_(flat, range(m), flat, range(m))]
    return CovarianceField(probes, Q4, provenance)


# -- propagation ----------------------------------------------------------------------


def initial_covariance(spec: CovarianceSpec, box: Box) -> np.ndarray:
    """Dense ``Q0(y, y') = q0(y - y') zeta(y1) zeta(y1')`` on a half box."""
    if not box.half:
        raise ValueError("need a half box")
    grid = box.grid()
    q0 = inverse_fourier(spec.symbol(grid.thetas()), grid, ndim_tail=2).real  # periodic table
    coords = box.coords().reshape(-1, box.d)
    diff = (coords[:, None, :] - coords[None, :, :]) % np.array(grid.shape)
    blocks = q0[tuple(diff[..., a] for a in range(box.d))]  # (S, S, m, m)
    zeta = ramp_profile(spec.cutoff)(coords[:, 0])
    blocks = blocks * (zeta[:, None] * zeta[None, :])[..., None, None]
    S, m = len(coords), blocks.shape[-1]
    return blocks.transpose(0, 2, 1, 3).reshape(S * m, S * m)


def propagate_dense(Q0: np.ndarray, table: SpectralTable, t: float, box: Box) -> np.ndarray:
    """``Q_t = G_{t,+} Q0 G_{t,+}^T`` for a dense half-box covariance."""
    if t == 0:
        return Q0.copy()
    G = halfspace_green_matrix(table, t, box)
    return G @ Q0 @ G.T


def propagate_covariance(
    spec: CovarianceSpec,
    table: SpectralTable,
    t: float,
    box: Box,
    probes: Sequence,
    method: str = "factored",
) -> CovarianceField:
    """Exact ``Q_t`` on probes for the cut-off translation-invariant initial law.

    ``factored`` pairs the transposed evolutions ``Phi_{z,i}`` of unit
    vectors at the probes with ``Q0 = q0 zeta (x) zeta`` via an FFT
    convolution; ``dense`` forms ``G_{t,+} Q0 G_{t,+}^T`` explicitly.
    """
    m = 2 * table.n
    if method == "dense":
        Qt = propagate_dense(initial_covariance(spec, box), table, t, box)
        f = subfield(Qt, box, probes, m, "propagated-exact")
        f.meta["t"] = float(t)
        return f
    if method != "factored":
        raise ValueError(f"unknown propagation method {method!r}")
    L1 = box.L[0]
    grid = table.grid
    zeta = ramp_profile(spec.cutoff)(np.arange(L1))
    zeta_full = np.zeros(grid.shape[0])
    zeta_full[:L1] = zeta
    zshape = (grid.shape[0],) + (1,) * (box.d - 1) + (1,)
    q0_hat = spec.symbol(grid.thetas())
    W = []
    for p in probes:
        for i in range(m):
            if int(p[0]) == 0:  # the boundary layer carries no field
                W.append(np.zeros(grid.shape + (m,)))
                continue
            Psi = FieldState.zeros(box, table.n)
            st = Psi.stacked()
            st[box.index(p) + (i,)] = 1.0
            Psi = FieldState.from_stacked(box, st)
            Phi = adjoint_evolve(Psi, table, t).stacked()
            W.append(Phi * zeta_full.reshape(zshape))
    W = np.stack(W)  # (P m, *N, m)
    Wh = fourier(np.moveaxis(W, 0, -1), grid, ndim_tail=2)  # (*N, m, Pm)
    conv = inverse_fourier(np.einsum("...ij,...jb->...ib", q0_hat, Wh), grid, ndim_tail=2).real
    Qflat = W.reshape(len(W), -1) @ conv.reshape(-1, len(W))
    P = len(probes)
    f = CovarianceField(probes, Qflat.reshape(P, m, P, m), "propagated-exact", meta={"t": float(t)})
    return f


def propagated_symbol(spec: CovarianceSpec, table: SpectralTable, t: float) -> np.ndarray:
    """Full-space ``G_t q0_hat G_t^*`` at every grid node, ``(*N, 2n, 2n)``.

    Its entries are trigonometric polynomials in t with frequencies
    ``0``, ``2 omega_s`` and ``omega_s +- omega_s'`` only.
    """
    G = propagator_hat(table, t).matrix
    q0 = spec.symbol(table.grid.thetas())
    return G @ q0 @ np.conj(np.swapaxes(G, -1, -2))


def empirical_covariance(acc: EnsembleAccumulator) -> CovarianceField:
    """Raw second moments with per-entry standard errors."""
    if acc.count < 2:
        raise InsufficientSamples(f"need at least 2 samples, have {acc.count}")
    return CovarianceField(
        acc.probes, acc.second_moment(), "empirical", stderr=acc.stderr(), meta={"M": acc.count}
    )


# -- splitting oracle ----------------------------------------------------------------

DECOMP_SITE_LIMIT = 1024


def _circulant_green(table: SpectralTable, t: float, L: int) -> np.ndarray:
    """Dense ``G_t(z - y)`` on a periodic d=1 ring of length L, ``(L m, L m)``."""
    G = green_function(table, t)
    idx = np.arange(L)
    diff = (idx[:, None] - idx[None, :]) % L
    blocks = G[diff]  # (L, L, m, m)
    m = G.shape[-1]
    return blocks.transpose(0, 2, 1, 3).reshape(L * m, L * m)


@dataclass
class Decomposition:
    t: float
    probes: list
    total: np.ndarray  # (P, m, P, m)
    parts: dict

    def sum_defect(self) -> float:
        return float(np.abs(self.total - sum(self.parts.values())).max())


def decomposition_oracle(spec: CovarianceSpec, kernel, L: int, t: float, probes: Sequence[int]) -> Decomposition:
    """Brute-force splitting of the unrestricted covariance on a d=1 ring.

    ``Q_*`` is ``Q0`` on ``y1, y1' >= 0`` and 0 elsewhere; it is split into
    ``Q+ = q0(y - y')/2``, ``Q- = q0(y - y') sign(y1')/2`` and the remainder,
    and each piece is propagated with the full-space Green function.
    """
    if kernel.d != 1 or spec.d != 1:
        raise ValueError("splitting oracle is implemented for d = 1")
    if L > DECOMP_SITE_LIMIT:
        raise ValueError(f"ring of {L} sites exceeds the oracle limit {DECOMP_SITE_LIMIT}")
    box = Box(L)
    table = build_spectral_table(kernel, box.grid())
    grid = table.grid
    q0 = inverse_fourier(spec.symbol(grid.thetas()), grid, ndim_tail=2).real
    y = box.coords()[:, 0]
    diff = (y[:, None] - y[None, :]) % L
    base = q0[diff]  # (L, L, m, m)
    zeta = ramp_profile(spec.cutoff)(y)
    pos = (y >= 0).astype(float)
    Qstar = base * (zeta[:, None] * zeta[None, :] * pos[:, None] * pos[None, :])[..., None, None]
    Qp = 0.5 * base
    Qm = 0.5 * base * np.sign(y)[None, :, None, None]
    parts0 = {"plus": Qp, "minus": Qm, "rest": Qstar - Qp - Qm}
    m = base.shape[-1]
    G = _circulant_green(table, t, L)
    flat = [int(p) % L for p in probes]

    def prop(Q):
        D = Q.transpose(0, 2, 1, 3).reshape(L * m, L * m)
        R = (G @ D @ G.T).reshape(L, m, L, m)
        return R[np.ix_(flat, range(m), flat, range(m))]

    return Decomposition(float(t), list(probes), prop(Qstar), {k: prop(v) for k, v in parts0.items()})


# -- normality ---------------------------------------------------------------------------

MIN_SAMPLES = 1000
VAR_EPS = 1e-14


@dataclass
class NormalityReport:
    verdict: str  # "pass", "fail" or "not-applicable"
    M: int
    skew: float = float("nan")
    skew_z: float = float("nan")
    kurtosis: float = float("nan")
    kurtosis_z: float = float("nan")
    ks_stat: float = float("nan")
    ks_p: float = float("nan")
    variance: float = float("nan")
    sample_variance: float = float("nan")

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def normality_test(samples, variance: float, z_max: float = 4.0, p_min: float = 0.01) -> NormalityReport:
    """Moment z-scores and a KS test against ``N(0, variance)``.

    Skewness and excess kurtosis are standardised by their asymptotic
    standard deviations ``sqrt(6/M)`` and ``sqrt(24/M)``.
    """
    x = np.asarray(samples, dtype=float).ravel()
    M = x.size
    if M < MIN_SAMPLES:
        raise ValueError(f"normality test needs at least {MIN_SAMPLES} samples, got {M}")
    if variance < VAR_EPS:
        return NormalityReport("not-applicable", M, variance=float(variance))
    g1 = float(stats.skew(x))
    g2 = float(stats.kurtosis(x))
    zs = g1 / np.sqrt(6.0 / M)
    zk = g2 / np.sqrt(24.0 / M)
    ks = stats.kstest(x, "norm", args=(0.0, np.sqrt(variance)))
    ok = abs(zs) <= z_max and abs(zk) <= z_max and ks.pvalue >= p_min
    return NormalityReport(
        "pass" if ok else "fail", M, g1, float(zs), g2, float(zk), float(ks.statistic), float(ks.pvalue),
        float(variance), float(np.var(x)),
    )
