"""Interaction kernels, their Fourier symbols and band structure.

A kernel ``V`` is a finitely supported map from lattice offsets to real
``n x n`` matrices.  Its symbol ``V_hat(theta) = sum_z V(z) exp(i z.theta)``
is Hermitian and, for admissible crystals, positive semi-definite; the
frequency matrix is ``Omega = V_hat ** 0.5``.  Band functions are the distinct
eigenvalues of ``Omega`` with their spectral projections.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .lattice import TorusGrid, reflect

log = logging.getLogger(__name__)

#: frequencies below this are treated as acoustic (zero) points
OMEGA_EPS = 1e-9
#: |d omega / d theta_1| below this counts as a stationary point
STATIONARY_EPS = 1e-9
#: eigenvalues of V_hat down to -E3_SLACK are clamped to zero
E3_SLACK = 1e-12


class ConditionViolation(ValueError):
    """Raised when a kernel fails a structural precondition (symmetry, positivity)."""

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class AcousticPointError(ValueError):
    pass


@dataclass
class InteractionKernel:
    """Finitely supported interaction matrix ``V(z)``.

    ``entries`` maps offset tuples to ``(n, n)`` real arrays.  ``family`` and
    ``params`` record how the kernel was built (e.g. nearest-neighbour with
    its gamma and m arrays) so that closed forms can be used where they exist.
    """

    d: int
    n: int
    entries: dict
    family: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for z, mat in self.entries.items():
            z = tuple(int(c) for c in z)
            if len(z) != self.d:
                raise ValueError(f"offset {z} does not have dimension {self.d}")
            mat = np.array(mat, dtype=float).reshape(self.n, self.n)
            if z in clean:
                clean[z] = clean[z] + mat
            else:
                clean[z] = mat
        if not clean:
            raise ValueError("kernel has empty support")
        self.entries = clean

    @property
    def offsets(self) -> list[tuple[int, ...]]:
        return sorted(self.entries)

    @property
    def radius(self) -> int:
        return max(max(abs(c) for c in z) for z in self.entries)

    def stacked(self):
        """Offsets as an ``(S, d)`` int array and matrices as ``(S, n, n)``."""
        offs = self.offsets
        return np.array(offs, dtype=np.int64).reshape(len(offs), self.d), np.stack(
            [self.entries[z] for z in offs]
        )

    def at(self, z) -> np.ndarray:
        return self.entries.get(tuple(int(c) for c in z), np.zeros((self.n, self.n)))

    # -- exact checks on the support table ---------------------------------
    def symmetry_defect(self) -> float:
        """max |V_lk(-z) - V_kl(z)| over the support (E2)."""
        worst = 0.0
        for z, mat in self.entries.items():
            mz = tuple(-c for c in z)
            worst = max(worst, float(np.max(np.abs(self.at(mz).T - mat))))
        return worst

    def evenness_defect(self) -> float:
        """max |V(z) - V(z~)| with z~ the reflection in the first axis (E0)."""
        worst = 0.0
        for z, mat in self.entries.items():
            worst = max(worst, float(np.max(np.abs(self.at(reflect(z)) - mat))))
        return worst

    def norm_bound(self) -> float:
        """Upper bound of ``max_theta ||V_hat(theta)||`` from the support table."""
        return float(sum(np.linalg.norm(m, 2) for m in self.entries.values()))

    # -- symbol -------------------------------------------------------------
    def symbol(self, thetas: np.ndarray) -> np.ndarray:
        """``V_hat`` at an array of points ``(..., d)``; returns ``(..., n, n)``."""
        thetas = np.asarray(thetas, dtype=float)
        offs, mats = self.stacked()
        phase = np.exp(1j * (thetas @ offs.T))  # (..., S)
        return np.einsum("...s,skl->...kl", phase, mats)

    def symbol_derivative(self, thetas: np.ndarray, axis: int) -> np.ndarray:
        """``d V_hat / d theta_axis`` at ``thetas``."""
        thetas = np.asarray(thetas, dtype=float)
        offs, mats = self.stacked()
        phase = 1j * offs[:, axis] * np.exp(1j * (thetas @ offs.T))
        return np.einsum("...s,skl->...kl", phase, mats)

    # -- serialisation ------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "n": self.n,
            "family": self.family,
            "params": self.params,
            "entries": [
                {"z": list(z), "matrix": self.entries[z].tolist()} for z in self.offsets
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "InteractionKernel":
        family = doc.get("family", "custom")
        if family == "nearest-neighbor" and "entries" not in doc:
            p = doc.get("params", doc)
            return build_nn_kernel(int(doc["d"]), int(doc["n"]), p["gamma"], p["m"])
        d, n = int(doc["d"]), int(doc["n"])
        entries = {tuple(e["z"]): np.array(e["matrix"], dtype=float) for e in doc["entries"]}
        return cls(d, n, entries, family=family, params=doc.get("params", {}))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "InteractionKernel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def build_nn_kernel(d: int, n: int, gamma, m) -> InteractionKernel:
    """Nearest-neighbour crystal: ``u_k'' = (gamma_k Laplacian - m_k^2) u_k``.

    The on-site entry is ``2 d gamma_k + m_k^2`` so that the row sum cancels
    the lattice Laplacian in every dimension, giving
    ``V_hat_kk(theta) = 2 gamma_k sum_i (1 - cos theta_i) + m_k^2``.
    """
    if d < 1 or n < 1:
        raise ValueError("need d >= 1 and n >= 1")
    gamma = np.broadcast_to(np.asarray(gamma, dtype=float), (n,)).copy()
    m = np.broadcast_to(np.asarray(m, dtype=float), (n,)).copy()
    if np.any(gamma <= 0):
        raise ValueError("nearest-neighbour couplings gamma_k must be positive")
    if np.any(m < 0):
        raise ValueError("masses m_k must be non-negative")
    zero = (0,) * d
    entries = {zero: np.diag(2 * d * gamma + m**2)}
    for i in range(d):
        for s in (1, -1):
            e = [0] * d
            e[i] = s
            entries[tuple(e)] = np.diag(-gamma)
    return InteractionKernel(
        d, n, entries, family="nearest-neighbor", params={"gamma": gamma.tolist(), "m": m.tolist()}
    )


def onsite_kernel(d: int, m) -> InteractionKernel:
    """Decoupled oscillators ``V(z) = diag(m^2) delta(z)``."""
    m = np.atleast_1d(np.asarray(m, dtype=float))
    return InteractionKernel(
        d, len(m), {(0,) * d: np.diag(m**2)}, family="onsite", params={"m": m.tolist()}
    )


def random_kernel(d: int, n: int, radius: int, mass: float, rng) -> InteractionKernel:
    """Generic coupled kernel ``V = B~ * B + mass^2 I`` with B even in z1.

    The autocorrelation form makes the symbol ``B_hat^* B_hat + mass^2`` PSD and
    the table symmetric; evenness of B in the first axis carries over to V.
    """
    rng = np.random.default_rng(rng)
    B = {}
    for z in np.ndindex(*([2 * radius + 1] * d)):
        z = tuple(c - radius for c in z)
        if z[0] < 0:
            continue
        B[z] = rng.normal(size=(n, n)) / (2 * radius + 1) ** (d / 2)
        B[reflect(z)] = B[z]
    entries: dict = {}
    for y, by in B.items():
        for w, bw in B.items():
            z = tuple(wc - yc for wc, yc in zip(w, y))
            entries[z] = entries.get(z, 0) + by.T @ bw
    zero = (0,) * d
    entries[zero] = entries[zero] + mass**2 * np.eye(n)
    return InteractionKernel(d, n, entries, family="custom", params={"radius": radius, "mass": mass})


def symbol_at(kernel: InteractionKernel, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float).reshape(kernel.d)
    return kernel.symbol(theta)


def nn_dispersion(kernel: InteractionKernel, thetas: np.ndarray) -> np.ndarray:
    """Closed-form nearest-neighbour frequencies ``omega_k(theta)``, shape ``(..., n)``."""
    if kernel.family != "nearest-neighbor":
        raise ValueError("closed-form dispersion only exists for nearest-neighbour kernels")
    gamma = np.asarray(kernel.params["gamma"])
    m = np.asarray(kernel.params["m"])
    s = np.sum(1 - np.cos(thetas), axis=-1)[..., None]
    return np.sqrt(2 * gamma * s + m**2)


@dataclass(frozen=True)
class Band:
    omega: float
    multiplicity: int
    projection: np.ndarray


class SpectralTable:
    """Band structure of a kernel on every node of a torus grid.

    Per node and per eigen-index ``k`` (ascending), ``omega[..., k]`` holds
    the frequency of the band that index belongs to, ``band[..., k]`` the band
    label and ``eigvecs[..., :, k]`` an orthonormal eigenvector, so that
    ``Pi_sigma = sum_{k in sigma} v_k v_k^*``.  ``dw[..., k, a]`` is the band
    derivative along axis ``a`` and ``sign1`` its sign along the first axis.
    """

    def __init__(self, kernel, grid, vhat, eigvals, eigvecs, omega, band, nbands, dw, merge_tol):
        self.kernel = kernel
        self.grid = grid
        self.vhat = vhat
        self.eigvals = eigvals
        self.eigvecs = eigvecs
        self.omega = omega
        self.band = band
        self.nbands = nbands
        self.dw = dw
        self.merge_tol = merge_tol
        sign = np.sign(dw[..., 0])
        sign[np.abs(dw[..., 0]) < STATIONARY_EPS] = 0.0
        self.sign1 = sign

    @property
    def n(self) -> int:
        return self.kernel.n

    @property
    def shape(self) -> tuple[int, ...]:
        return self.grid.shape

    def matrix_function(self, f: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        """``sum_sigma f(omega_sigma) Pi_sigma`` at every node, shape ``(*N, n, n)``."""
        vals = f(self.omega)
        U = self.eigvecs
        return np.einsum("...ik,...k,...jk->...ij", U, vals, U.conj())

    def omega_matrix(self) -> np.ndarray:
        return self.matrix_function(lambda w: w)

    def inverse_omega(self) -> np.ndarray:
        if np.any(self.omega < OMEGA_EPS):
            idx = np.argwhere(self.omega < OMEGA_EPS)[0]
            raise AcousticPointError(
                f"Omega^-1 undefined: omega < {OMEGA_EPS} at grid index {tuple(idx[:-1])}"
            )
        return self.matrix_function(lambda w: 1.0 / w)

    def sin_over_omega(self, t: float) -> np.ndarray:
        """``sin(Omega t) Omega^-1`` with the removable singularity at omega = 0."""
        return self.matrix_function(lambda w: t * np.sinc(w * t / np.pi))

    def same_band_mask(self) -> np.ndarray:
        """``mask[..., k, l] = 1`` when eigen-indices k and l share a band."""
        return (self.band[..., :, None] == self.band[..., None, :]).astype(float)

    def bands_at(self, index) -> list[Band]:
        index = tuple(index)
        U = self.eigvecs[index]
        out = []
        for b in range(int(self.nbands[index])):
            ks = np.flatnonzero(self.band[index] == b)
            P = U[:, ks] @ U[:, ks].conj().T
            out.append(Band(float(self.omega[index][ks[0]]), len(ks), P))
        return out

    def max_group_velocity(self) -> float:
        """``max_sigma sup_theta |grad omega_sigma|`` sampled on the grid."""
        return float(np.max(np.linalg.norm(self.dw, axis=-1)))

    def thetas(self) -> np.ndarray:
        return self.grid.thetas()


def build_spectral_table(kernel: InteractionKernel, grid: TorusGrid, derivative: str = "analytic") -> SpectralTable:
    """Eigendecomposition of the symbol at every grid node.

    ``derivative`` selects how band slopes are obtained: ``"analytic"`` uses
    the band-trace formula ``tr(Pi dV_hat) / (2 omega r)`` (for diagonal
    nearest-neighbour kernels this is ``gamma sin(theta_a) / omega``);
    ``"fd"`` uses central differences of the sorted frequencies.
    """
    if grid.d != kernel.d:
        raise ValueError("grid and kernel dimensions differ")
    defect = kernel.symmetry_defect()
    if defect > 1e-12:
        raise ConditionViolation(f"kernel is not symmetric: V_lk(-z) != V_kl(z) (defect {defect:.3g})")
    decomp = _decompose(kernel, grid.thetas(), derivative, grid.shape)
    return SpectralTable(kernel, grid, *decomp)


def band_functions(kernel: InteractionKernel, thetas, derivative: str = "analytic"):
    """Band frequencies and their gradients at arbitrary points ``(..., d)``.

    Returns ``(omega, dw)`` with shapes ``(..., n)`` and ``(..., n, d)``;
    eigen-indices of a degenerate band carry the common band value.
    """
    thetas = np.asarray(thetas, dtype=float)
    _, _, _, omega, _, _, dw, _ = _decompose(kernel, thetas, derivative, thetas.shape[:-1])
    return omega, dw


def _decompose(kernel, thetas, derivative, shape):
    vhat = kernel.symbol(thetas)
    vhat = 0.5 * (vhat + np.conj(np.swapaxes(vhat, -1, -2)))
    lam, U = np.linalg.eigh(vhat)
    if lam.min() < -E3_SLACK:
        idx = np.unravel_index(np.argmin(lam.min(axis=-1)), shape)
        raise ConditionViolation(
            f"symbol not PSD at theta={thetas[idx].tolist()}: eigenvalue {lam[idx].min():.3g}",
            witness={"theta": thetas[idx].tolist(), "eigenvalue": float(lam[idx].min())},
        )
    lam = np.clip(lam, 0.0, None)
    w_raw = np.sqrt(lam)
    merge_tol = 1e-8 * (1.0 + float(w_raw.max()))
    band = np.zeros(lam.shape, dtype=np.int64)
    for k in range(1, kernel.n):
        band[..., k] = band[..., k - 1] + (w_raw[..., k] - w_raw[..., k - 1] > merge_tol)
    nbands = band[..., -1] + 1
    omega = _band_average(w_raw, band, kernel.n)
    if derivative == "analytic":
        dw = _band_slopes(kernel, thetas, U, omega, band)
    elif derivative == "fd":
        dw = _band_slopes_fd(kernel, thetas, h=1e-6)
    else:
        raise ValueError(f"unknown derivative method {derivative!r}")
    return vhat, lam, U, omega, band, nbands, dw, merge_tol


def _band_average(values, band, n):
    out = np.empty_like(values)
    for k in range(n):
        same = band == band[..., k : k + 1]
        out[..., k] = np.sum(values * same, axis=-1) / np.sum(same, axis=-1)
    return out


def _band_slopes(kernel, thetas, U, omega, band):
    n = kernel.n
    dw = np.zeros(omega.shape + (kernel.d,))
    for a in range(kernel.d):
        dV = kernel.symbol_derivative(thetas, a)
        diag = np.real(np.einsum("...ik,...ij,...jk->...k", U.conj(), dV, U))
        avg = _band_average(diag, band, n)
        with np.errstate(divide="ignore", invalid="ignore"):
            g = np.where(omega > OMEGA_EPS, avg / (2 * np.maximum(omega, OMEGA_EPS)), 0.0)
        dw[..., a] = g
    return dw


def _band_slopes_fd(kernel, thetas, h):
    dw = np.zeros(thetas.shape[:-1] + (kernel.n, kernel.d))
    for a in range(kernel.d):
        step = np.zeros(kernel.d)
        step[a] = h
        wp = np.sqrt(np.clip(np.linalg.eigvalsh(kernel.symbol(thetas + step)), 0, None))
        wm = np.sqrt(np.clip(np.linalg.eigvalsh(kernel.symbol(thetas - step)), 0, None))
        dw[..., a] = (wp - wm) / (2 * h)
    return dw


# -- condition validation ----------------------------------------------------

VERIFIED_EXACT = "verified-exact"
VERIFIED_SAMPLED = "verified-sampled"
VIOLATED = "violated"
NOT_APPLICABLE = "not-applicable"


@dataclass
class Tolerances:
    exact: float = 1e-12
    det_eps: float = 1e-9  # det V_hat below this: near the zero set of the symbol
    hess_eps: float = 1e-10  # |det Hess omega| below this: degenerate curvature
    hess_vanish_fraction: float = 0.999  # fraction of degenerate nodes meaning "vanishes identically"
    const_eps: float = 1e-8  # variance threshold for omega_s +- omega_s' == const
    divergence_ratio: float = 0.8  # increment ratio across refinements flagging divergence


@dataclass
class ConditionReport:
    conditions: dict
    critical: dict
    grid: dict

    @property
    def violated(self) -> list[str]:
        return [k for k, v in self.conditions.items() if v["status"] == VIOLATED]

    @property
    def ok(self) -> bool:
        return not self.violated

    def to_dict(self) -> dict:
        return {"conditions": self.conditions, "critical": self.critical, "grid": self.grid, "ok": self.ok}

    def to_json(self) -> str:
        return json.dumps(_jsonable(self.to_dict()), indent=2)

    def summary(self) -> str:
        lines = []
        for name, entry in self.conditions.items():
            note = entry.get("note", "")
            lines.append(f"{name}: {entry['status']}" + (f"  ({note})" if note else ""))
        lines.append("overall: " + ("ok" if self.ok else "violated: " + ", ".join(self.violated)))
        return "\n".join(lines)


def validate_conditions(kernel: InteractionKernel, grid: TorusGrid, tol: Tolerances | None = None) -> ConditionReport:
    """Check the structural conditions on a kernel.

    Support-table conditions (evenness in z1, finite support, symmetry) are
    checked exactly; conditions on the symbol are checked on grid samples and
    are reported as ``verified-sampled`` at best.
    """
    tol = tol or Tolerances()
    cond: dict = {}
    even = kernel.evenness_defect()
    cond["E0"] = {
        "status": VERIFIED_EXACT if even <= tol.exact else VIOLATED,
        "defect": even,
        "note": "V(z) = V(z~)",
    }
    cond["E1"] = {"status": VERIFIED_EXACT, "radius": kernel.radius, "note": "finite support"}
    sym = kernel.symmetry_defect()
    cond["E2"] = {
        "status": VERIFIED_EXACT if sym <= tol.exact else VIOLATED,
        "defect": sym,
        "note": "V_lk(-z) = V_kl(z)",
    }
    thetas = grid.thetas()
    vhat = kernel.symbol(thetas)
    vhat = 0.5 * (vhat + np.conj(np.swapaxes(vhat, -1, -2)))
    lam = np.linalg.eigvalsh(vhat)
    lmin = lam.min(axis=-1)
    imin = np.unravel_index(np.argmin(lmin), grid.shape)
    e3_ok = lmin.min() >= -E3_SLACK
    cond["E3"] = {
        "status": VERIFIED_SAMPLED if e3_ok else VIOLATED,
        "min_eigenvalue": float(lmin.min()),
        "witness_theta": thetas[imin].tolist(),
    }
    critical = {}
    det = np.prod(np.clip(lam, 0, None), axis=-1)
    near_c0 = det < tol.det_eps
    critical["near_C0_fraction"] = float(near_c0.mean())
    critical["near_C0_witnesses"] = thetas[near_c0][:5].tolist()

    if not (e3_ok and sym <= tol.exact):
        for name in ("E4", "E5", "E6"):
            cond[name] = {"status": NOT_APPLICABLE, "note": "symbol not admissible (E2/E3 failed)"}
        return ConditionReport(cond, critical, grid.to_dict())

    table = build_spectral_table(kernel, grid)
    cond["E4"], critical_hess = _check_hessian(table, tol)
    critical.update(critical_hess)
    cond["E5"] = _check_constant_combinations(table, tol)
    cond["E6"] = _check_inverse_integrable(kernel, grid, tol)
    return ConditionReport(cond, critical, grid.to_dict())


def _hessian_det(table: SpectralTable) -> np.ndarray:
    """Central-difference Hessian determinant of every eigen-index frequency."""
    grid = table.grid
    w = table.omega
    d = grid.d
    H = np.zeros(w.shape + (d, d))
    h = [2 * np.pi / grid.N[a] for a in range(d)]
    for a in range(d):
        H[..., a, a] = (np.roll(w, -1, axis=a) - 2 * w + np.roll(w, 1, axis=a)) / h[a] ** 2
        for b in range(a + 1, d):
            pp = np.roll(np.roll(w, -1, axis=a), -1, axis=b)
            pm = np.roll(np.roll(w, -1, axis=a), 1, axis=b)
            mp = np.roll(np.roll(w, 1, axis=a), -1, axis=b)
            mm = np.roll(np.roll(w, 1, axis=a), 1, axis=b)
            H[..., a, b] = H[..., b, a] = (pp - pm - mp + mm) / (4 * h[a] * h[b])
    return np.linalg.det(H)


def _check_hessian(table: SpectralTable, tol: Tolerances):
    grid = table.grid
    w = table.omega
    detH = _hessian_det(table)
    # exclude acoustic points and neighbourhoods of band crossings
    valid = w > 1e3 * OMEGA_EPS
    if table.n > 1:
        gaps = np.diff(np.sqrt(table.eigvals), axis=-1)
        near_cross = np.any((gaps > table.merge_tol) & (gaps < 1e-3), axis=-1)
        for a in range(grid.d):
            near_cross = near_cross | np.roll(near_cross, 1, axis=a) | np.roll(near_cross, -1, axis=a)
        valid = valid & ~near_cross[..., None]
    fractions = []
    for k in range(table.n):
        v = valid[..., k]
        if not v.any():
            fractions.append(1.0)
            continue
        fractions.append(float(np.mean(np.abs(detH[..., k][v]) < tol.hess_eps)))
    worst = max(fractions)
    status = VIOLATED if worst >= tol.hess_vanish_fraction else VERIFIED_SAMPLED
    degenerate = np.any((np.abs(detH) < tol.hess_eps) & valid, axis=-1)
    crit = {
        "near_C_sigma_fraction": float(degenerate.mean()),
        "near_C_sigma_witnesses": grid.thetas()[degenerate][:5].tolist(),
    }
    entry = {
        "status": status,
        "degenerate_fraction_per_index": fractions,
        "note": "det Hess(omega_sigma) not identically zero",
    }
    return entry, crit


def _check_constant_combinations(table: SpectralTable, tol: Tolerances) -> dict:
    n = table.n
    w = table.omega.reshape(-1, n)
    eps = tol.const_eps * (1 + float(w.max()))
    pairs = []
    offending = []
    for k in range(n):
        for l in range(k + 1, n):
            if np.all(np.abs(w[:, k] - w[:, l]) <= table.merge_tol):
                continue  # same band everywhere
            pairs.append((k, l))
            for sgn, label in ((1, "+"), (-1, "-")):
                s = w[:, k] + sgn * w[:, l]
                if s.std() < eps and abs(s.mean()) > eps:
                    offending.append({"pair": [k, l], "combination": label, "value": float(s.mean())})
    if not pairs:
        return {"status": NOT_APPLICABLE, "note": "single band"}
    return {
        "status": VIOLATED if offending else VERIFIED_SAMPLED,
        "pairs_checked": len(pairs),
        "offending": offending,
    }


def inverse_norm_integral(kernel: InteractionKernel, grid: TorusGrid) -> float:
    """Midpoint estimate of ``(2 pi)^-d int ||V_hat^-1(theta)|| dtheta``."""
    g = TorusGrid(grid.d, grid.N, offset=True)
    lam = np.linalg.eigvalsh(kernel.symbol(g.thetas()))
    lmin = lam.min(axis=-1)
    if np.any(lmin <= 0):
        return float("inf")
    return float(np.mean(1.0 / lmin))


def _check_inverse_integrable(kernel: InteractionKernel, grid: TorusGrid, tol: Tolerances) -> dict:
    ests = [inverse_norm_integral(kernel, grid.refined(f)) for f in (1, 2, 4)]
    entry = {"estimates": ests, "grid_N": [list(grid.refined(f).N) for f in (1, 2, 4)]}
    if not np.all(np.isfinite(ests)):
        entry.update(status=VIOLATED, note="symbol singular on the offset grid")
        return entry
    d1, d2 = ests[1] - ests[0], ests[2] - ests[1]
    scale = max(abs(ests[2]), 1e-300)
    if abs(d2) <= 1e-9 * scale:
        ratio = 0.0
    else:
        ratio = d2 / d1 if d1 != 0 else float("inf")
    entry["increment_ratio"] = ratio
    divergent = ests[1] > 2 * ests[0] or ratio >= tol.divergence_ratio
    entry["status"] = VIOLATED if divergent else VERIFIED_SAMPLED
    entry["note"] = "||V_hat^-1|| integral " + ("grows under refinement" if divergent else "converges")
    return entry


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    return obj
