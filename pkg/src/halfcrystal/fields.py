"""Initial random fields: covariance specifications, samplers, half-space
cutoff and streaming moment accumulators.

Fields are zero-mean.  A specification fixes the translation-invariant
correlation ``q0^{ij}(z) = E[X^i(z) X^j(0)]`` of the position block (i=0) and
velocity block (i=1), either through a finite-range moving-average kernel or
through its Fourier symbol.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import stencil
from .dynamics import FieldState
from .lattice import Box, fourier, inverse_fourier
from .spectral import InteractionKernel, SpectralTable

SINGULAR_EPS = 1e-10


class AliasingError(ValueError):
    """Box too small to hold the correlation range without wrap-around."""


class InsufficientSamples(ValueError):
    pass


# -- noise ---------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseLaw:
    """Standardised i.i.d. site noise (mean 0, variance 1)."""

    kind: str = "gaussian"

    KINDS = ("gaussian", "rademacher", "uniform")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown noise law {self.kind!r}; choose from {self.KINDS}")

    def draw(self, rng: np.random.Generator, shape) -> np.ndarray:
        if self.kind == "gaussian":
            return rng.standard_normal(shape)
        if self.kind == "rademacher":
            return rng.integers(0, 2, size=shape).astype(float) * 2.0 - 1.0
        return rng.uniform(-np.sqrt(3.0), np.sqrt(3.0), size=shape)


def sample_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for sample ``index`` under master ``seed``.

    Streams depend only on ``(seed, index)``, so any partition of the sample
    range across workers reproduces the same ensemble.
    """
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(index),)))


# -- specifications ----------------------------------------------------------------


def ramp_profile(a: int) -> Callable[[np.ndarray], np.ndarray]:
    """``zeta(s) = 0`` for ``s <= 0``, ``1`` for ``s > a``, linear in between."""
    if a < 0:
        raise ValueError("cutoff width must be nonnegative")
    return lambda s: np.clip(np.asarray(s, dtype=float) / (a + 1), 0.0, 1.0)


@dataclass
class CovarianceSpec:
    """Translation-invariant correlation of the initial field.

    ``ma`` maps an offset ``s`` to a ``(2n, p)`` matrix ``g(s)``; the
    moving-average field is ``X(z) = sum_s g(s) xi(z - s)`` with ``p``
    standardised noise channels, so ``q0(z) = sum_w g(z + w) g(w)^T``.
    ``symbol_fn`` maps nodes ``(..., d)`` to ``q0_hat`` of shape
    ``(..., 2n, 2n)``.  ``recipe`` picks the default sampler.
    """

    d: int
    n: int
    kind: str
    params: dict
    symbol_fn: Callable[[np.ndarray], np.ndarray]
    recipe: str = "moving-average"
    ma: dict | None = None
    blocks: dict | None = None
    cutoff: int = 0
    gaussian_only: bool = False
    kernel: InteractionKernel | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.recipe not in ("moving-average", "spectral"):
            raise ValueError(f"unknown synthesis recipe {self.recipe!r}")
        if self.recipe == "moving-average" and not self.ma:
            raise ValueError("moving-average recipe needs a kernel g")
        if self.ma is not None and self.blocks is None:
            self.blocks = _ma_correlation(self.ma)

    @property
    def range(self) -> int | None:
        """Smallest ``r`` with ``q0(z) = 0`` whenever some ``|z_i| >= r``; None if unbounded."""
        if self.blocks is None:
            return None
        return 1 + max(max(abs(c) for c in z) for z in self.blocks)

    def profile(self) -> Callable[[np.ndarray], np.ndarray]:
        return ramp_profile(self.cutoff)

    def q0(self, z) -> np.ndarray:
        """Position-space correlation block matrix at offset ``z``."""
        if self.blocks is None:
            raise ValueError(f"{self.kind} spec has no finite-range table")
        return self.blocks.get(tuple(int(c) for c in z), np.zeros((2 * self.n, 2 * self.n)))

    def symbol(self, thetas: np.ndarray) -> np.ndarray:
        return self.symbol_fn(np.asarray(thetas, dtype=float))

    def sqrt_symbol(self, thetas: np.ndarray) -> np.ndarray:
        """Hermitian PSD square root of ``q0_hat`` node by node."""
        w, U = np.linalg.eigh(self.symbol(thetas))
        w = np.clip(w, 0.0, None)
        return np.einsum("...ik,...k,...jk->...ij", U, np.sqrt(w), U.conj())

    def min_eigenvalue(self, thetas: np.ndarray) -> float:
        """Smallest eigenvalue of the diagonal blocks over the nodes."""
        q = self.symbol(thetas)
        n = self.n
        return float(min(np.linalg.eigvalsh(q[..., :n, :n]).min(), np.linalg.eigvalsh(q[..., n:, n:]).min()))

    def symmetry_defect(self) -> float:
        """``max |q0(z) - q0(-z)^T|`` over the finite-range table."""
        if self.blocks is None:
            return 0.0
        return max(
            float(np.abs(q - self.q0(tuple(-c for c in z)).T).max()) for z, q in self.blocks.items()
        )

    def to_dict(self) -> dict:
        doc = {"kind": self.kind, "d": self.d, "n": self.n, "cutoff": self.cutoff, **self.params}
        if self.kind == "custom-table":
            doc["ma"] = [{"offset": list(s), "g": g.tolist()} for s, g in sorted(self.ma.items())]
        if self.kind == "gibbs":
            doc["kernel"] = self.kernel.to_dict()
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict) -> "CovarianceSpec":
        kind = doc.get("kind")
        cutoff = int(doc.get("cutoff", 0))
        if kind == "triangular":
            return triangular_spec(int(doc["N0"]), int(doc["d"]), cutoff=cutoff)
        if kind == "gibbs":
            kernel = InteractionKernel.from_dict(doc["kernel"])
            return gibbs_spec(float(doc["T"]), kernel, cutoff=cutoff)
        if kind == "custom-table":
            ma = {tuple(e["offset"]): np.array(e["g"], dtype=float) for e in doc["ma"]}
            return custom_spec(int(doc["d"]), int(doc["n"]), ma, cutoff=cutoff)
        raise ValueError(f"unknown covariance spec kind {kind!r}")


def _ma_correlation(ma: dict) -> dict:
    out: dict = {}
    for s1, g1 in ma.items():
        for s2, g2 in ma.items():
            z = tuple(a - b for a, b in zip(s1, s2))
            out[z] = out.get(z, 0.0) + g1 @ g2.T
    return {z: q for z, q in out.items() if np.abs(q).max() > 0}


def _table_symbol(blocks: dict, d: int, n: int):
    offs = list(blocks)
    mats = np.stack([blocks[z] for z in offs])
    Z = np.array(offs, dtype=float)

    def fn(thetas):
        phase = np.exp(1j * thetas @ Z.T)  # (..., S)
        return np.einsum("...s,sij->...ij", phase, mats)

    return fn


def triangular_profile_symbol(N0: int, theta: np.ndarray) -> np.ndarray:
    """``sum_{|k| < N0} (N0 - |k|) exp(i k theta)``, i.e. ``(1 - cos N0 t)/(1 - cos t)``
    written without the removable singularity at ``t = 0``."""
    theta = np.asarray(theta, dtype=float)
    out = np.full(theta.shape, float(N0))
    for k in range(1, N0):
        out += 2.0 * (N0 - k) * np.cos(k * theta)
    return out


def triangular_spec(N0: int, d: int, n: int = 1, cutoff: int = 0) -> CovarianceSpec:
    """Product of triangles ``f(z_i) = N0 - |z_i|`` in both blocks, cross blocks zero.

    Synthesised as a box moving average: ``g`` is the indicator of
    ``{0..N0-1}^d`` so that box * box gives the triangle exactly.
    """
    if n != 1:
        raise ValueError("the triangular construction is scalar (n = 1)")
    if N0 < 1 or d < 1:
        raise ValueError("need N0 >= 1 and d >= 1")
    eye = np.eye(2)
    ma = {tuple(int(c) for c in s): eye.copy() for s in np.ndindex(*(N0,) * d)}

    def fn(thetas):
        f = np.prod(triangular_profile_symbol(N0, thetas), axis=-1)
        return f[..., None, None] * eye

    return CovarianceSpec(d, 1, "triangular", {"N0": int(N0)}, fn, "moving-average", ma, cutoff=cutoff)


def gibbs_spec(T: float, source, cutoff: int = 0) -> CovarianceSpec:
    """Thermal correlations ``q0_hat^{00} = T V_hat^-1``, ``q0_hat^{11} = T I``.

    ``source`` is an InteractionKernel or a SpectralTable (whose kernel is
    used and whose grid is scanned for near-singular symbols).
    """
    if T < 0:
        raise ValueError("temperature must be nonnegative")
    if isinstance(source, SpectralTable):
        kernel = source.kernel
        lam_min = float(source.eigvals.min())
    else:
        kernel = source
        lam_min = None
    if lam_min is None:
        from .lattice import TorusGrid

        probe = TorusGrid(kernel.d, 32 if kernel.d < 3 else 16, offset=False).thetas()
        lam_min = float(np.linalg.eigvalsh(kernel.symbol(probe)).min())
    if lam_min < SINGULAR_EPS:
        raise ValueError(f"interaction symbol nearly singular (min eigenvalue {lam_min:.3g})")
    n = kernel.n

    def fn(thetas):
        V = kernel.symbol(thetas)
        out = np.zeros(V.shape[:-2] + (2 * n, 2 * n), dtype=complex)
        out[..., :n, :n] = T * np.linalg.inv(V)
        out[..., n:, n:] = T * np.eye(n)
        return out

    return CovarianceSpec(
        kernel.d, n, "gibbs", {"T": float(T)}, fn, "spectral", cutoff=cutoff, gaussian_only=True, kernel=kernel
    )


def custom_spec(d: int, n: int, ma: dict, cutoff: int = 0) -> CovarianceSpec:
    """Spec from an arbitrary finite moving-average kernel ``g(s)`` of shape ``(2n, p)``."""
    ma = {tuple(int(c) for c in s): np.atleast_2d(np.asarray(g, dtype=float)) for s, g in ma.items()}
    for s, g in ma.items():
        if len(s) != d or g.shape[0] != 2 * n:
            raise ValueError(f"kernel entry at {s} has shape {g.shape}, expected (2n, p) with d={d}")
    blocks = _ma_correlation(ma)
    return CovarianceSpec(
        d, n, "custom-table", {}, _table_symbol(blocks, d, n), "moving-average", ma, blocks, cutoff=cutoff
    )


# -- sampling ------------------------------------------------------------------


def _check_box(spec: CovarianceSpec, box: Box):
    if box.half:
        raise ValueError("initial fields are sampled on a full periodic box")
    if box.d != spec.d:
        raise ValueError(f"box dimension {box.d} differs from spec dimension {spec.d}")
    r = spec.range
    if r is not None and min(box.L) < 2 * r:
        raise AliasingError(f"box extent {min(box.L)} < 2 x correlation range {r}")


def _ma_arrays(spec: CovarianceSpec, box: Box):
    offs = sorted(spec.ma)
    mats = np.stack([spec.ma[s] for s in offs])
    return stencil.neighbor_table(box.shape, offs), mats


def sample_batch(
    spec: CovarianceSpec,
    box: Box,
    noise: NoiseLaw,
    seed: int,
    indices: Iterable[int],
    recipe: str | None = None,
    backend=None,
) -> np.ndarray:
    """Samples ``indices`` of the ensemble, stacked ``(B, *L, 2n)`` as ``(u, v)``."""
    _check_box(spec, box)
    recipe = recipe or spec.recipe
    indices = list(indices)
    if spec.gaussian_only and noise.kind != "gaussian":
        raise ValueError(f"{spec.kind} spec is Gaussian only")
    m = 2 * spec.n
    if recipe == "moving-average":
        if not spec.ma:
            raise ValueError(f"{spec.kind} spec has no moving-average kernel")
        nbr, mats = _ma_arrays(spec, box)
        p = mats.shape[-1]
        xi = np.stack([noise.draw(sample_rng(seed, i), (box.sites, p)) for i in indices])
        out = stencil.apply_stencil(xi, nbr, mats, backend=backend)
        return out.reshape((len(indices),) + box.shape + (m,))
    if recipe == "spectral":
        grid = box.grid()
        root = spec.sqrt_symbol(grid.thetas())
        out = np.empty((len(indices),) + box.shape + (m,))
        for b, i in enumerate(indices):
            xi = noise.draw(sample_rng(seed, i), box.shape + (m,))
            Xh = np.einsum("...ij,...j->...i", root, fourier(xi, grid, ndim_tail=1))
            X = inverse_fourier(Xh, grid, ndim_tail=1)
            if np.abs(X.imag).max() > 1e-12 * max(1.0, np.abs(X.real).max()):
                raise ArithmeticError("spectral sample is not real")
            out[b] = X.real
        return out
    raise ValueError(f"unknown recipe {recipe!r}")


def sample_field(spec, box, noise: NoiseLaw, seed: int, index: int = 0, recipe=None, backend=None) -> FieldState:
    """One full-space sample, deterministic in ``(seed, index, box, spec)``."""
    X = sample_batch(spec, box, noise, seed, [index], recipe=recipe, backend=backend)[0]
    return FieldState.from_stacked(box, X)


def cutoff_halfspace(X: FieldState, a: int = 0, L1: int | None = None, profile=None) -> FieldState:
    """``Y0(z) = zeta(z1) X(z)`` on the half box ``z1 = 0..L1-1``.

    The default profile vanishes for ``z1 <= 0``, is 1 for ``z1 > a`` and
    linear in between.  ``L1`` defaults to half the periodic extent.
    """
    if X.half:
        raise ValueError("cutoff expects a full-space field")
    L0 = X.box.L[0]
    L1 = L0 // 2 if L1 is None else int(L1)
    if not 2 <= L1 <= L0 // 2:
        raise ValueError(f"half extent {L1} incompatible with periodic extent {L0}")
    zeta = (profile or ramp_profile(a))(np.arange(L1))
    z = zeta.reshape((L1,) + (1,) * X.box.d)
    box = Box((L1,) + X.box.L[1:], half=True)
    Y = FieldState(box, X.u[:L1] * z, X.v[:L1] * z)
    Y.u[0] = 0.0
    Y.v[0] = 0.0
    return Y


def cutoff_batch(Xs: np.ndarray, a: int = 0, L1: int | None = None, profile=None) -> np.ndarray:
    """Batched cutoff of stacked samples ``(B, *L, m)``; axis 1 is ``z1``."""
    L0 = Xs.shape[1]
    L1 = L0 // 2 if L1 is None else int(L1)
    zeta = (profile or ramp_profile(a))(np.arange(L1))
    zeta[0] = 0.0
    return Xs[:, :L1] * zeta.reshape((1, L1) + (1,) * (Xs.ndim - 2))


# -- accumulation --------------------------------------------------------------

_ACC_MAGIC = b"HCACC001"


class EnsembleAccumulator:
    """Streaming first and second moments of a half-space field on probes.

    Stores ``sum Y``, ``sum Y (x) Y`` and ``sum (Y (x) Y)^2`` over probe
    points, all components stacked as ``(u, v)``.  Merging adds sums, so it
    is exact up to floating-point summation order.
    """

    def __init__(self, probes: Sequence[Sequence[int]], box: Box, m: int):
        self.probes = [tuple(int(c) for c in p) for p in probes]
        self.box = box
        self.m = int(m)
        self._index = tuple(np.array(ix) for ix in zip(*[box.index(p) for p in self.probes]))
        P = len(self.probes)
        self.count = 0
        self.sum1 = np.zeros((P, m))
        self.sum2 = np.zeros((P, m, P, m))
        self.sumsq = np.zeros((P, m, P, m))

    @property
    def P(self) -> int:
        return len(self.probes)

    def extract(self, Y) -> np.ndarray:
        """Probe values ``(P, m)`` of a FieldState or stacked array ``(*L, m)``."""
        arr = Y.stacked() if isinstance(Y, FieldState) else np.asarray(Y)
        return arr[self._index]

    def add(self, Y) -> "EnsembleAccumulator":
        return self.add_values(self.extract(Y)[None])

    def add_batch(self, Ys: np.ndarray) -> "EnsembleAccumulator":
        """Add stacked samples ``(B, *L, m)``."""
        Ys = np.asarray(Ys)
        return self.add_values(Ys[(slice(None),) + self._index])

    def add_values(self, vals: np.ndarray) -> "EnsembleAccumulator":
        vals = np.asarray(vals, dtype=float)
        if vals.shape[1:] != (self.P, self.m):
            raise ValueError(f"probe values have shape {vals.shape[1:]}, expected {(self.P, self.m)}")
        flat = vals.reshape(len(vals), -1)
        prod = np.einsum("bi,bj->bij", flat, flat)
        self.count += len(vals)
        self.sum1 += vals.sum(axis=0)
        shape = self.sum2.shape
        self.sum2 += prod.sum(axis=0).reshape(shape)
        self.sumsq += (prod**2).sum(axis=0).reshape(shape)
        return self

    def _compatible(self, other: "EnsembleAccumulator"):
        if self.probes != other.probes or self.m != other.m:
            raise ValueError("accumulators have different probe sets")

    def merge(self, other: "EnsembleAccumulator") -> "EnsembleAccumulator":
        self._compatible(other)
        out = EnsembleAccumulator(self.probes, self.box, self.m)
        out.count = self.count + other.count
        out.sum1 = self.sum1 + other.sum1
        out.sum2 = self.sum2 + other.sum2
        out.sumsq = self.sumsq + other.sumsq
        return out

    def mean(self) -> np.ndarray:
        if self.count < 1:
            raise InsufficientSamples("no samples accumulated")
        return self.sum1 / self.count

    def second_moment(self) -> np.ndarray:
        if self.count < 1:
            raise InsufficientSamples("no samples accumulated")
        return self.sum2 / self.count

    def stderr(self) -> np.ndarray:
        """Standard error of each raw second-moment entry."""
        M = self.count
        if M < 2:
            raise InsufficientSamples("standard errors need at least 2 samples")
        mu = self.sum2 / M
        var = np.clip((self.sumsq - M * mu**2) / (M - 1), 0.0, None)
        return np.sqrt(var / M)

    # checkpoint: magic, u32 header length, JSON header, float64 sums
    def save(self, path) -> Path:
        header = json.dumps(
            {"probes": self.probes, "m": self.m, "count": self.count, "box": self.box.to_dict()}
        ).encode()
        with open(path, "wb") as fh:
            fh.write(_ACC_MAGIC)
            fh.write(struct.pack("<I", len(header)))
            fh.write(header)
            for arr in (self.sum1, self.sum2, self.sumsq):
                fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return Path(path)

    @classmethod
    def load(cls, path) -> "EnsembleAccumulator":
        raw = Path(path).read_bytes()
        if raw[:8] != _ACC_MAGIC:
            raise ValueError(f"{path} is not an accumulator checkpoint")
        (hlen,) = struct.unpack_from("<I", raw, 8)
        head = json.loads(raw[12 : 12 + hlen])
        box = Box(head["box"]["L"], half=head["box"]["half"])
        acc = cls(head["probes"], box, head["m"])
        acc.count = int(head["count"])
        data = np.frombuffer(raw, dtype="<f8", offset=12 + hlen)
        a, b = acc.sum1.size, acc.sum2.size
        acc.sum1 = data[:a].reshape(acc.sum1.shape).copy()
        acc.sum2 = data[a : a + b].reshape(acc.sum2.shape).copy()
        acc.sumsq = data[a + b :].reshape(acc.sumsq.shape).copy()
        return acc
