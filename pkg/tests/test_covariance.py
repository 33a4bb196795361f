import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from halfcrystal import covariance as cov
from halfcrystal import dynamics as dyn
from halfcrystal import fields as fl
from halfcrystal.lattice import Box, TorusGrid
from halfcrystal.spectral import AcousticPointError, build_nn_kernel, build_spectral_table, onsite_kernel

BENCH_K = build_nn_kernel(1, 1, 1.0, 0.5)
BENCH_SPEC = fl.triangular_spec(2, 1)


def diag_spec(a, b):
    return fl.custom_spec(1, 1, {(0,): np.diag([np.sqrt(a), np.sqrt(b)])})


# -- the C matrix -------------------------------------------------------------------


def test_c_matrix_decoupled():
    table = build_spectral_table(onsite_kernel(1, [2.0]), TorusGrid(1, 4))
    assert np.allclose(cov.c_matrix(table), [[0, 0.5], [-2.0, 0]])


def test_c_matrix_squares_to_minus_identity():
    table = build_spectral_table(build_nn_kernel(2, 2, [1.0, 0.4], [0.3, 1.0]), TorusGrid(2, 8, offset=True))
    C = cov.c_matrix(table)
    assert np.allclose(C @ C, -np.eye(4), atol=1e-12)


def test_c_matrix_example_at_pi():
    table = build_spectral_table(build_nn_kernel(1, 1, 1.0, 1.0), TorusGrid(1, 8))
    C = cov.c_matrix(table)[4]
    assert np.allclose(C, [[0, 1 / np.sqrt(5)], [-np.sqrt(5), 0]])


def test_c_matrix_needs_gapped_grid():
    table = build_spectral_table(build_nn_kernel(1, 1, 1.0, 0.0), TorusGrid(1, 8))
    with pytest.raises(AcousticPointError):
        cov.c_matrix(table)


# -- limit symbol -------------------------------------------------------------------------


@pytest.mark.parametrize("a,b,m", [(1.0, 1.0, 1.0), (2.0, 0.5, 0.7), (0.0, 3.0, 2.0)])
def test_limit_symbol_decoupled(a, b, m):
    table = build_spectral_table(onsite_kernel(1, [m]), TorusGrid(1, 8, offset=True))
    lim = cov.limit_symbol(diag_spec(a, b), table)
    assert np.allclose(lim.plus[..., 0, 0], 0.25 * (a + b / m**2))
    assert np.allclose(lim.plus[..., 1, 1], 0.25 * (b + a * m**2))
    assert np.allclose(lim.plus[..., 0, 1], 0.0)
    assert np.allclose(lim.minus, 0.0)


def test_limit_symbol_hermitian_and_real_in_space():
    k = build_nn_kernel(2, 2, [1.0, 0.5], [0.4, 0.9])
    spec = fl.custom_spec(2, 2, {(0, 0): np.eye(4), (1, 0): 0.3 * np.ones((4, 4)), (0, 1): np.diag([0.2, 0, 0.1, 0.5])})
    lim = cov.limit_field(spec, k, 16)
    assert lim.hermitian_defect() < 1e-12
    assert np.abs(lim.minus - np.conj(np.swapaxes(lim.minus, -1, -2))).max() < 1e-12
    q = lim.position_table()
    assert np.isrealobj(q)


def test_limit_matches_nn_closed_form():
    table = build_spectral_table(build_nn_kernel(1, 2, [1.0, 2.0], [0.5, 0.8]), TorusGrid(1, 32, offset=True))
    spec = fl.custom_spec(1, 2, {(0,): np.eye(4) + 0.2, (1,): np.diag([0.5, 0.1, 0.3, 0.0])})
    lim = cov.limit_symbol(spec, table)
    assert np.abs(lim.total - cov.nn_limit_symbol(spec, table)).max() < 1e-10


def test_acoustic_limit_on_offset_grid():
    lim = cov.limit_field(BENCH_SPEC, build_nn_kernel(1, 1, 1.0, 0.0), 256)
    assert np.all(np.isfinite(lim.total))


# -- half-space limit -------------------------------------------------------------------------


@pytest.fixture(scope="module")
def bench_limit():
    return cov.limit_field(BENCH_SPEC, BENCH_K, 8192)


def test_limit_halfspace_vanishes_at_boundary(bench_limit):
    for zp in [(0,), (3,), (10,)]:
        assert not cov.limit_halfspace(bench_limit, (0,), zp).any()
        assert not cov.limit_halfspace(bench_limit, zp, (0,)).any()


@given(st.integers(0, 60), st.integers(0, 60))
def test_limit_halfspace_exchange_symmetry(z, zp):
    lim = cov.limit_field(BENCH_SPEC, BENCH_K, 256)
    a = cov.limit_halfspace(lim, (z,), (zp,))
    b = cov.limit_halfspace(lim, (zp,), (z,))
    assert np.allclose(a, b.T, atol=1e-12)


def test_limit_halfspace_deep_bulk(bench_limit):
    # far from the wall the odd part cancels and the reflected terms decay like 1/z
    a = cov.limit_halfspace(bench_limit, (1000,), (1003,))
    bulk = bench_limit.at((-3,)) + bench_limit.at((3,))
    assert np.abs(a - bulk).max() < 2e-3
    assert np.allclose(bulk, 2 * bench_limit.at((3,), part="plus"), atol=1e-12)


def test_limit_table_bounds(bench_limit):
    with pytest.raises(cov.OutOfBox):
        bench_limit.at((5000,))


def test_limit_field_on_probes(bench_limit):
    f = cov.limit_covariance_field(bench_limit, [(3,), (5,), (8,)])
    assert f.Q.shape == (3, 2, 3, 2)
    assert np.allclose(f.pair(0, 2), cov.limit_halfspace(bench_limit, (3,), (8,)))
    assert f.exchange_defect() < 1e-12


# -- propagation ---------------------------------------------------------------------


def test_propagation_at_zero_time():
    box = Box((32,), half=True)
    table = build_spectral_table(BENCH_K, box.grid())
    probes = [(0,), (1,), (2,), (5,)]
    f = cov.propagate_covariance(BENCH_SPEC, table, 0.0, box, probes)
    q = {0: 2.0, 1: 1.0}
    for a, (z,) in enumerate(probes):
        for b, (zp,) in enumerate(probes):
            expect = 0.0 if z == 0 or zp == 0 else q.get(abs(z - zp), 0.0)
            assert np.allclose(f.pair(a, b), expect * np.eye(2), atol=1e-12)


@pytest.mark.parametrize(
    "L,spec,k",
    [
        ((32,), fl.triangular_spec(2, 1, cutoff=2), BENCH_K),
        ((12, 4), fl.triangular_spec(2, 2), build_nn_kernel(2, 1, 1.0, 0.5)),
        ((16,), fl.custom_spec(1, 2, {(0,): np.eye(4), (1,): 0.4 * np.eye(4)}), build_nn_kernel(1, 2, [1, 2], [0.5, 1])),
    ],
)
def test_factored_matches_dense(L, spec, k):
    box = Box(L, half=True)
    table = build_spectral_table(k, box.grid())
    probes = [tuple([z] + [0] * (len(L) - 1)) for z in (1, 2, 4, 7)]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", dyn.GuardWarning)
        a = cov.propagate_covariance(spec, table, 6.0, box, probes)
        b = cov.propagate_covariance(spec, table, 6.0, box, probes, method="dense")
    assert np.abs(a.Q - b.Q).max() < 1e-10
    assert a.exchange_defect() < 1e-10


def test_dense_propagation_size_limit():
    box = Box((4200,), half=True)
    table = build_spectral_table(BENCH_K, box.grid())
    with pytest.raises(dyn.SizeLimitExceeded):
        dyn.halfspace_green_matrix(table, 1.0, box)


def test_unknown_propagation_method():
    box = Box((16,), half=True)
    with pytest.raises(ValueError):
        cov.propagate_covariance(BENCH_SPEC, build_spectral_table(BENCH_K, box.grid()), 1.0, box, [(1,)], "magic")


def _ensemble(box, t, M, seed=7, probes=((2,), (3,), (6,))):
    full = Box((2 * box.L[0],))
    table = build_spectral_table(BENCH_K, box.grid())
    acc = fl.EnsembleAccumulator(probes, box, 2)
    Xs = fl.cutoff_batch(fl.sample_batch(BENCH_SPEC, full, fl.NoiseLaw(), seed, range(M)))
    for X in Xs:
        Y = dyn.evolve_half(dyn.FieldState.from_stacked(box, X), table, t)
        acc.add(Y)
    return acc, table


def test_empirical_agrees_with_exact():
    box = Box((32,), half=True)
    acc, table = _ensemble(box, 5.0, 3000)
    emp = cov.empirical_covariance(acc)
    exact = cov.propagate_covariance(BENCH_SPEC, table, 5.0, box, acc.probes)
    z = np.abs(emp.Q - exact.Q) / emp.stderr
    assert z.max() <= 4.0
    assert emp.exchange_defect() == 0.0


def test_stderr_scales_like_root_m():
    box = Box((16,), half=True)
    small = cov.empirical_covariance(_ensemble(box, 0.0, 1000, seed=1)[0])
    big = cov.empirical_covariance(_ensemble(box, 0.0, 4000, seed=2)[0])
    ratio = np.median(small.stderr / big.stderr)
    assert ratio == pytest.approx(2.0, abs=0.3)


def test_empirical_needs_two_samples():
    box = Box((8,), half=True)
    acc = fl.EnsembleAccumulator([(1,)], box, 2).add(np.ones((8, 2)))
    with pytest.raises(fl.InsufficientSamples):
        cov.empirical_covariance(acc)


# -- splitting oracle and long-time behaviour ------------------------------------------------------


def test_decomposition_at_zero_time():
    P = [-2, 0, 1, 3]
    D = cov.decomposition_oracle(BENCH_SPEC, BENCH_K, 64, 0.0, P)
    q = {0: 2.0, 1: 1.0}
    for a, z in enumerate(P):
        for b, zp in enumerate(P):
            half = 0.5 * q.get(abs(z - zp), 0.0)
            assert np.allclose(D.parts["plus"][a, :, b, :], half * np.eye(2))
    assert D.sum_defect() < 1e-12


@settings(max_examples=10)
@given(st.floats(0, 30))
def test_decomposition_sums(t):
    D = cov.decomposition_oracle(BENCH_SPEC, BENCH_K, 64, t, [-1, 0, 2])
    assert D.sum_defect() <= 1e-10 * max(1.0, np.abs(D.total).max())


def test_decomposition_limits():
    with pytest.raises(ValueError):
        cov.decomposition_oracle(BENCH_SPEC, BENCH_K, 2048, 1.0, [0])
    with pytest.raises(ValueError):
        cov.decomposition_oracle(fl.triangular_spec(2, 2), build_nn_kernel(2, 1, 1.0, 0.5), 16, 1.0, [0])


def test_long_time_oracle(bench_limit):
    P = np.array([-2, 0, 1, 2, 5])
    ref = cov.CovarianceField(P[:, None], bench_limit.at((P[:, None] - P[None, :])[..., None]).transpose(0, 2, 1, 3), "limit")
    errs = {}
    for t in (200.0, 400.0):
        D = cov.decomposition_oracle(BENCH_SPEC, BENCH_K, 1024, t, P)
        errs[t] = cov.CovarianceField(P[:, None], D.total, "oracle").error_vs(ref)
    assert errs[400.0] <= 0.02
    # the transient decays like 1/t
    assert errs[400.0] / errs[200.0] == pytest.approx(0.5, abs=0.1)


@pytest.mark.parametrize("n", [1, 2])
def test_propagated_symbol_oscillation_frequencies(n):
    k = build_nn_kernel(1, n, [1.0, 2.0][:n], [0.5, 0.8][:n])
    spec = fl.custom_spec(1, n, {(0,): np.eye(2 * n) + 0.3, (1,): 0.5 * np.eye(2 * n)})
    table = build_spectral_table(k, TorusGrid(1, 8, offset=True))
    node = 3
    w = table.omega[node]
    freqs = sorted({0.0} | {abs(a + s * b) for a in w for b in w for s in (1, -1)})
    ts = np.linspace(0.0, 40.0, 120)
    basis = [np.ones_like(ts)]
    for f in freqs:
        if f > 1e-12:
            basis += [np.cos(f * ts), np.sin(f * ts)]
    B = np.stack(basis, axis=1)
    Y = np.stack([cov.propagated_symbol(spec, table, t)[node].ravel() for t in ts])
    for part in (Y.real, Y.imag):
        coef, *_ = np.linalg.lstsq(B, part, rcond=None)
        assert np.abs(B @ coef - part).max() < 1e-9


# -- normality ----------------------------------------------------------------------------


def test_normal_samples_pass():
    r = cov.normality_test(np.random.default_rng(0).normal(0, 2, 10_000), 4.0)
    assert r.passed and r.verdict == "pass"
    assert r.sample_variance == pytest.approx(4.0, rel=0.05)


def test_rademacher_samples_fail():
    x = fl.NoiseLaw("rademacher").draw(np.random.default_rng(0), 10_000)
    r = cov.normality_test(x, 1.0)
    assert r.verdict == "fail"
    assert r.kurtosis_z == pytest.approx(-2.0 / np.sqrt(24 / 10_000), rel=0.02)


def test_degenerate_variance():
    r = cov.normality_test(np.zeros(2000), 0.0)
    assert r.verdict == "not-applicable" and not r.passed


def test_too_few_samples():
    with pytest.raises(ValueError):
        cov.normality_test(np.zeros(999), 1.0)


def test_report_dict():
    d = cov.normality_test(np.random.default_rng(1).normal(size=2000), 1.0).to_dict()
    assert set(d) >= {"verdict", "M", "kurtosis_z", "ks_p"}


# -- export -----------------------------------------------------------------------------------


def test_csv_and_json_export(tmp_path, bench_limit):
    import json

    f = cov.limit_covariance_field(bench_limit, [(3,), (4,)])
    p = f.to_csv(tmp_path / "q.csv")
    lines = p.read_text().splitlines()
    assert lines[0] == "z,zp,i,j,k,l,value,stderr"
    assert len(lines) == 1 + 2 * 2 * 2 * 2
    first = lines[1].split(",")
    assert float(first[6]) == f.Q[0, 0, 0, 0]
    doc = json.loads(f.to_json(tmp_path / "q.json", ref=f).read_text())
    assert doc["relative_error"] == 0.0 and doc["probes"] == [[3], [4]]


def test_error_metric():
    Q = np.zeros((2, 2, 2, 2))
    Q[0, :, 0, :] = np.eye(2)
    ref = cov.CovarianceField([(1,), (2,)], Q, "ref")
    other = cov.CovarianceField([(1,), (2,)], 1.1 * Q, "x")
    assert other.error_vs(ref) == pytest.approx(0.1)
    with pytest.raises(ValueError):
        other.error_vs(cov.CovarianceField([(1,), (3,)], Q, "y"))
