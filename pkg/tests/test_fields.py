import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from halfcrystal import fields as fl
from halfcrystal.dynamics import FieldState
from halfcrystal.lattice import Box, TorusGrid
from halfcrystal.spectral import build_nn_kernel, build_spectral_table, onsite_kernel

# -- triangular ---------------------------------------------------------------------


@pytest.mark.parametrize("N0,d", [(2, 1), (3, 2), (2, 3)])
def test_triangular_examples(N0, d):
    spec = fl.triangular_spec(N0, d)
    assert np.allclose(spec.q0((0,) * d), N0**d * np.eye(2))
    assert not spec.q0((N0,) + (0,) * (d - 1)).any()
    assert np.allclose(spec.q0((1,) + (0,) * (d - 1)), (N0 - 1) * N0 ** (d - 1) * np.eye(2))
    assert spec.range == N0
    assert spec.symmetry_defect() == 0.0


def test_triangular_symbol_vanishes_at_pi_for_even_width():
    assert fl.triangular_profile_symbol(2, np.pi) == pytest.approx(0.0, abs=1e-14)
    assert fl.triangular_profile_symbol(4, 0.0) == 16.0


@given(st.integers(1, 6), st.floats(0, 2 * np.pi))
def test_triangular_symbol_closed_form(N0, theta):
    expect = (1 - np.cos(N0 * theta)) / (1 - np.cos(theta)) if abs(1 - np.cos(theta)) > 1e-6 else None
    got = fl.triangular_profile_symbol(N0, theta)
    assert got >= -1e-9
    if expect is not None:
        assert got == pytest.approx(expect, rel=1e-8, abs=1e-8)


def test_triangular_symbol_matches_table():
    spec = fl.triangular_spec(3, 2)
    th = TorusGrid(2, 8).thetas()
    table_fn = fl._table_symbol(spec.blocks, 2, 1)
    assert np.allclose(spec.symbol(th), table_fn(th))


def test_triangular_rejects_vector_fields():
    with pytest.raises(ValueError):
        fl.triangular_spec(2, 1, n=2)


# -- Gibbs --------------------------------------------------------------------------


def test_gibbs_decoupled():
    spec = fl.gibbs_spec(2.0, onsite_kernel(1, [0.5, 2.0]))
    q = spec.symbol(np.array([[0.3]]))[0]
    assert np.allclose(np.diag(q).real, [8.0, 0.5, 2.0, 2.0])


def test_gibbs_at_zero_temperature():
    spec = fl.gibbs_spec(0.0, build_nn_kernel(1, 1, 1.0, 1.0))
    assert not spec.symbol(TorusGrid(1, 8).thetas()).any()


def test_gibbs_nn_value_at_pi():
    spec = fl.gibbs_spec(1.0, build_nn_kernel(1, 1, 1.0, 1.0))
    q = spec.symbol(np.array([[np.pi]]))[0]
    assert q[0, 0].real == pytest.approx(0.2)
    assert q[1, 1].real == pytest.approx(1.0)


def test_gibbs_rejects_acoustic_kernel():
    with pytest.raises(ValueError, match="singular"):
        fl.gibbs_spec(1.0, build_nn_kernel(1, 1, 1.0, 0.0))
    with pytest.raises(ValueError):
        fl.gibbs_spec(1.0, build_spectral_table(build_nn_kernel(1, 1, 1.0, 0.0), TorusGrid(1, 16)))


def test_gibbs_is_gaussian_only():
    spec = fl.gibbs_spec(1.0, build_nn_kernel(1, 1, 1.0, 1.0))
    with pytest.raises(ValueError):
        fl.sample_batch(spec, Box((16,)), fl.NoiseLaw("rademacher"), 0, [0])


# -- sampling -----------------------------------------------------------------------


def test_moving_average_variance():
    spec = fl.triangular_spec(2, 1)
    X = fl.sample_batch(spec, Box((16,)), fl.NoiseLaw(), 3, range(2000))
    assert X.shape == (2000, 16, 2)
    assert np.mean(X**2) == pytest.approx(2.0, rel=0.03)
    assert np.mean(X[:, :-1] * X[:, 1:]) == pytest.approx(1.0, rel=0.06)
    assert abs(np.mean(X[:, :, 0] * X[:, :, 1])) < 0.06


def test_spectral_recipe_matches_symbol():
    k = build_nn_kernel(1, 1, 1.0, 1.0)
    spec = fl.gibbs_spec(1.0, k)
    box = Box((32,))
    X = fl.sample_batch(spec, box, fl.NoiseLaw(), 5, range(2000))
    # q0^{00}(0) is the mean of T / V_hat over the grid
    theta = box.grid().thetas()[..., 0]
    expect = np.mean(1.0 / (2 - 2 * np.cos(theta) + 1.0))
    assert np.mean(X[..., 0] ** 2) == pytest.approx(expect, rel=0.03)
    assert np.mean(X[..., 1] ** 2) == pytest.approx(1.0, rel=0.03)


def test_sampling_is_deterministic_and_partition_invariant():
    spec = fl.triangular_spec(2, 2)
    box = Box((8, 8))
    a = fl.sample_batch(spec, box, fl.NoiseLaw(), 11, range(6))
    b = np.concatenate([fl.sample_batch(spec, box, fl.NoiseLaw(), 11, r) for r in (range(2), range(2, 6))])
    assert np.array_equal(a, b)
    c = fl.sample_batch(spec, box, fl.NoiseLaw(), 12, range(6))
    assert not np.allclose(a, c)
    X = fl.sample_field(spec, box, fl.NoiseLaw(), 11, index=4)
    assert np.array_equal(X.stacked(), a[4])


def test_backends_sample_identically():
    spec = fl.triangular_spec(3, 1)
    box = Box((32,))
    a = fl.sample_batch(spec, box, fl.NoiseLaw("uniform"), 1, range(4), backend="python")
    b = fl.sample_batch(spec, box, fl.NoiseLaw("uniform"), 1, range(4))
    assert np.allclose(a, b, atol=1e-14)


def test_aliasing_is_rejected():
    with pytest.raises(fl.AliasingError):
        fl.sample_batch(fl.triangular_spec(4, 1), Box((6,)), fl.NoiseLaw(), 0, [0])
    with pytest.raises(ValueError):
        fl.sample_batch(fl.triangular_spec(2, 1), Box((16,), half=True), fl.NoiseLaw(), 0, [0])


def test_custom_spec_correlation():
    g = {(0,): [[1.0], [0.0]], (1,): [[0.5], [2.0]]}
    spec = fl.custom_spec(1, 1, g)
    assert np.allclose(spec.q0((0,)), [[1.25, 1.0], [1.0, 4.0]])
    assert np.allclose(spec.q0((1,)), [[0.5, 0.0], [2.0, 0.0]])
    assert spec.symmetry_defect() == 0.0
    with pytest.raises(ValueError):
        fl.custom_spec(2, 1, g)


# -- cutoff -------------------------------------------------------------------------


def test_cutoff_examples(rng):
    box = Box((16, 4))
    X = FieldState(box, rng.normal(size=(16, 4, 1)), rng.normal(size=(16, 4, 1)))
    Y = fl.cutoff_halfspace(X)
    assert Y.half and Y.box.L == (8, 4)
    assert not Y.u[0].any() and not Y.v[0].any()
    assert np.array_equal(Y.u[1:], X.u[1:8])
    Y2 = fl.cutoff_halfspace(X, a=2)
    assert np.allclose(Y2.u[1], X.u[1] / 3) and np.allclose(Y2.u[2], 2 * X.u[2] / 3)
    assert np.array_equal(Y2.u[3:], X.u[3:8])


def test_cutoff_batch_matches_single(rng):
    box = Box((12,))
    Xs = rng.normal(size=(3, 12, 2))
    B = fl.cutoff_batch(Xs, a=1)
    for i in range(3):
        Y = fl.cutoff_halfspace(FieldState.from_stacked(box, Xs[i]), a=1)
        assert np.array_equal(B[i], Y.stacked())


def test_cutoff_rejects_bad_extent(rng):
    X = FieldState.zeros(Box((8,)), 1)
    with pytest.raises(ValueError):
        fl.cutoff_halfspace(X, L1=6)


def test_ramp_profile():
    z = fl.ramp_profile(3)(np.arange(-1, 6))
    assert np.allclose(z, [0, 0, 0.25, 0.5, 0.75, 1, 1])
    with pytest.raises(ValueError):
        fl.ramp_profile(-1)


# -- accumulator ------------------------------------------------------------------------


def test_single_sample_outer_product(rng):
    box = Box((8,), half=True)
    Y = rng.normal(size=(8, 2))
    acc = fl.EnsembleAccumulator([(1,), (4,)], box, 2).add(Y)
    v = Y[[1, 4]]
    assert np.allclose(acc.second_moment(), np.einsum("ai,bj->aibj", v, v))
    assert np.allclose(acc.mean(), v)
    with pytest.raises(fl.InsufficientSamples):
        acc.stderr()


@given(st.integers(0, 2**31), st.integers(1, 5), st.integers(1, 5), st.integers(1, 5))
def test_merge_is_associative(seed, a, b, c):
    rng = np.random.default_rng(seed)
    box = Box((6, 2), half=True)
    probes = [(1, 0), (3, -1)]

    def acc(k):
        return fl.EnsembleAccumulator(probes, box, 1).add_batch(rng.normal(size=(k, 6, 2, 1)))

    A, B, C = acc(a), acc(b), acc(c)
    left, right = A.merge(B).merge(C), A.merge(B.merge(C))
    assert left.count == a + b + c
    assert np.allclose(left.sum2, right.sum2) and np.allclose(left.sumsq, right.sumsq)


def test_merge_rejects_different_probes():
    box = Box((6,), half=True)
    with pytest.raises(ValueError):
        fl.EnsembleAccumulator([(1,)], box, 1).merge(fl.EnsembleAccumulator([(2,)], box, 1))


def test_accumulator_checkpoint(tmp_path, rng):
    box = Box((8, 2), half=True)
    acc = fl.EnsembleAccumulator([(1, 0), (2, -1)], box, 2).add_batch(rng.normal(size=(7, 8, 2, 2)))
    back = fl.EnsembleAccumulator.load(acc.save(tmp_path / "a.bin"))
    assert back.count == 7 and back.probes == acc.probes
    assert np.array_equal(back.sum2, acc.sum2) and np.array_equal(back.sumsq, acc.sumsq)
    (tmp_path / "b.bin").write_bytes(b"garbage!" * 4)
    with pytest.raises(ValueError):
        fl.EnsembleAccumulator.load(tmp_path / "b.bin")


def test_empty_accumulator():
    acc = fl.EnsembleAccumulator([(1,)], Box((4,), half=True), 1)
    with pytest.raises(fl.InsufficientSamples):
        acc.second_moment()


# -- noise and serialisation ----------------------------------------------------------------


@pytest.mark.parametrize("kind,kurt", [("gaussian", 3.0), ("rademacher", 1.0), ("uniform", 1.8)])
def test_noise_moments(kind, kurt):
    x = fl.NoiseLaw(kind).draw(np.random.default_rng(0), 200_000)
    assert abs(x.mean()) < 0.01
    assert x.var() == pytest.approx(1.0, rel=0.01)
    assert np.mean(x**4) == pytest.approx(kurt, rel=0.03)


def test_noise_rejects_unknown_law():
    with pytest.raises(ValueError):
        fl.NoiseLaw("cauchy")


def test_sample_streams_are_independent():
    a = fl.sample_rng(1, 0).random(4)
    assert np.array_equal(a, fl.sample_rng(1, 0).random(4))
    assert not np.array_equal(a, fl.sample_rng(1, 1).random(4))
    assert not np.array_equal(a, fl.sample_rng(2, 0).random(4))


@pytest.mark.parametrize(
    "spec",
    [
        fl.triangular_spec(3, 2, cutoff=2),
        fl.gibbs_spec(0.5, build_nn_kernel(1, 2, [1.0, 0.5], [1.0, 0.7])),
        fl.custom_spec(1, 1, {(0,): [[1.0], [0.2]], (2,): [[0.3], [0.0]]}),
    ],
)
def test_spec_json_roundtrip(spec):
    import json

    back = fl.CovarianceSpec.from_dict(json.loads(spec.to_json()))
    assert back.to_json() == spec.to_json()
    th = TorusGrid(spec.d, 8).thetas()
    assert np.allclose(back.symbol(th), spec.symbol(th))


def test_spec_from_unknown_kind():
    with pytest.raises(ValueError):
        fl.CovarianceSpec.from_dict({"kind": "white"})
