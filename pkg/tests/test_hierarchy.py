import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tempohier import autodiff as ad
from tempohier.errors import ContractError, DimensionError
from tempohier.hierarchy import (
    HierarchySpec,
    bin_average,
    build_summation_matrix,
    center_deviations,
    readout,
    upsample,
)

SPEC22 = HierarchySpec(c=4, h=4, w=2, k=2)


def test_default_spec():
    s = HierarchySpec()
    assert (s.c, s.h, s.w, s.k) == (35, 28, 7, 4)
    assert s.window == 63


@pytest.mark.parametrize("kw", [dict(h=27), dict(c=0), dict(w=0, k=4, h=0), dict(c=2.5)])
def test_spec_validation(kw):
    with pytest.raises(ContractError):
        HierarchySpec(**kw)


def test_summation_matrix_examples():
    np.testing.assert_array_equal(build_summation_matrix(SPEC22), [[1, 0], [1, 0], [0, 1], [0, 1]])
    np.testing.assert_array_equal(build_summation_matrix(HierarchySpec.from_bins(1, 5)), np.eye(5))
    S = build_summation_matrix(HierarchySpec())
    assert S.shape == (28, 4)
    for j in range(4):
        np.testing.assert_array_equal(np.nonzero(S[:, j])[0], np.arange(7 * j, 7 * j + 7))


@given(st.integers(1, 8), st.integers(1, 8))
def test_summation_matrix_structure(w, k):
    S = build_summation_matrix(HierarchySpec.from_bins(w, k))
    assert np.all(S.sum(axis=1) == 1)
    assert np.all(S.sum(axis=0) == w)
    assert not S.flags.writeable


def test_bin_average_examples():
    np.testing.assert_array_equal(bin_average(np.array([1.0, 3, 5, 7]), SPEC22), [2, 6])
    np.testing.assert_array_equal(bin_average(np.full(28, 2.5), HierarchySpec()), [2.5] * 4)


def test_center_and_readout_examples():
    np.testing.assert_allclose(center_deviations(np.array([1.0, 2, 3, 4]), SPEC22), [-0.5, 0.5, -0.5, 0.5])
    np.testing.assert_array_equal(center_deviations(np.full(4, 3.0), SPEC22), 0.0)
    out = readout(np.array([2.0, 6.0]), np.array([-0.5, 0.5, -0.5, 0.5]), SPEC22)
    np.testing.assert_allclose(out, [1.5, 2.5, 5.5, 6.5])
    np.testing.assert_array_equal(readout(np.array([2.0, 6.0]), np.zeros(4), SPEC22), [2, 2, 6, 6])


@settings(max_examples=60)
@given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**31 - 1))
def test_hierarchy_properties(w, k, seed):
    spec = HierarchySpec.from_bins(w, k)
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(3, k)) * 10
    d = rng.normal(size=(3, spec.h)) * 10
    np.testing.assert_allclose(bin_average(upsample(a, spec), spec), a, atol=1e-12)
    dev = center_deviations(d, spec)
    np.testing.assert_allclose(center_deviations(dev, spec), dev, atol=1e-12)
    np.testing.assert_allclose(bin_average(dev, spec), 0.0, atol=1e-12)
    np.testing.assert_allclose(bin_average(readout(a, dev, spec), spec), a, atol=1e-12)


def test_tensor_paths_match_arrays_and_differentiate():
    spec = HierarchySpec.from_bins(3, 2)
    rng = np.random.default_rng(0)
    a0, d0 = rng.normal(size=(2, 2)), rng.normal(size=(2, 6))
    tape = ad.Tape()
    a, d = tape.leaf(a0), tape.leaf(d0)
    out = readout(a, center_deviations(d, spec), spec)
    np.testing.assert_allclose(out.values, readout(a0, center_deviations(d0, spec), spec))
    g = ad.backward(ad.sum_(out), tape)
    # each level feeds w outputs; centred deviations sum to zero
    np.testing.assert_allclose(g[a.node], 3.0)
    np.testing.assert_allclose(g[d.node], 0.0, atol=1e-15)


@pytest.mark.parametrize(
    "fn,arg",
    [(bin_average, np.ones(5)), (upsample, np.ones(3)), (center_deviations, np.ones((2, 3)))],
)
def test_shape_errors(fn, arg):
    with pytest.raises(DimensionError):
        fn(arg, SPEC22)


def test_readout_batch_mismatch():
    with pytest.raises(DimensionError):
        readout(np.ones((2, 2)), np.ones((3, 4)), SPEC22)
