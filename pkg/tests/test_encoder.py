import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from mdfnet import encoder
from mdfnet.encoder import EncodingError

from oracles import mdf_reference

X7 = np.array([1, 3, 2, 5, 4, 6, 0], dtype=float)


@pytest.mark.parametrize("T, n, expected", [(100, 3, 49), (7, 3, 3), (2, 2, 1)])
def test_max_displacement(T, n, expected):
    assert encoder.max_displacement(T, n) == expected


@pytest.mark.parametrize("T, n", [(2, 3), (5, 1)])
def test_max_displacement_rejects(T, n):
    with pytest.raises(EncodingError):
        encoder.max_displacement(T, n)


@pytest.mark.parametrize("d, s, expected", [(1, 1, [2, -1]), (3, 1, [4, -5])])
def test_motif_difference(d, s, expected):
    np.testing.assert_array_equal(encoder.motif_difference(X7, 3, d, s), expected)


def test_motif_difference_constant():
    assert not encoder.motif_difference(np.full(9, 2.5), 4, 2, 2).any()


@pytest.mark.parametrize("d, s", [(4, 1), (3, 2), (1, 0), (0, 1)])
def test_motif_difference_out_of_range(d, s):
    with pytest.raises(EncodingError):
        encoder.motif_difference(X7, 3, d, s)


def test_masker_examples():
    np.testing.assert_array_equal(
        encoder.build_masker(7, 3),
        [[0, 0, 0, 0, 0], [0, 0, 0, 1, 1], [0, 1, 1, 1, 1]])
    np.testing.assert_array_equal(encoder.build_masker(4, 2)[2], [0, 1, 1])
    np.testing.assert_array_equal(encoder.build_masker(5, 5), [[0]])


def test_encode_example_rows():
    img = encoder.encode(X7, 3)
    assert img.shape == (2, 3, 5)
    np.testing.assert_array_equal(img[0, 0], [2, -1, 3, -1, 2])
    np.testing.assert_array_equal(img[1, 0], np.diff(X7)[1:6])


def test_encode_matches_reference_small():
    np.testing.assert_array_equal(encoder.encode(X7, 3), mdf_reference(X7, 3))


def test_encode_rejects_nonfinite():
    with pytest.raises(EncodingError):
        encoder.encode([1.0, np.nan, 2.0], 2)


def test_minmax_normalize():
    np.testing.assert_allclose(encoder.minmax_normalize([0, 5, 10], 0, 10), [0, 0.5, 1])
    np.testing.assert_allclose(encoder.minmax_normalize([-5, 15], 0, 10), [-0.5, 1.5])
    with pytest.raises(EncodingError):
        encoder.minmax_normalize([1, 2], 3, 3)


series = st.integers(2, 5).flatmap(lambda n: st.tuples(
    st.just(n),
    arrays(np.float64, st.integers(n, 40),
           elements=st.floats(-100, 100, allow_nan=False, width=32))))


@settings(max_examples=60, deadline=None)
@given(series)
def test_shape_and_oracle(args):
    n, x = args
    img = encoder.encode(x, n)
    T = len(x)
    assert img.shape == (n - 1, encoder.max_displacement(T, n), T - n + 1)
    np.testing.assert_allclose(img, mdf_reference(x, n), rtol=0, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(series)
def test_telescoping_and_rotation_fill(args):
    n, x = args
    T = len(x)
    img = encoder.encode(x, n)
    G = encoder.difference_field(x, n)
    K = encoder.build_masker(T, n).astype(bool)
    d_max, width = K.shape
    for d in range(1, d_max + 1):
        for s in range(1, width + 1):
            if not K[d - 1, s - 1]:
                assert img[:, d - 1, s - 1].sum() == pytest.approx(
                    x[s - 1 + (n - 1) * d] - x[s - 1], abs=1e-9)
            else:
                ds, ss = encoder.rotation_partner(d, s, d_max, width)
                assert encoder.rotation_partner(ds, ss, d_max, width) == (d, s)
                np.testing.assert_array_equal(img[:, d - 1, s - 1], G[:, ds - 1, ss - 1])


@settings(max_examples=40, deadline=None)
@given(series, st.floats(-50, 50, allow_nan=False))
def test_translation_invariance(args, c):
    n, x = args
    x = x.astype(np.float64)
    # shifts are exact for values on a coarse grid
    x = np.round(x * 4) / 4
    c = round(c * 4) / 4
    np.testing.assert_array_equal(encoder.encode(x + c, n), encoder.encode(x, n))


@pytest.mark.parametrize("n", [2, 3, 4, 5])
@pytest.mark.parametrize("T", [5, 6, 17])
def test_constant_series_gives_zero_image(n, T):
    assert not encoder.encode(np.full(T, -3.25), n).any()


def test_encode_batch_shape():
    X = np.random.default_rng(0).standard_normal((4, 20))
    assert encoder.encode_batch(X, 3).shape == (4, 2, 9, 18)
