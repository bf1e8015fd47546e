import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ccan import kernels
from ccan import _kernels_py

needs_compiled = pytest.mark.skipif("cython" not in kernels.available_backends(),
                                    reason="compiled kernels not built")


@st.composite
def geometry(draw):
    n, c = draw(st.integers(1, 3)), draw(st.integers(1, 3))
    h, w = draw(st.integers(1, 9)), draw(st.integers(1, 9))
    kh, kw = draw(st.integers(1, 3)), draw(st.integers(1, 3))
    ph, pw = draw(st.integers(0, 2)), draw(st.integers(0, 2))
    sh, sw = draw(st.integers(1, 3)), draw(st.integers(1, 3))
    if kh > h + 2 * ph or kw > w + 2 * pw:
        ph, pw = kh, kw
    oh = (h + 2 * ph - kh) // sh + 1
    ow = (w + 2 * pw - kw) // sw + 1
    return n, c, h, w, kh, kw, sh, sw, ph, pw, oh, ow


@needs_compiled
@settings(max_examples=60, deadline=None)
@given(geometry(), st.sampled_from([np.float32, np.float64]))
def test_compiled_matches_fallback(geom, dtype):
    n, c, h, w, kh, kw, sh, sw, ph, pw, oh, ow = geom
    rng = np.random.default_rng(0)
    x = rng.normal(size=(n, c, h, w)).astype(dtype)
    a = kernels.im2col(x, kh, kw, sh, sw, ph, pw, oh, ow, backend="cython")
    b = kernels.im2col(x, kh, kw, sh, sw, ph, pw, oh, ow, backend="python")
    assert a.dtype == dtype and a.shape == b.shape
    np.testing.assert_array_equal(a, b)
    cols = rng.normal(size=a.shape).astype(dtype)
    ya = kernels.col2im(cols, n, c, h, w, kh, kw, sh, sw, ph, pw, oh, ow, backend="cython")
    yb = kernels.col2im(cols, n, c, h, w, kh, kw, sh, sw, ph, pw, oh, ow, backend="python")
    np.testing.assert_allclose(ya, yb, rtol=1e-5 if dtype == np.float32 else 1e-12, atol=1e-6)


@settings(max_examples=40, deadline=None)
@given(geometry())
def test_col2im_is_adjoint_of_im2col(geom):
    n, c, h, w, kh, kw, sh, sw, ph, pw, oh, ow = geom
    rng = np.random.default_rng(1)
    x = rng.normal(size=(n, c, h, w))
    for be in kernels.available_backends():
        cols = kernels.im2col(x, kh, kw, sh, sw, ph, pw, oh, ow, backend=be)
        y = rng.normal(size=cols.shape)
        back = kernels.col2im(y, n, c, h, w, kh, kw, sh, sw, ph, pw, oh, ow, backend=be)
        assert abs(np.sum(cols * y) - np.sum(x * back)) < 1e-10


def test_fallback_module_is_plain_numpy():
    x = np.arange(16.0).reshape(1, 1, 4, 4)
    cols = _kernels_py.im2col(x, 2, 2, 2, 2, 0, 0, 2, 2)
    np.testing.assert_array_equal(cols[0], [0, 1, 4, 5])
    np.testing.assert_array_equal(cols[3], [10, 11, 14, 15])


def test_explicit_python_backend():
    x = np.ones((1, 1, 2, 2))
    assert kernels.im2col(x, 1, 1, 1, 1, 0, 0, 2, 2, backend="python").shape == (4, 1)
