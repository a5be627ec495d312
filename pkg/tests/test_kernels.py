import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rawdistill import _kernels

py = _kernels.python_backend
cy = _kernels.compiled_backend

needs_compiled = pytest.mark.skipif(cy is None, reason="compiled extension not built")


def test_backend_selection_is_reported():
    assert _kernels.BACKEND in ("cython", "python")
    assert _kernels.backend.NAME == _kernels.BACKEND


@needs_compiled
@settings(max_examples=40, deadline=None)
@given(
    st.integers(0, 2**31 - 1),
    st.integers(1, 3),
    st.integers(1, 4),
    st.sampled_from([1, 3]),
    st.sampled_from([1, 2]),
    st.integers(0, 2),
)
def test_im2col_col2im_bit_identical(seed, n, c, k, stride, pad):
    rng = np.random.default_rng(seed)
    h = w = 6
    x = rng.standard_normal((n, c, h, w)).astype(np.float32)
    a, b = py.im2col(x, k, k, stride, pad), cy.im2col(x, k, k, stride, pad)
    assert a.tobytes() == b.tobytes()
    rows = rng.standard_normal(a.shape).astype(np.float32)
    ga = py.col2im(rows, n, c, h, w, k, k, stride, pad)
    gb = cy.col2im(rows, n, c, h, w, k, k, stride, pad)
    assert ga.tobytes() == gb.tobytes()


@needs_compiled
@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.booleans())
def test_maxpool_bit_identical(seed, ties):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 3, 8, 6)).astype(np.float32)
    if ties:
        x = np.round(x)
    oa, ia = py.maxpool2_forward(x)
    ob, ib = cy.maxpool2_forward(x)
    assert oa.tobytes() == ob.tobytes() and ia.tobytes() == ib.tobytes()
    g = rng.standard_normal(oa.shape).astype(np.float32)
    assert py.maxpool2_backward(g, ia).tobytes() == cy.maxpool2_backward(g, ib).tobytes()


@needs_compiled
@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 6), st.integers(1, 6))
def test_bilinear_fill_bit_identical(seed, hh, ww):
    m = np.random.default_rng(seed).random((2 * hh, 2 * ww)).astype(np.float32)
    assert py.bilinear_fill(m).tobytes() == cy.bilinear_fill(m).tobytes()


def test_im2col_adjoint_of_col2im():
    # <im2col(x), r> == <x, col2im(r)> for any x, r
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 3, 5, 5)).astype(np.float32)
    cols = _kernels.im2col(x, 3, 3, 2, 1)
    r = rng.standard_normal(cols.shape).astype(np.float32)
    lhs = float(np.sum(cols.astype(np.float64) * r))
    rhs = float(np.sum(x.astype(np.float64) * _kernels.col2im(r, 2, 3, 5, 5, 3, 3, 2, 1)))
    assert lhs == pytest.approx(rhs, rel=1e-5)
