import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from tempofuse import kernels
from tempofuse.kernels import _jit, _np

images = arrays(np.float64, st.tuples(st.integers(3, 12), st.integers(3, 12)),
                elements=st.integers(0, 4).map(float))


def test_census_reference_code():
    img = np.arange(1.0, 10.0).reshape(3, 3)
    assert int(kernels.census_transform(img, 1)[1, 1]) == 15


@given(images, st.integers(1, 3))
def test_census_backends_agree(img, radius):
    np.testing.assert_array_equal(_jit.census_transform(img, radius), _np.census_transform(img, radius))


def test_hamming_backends_agree():
    rng = np.random.default_rng(0)
    a = rng.integers(0, 2**63, size=(7, 9), dtype=np.uint64)
    b = rng.integers(0, 2**63, size=(7, 9), dtype=np.uint64)
    ref = np.array([bin(int(x) ^ int(y)).count("1") for x, y in zip(a.ravel(), b.ravel())]).reshape(a.shape)
    np.testing.assert_array_equal(_np.hamming(a, b), ref)
    np.testing.assert_array_equal(_jit.hamming(a, b), ref)


def test_cost_volume_backends_agree():
    rng = np.random.default_rng(1)
    left, right = rng.random((12, 20)), rng.random((12, 20))
    cl, cr = _np.census_transform(left, 2), _np.census_transform(right, 2)
    args = (left, right, cl, cr, 6, 2, 0.3, 24.0)
    np.testing.assert_allclose(_jit.stereo_cost_volume(*args), _np.stereo_cost_volume(*args), atol=1e-12)


def test_patch_match_backends_agree():
    rng = np.random.default_rng(2)
    a = rng.random((24, 24))
    b = np.roll(a, (1, 2), axis=(0, 1))
    ca, cb = _np.census_transform(a, 1), _np.census_transform(b, 1)
    gv, gu = (x.ravel().astype(np.int64) for x in np.mgrid[2:24:4, 2:24:4])
    out_j = _jit.patch_match(ca, cb, gv, gu, 3, 1)
    out_n = _np.patch_match(ca, cb, gv, gu, 3, 1)
    for x, y in zip(out_j, out_n):
        np.testing.assert_allclose(x, y)


@given(st.lists(st.tuples(st.integers(0, 5), st.floats(0.5, 3.0), st.booleans()), min_size=1, max_size=40))
def test_zbuffer_backends_agree_and_pick_nearest(items):
    target = np.array([t for t, _, _ in items], dtype=np.int64)
    depth = np.array([z for _, z, _ in items])
    ok = np.array([o for _, _, o in items])
    wj = _jit.zbuffer_winners(target, depth, ok, 6, 1e-12)
    wn = _np.zbuffer_winners(target, depth, ok, 6, 1e-12)
    np.testing.assert_array_equal(wj, wn)
    for pix in range(6):
        cand = np.flatnonzero(ok & (target == pix))
        if cand.size == 0:
            assert wn[pix] == -1
        else:
            best = depth[cand].min()
            assert wn[pix] == cand[np.flatnonzero(depth[cand] <= best + 1e-12)[0]]


def test_zbuffer_tie_goes_to_first_source():
    win = kernels.zbuffer_winners(np.array([0, 0, 0]), np.array([2.0, 2.0, 2.0]), np.ones(3, bool), 1, 1e-12)
    assert win[0] == 0


def test_backend_flag_is_reported():
    assert kernels.BACKEND in ("numba", "numpy")
