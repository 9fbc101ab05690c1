import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

import oracles
from conftest import blob_image
from dicrack.correlation import (SubsetSpec, WarpVector, initial_guess, n_params, refine_nr,
                                 warp_point, zncc_from_znssd, znssd_cost)
from dicrack.errors import DegenerateSubsetError, OutOfBoundsError
from dicrack.image import GrayImage, make_interpolant

small = st.floats(-0.05, 0.05)


# -- warps ----------------------------------------------------------------------

def test_subset_spec_validation():
    with pytest.raises(ValueError):
        SubsetSpec(10, 10, 2)
    assert SubsetSpec(10, 10, 3).size == 7
    assert SubsetSpec(10, 10, 3).fits(20, 20)
    assert not SubsetSpec(4, 10, 3).fits(20, 20)


def test_warp_vector_validation():
    with pytest.raises(ValueError):
        WarpVector(np.zeros(5))
    with pytest.raises(ValueError):
        WarpVector([np.nan, 0, 0, 0, 0, 0])
    with pytest.raises(ValueError):
        n_params(3)
    w = WarpVector.translation(1.0, 2.0, order=2)
    assert w.params.size == 12 and (w.u, w.v) == (1.0, 2.0)
    assert w.as_order(1) == WarpVector.translation(1.0, 2.0)


def test_identity_warp():
    spec = SubsetSpec(40, 50, 5)
    assert warp_point(spec, WarpVector.zeros(), 3, -2) == (43.0, 48.0)


def test_translation_warp():
    spec = SubsetSpec(40, 50, 5)
    assert warp_point(spec, WarpVector.translation(5, 3), 0, 0) == (45.0, 53.0)


def test_second_order_term():
    p = np.zeros(12)
    p[6] = 0.02
    x, y = warp_point(SubsetSpec(40, 50, 11), WarpVector(p, 2), 10, 0)
    assert x == pytest.approx(40 + 11, abs=1e-12) and y == 50


@given(st.lists(small, min_size=6, max_size=6), st.integers(-7, 7), st.integers(-7, 7))
def test_order2_with_zero_curvature_equals_order1(p6, dx, dy):
    spec = SubsetSpec(30, 30, 7)
    w1 = WarpVector(p6, 1)
    w2 = WarpVector(list(p6) + [0.0] * 6, 2)
    assert warp_point(spec, w1, dx, dy) == warp_point(spec, w2, dx, dy)


@given(st.lists(small, min_size=12, max_size=12), st.integers(-7, 7), st.integers(-7, 7))
def test_warp_matches_oracle(p, dx, dy):
    got = warp_point(SubsetSpec(30, 30, 7), WarpVector(p, 2), dx, dy)
    want = oracles.warp_loops(np.array(p), 2, 30, 30, dx, dy)
    assert got == pytest.approx(want, abs=1e-12)


# -- costs ----------------------------------------------------------------------

@pytest.mark.parametrize("c, z", [(0.0, 1.0), (2.0, 0.0), (4.0, -1.0)])
def test_zncc_from_znssd(c, z):
    # 0 -> 1 is the perfect-match case [PAPER]; the others follow from linearity
    assert zncc_from_znssd(c) == z


def test_znssd_perfect_match(speckle):
    assert znssd_cost(speckle, speckle, SubsetSpec(40, 40, 7), WarpVector.zeros()) < 1e-10


def test_znssd_insensitive_to_lighting(speckle):
    # [PAPER] the cost is insensitive to offset and scale in lighting
    d = GrayImage(np.clip(0.7 * speckle.data + 0.1, 0, 1))
    assert znssd_cost(speckle, d, SubsetSpec(40, 40, 7), WarpVector.zeros()) < 1e-8


@given(st.integers(10, 80), st.integers(10, 80), st.lists(small, min_size=6, max_size=6),
       st.floats(-1.5, 1.5), st.floats(-1.5, 1.5))
def test_znssd_matches_double_sum(speckle, x0, y0, p, u, v):
    p = [u, v] + list(p[2:])
    dfm = blob_image(seed=2)
    got = znssd_cost(speckle, dfm, SubsetSpec(x0, y0, 3), WarpVector(p))
    want, want_zncc = oracles.subset_znssd(speckle.data, dfm.data, x0, y0, 3, np.array(p))
    assert got == pytest.approx(want, abs=1e-9)
    assert zncc_from_znssd(got) == pytest.approx(want_zncc, abs=1e-9)
    assert 0.0 <= got <= 4.0


@given(st.floats(0.5, 2.0), st.floats(-0.2, 0.2))
def test_znssd_invariant_under_affine_intensity(speckle, a, b):
    dfm = GrayImage(0.05 + 0.4 * blob_image(seed=2).data)
    lo, hi = dfm.data.min(), dfm.data.max()
    b = float(np.clip(b, -a * lo, 1 - a * hi))  # stay inside [0, 1] without clipping
    spec = SubsetSpec(48, 48, 7)
    w = WarpVector([0.3, -0.2, 0.01, 0, 0, -0.01])
    c0 = znssd_cost(speckle, dfm, spec, w)
    c1 = znssd_cost(speckle, GrayImage(a * dfm.data + b), spec, w)
    assert c1 == pytest.approx(c0, abs=1e-8)


def test_znssd_errors():
    flat = GrayImage(np.full((30, 30), 0.5))
    img = blob_image((30, 30))
    with pytest.raises(DegenerateSubsetError):
        znssd_cost(flat, img, SubsetSpec(15, 15, 3), WarpVector.zeros())
    with pytest.raises(OutOfBoundsError):
        znssd_cost(img, img, SubsetSpec(15, 15, 3), WarpVector.translation(12, 0))


# -- integer search -------------------------------------------------------------

def test_initial_guess_exact_shift(speckle_160):
    d = GrayImage(np.roll(np.roll(speckle_160.data, -4, axis=0), 7, axis=1))
    (tx, ty), z = initial_guess(speckle_160, d, SubsetSpec(80, 80, 11), 10)
    assert (tx, ty) == (7, -4) and z == pytest.approx(1.0)


def test_initial_guess_identity(speckle):
    (tx, ty), z = initial_guess(speckle, speckle, SubsetSpec(48, 48, 7), 5)
    assert (tx, ty) == (0, 0) and z == pytest.approx(1.0)


def test_initial_guess_with_noise_matches_brute_force(speckle_160):
    rng = np.random.default_rng(3)
    d = np.roll(np.roll(speckle_160.data, 2, axis=0), 3, axis=1)
    d = GrayImage(np.clip(d + rng.normal(0, 0.01, d.shape), 0, 1))
    spec = SubsetSpec(80, 80, 11)
    (tx, ty), z = initial_guess(speckle_160, d, spec, 6)
    # [DERIVED] brute-force argmax of the direct ZNCC over all integer shifts
    f = speckle_160.data[69:92, 69:92].ravel()
    best = max(((oracles.zncc_loops(list(f), list(d.data[69 + j:92 + j, 69 + i:92 + i].ravel())), i, j)
                for j in range(-6, 7) for i in range(-6, 7)))
    assert (tx, ty) == (best[1], best[2]) == (3, 2)
    assert z == pytest.approx(best[0], abs=1e-9)


def test_initial_guess_degenerate():
    flat = GrayImage(np.full((40, 40), 0.2))
    with pytest.raises(DegenerateSubsetError):
        initial_guess(flat, flat, SubsetSpec(20, 20, 3), 4)


# -- Newton-Raphson -------------------------------------------------------------

def test_refine_identity_converges_immediately(speckle):
    r = refine_nr(speckle, speckle, SubsetSpec(48, 48, 7), WarpVector.zeros())
    assert r.converged and r.iterations <= 2 and r.znssd < 1e-10
    assert r.zncc == pytest.approx(1 - 0.5 * r.znssd, abs=1e-12)


def test_refine_subpixel_translation_interpolation_oracle(speckle_160):
    # [DERIVED] deformed image resampled from the reference by the spline oracle
    H, W = speckle_160.shape
    yy, xx = np.mgrid[0:H, 0:W].astype(float)
    d = GrayImage(np.clip(oracles.spline_sample(speckle_160.data, xx - 0.5, yy - 0.25), 0, 1))
    R, D = make_interpolant(speckle_160), make_interpolant(d)
    for x0, y0 in ((60, 60), (80, 100), (100, 70)):
        r = refine_nr(R, D, SubsetSpec(x0, y0, 11), WarpVector.translation(1, 0))
        assert r.converged
        assert abs(r.warp.u - 0.5) < 0.01 and abs(r.warp.v - 0.25) < 0.01


def test_refine_small_rotation_first_order(speckle_160):
    # [DERIVED] truth from the closed-form rotation about a point on the top edge
    from dicrack.synthetic import RotationField, render_deformed
    rot = RotationField(80.0, 0.3, hinged=False)
    d = render_deformed(speckle_160, rot)
    R, D = make_interpolant(speckle_160), make_interpolant(d)
    for x0, y0 in ((60, 60), (100, 90), (70, 120)):
        tu, tv = oracles.rotate_about(x0, y0, 80.0, 0.3)
        r = refine_nr(R, D, SubsetSpec(x0, y0, 11), WarpVector.translation(round(tu), round(tv)))
        assert r.converged
        assert abs(r.warp.u - tu) < 0.02 and abs(r.warp.v - tv) < 0.02


def test_refine_second_order(speckle_160):
    rot_free = refine_nr(speckle_160, speckle_160, SubsetSpec(80, 80, 11), WarpVector.zeros(2))
    assert rot_free.converged and rot_free.warp.order == 2
    assert np.max(np.abs(rot_free.warp.params)) < 1e-8


def test_refine_descent(speckle_160):
    d = blob_image((160, 160), seed=7, shift=(0.4, -0.3))
    r = refine_nr(speckle_160, d, SubsetSpec(80, 80, 11), WarpVector.translation(1, -1))
    assert r.converged and r.znssd <= r.initial_znssd


def test_refine_degenerate_flagged_not_raised():
    flat = GrayImage(np.full((40, 40), 0.3))
    r = refine_nr(flat, flat, SubsetSpec(20, 20, 5), WarpVector.zeros())
    assert not r.converged and r.status == "degenerate"


def test_refine_out_of_bounds_flagged(speckle):
    r = refine_nr(speckle, speckle, SubsetSpec(48, 48, 7), WarpVector.translation(45, 0))
    assert not r.converged


def test_refine_singular_hessian_flagged():
    # intensity varies along x only: v is unobservable
    img = GrayImage(0.5 + 0.4 * np.sin(np.tile(np.arange(40) / 3.0, (40, 1))))
    r = refine_nr(img, img, SubsetSpec(20, 20, 5), WarpVector.translation(0.2, 0))
    assert not r.converged


@given(st.floats(-0.9, 0.9), st.floats(-0.9, 0.9))
def test_translation_self_consistency(u, v):
    ref = blob_image((64, 64), seed=4)
    d = blob_image((64, 64), seed=4, shift=(u, v))
    r = refine_nr(ref, d, SubsetSpec(32, 32, 11), WarpVector.translation(round(u), round(v)))
    assert r.converged
    assert math.hypot(r.warp.u - u, r.warp.v - v) <= 0.01
