import math

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

import oracles
from dicrack.errors import DICError
from dicrack.image import GrayImage, mean_intensity_gradient
from dicrack.rgdic import RoiGrid
from dicrack.synthetic import (MODES, RotationField, SpeckleSpec, benchmark_grid, benchmark_seeds,
                               eval_rotation, generate_speckle, plot_benchmark_svg,
                               read_benchmark_csv, render_deformed, rotation_angles,
                               rotation_series, run_benchmark, straddle_mask,
                               write_benchmark_csv)

SMALL = SpeckleSpec(width=200, height=200, n_speckles=400, seed=3)

offsets = st.floats(-300, 300)
depths = st.floats(1, 400)
angles = st.floats(-20, 20)


# -- rotation field -------------------------------------------------------------

@given(st.floats(-100, 100), depths, st.floats(0, 500))
def test_zero_angle_is_identity(dx, y, x0):
    ux, uy = eval_rotation(RotationField(x0, 0.0), x0 + dx, y)
    assert abs(ux) < 1e-9 and abs(uy) < 1e-9


def test_quarter_turn_below_pivot():
    ux, uy = eval_rotation(RotationField(50.0, 90.0), 50.0, 100.0)
    assert ux == pytest.approx(100.0, abs=1e-12) and uy == pytest.approx(-100.0, abs=1e-12)


def test_matches_rotation_matrix_oracle():
    # [DERIVED] 2x2 rotation of the radius vector about (x0, 0)
    x0 = 200.0
    got = eval_rotation(RotationField(x0, 0.6), x0 + 30, 40.0)
    want = oracles.rotate_about(x0 + 30, 40.0, x0, 0.6)
    assert got == pytest.approx(want, abs=1e-9)


@given(offsets, depths, angles)
def test_rotation_matches_matrix_everywhere(dx, y, a):
    got = eval_rotation(RotationField(100.0, a), 100.0 + dx, y)
    assert got == pytest.approx(oracles.rotate_about(100.0 + dx, y, 100.0, a), abs=1e-9)


@given(offsets, depths, angles)
def test_rotation_is_isometry(dx, y, a):
    x0 = 100.0
    ux, uy = eval_rotation(RotationField(x0, a), x0 + dx, y)
    assert math.hypot(dx + ux, y + uy) == pytest.approx(math.hypot(dx, y), abs=1e-9)


@given(offsets, depths, st.floats(-8, 8), st.floats(-8, 8))
def test_rotations_compose(dx, y, a1, a2):
    x0 = 100.0
    x = x0 + dx
    # keep every intermediate point strictly below the pivot edge
    assume(abs(math.degrees(math.atan2(dx, y))) + abs(a1) + abs(a2) < 85)
    u1, v1 = eval_rotation(RotationField(x0, a1), x, y)
    u2, v2 = eval_rotation(RotationField(x0, a2), x + u1, y + v1)
    u, v = eval_rotation(RotationField(x0, a1 + a2), x, y)
    assert u1 + u2 == pytest.approx(u, abs=1e-6) and v1 + v2 == pytest.approx(v, abs=1e-6)


def test_rotation_singular_edge():
    rot = RotationField(10.0, 5.0)
    assert eval_rotation(rot, 10.0, 0.0) == (0.0, 0.0)
    with pytest.raises(ValueError):
        eval_rotation(rot, 12.0, 0.0)
    with pytest.raises(ValueError):
        RotationField(float("nan"), 1.0)


def test_hinge_keeps_left_part_fixed():
    rot = RotationField(100.0, 3.0)
    ux, uy = rot.displacement(np.array([90.0, 110.0]), np.array([50.0, 50.0]))
    assert ux[0] == 0 and uy[0] == 0
    assert (ux[1], uy[1]) == pytest.approx(eval_rotation(rot, 110.0, 50.0))
    free = RotationField(100.0, 3.0, hinged=False)
    assert free.displacement(90.0, 50.0) == pytest.approx(eval_rotation(free, 90.0, 50.0))


# -- speckle --------------------------------------------------------------------

def test_zero_speckles_is_constant():
    img = generate_speckle(SpeckleSpec(width=40, height=30, n_speckles=0))
    assert np.all(img.data == img.data[0, 0])
    assert mean_intensity_gradient(img) == 0.0


def test_speckle_deterministic():
    a = generate_speckle(SMALL)
    b = generate_speckle(SMALL)
    assert np.array_equal(a.data, b.data)
    assert not np.array_equal(a.data, generate_speckle(SpeckleSpec(200, 200, 400, seed=4)).data)


def test_speckle_reaches_mig_floor():
    img = generate_speckle(SMALL)
    assert img.shape == (200, 200)
    assert mean_intensity_gradient(img) >= 20


@pytest.mark.slow
def test_default_speckle_mig():
    # default 1024 x 1024 pattern with 8000 speckles of mean radius 3 px
    assert mean_intensity_gradient(generate_speckle()) >= 20


def test_unreachable_mig_floor():
    with pytest.raises(DICError):
        generate_speckle(SpeckleSpec(60, 60, 10, mig_floor=500, max_attempts=2))
    with pytest.raises(ValueError):
        generate_speckle(SpeckleSpec(60, 60, -1))


# -- rendering ------------------------------------------------------------------

def test_render_identity_is_lossless():
    ref = generate_speckle(SMALL)
    out = render_deformed(ref, RotationField(100.0, 0.0))
    assert np.array_equal(out.data[3:-3, 3:-3], ref.data[3:-3, 3:-3])


def test_render_round_trip():
    ref = generate_speckle(SMALL)
    fwd = render_deformed(ref, RotationField(100.0, 2.0, hinged=False))
    back = render_deformed(fwd, RotationField(100.0, -2.0, hinged=False))
    inner = (slice(30, 170), slice(30, 170))
    assert np.mean(np.abs(back.data[inner] - ref.data[inner])) < 0.01


def test_render_moves_material_with_the_field():
    # a single dark dot lands where the displacement field sends it
    data = np.full((120, 120), 0.9)
    yy, xx = np.mgrid[0:120, 0:120]
    data -= 0.8 * np.exp(-((xx - 80.0) ** 2 + (yy - 60.0) ** 2) / 9.0)
    ref = GrayImage(data)
    rot = RotationField(60.0, 10.0)
    out = render_deformed(ref, rot, background=0.9).data
    ux, uy = eval_rotation(rot, 80.0, 60.0)
    w = 0.9 - out
    cx, cy = (w * xx).sum() / w.sum(), (w * yy).sum() / w.sum()
    assert cx == pytest.approx(80 + ux, abs=0.05) and cy == pytest.approx(60 + uy, abs=0.05)


def test_render_hinge_opening_filled_with_background():
    ref = generate_speckle(SMALL)
    out = render_deformed(ref, RotationField(100.0, 10.0), background=0.5)
    # just right of the hinge line, deep below the pivot, the opening has no material
    assert out.data[180, 102] == 0.5
    assert np.array_equal(out.data[:, :95], ref.data[:, :95])


def test_rotation_angles_fifty_frames():
    # [PAPER] 0.3, 0.6, ..., 15 degrees
    a = rotation_angles()
    assert a.size == 50
    assert a[0] == pytest.approx(0.3) and a[-1] == pytest.approx(15.0)
    np.testing.assert_allclose(np.diff(a), 0.3)


def test_rotation_series_defaults():
    ref = generate_speckle(SMALL)
    frames, fields = rotation_series(ref, [0.5, 1.0])
    assert len(frames) == 2 and fields[1].alpha_deg == 1.0 and fields[0].x0 == 100.0


# -- benchmark ------------------------------------------------------------------

def test_benchmark_geometry():
    g = benchmark_grid(1024, 1024)
    assert (g.x, g.y, g.width, g.height) == (192, 100, 640, 824)
    one, multi = benchmark_seeds(g, 512.0)
    assert len(one.points) == 1 and len(multi.points) == 2
    xs = g.xs()
    assert xs[multi.points[0][1]] < 512 < xs[multi.points[1][1]]


def test_straddle_mask():
    g = RoiGrid(0, 0, 100, 10, 10)
    m = straddle_mask(g, 50.0, 11)
    assert m[0].tolist() == [False, False, False, False, True, True, True, False, False, False]


@pytest.fixture(scope="module")
def small_bench():
    return run_benchmark(SMALL, frames=3, alpha_max=1.5, roi_size=(120, 120), step=8,
                         update_every=1, search_radius=20)


def test_small_benchmark(small_bench):
    rows = small_bench.rows
    assert len(rows) == 3 * len(MODES)
    for r in rows:
        assert r.n_points + r.n_straddling == small_bench.grid.size
    for mode in MODES:
        first = small_bench.for_mode(mode)[0]
        assert first.frame == 1 and first.alpha_deg == pytest.approx(0.5)
        assert first.mae_x_px < 0.05
    assert small_bench.reference_updates["incremental-multi-seed"] == [0, 1, 2]
    assert small_bench.reference_updates["one-seed"] == [0]


def test_benchmark_csv_round_trip(small_bench, tmp_path):
    p = tmp_path / "b.csv"
    write_benchmark_csv(small_bench, p)
    assert read_benchmark_csv(p) == small_bench.rows
    write_benchmark_csv(small_bench, tmp_path / "c.csv")
    assert p.read_bytes() == (tmp_path / "c.csv").read_bytes()


def test_benchmark_svg(small_bench, tmp_path):
    plot_benchmark_svg(small_bench, tmp_path / "b.svg")
    assert (tmp_path / "b.svg").read_text().lstrip().startswith("<?xml")


def test_benchmark_rejects_unknown_mode():
    with pytest.raises(ValueError):
        run_benchmark(SMALL, frames=1, modes=("two-seed",))
