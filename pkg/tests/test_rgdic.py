import numpy as np
import pytest
from hypothesis import given, strategies as st

import oracles
from conftest import blob_image
from dicrack.errors import ConfigError, FrameFailureError
from dicrack.image import GrayImage
from dicrack.rgdic import (SEED, UNREACHED, AnalysisConfig, DisplacementField, RoiGrid,
                           SeedSpec, analyze_frame, analyze_sequence, mae, seed_ambiguity)

SHAPE = (160, 160)


@pytest.fixture(scope="module")
def grid():
    return RoiGrid(24, 24, 112, 112, 8)


@pytest.fixture(scope="module")
def split_pair():
    """Left half moves by (-3, 0), right half by (+3, 0); split at x = 80."""
    ref = blob_image(SHAPE, seed=11)
    left = blob_image(SHAPE, seed=11, shift=(-3.0, 0.0)).data
    right = blob_image(SHAPE, seed=11, shift=(3.0, 0.0)).data
    d = np.where(np.arange(SHAPE[1])[None, :] < 80, left, right)
    return ref, GrayImage(d)


def split_truth(x, y):
    return np.where(x < 80, -3.0, 3.0), np.zeros_like(y)


# -- grid and seeds -------------------------------------------------------------

def test_grid_dimensions():
    g = RoiGrid(10, 20, 65, 33, 8)
    assert g.shape == (4, 8) and g.size == 32
    assert g.xs()[-1] == 10 + 7 * 8
    with pytest.raises(ValueError):
        RoiGrid(0, 0, 10, 10, 0)
    with pytest.raises(ValueError):
        RoiGrid(0, 0, 4, 10, 8)


def test_grid_nearest_and_fit(grid):
    assert grid.nearest(24, 24) == (0, 0)
    assert grid.nearest(51, 40) == (2, 3)
    with pytest.raises(ConfigError):
        grid.nearest(5, 5)
    assert grid.fits(160, 160, 11)
    assert not grid.fits(160, 160, 23)


def test_seed_spec_validation(grid):
    with pytest.raises(ConfigError):
        SeedSpec(())
    with pytest.raises(ConfigError):
        SeedSpec(((0, 0),), (10, 20))
    with pytest.raises(ConfigError):
        SeedSpec(((99, 0),)).validate(grid)
    s = SeedSpec.from_pixels(grid, [(40, 40)], radius=7)
    assert s.points == ((2, 2),) and s.radii == (7,)


def test_seed_ambiguity_flat_and_periodic():
    flat = GrayImage(np.full((60, 60), 0.4))
    assert seed_ambiguity(flat, 30, 30, 5, 10) == float("inf")
    stripes = GrayImage(0.5 + 0.4 * np.sin(np.tile(np.arange(60) * 2 * np.pi / 8, (60, 1))))
    # a period-8 stripe pattern has exact look-alikes
    assert seed_ambiguity(stripes, 30, 30, 5, 10) == pytest.approx(1.0, abs=1e-9)
    assert seed_ambiguity(blob_image(SHAPE, seed=11), 80, 80, 11, 20) < 0.9


def test_distinctive_seed_stays_near(grid):
    ref = blob_image(SHAPE, seed=11)
    s = SeedSpec.distinctive(grid, ref, [(80, 80)], radius=10, reach=2)
    (r, c), = s.points
    r0, c0 = grid.nearest(80, 80)
    assert abs(r - r0) <= 2 and abs(c - c0) <= 2


def test_analysis_config_validation():
    with pytest.raises(ConfigError):
        AnalysisConfig(subset_half_width=2)
    with pytest.raises(ConfigError):
        AnalysisConfig(update="sometimes")
    with pytest.raises(ConfigError):
        AnalysisConfig(composition="other")
    with pytest.raises(ConfigError):
        AnalysisConfig(update_every=0)


# -- single frame ---------------------------------------------------------------

def test_identity_frame(grid):
    ref = blob_image(SHAPE, seed=11)
    f = analyze_frame(ref, ref, grid, SeedSpec(((7, 7),)))
    assert f.valid.all()
    assert np.max(np.abs(f.u)) < 0.005 and np.max(np.abs(f.v)) < 0.005
    assert np.min(f.zncc) >= 0.999


def test_uniform_translation(grid):
    ref = blob_image(SHAPE, seed=11)
    d = blob_image(SHAPE, seed=11, shift=(2.4, -1.7))
    f = analyze_frame(ref, d, grid, SeedSpec(((7, 7),)))
    assert f.valid.all()
    r = mae(f, (2.4, -1.7))
    assert r.mae_x < 0.01 and r.mae_y < 0.01


def _away_from_split(grid, margin=11 + 3 + 2):
    X, _ = grid.positions()
    return np.abs(X - 80) <= margin


def test_split_translation_two_seeds(grid, split_pair):
    ref, d = split_pair
    seeds = SeedSpec.from_pixels(grid, [(40, 80), (120, 80)], radius=10)
    f = analyze_frame(ref, d, grid, seeds)
    near = _away_from_split(grid)
    assert f.valid[~near].all()
    r = mae(f, split_truth, exclude=near)
    assert r.mae_x < 0.02 and r.mae_y < 0.02
    X, _ = grid.positions()
    far = ~near
    assert np.max(np.abs(f.u[far] - np.where(X[far] < 80, -3, 3))) < 0.02


def test_split_translation_one_seed_fails_right(grid, split_pair):
    ref, d = split_pair
    f = analyze_frame(ref, d, grid, SeedSpec.from_pixels(grid, [(40, 80)], radius=10))
    X, _ = grid.positions()
    right = (X > 80 + 16)
    ok = f.valid & right
    invalid_share = 1 - ok.sum() / right.sum()
    err = np.mean(np.where(ok, np.abs(f.u - 3.0), 10.0)[right])
    assert invalid_share > 0.5 or err >= 1.0


def test_multi_seed_coverage_dominates(grid, split_pair):
    ref, d = split_pair
    one = analyze_frame(ref, d, grid, SeedSpec.from_pixels(grid, [(40, 80)], radius=10))
    two = analyze_frame(ref, d, grid, SeedSpec.from_pixels(grid, [(40, 80), (120, 80)], radius=10))
    assert two.n_valid >= one.n_valid


def test_all_seeds_fail_raises(grid):
    ref = blob_image(SHAPE, seed=11)
    other = blob_image(SHAPE, seed=99)
    with pytest.raises(FrameFailureError):
        analyze_frame(ref, other, grid, SeedSpec(((7, 7),), (3,)))


def test_invalid_points_carry_nan(grid):
    ref = blob_image(SHAPE, seed=11)
    d = ref.data.copy()
    d[:, 100:] = blob_image(SHAPE, seed=99).data[:, 100:]  # unrelated texture on the right
    f = analyze_frame(ref, GrayImage(d), grid, SeedSpec(((2, 2),)))
    assert f.n_invalid > 0
    assert np.all(np.isnan(f.u[~f.valid])) and np.all(np.isnan(f.zncc[~f.valid]))
    assert np.all(f.zncc[f.valid] >= 0.7)


# -- flood fill audit -----------------------------------------------------------

def test_pop_order_is_max_heap(grid, split_pair):
    ref, d = split_pair
    f = analyze_frame(ref, d, grid, SeedSpec.from_pixels(grid, [(40, 80), (120, 80)], radius=10))
    t = f.trace
    assert len(t.pop_zncc) == f.n_valid
    np.testing.assert_array_equal(t.pop_zncc, t.pop_max)


def test_provenance_from_valid_neighbour(grid, split_pair):
    ref, d = split_pair
    seeds = SeedSpec.from_pixels(grid, [(40, 80), (120, 80)], radius=10)
    f = analyze_frame(ref, d, grid, seeds)
    src = f.trace.source
    ny, nx = grid.shape
    for r in range(ny):
        for c in range(nx):
            s = src[r, c]
            if not f.valid[r, c]:
                assert s == UNREACHED
            elif s == SEED:
                assert (r, c) in seeds.points
            else:
                pr, pc = divmod(int(s), nx)
                assert f.valid[pr, pc] and abs(pr - r) + abs(pc - c) == 1


def test_determinism(grid, split_pair):
    ref, d = split_pair
    seeds = SeedSpec.from_pixels(grid, [(40, 80), (120, 80)], radius=10)
    a = analyze_frame(ref, d, grid, seeds)
    b = analyze_frame(ref, d, grid, seeds)
    for name in ("u", "v", "zncc", "valid"):
        assert np.array_equal(getattr(a, name), getattr(b, name), equal_nan=name != "valid")
    np.testing.assert_array_equal(a.trace.pop_zncc, b.trace.pop_zncc)


# -- sequences ------------------------------------------------------------------

def _shifts(*uv):
    return [blob_image(SHAPE, seed=11, shift=s) for s in uv]


@pytest.mark.parametrize("composition", ["tracked", "displaced", "literal"])
def test_forced_update_composes_translations(grid, composition):
    frames = _shifts((0, 0), (1, 0), (3, 0))
    cfg = AnalysisConfig(update="frames", update_frames=(1,), composition=composition)
    out = analyze_sequence(frames, grid, SeedSpec(((7, 7),)), cfg, incremental=True)
    assert out.reference_updates == [0, 1]
    f2 = out[1]
    assert f2.updated_reference == 1
    ok = f2.valid
    assert ok.sum() > 0.8 * grid.size
    assert np.max(np.abs(f2.u[ok] - 3.0)) < 0.02 and np.max(np.abs(f2.v[ok])) < 0.02


def test_incremental_matches_direct_for_small_motion(grid):
    frames = _shifts((0, 0), (0.4, 0.2), (0.9, 0.5), (1.3, 0.6))
    seeds = SeedSpec(((7, 7),))
    direct = analyze_sequence(frames, grid, seeds)
    inc = analyze_sequence(frames, grid, seeds, AnalysisConfig(update="interval", update_every=1),
                           incremental=True)
    assert inc.reference_updates == [0, 1, 2]
    for a, b in zip(direct, inc):
        both = a.valid & b.valid
        assert both.sum() > 0.9 * grid.size
        assert np.max(np.abs(a.u[both] - b.u[both])) < 0.02
        assert np.max(np.abs(a.v[both] - b.v[both])) < 0.02


def _noisy(img, seed):
    rng = np.random.default_rng(seed)
    return GrayImage(np.clip(img.data + rng.normal(0, 0.01, img.shape), 0, 1))


@pytest.mark.parametrize("trigger, updates", [(0.8, [0]), (0.9999, [0, 1])])
def test_trigger_rebases_on_decorrelation(grid, trigger, updates):
    ref, a, b = _shifts((0, 0), (0.5, 0), (1.0, 0))
    frames = [ref, _noisy(a, 1), _noisy(b, 2)]
    cfg = AnalysisConfig(trigger_zncc=trigger)
    out = analyze_sequence(frames, grid, SeedSpec(((7, 7),)), cfg, incremental=True)
    assert out.reference_updates == updates
    assert out[1].updated_reference == updates[-1]
    ok = out[1].valid
    assert ok.sum() > 0.9 * grid.size
    assert np.mean(np.abs(out[1].u[ok] - 1.0)) < 0.02


def test_sequence_needs_two_frames(grid):
    with pytest.raises(ValueError):
        analyze_sequence(_shifts((0, 0)), grid, SeedSpec(((7, 7),)))


def test_sequence_failure_handling(grid):
    frames = _shifts((0, 0)) + [blob_image(SHAPE, seed=99)]
    seeds = SeedSpec(((7, 7),), (3,))
    with pytest.raises(FrameFailureError):
        analyze_sequence(frames, grid, seeds)
    out = analyze_sequence(frames, grid, seeds, raise_on_failure=False)
    assert out[0].n_valid == 0


# -- field container ------------------------------------------------------------

def test_field_sample_bilinear():
    g = RoiGrid(0, 0, 30, 20, 10)
    X, Y = g.positions()
    u, v = 0.1 * X + 0.02 * Y, -0.05 * X
    f = DisplacementField(g, u, v, np.ones(g.shape), np.ones(g.shape, bool))
    assert f.sample(5.0, 5.0) == pytest.approx((0.6, -0.25))
    su, sv = f.sample(np.array([12.5, 40.0]), np.array([3.0, 3.0]))
    assert su[0] == pytest.approx(1.31) and np.isnan(su[1])
    valid = np.ones(g.shape, bool)
    valid[0, 0] = False
    f2 = DisplacementField(g, u, v, np.ones(g.shape), valid)
    assert np.isnan(f2.sample(5.0, 5.0)[0])
    assert not np.isnan(f2.sample(15.0, 5.0)[0])


def test_field_shape_and_scale_checks():
    g = RoiGrid(0, 0, 30, 20, 10)
    with pytest.raises(ValueError):
        DisplacementField(g, np.zeros((3, 3)), np.zeros(g.shape), np.zeros(g.shape),
                          np.ones(g.shape, bool))
    f = DisplacementField(g, np.ones(g.shape), np.ones(g.shape), np.ones(g.shape),
                          np.ones(g.shape, bool))
    with pytest.raises(ValueError):
        f.in_mm()
    um, _ = f.with_scale(0.5).in_mm()
    assert np.all(um == 0.5)
    with pytest.raises(ValueError):
        f.u[0, 0] = 2.0


# -- MAE ------------------------------------------------------------------------

def _field(u, v, valid=None):
    g = RoiGrid(0, 0, 40, 30, 10)
    valid = np.ones(g.shape, bool) if valid is None else valid
    return DisplacementField(g, u, v, np.ones(g.shape), valid)


def test_mae_of_truth_is_zero():
    u = np.arange(12.0).reshape(3, 4)
    r = mae(_field(u, -u), (u, -u))
    assert (r.mae_x, r.mae_y) == (0.0, 0.0)


def test_mae_constant_bias():
    u = np.arange(12.0).reshape(3, 4)
    r = mae(_field(u + 0.1, u - 0.2), (u, u))
    assert r.mae_x == pytest.approx(0.1) and r.mae_y == pytest.approx(0.2)


@given(st.integers(0, 2**32 - 1))
def test_mae_matches_double_sum(seed):
    rng = np.random.default_rng(seed)
    u, v, tu, tv = rng.normal(size=(4, 3, 4))
    valid = rng.random((3, 4)) < 0.7
    valid[0, 0] = True
    r = mae(_field(u, v, valid), (tu, tv))
    ox, oy = oracles.mae_loops(u, v, tu, tv, valid)
    assert r.mae_x == pytest.approx(ox, abs=1e-12) and r.mae_y == pytest.approx(oy, abs=1e-12)
    assert r.n_invalid == int((~valid).sum())


def test_mae_strict_and_exclude():
    z = np.zeros((3, 4))
    valid = np.ones((3, 4), bool)
    valid[0, :2] = False
    f = _field(z, z, valid)
    assert mae(f, (z, z)).n_invalid == 2
    s = mae(f, (z, z), strict=True)
    assert s.mae_x == pytest.approx(20 / 12)
    ex = np.zeros((3, 4), bool)
    ex[0, :2] = True
    s = mae(f, (z, z), strict=True, exclude=ex)
    assert s.mae_x == 0.0 and s.n_invalid == 0
    with pytest.raises(ValueError):
        mae(_field(z, z, np.zeros((3, 4), bool)), (z, z))
    with pytest.raises(ValueError):
        mae(f, (z, z), exclude=np.zeros((2, 2), bool))


def test_mae_callable_truth():
    g = RoiGrid(0, 0, 40, 30, 10)
    X, Y = g.positions()
    f = DisplacementField(g, 0.01 * X, 0.02 * Y, np.ones(g.shape), np.ones(g.shape, bool))
    r = mae(f, lambda x, y: (0.01 * x, 0.02 * y))
    assert r.mae_x == pytest.approx(0.0, abs=1e-15)
