"""Reliability-guided full-field correlation.

Seeds are matched by exhaustive integer search plus Newton-Raphson; the field
then grows through a single max-heap keyed on ZNCC, each popped point handing
its warp to its uncomputed 4-neighbours. Several seeds share one heap, so
fronts from different partitions race and the first accepted match claims a
point. :func:`analyze_sequence` adds incremental reference updating.
"""

from __future__ import annotations

import heapq
import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.ndimage import uniform_filter
from scipy.signal import fftconvolve

from . import _kernels as K
from .correlation import (DEFAULT_COND_LIMIT, DEFAULT_MAX_ITER, DEFAULT_TOL,
                          n_params, subset_offsets, zncc_from_znssd)
from .errors import ConfigError, FrameFailureError
from .image import GrayImage, Interpolant, as_gray_image, make_interpolant

log = logging.getLogger(__name__)

UPDATE_MODES = ("trigger", "interval", "frames")
COMPOSITIONS = ("tracked", "displaced", "literal")

_NEIGHBOURS = ((-1, 0), (1, 0), (0, -1), (0, 1))
SEED = -1
UNREACHED = -2


@dataclass(frozen=True)
class RoiGrid:
    """Evenly spaced correlation points covering an ROI.

    Points sit at ``x + i * step`` and ``y + j * step`` for
    ``i < width // step`` and ``j < height // step``.
    """

    x: int
    y: int
    width: int
    height: int
    step: int

    def __post_init__(self):
        if self.step < 1:
            raise ValueError(f"grid step must be >= 1, got {self.step}")
        if self.width < self.step or self.height < self.step:
            raise ValueError("ROI must span at least one step in each direction")

    @property
    def nx(self) -> int:
        return self.width // self.step

    @property
    def ny(self) -> int:
        return self.height // self.step

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def size(self) -> int:
        return self.nx * self.ny

    def xs(self) -> np.ndarray:
        return self.x + self.step * np.arange(self.nx, dtype=np.float64)

    def ys(self) -> np.ndarray:
        return self.y + self.step * np.arange(self.ny, dtype=np.float64)

    def positions(self) -> tuple[np.ndarray, np.ndarray]:
        """Pixel coordinates of every point as two ``(ny, nx)`` arrays."""
        return np.meshgrid(self.xs(), self.ys())

    def nearest(self, px: float, py: float) -> tuple[int, int]:
        """Grid ``(row, col)`` closest to a pixel position inside the ROI."""
        if not (self.x <= px <= self.x + self.width and self.y <= py <= self.y + self.height):
            raise ConfigError(f"point ({px}, {py}) lies outside the ROI")
        col = int(np.clip(round((px - self.x) / self.step), 0, self.nx - 1))
        row = int(np.clip(round((py - self.y) / self.step), 0, self.ny - 1))
        return row, col

    def fits(self, width: int, height: int, half_width: int, margin: int = 2) -> bool:
        """True when every point's subset (plus interpolation margin) is inside."""
        lo = half_width + margin
        return (self.x >= lo and self.y >= lo
                and self.xs()[-1] <= width - 1 - lo and self.ys()[-1] <= height - 1 - lo)


@dataclass(frozen=True)
class SeedSpec:
    """Seed grid points ``(row, col)`` with a per-seed search radius."""

    points: tuple
    radii: tuple = ()

    def __post_init__(self):
        pts = tuple((int(r), int(c)) for r, c in self.points)
        if not pts:
            raise ConfigError("at least one seed is required")
        radii = tuple(int(r) for r in self.radii) if self.radii else (50,) * len(pts)
        if len(radii) != len(pts):
            raise ConfigError("one search radius per seed is required")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "radii", radii)

    @classmethod
    def from_pixels(cls, grid: RoiGrid, pixels, radius: int = 50) -> "SeedSpec":
        pts = [grid.nearest(px, py) for px, py in pixels]
        return cls(tuple(pts), (radius,) * len(pts))

    @classmethod
    def distinctive(cls, grid: RoiGrid, ref, pixels, radius: int = 50,
                    half_width: int = 11, reach: int = 3) -> "SeedSpec":
        """Seeds at the most distinctive grid point near each nominal pixel.

        Automates what an operator does when placing seeds by hand: within
        ``reach`` grid steps of each nominal position, take the point whose
        reference subset has the weakest look-alike in a window twice the
        search radius (see :func:`seed_ambiguity`).
        """
        ref = as_gray_image(ref)
        pts = []
        for px, py in pixels:
            r0, c0 = grid.nearest(px, py)
            best = None
            for r in range(max(r0 - reach, 0), min(r0 + reach + 1, grid.ny)):
                for c in range(max(c0 - reach, 0), min(c0 + reach + 1, grid.nx)):
                    score = seed_ambiguity(ref, int(grid.xs()[c]), int(grid.ys()[r]),
                                           half_width, 2 * radius)
                    if best is None or score < best[0]:
                        best = (score, r, c)
            pts.append(best[1:])
        return cls(tuple(pts), (radius,) * len(pts))

    def validate(self, grid: RoiGrid) -> None:
        for r, c in self.points:
            if not (0 <= r < grid.ny and 0 <= c < grid.nx):
                raise ConfigError(f"seed ({r}, {c}) is not on the {grid.ny}x{grid.nx} grid")


def seed_ambiguity(ref, x: int, y: int, half_width: int, window: int,
                   core: int | None = None) -> float:
    """Highest ZNCC between the subset at ``(x, y)`` and any other subset.

    Candidates are integer shifts within ``window`` pixels, excluding the
    autocorrelation peak (shifts with both components ``<= core``, default
    ``half_width // 2``). Low values mean a seed is unlikely to lock onto a
    look-alike. Degenerate subsets score ``inf``.
    """
    data = as_gray_image(ref).data
    H, W = data.shape
    M = int(half_width)
    core = M // 2 if core is None else int(core)
    if not (M <= x < W - M and M <= y < H - M):
        raise ConfigError(f"subset at ({x}, {y}) leaves the image")
    f = data[y - M:y + M + 1, x - M:x + M + 1]
    f = f - f.mean()
    nf = np.linalg.norm(f)
    if nf < K.DEGENERATE_NORM:
        return float("inf")
    f = f / nf
    y0, y1 = max(y - M - window, 0), min(y + M + window + 1, H)
    x0, x1 = max(x - M - window, 0), min(x + M + window + 1, W)
    win = data[y0:y1, x0:x1]
    S = 2 * M + 1
    num = fftconvolve(win, f[::-1, ::-1], mode="valid")
    mu = uniform_filter(win, S, mode="constant")[M:-M, M:-M]
    mu2 = uniform_filter(win * win, S, mode="constant")[M:-M, M:-M]
    sd = np.sqrt(np.maximum(mu2 - mu * mu, 0.0) * S * S)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(sd > K.DEGENERATE_NORM, num / sd, -1.0)
    cy = np.arange(y0 + M, y1 - M)[:, None] - y
    cx = np.arange(x0 + M, x1 - M)[None, :] - x
    z[(np.abs(cy) <= core) & (np.abs(cx) <= core)] = -1.0
    return float(z.max())


@dataclass(frozen=True)
class AnalysisConfig:
    """Correlation and reference-update settings.

    ``update`` picks when the reference is rebased during an incremental run:
    ``"trigger"`` on decorrelation (mean seed ZNCC below ``trigger_zncc`` or
    more than ``trigger_fail_fraction`` of points rejected), ``"interval"``
    after every ``update_every`` frames, ``"frames"`` after each frame listed
    in ``update_frames``. ``composition`` selects how increments are chained:
    ``"tracked"`` correlates subsets centred on each point's displaced
    position in the updated reference, ``"displaced"`` samples the increment
    field there bilinearly, ``"literal"`` adds increments at the same grid
    point.
    """

    subset_half_width: int = 11
    order: int = 1
    zncc_threshold: float = 0.7
    search_radius: int = 50
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER
    cond_limit: float = DEFAULT_COND_LIMIT
    update: str = "trigger"
    update_every: int = 10
    update_frames: tuple = ()
    trigger_zncc: float = 0.8
    trigger_fail_fraction: float = 0.1
    composition: str = "tracked"

    def __post_init__(self):
        if self.subset_half_width < 3:
            raise ConfigError("subset half-width must be >= 3")
        n_params(self.order)
        if self.update not in UPDATE_MODES:
            raise ConfigError(f"update must be one of {UPDATE_MODES}, got {self.update!r}")
        if self.composition not in COMPOSITIONS:
            raise ConfigError(f"composition must be one of {COMPOSITIONS}, got {self.composition!r}")
        if self.update_every < 1:
            raise ConfigError("update_every must be >= 1")
        object.__setattr__(self, "update_frames", tuple(int(f) for f in self.update_frames))


@dataclass(frozen=True, eq=False)
class FillTrace:
    """Audit trail of one flood fill.

    ``pop_zncc`` holds, in pop order, the ZNCC of each point taken from the
    heap alongside the heap maximum at that moment. ``source`` gives, per
    grid point, the flat index of the neighbour whose warp seeded it
    (:data:`SEED` for seeds, :data:`UNREACHED` for never-accepted points).
    """

    pop_zncc: np.ndarray
    pop_max: np.ndarray
    source: np.ndarray
    seed_zncc: tuple
    attempts: int


@dataclass(frozen=True, eq=False)
class DisplacementField:
    """Per-point displacements (pixels) over a :class:`RoiGrid`.

    Invalid points hold NaN in ``u``, ``v`` and ``zncc``.
    """

    grid: RoiGrid
    u: np.ndarray
    v: np.ndarray
    zncc: np.ndarray
    valid: np.ndarray
    reference_frame: int = 0
    frame: int = 0
    scale: float | None = None
    trace: FillTrace | None = field(default=None, repr=False)
    updated_reference: int = 0

    def __post_init__(self):
        shape = self.grid.shape
        arrays = {}
        for name in ("u", "v", "zncc"):
            a = np.array(getattr(self, name), dtype=np.float64)
            if a.shape != shape:
                raise ValueError(f"{name} has shape {a.shape}, grid is {shape}")
            arrays[name] = a
        valid = np.array(self.valid, dtype=bool)
        if valid.shape != shape:
            raise ValueError(f"valid has shape {valid.shape}, grid is {shape}")
        for name, a in arrays.items():
            a[~valid] = np.nan
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        valid.setflags(write=False)
        object.__setattr__(self, "valid", valid)

    @property
    def n_valid(self) -> int:
        return int(self.valid.sum())

    @property
    def n_invalid(self) -> int:
        return int(self.valid.size - self.valid.sum())

    def positions(self) -> tuple[np.ndarray, np.ndarray]:
        return self.grid.positions()

    def displaced_positions(self) -> tuple[np.ndarray, np.ndarray]:
        x, y = self.grid.positions()
        return x + self.u, y + self.v

    def in_mm(self) -> tuple[np.ndarray, np.ndarray]:
        if self.scale is None:
            raise ValueError("field has no physical scale")
        return self.u * self.scale, self.v * self.scale

    def with_scale(self, scale: float | None) -> "DisplacementField":
        return DisplacementField(self.grid, self.u, self.v, self.zncc, self.valid,
                                 self.reference_frame, self.frame, scale, self.trace,
                                 self.updated_reference)

    def mean_zncc(self) -> float:
        return float(np.nanmean(self.zncc)) if self.n_valid else float("nan")

    def sample(self, px, py) -> tuple[np.ndarray, np.ndarray]:
        """Bilinear ``(u, v)`` at reference pixel positions.

        NaN wherever the position is outside the grid or any of the four
        surrounding points is invalid.
        """
        px = np.asarray(px, dtype=np.float64)
        py = np.asarray(py, dtype=np.float64)
        px, py = np.broadcast_arrays(px, py)
        u, v, _ = _bilinear_field(self.u, self.v, self.valid, self.grid, px, py)
        if px.ndim == 0:
            return float(u), float(v)
        return u, v


class SequenceResult(list):
    """List of fields plus the chain of reference-update frame indices."""

    def __init__(self, fields=(), reference_updates=(0,)):
        super().__init__(fields)
        self.reference_updates = list(reference_updates)


# ---------------------------------------------------------------------------
# flood fill


class _Reference:
    """Normalized reference subsets at (possibly non-integer) centres."""

    def __init__(self, interp: Interpolant, cx: np.ndarray, cy: np.ndarray,
                 available: np.ndarray, M: int):
        self.interp = interp
        self.cx = np.ascontiguousarray(cx, dtype=np.float64).ravel()
        self.cy = np.ascontiguousarray(cy, dtype=np.float64).ravel()
        self.M = M
        self.dx, self.dy = subset_offsets(M)
        n = self.dx.size
        N = self.cx.size
        self.fhat = np.zeros((N, n))
        ok = np.zeros(N, dtype=np.bool_)
        lo_x, hi_x, lo_y, hi_y = interp.bounds
        avail = np.asarray(available, dtype=bool).ravel()
        cxs = np.where(avail, self.cx, np.nan)
        cys = np.where(avail, self.cy, np.nan)
        K.sample_subsets(interp.image.data, interp.coeffs, cxs, cys, self.dx, self.dy,
                         lo_x, hi_x, lo_y, hi_y, self.fhat, ok)
        self.ok = ok


def _shift_warp(p: np.ndarray, order: int, sx: float, sy: float) -> np.ndarray:
    """Re-centre a warp on a point offset by ``(sx, sy)``."""
    q = p.copy()
    q[0] = p[0] + p[2] * sx + p[3] * sy
    q[1] = p[1] + p[4] * sx + p[5] * sy
    if order == 2:
        q[0] += 0.5 * p[6] * sx * sx + 0.5 * p[7] * sy * sy + p[8] * sx * sy
        q[1] += 0.5 * p[9] * sx * sx + 0.5 * p[10] * sy * sy + p[11] * sx * sy
        q[2] = p[2] + p[6] * sx + p[8] * sy
        q[3] = p[3] + p[7] * sy + p[8] * sx
        q[4] = p[4] + p[9] * sx + p[11] * sy
        q[5] = p[5] + p[10] * sy + p[11] * sx
    return q


@dataclass
class _FillOutput:
    params: np.ndarray
    zncc: np.ndarray
    valid: np.ndarray
    trace: FillTrace


def _flood_fill(ref: _Reference, dfm: Interpolant, shape: tuple[int, int],
                seeds: Sequence[tuple[int, int, int]], cfg: AnalysisConfig) -> _FillOutput:
    ny, nx = shape
    N = ny * nx
    order = cfg.order
    P = n_params(order)
    M = ref.M
    params = np.full((N, P), np.nan)
    zncc = np.full(N, np.nan)
    valid = np.zeros(N, dtype=bool)
    source = np.full(N, UNREACHED, dtype=np.int64)
    lo_x, hi_x, lo_y, hi_y = dfm.bounds
    coeffs = dfm.coeffs
    thr = cfg.zncc_threshold
    attempts = 0

    def refine(q: int, p0: np.ndarray):
        nonlocal attempts
        attempts += 1
        p, c, _, status, _ = K.nr_refine(
            ref.fhat[q], ref.dx, ref.dy, coeffs, ref.cx[q], ref.cy[q], p0, order,
            float(M), lo_x, hi_x, lo_y, hi_y, cfg.tol, cfg.max_iter, cfg.cond_limit)
        z = zncc_from_znssd(c)
        return p, z, status == K.CONVERGED and z >= thr

    heap: list = []
    seed_zncc = []
    ref_data = ref.interp.image.data
    dfm_data = dfm.image.data
    H, W = ref_data.shape
    for r, c, radius in seeds:
        q = r * nx + c
        if valid[q] or not ref.ok[q]:
            seed_zncc.append(float("nan") if not ref.ok[q] else float(zncc[q]))
            continue
        ix = int(round(ref.cx[q]))
        iy = int(round(ref.cy[q]))
        if not (ix - M >= 0 and ix + M < W and iy - M >= 0 and iy + M < H):
            seed_zncc.append(float("nan"))
            continue
        tx, ty, _, count = K.integer_search(ref_data, ix, iy, M, dfm_data, int(radius))
        if count == 0:
            seed_zncc.append(float("nan"))
            continue
        p0 = np.zeros(P)
        p0[0] = tx + ix - ref.cx[q]
        p0[1] = ty + iy - ref.cy[q]
        p, z, ok = refine(q, p0)
        seed_zncc.append(float(z) if np.isfinite(z) else float("nan"))
        if ok:
            params[q] = p
            zncc[q] = z
            valid[q] = True
            source[q] = SEED
            heapq.heappush(heap, (-z, r, c))

    pops_z = []
    pops_max = []
    while heap:
        top = -heap[0][0]
        negz, r, c = heapq.heappop(heap)
        pops_z.append(-negz)
        pops_max.append(top)
        qp = r * nx + c
        for dr, dc in _NEIGHBOURS:
            rr = r + dr
            cc = c + dc
            if rr < 0 or rr >= ny or cc < 0 or cc >= nx:
                continue
            q = rr * nx + cc
            if valid[q] or not ref.ok[q]:
                continue
            p0 = _shift_warp(params[qp], order, ref.cx[q] - ref.cx[qp], ref.cy[q] - ref.cy[qp])
            p, z, ok = refine(q, p0)
            if ok:
                params[q] = p
                zncc[q] = z
                valid[q] = True
                source[q] = qp
                heapq.heappush(heap, (-z, rr, cc))

    trace = FillTrace(np.array(pops_z), np.array(pops_max), source.reshape(shape),
                      tuple(seed_zncc), attempts)
    return _FillOutput(params.reshape(ny, nx, P), zncc.reshape(shape),
                       valid.reshape(shape), trace)


def _as_interp(img) -> Interpolant:
    if isinstance(img, Interpolant):
        return img
    return make_interpolant(as_gray_image(img))


def _check_setup(interp: Interpolant, grid: RoiGrid, seeds: SeedSpec, cfg: AnalysisConfig):
    seeds.validate(grid)
    if not grid.fits(interp.image.width, interp.image.height, cfg.subset_half_width):
        raise ConfigError("ROI subsets (plus interpolation margin) leave the image")


def _seed_list(seeds: SeedSpec, available: np.ndarray | None = None):
    out = []
    for (r, c), radius in zip(seeds.points, seeds.radii):
        if available is not None and not available[r, c]:
            rc = _nearest_available(available, r, c)
            if rc is None:
                continue
            r, c = rc
        out.append((r, c, radius))
    return out


def _nearest_available(available: np.ndarray, r: int, c: int):
    rows, cols = np.nonzero(available)
    if rows.size == 0:
        return None
    d = (rows - r) ** 2 + (cols - c) ** 2
    k = int(np.argmin(d))  # first minimum is lowest (row, col)
    return int(rows[k]), int(cols[k])


def _field_from_fill(out: _FillOutput, grid: RoiGrid, frame: int, scale) -> DisplacementField:
    return DisplacementField(grid, out.params[..., 0], out.params[..., 1], out.zncc,
                             out.valid, 0, frame, scale, out.trace, 0)


def analyze_frame(ref, dfm, grid: RoiGrid, seeds: SeedSpec,
                  cfg: AnalysisConfig | None = None, frame: int = 1) -> DisplacementField:
    """Correlate one deformed image against the reference over ``grid``.

    Raises :class:`FrameFailureError` when no seed can be matched; points that
    are never reached with an acceptable match come back invalid.
    """
    cfg = cfg or AnalysisConfig()
    ref_i = _as_interp(ref)
    dfm_i = _as_interp(dfm)
    _check_setup(ref_i, grid, seeds, cfg)
    X, Y = grid.positions()
    refs = _Reference(ref_i, X, Y, np.ones(grid.shape, bool), cfg.subset_half_width)
    out = _flood_fill(refs, dfm_i, grid.shape, _seed_list(seeds), cfg)
    if not out.valid.any():
        raise FrameFailureError(f"frame {frame}: no seed converged (seed ZNCC {out.trace.seed_zncc})")
    return _field_from_fill(out, grid, frame, ref_i.image.scale)


# ---------------------------------------------------------------------------
# sequences


def _bilinear_field(u: np.ndarray, v: np.ndarray, valid: np.ndarray, grid: RoiGrid,
                    px: np.ndarray, py: np.ndarray):
    """Sample a grid field at pixel positions; NaN unless all 4 corners valid."""
    gx = (px - grid.x) / grid.step
    gy = (py - grid.y) / grid.step
    ok = np.isfinite(gx) & np.isfinite(gy) & (gx >= 0) & (gy >= 0) \
        & (gx <= grid.nx - 1) & (gy <= grid.ny - 1)
    gx = np.where(ok, gx, 0.0)
    gy = np.where(ok, gy, 0.0)
    i0 = np.minimum(np.floor(gx).astype(int), grid.nx - 2) if grid.nx > 1 else np.zeros_like(gx, int)
    j0 = np.minimum(np.floor(gy).astype(int), grid.ny - 2) if grid.ny > 1 else np.zeros_like(gy, int)
    i1 = np.minimum(i0 + 1, grid.nx - 1)
    j1 = np.minimum(j0 + 1, grid.ny - 1)
    tx = gx - i0
    ty = gy - j0
    corners_ok = valid[j0, i0] & valid[j0, i1] & valid[j1, i0] & valid[j1, i1]
    ok &= corners_ok

    def interp(a):
        a = np.where(valid, a, 0.0)
        val = ((1 - tx) * (1 - ty) * a[j0, i0] + tx * (1 - ty) * a[j0, i1]
               + (1 - tx) * ty * a[j1, i0] + tx * ty * a[j1, i1])
        return np.where(ok, val, np.nan)

    return interp(u), interp(v), ok


class _ReferenceState:
    """Current (possibly updated) reference of an incremental run."""

    def __init__(self, index: int, interp: Interpolant, grid: RoiGrid, cfg: AnalysisConfig,
                 base_u: np.ndarray, base_v: np.ndarray, base_valid: np.ndarray):
        self.index = index
        self.interp = interp
        self.base_u = base_u
        self.base_v = base_v
        self.base_valid = base_valid
        X, Y = grid.positions()
        if cfg.composition == "tracked":
            cx = np.where(base_valid, X + np.nan_to_num(base_u), np.nan)
            cy = np.where(base_valid, Y + np.nan_to_num(base_v), np.nan)
            available = base_valid
        else:
            cx, cy = X, Y
            available = np.ones(grid.shape, bool)
        self.available = available
        self.subsets = _Reference(interp, cx, cy, available, cfg.subset_half_width)


def _compose(state: _ReferenceState, out: _FillOutput, grid: RoiGrid, cfg: AnalysisConfig):
    du = out.params[..., 0]
    dv = out.params[..., 1]
    if state.index == 0 and cfg.composition != "tracked":
        return du, dv, out.valid
    if cfg.composition == "tracked" or cfg.composition == "literal":
        ok = state.base_valid & out.valid
        return state.base_u + du, state.base_v + dv, ok
    X, Y = grid.positions()
    su, sv, sok = _bilinear_field(du, dv, out.valid, grid,
                                  X + state.base_u, Y + state.base_v)
    ok = state.base_valid & sok
    return state.base_u + su, state.base_v + sv, ok


def analyze_sequence(frames: Sequence, grid: RoiGrid, seeds: SeedSpec,
                     cfg: AnalysisConfig | None = None, incremental: bool = False,
                     raise_on_failure: bool = True,
                     progress: Callable[[int, DisplacementField], None] | None = None
                     ) -> SequenceResult:
    """Correlate ``frames[1:]`` and express every field against ``frames[0]``.

    Without ``incremental`` each frame is matched directly to frame 0. With it,
    the reference is rebased according to ``cfg.update`` and fields are chained
    as ``d_i = d_j + delta_ij`` (see :class:`AnalysisConfig`). Under the
    ``"trigger"`` policy a decorrelated frame is re-run against the previous
    frame before its result is kept.
    """
    cfg = cfg or AnalysisConfig()
    if len(frames) < 2:
        raise ValueError("a sequence needs at least two frames")
    ref0 = _as_interp(frames[0])
    _check_setup(ref0, grid, seeds, cfg)
    scale = ref0.image.scale
    shape = grid.shape
    zeros = np.zeros(shape)
    state = _ReferenceState(0, ref0, grid, cfg, zeros, zeros, np.ones(shape, bool))
    results = SequenceResult(reference_updates=[0])
    history: dict[int, DisplacementField] = {}

    def run(state: _ReferenceState, i: int, dfm: Interpolant) -> tuple[DisplacementField, _FillOutput]:
        out = _flood_fill(state.subsets, dfm, shape,
                          _seed_list(seeds, state.available if state.index else None), cfg)
        u, v, ok = _compose(state, out, grid, cfg)
        f = DisplacementField(grid, u, v, out.zncc, ok, 0, i, scale, out.trace, state.index)
        return f, out

    def fire(state: _ReferenceState, out: _FillOutput) -> bool:
        seed_z = np.array([z if np.isfinite(z) else 0.0 for z in out.trace.seed_zncc])
        mean_seed = float(seed_z.mean()) if seed_z.size else 0.0
        avail = state.subsets.ok.reshape(shape)
        n_avail = int(avail.sum())
        failed = int((avail & ~out.valid).sum())
        frac = failed / n_avail if n_avail else 1.0
        return mean_seed < cfg.trigger_zncc or frac > cfg.trigger_fail_fraction

    prev_interp = ref0
    for i in range(1, len(frames)):
        dfm = _as_interp(frames[i])
        f, out = run(state, i, dfm)
        if (incremental and cfg.update == "trigger" and state.index < i - 1
                and fire(state, out)):
            base = history[i - 1]
            state = _ReferenceState(i - 1, prev_interp, grid, cfg,
                                    np.nan_to_num(base.u), np.nan_to_num(base.v), base.valid)
            results.reference_updates.append(i - 1)
            log.info("frame %d decorrelated; reference updated to frame %d", i, i - 1)
            f, out = run(state, i, dfm)
        if not out.valid.any():
            msg = f"frame {i}: no seed converged (seed ZNCC {out.trace.seed_zncc})"
            if raise_on_failure:
                raise FrameFailureError(msg)
            log.warning(msg)
        results.append(f)
        history[i] = f
        if progress is not None:
            progress(i, f)
        if incremental and i < len(frames) - 1:
            rebase = ((cfg.update == "interval" and i % cfg.update_every == 0)
                      or (cfg.update == "frames" and i in cfg.update_frames))
            if rebase:
                state = _ReferenceState(i, dfm, grid, cfg, np.nan_to_num(f.u),
                                        np.nan_to_num(f.v), f.valid)
                results.reference_updates.append(i)
        # only the previous frame is needed for trigger rebasing
        history.pop(i - 1, None)
        prev_interp = dfm
    return results


# ---------------------------------------------------------------------------
# accuracy


@dataclass(frozen=True)
class MaeResult:
    mae_x: float
    mae_y: float
    n_valid: int
    n_invalid: int


def mae(field: DisplacementField, truth, strict: bool = False,
        penalty: float = 10.0, exclude: np.ndarray | None = None) -> MaeResult:
    """Mean absolute displacement error over valid points.

    ``truth`` is either a callable ``(x, y) -> (u, v)`` on reference pixel
    coordinates or a ``(u, v)`` pair of grid arrays. Invalid points are
    excluded and counted; with ``strict`` they contribute ``penalty`` pixels
    each instead. Points flagged in the boolean grid ``exclude`` take no part
    at all (neither error nor invalid count).
    """
    X, Y = field.grid.positions()
    keep = np.ones(X.shape, bool) if exclude is None else ~np.asarray(exclude, dtype=bool)
    if keep.shape != X.shape:
        raise ValueError(f"exclude mask has shape {keep.shape}, grid is {X.shape}")
    X, Y = X[keep], Y[keep]
    if callable(truth):
        tu, tv = truth(X, Y)
    else:
        tu, tv = (np.broadcast_to(np.asarray(t, dtype=np.float64), keep.shape)[keep]
                  for t in truth)
    tu = np.broadcast_to(np.asarray(tu, dtype=np.float64), X.shape)
    tv = np.broadcast_to(np.asarray(tv, dtype=np.float64), X.shape)
    ok = field.valid[keep]
    u = field.u[keep]
    v = field.v[keep]
    n_valid = int(ok.sum())
    n_invalid = int(ok.size - n_valid)
    if strict:
        if ok.size == 0:
            raise ValueError("no grid points left to evaluate")
        ex = np.where(ok, np.abs(u - tu), penalty)
        ey = np.where(ok, np.abs(v - tv), penalty)
        return MaeResult(float(ex.sum() / ok.size), float(ey.sum() / ok.size), n_valid, n_invalid)
    if n_valid == 0:
        raise ValueError("field has no valid points")
    ex = np.abs(u[ok] - tu[ok])
    ey = np.abs(v[ok] - tv[ok])
    return MaeResult(float(ex.sum() / n_valid), float(ey.sum() / n_valid), n_valid, n_invalid)
