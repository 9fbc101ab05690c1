"""Crack detection from displacement fields.

All positions are image coordinates (x right, y down) converted to mm with the
field's pixel scale. ``orientation`` names the direction of the crack plane:
``"vertical"`` cracks open in ``u`` and are profiled along rows,
``"horizontal"`` cracks open in ``v`` and are profiled along columns.
``growth`` is the direction the crack advances along its plane: ``"negative"``
(towards decreasing y for a vertical crack, i.e. a notch at the bottom of the
image) or ``"positive"``. The cracked part of the plane lies behind the tip.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage

from .errors import NoPlateauError, ProbeError, ScaleError
from .rgdic import DisplacementField, RoiGrid

log = logging.getLogger(__name__)

ORIENTATIONS = ("vertical", "horizontal")
GROWTH = ("negative", "positive")

#: flank points used per side by the tip constructions
FLANK_POINTS = 5
#: components of the flagged grid smaller than this are treated as noise
MIN_COMPONENT = 3


class SpatialResolutionWarning(UserWarning):
    """Pixel size is too coarse to resolve the critical CTOD."""


def _check_orientation(orientation: str, growth: str = "negative") -> None:
    if orientation not in ORIENTATIONS:
        raise ValueError(f"orientation must be one of {ORIENTATIONS}, got {orientation!r}")
    if growth not in GROWTH:
        raise ValueError(f"growth must be one of {GROWTH}, got {growth!r}")


def _scale_of(fld: DisplacementField, scale: float | None) -> float:
    s = fld.scale if scale is None else scale
    if s is None:
        raise ScaleError("a pixel scale (mm/pixel) is required for crack analysis")
    s = float(s)
    if not (np.isfinite(s) and s > 0):
        raise ScaleError(f"pixel scale must be positive, got {s}")
    return s


def check_spatial_resolution(scale: float, delta_c: float) -> bool:
    """Warn (and return False) when one pixel is larger than ``delta_c / 3``."""
    if scale > delta_c / 3.0:
        warnings.warn(
            f"pixel size {scale:g} mm exceeds delta_c/3 = {delta_c / 3.0:g} mm; "
            "openings near delta_c may not be resolved", SpatialResolutionWarning,
            stacklevel=2)
        return False
    return True


@dataclass(frozen=True, eq=False)
class _Profiles:
    """Field rearranged so rows run along the crack plane.

    ``a[i, j]`` is the opening component (pixels) on profile ``i`` (position
    ``s[i]`` along the plane) at cross position ``t[j]``.
    """

    a: np.ndarray
    valid: np.ndarray
    s: np.ndarray
    t: np.ndarray
    step: float


def _profiles(fld: DisplacementField, orientation: str) -> _Profiles:
    g = fld.grid
    if orientation == "vertical":
        return _Profiles(fld.u, fld.valid, g.ys(), g.xs(), float(g.step))
    return _Profiles(fld.v.T, fld.valid.T, g.xs(), g.ys(), float(g.step))


# ---------------------------------------------------------------------------
# relative displacement


@dataclass(frozen=True, eq=False)
class RelativeDisplacementField:
    """Neighbour differences of the opening component, in mm.

    For a vertical crack ``values[i, j] = (u[i, j+1] - u[i, j]) * scale``
    (one column fewer than the grid); for a horizontal crack
    ``values[i, j] = (v[i+1, j] - v[i, j]) * scale`` (one row fewer). Entries
    with an invalid contributing point are NaN.
    """

    values: np.ndarray
    orientation: str
    scale: float
    grid: RoiGrid
    frame: int = 0

    @property
    def defined(self) -> np.ndarray:
        return np.isfinite(self.values)

    def contributing_points(self, rows: np.ndarray, cols: np.ndarray):
        """Grid indices ``((r0, c0), (r1, c1))`` of the two points behind entries."""
        rows = np.asarray(rows, dtype=int)
        cols = np.asarray(cols, dtype=int)
        if self.orientation == "vertical":
            return (rows, cols), (rows, cols + 1)
        return (rows, cols), (rows + 1, cols)


def relative_displacement(fld: DisplacementField, orientation: str = "vertical",
                          scale: float | None = None) -> RelativeDisplacementField:
    """Filter the opening component with a ``[-1, 1]`` kernel."""
    _check_orientation(orientation)
    s = _scale_of(fld, scale)
    if orientation == "vertical":
        vals = (fld.u[:, 1:] - fld.u[:, :-1]) * s
        ok = fld.valid[:, 1:] & fld.valid[:, :-1]
    else:
        vals = (fld.v[1:, :] - fld.v[:-1, :]) * s
        ok = fld.valid[1:, :] & fld.valid[:-1, :]
    vals = np.where(ok, vals, np.nan)
    vals.setflags(write=False)
    return RelativeDisplacementField(vals, orientation, s, fld.grid, fld.frame)


# ---------------------------------------------------------------------------
# crack tip from displacement profiles


@dataclass(frozen=True)
class CrackTip:
    """Crack-tip position in mm.

    ``space`` says which image the coordinates refer to (``"reference"`` for
    profile-based location, ``"deformed"`` for the edge construction).
    ``confidence`` is the spread of the construction (mm, lower is better).
    """

    x: float
    y: float
    frame: int = 0
    confidence: float = 0.0
    low_confidence: bool = False
    space: str = "reference"


def _line_fit(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Least-squares ``y = a + b x``; a single point gives a constant."""
    if x.size == 1:
        return float(y[0]), 0.0
    b, a = np.polyfit(x, y, 1)
    return float(a), float(b)


@dataclass(frozen=True)
class _ProfileJump:
    index: int
    j: int
    opening: float
    a: float  # transition line a + b * t through both flank ends
    b: float


def _profile_jump(a: np.ndarray, ok: np.ndarray, t: np.ndarray, min_jump: float,
                  ratio: float, flank: int) -> _ProfileJump | None:
    pair = ok[:-1] & ok[1:]
    if not pair.any():
        return None
    d = np.where(pair, a[1:] - a[:-1], 0.0)
    mag = np.abs(d)
    j = int(np.argmax(mag))
    background = float(np.median(mag[pair]))
    if mag[j] < min_jump or mag[j] <= ratio * background:
        return None
    left = np.nonzero(ok[:j + 1])[0][-flank:]
    right = np.nonzero(ok[j + 1:])[0][:flank] + j + 1
    aL, bL = _line_fit(t[left], a[left])
    aR, bR = _line_fit(t[right], a[right])
    uL = aL + bL * t[j]
    uR = aR + bR * t[j + 1]
    slope = (uR - uL) / (t[j + 1] - t[j])
    return _ProfileJump(-1, j, uR - uL, uL - slope * t[j], slope)


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """``(start, stop)`` of each run of True values."""
    out = []
    i = 0
    n = mask.size
    while i < n:
        if mask[i]:
            k = i
            while k < n and mask[k]:
                k += 1
            out.append((i, k))
            i = k
        else:
            i += 1
    return out


def locate_crack_tip(fld: DisplacementField, orientation: str = "vertical",
                     profile_band: tuple[int, int] | None = None,
                     growth: str = "negative", scale: float | None = None,
                     min_jump: float = 0.05, ratio: float = 3.0,
                     spread_tol: float | None = None) -> CrackTip | None:
    """Locate the crack tip from displacement profiles across the crack plane.

    Each profile (a grid row for vertical cracks) with a clear jump gets two
    least-squares flank lines; the line joining the flank ends across the
    jump is the profile's transition. The tip's cross coordinate is the
    median of the pairwise intersections of these transitions (the
    jump midpoints when all are parallel). Along the plane, the opening of
    the profiles in the longest opened run is fitted linearly and
    extrapolated to zero; when that fails the run's leading profile is used.

    Args:
        profile_band: ``(start, stop)`` profile indices to use (rows for
            vertical cracks, columns for horizontal ones).
        min_jump: smallest jump (pixels) that counts as an opening.
        ratio: a jump must also exceed ``ratio`` times the profile's median
            neighbour difference.
        spread_tol: intersection spread (mm) above which the result is
            flagged low-confidence; defaults to one grid step.

    Returns:
        The tip, or None when no profile shows an opening.
    """
    _check_orientation(orientation, growth)
    s_mm = _scale_of(fld, scale)
    prof = _profiles(fld, orientation)
    lo, hi = (0, prof.a.shape[0]) if profile_band is None else profile_band
    lo = max(int(lo), 0)
    hi = min(int(hi), prof.a.shape[0])
    if hi - lo < 3:
        raise ValueError("at least 3 profiles are needed to locate a crack tip")

    jumps = []
    for i in range(lo, hi):
        jp = _profile_jump(prof.a[i], prof.valid[i], prof.t, min_jump, ratio, FLANK_POINTS)
        if jp is not None:
            jumps.append(_ProfileJump(i, jp.j, jp.opening, jp.a, jp.b))
    if not jumps:
        return None

    # cross coordinate
    xs = []
    t_lo, t_hi = prof.t[0], prof.t[-1]
    for m in range(len(jumps)):
        for k in range(m + 1, len(jumps)):
            p, q = jumps[m], jumps[k]
            db = p.b - q.b
            if abs(db) <= 1e-9 * max(abs(p.b), abs(q.b), 1e-300):
                continue
            x = (q.a - p.a) / db
            if t_lo <= x <= t_hi:
                xs.append(x)
    if xs:
        xs = np.array(xs)
        t_tip = float(np.median(xs))
        spread = float(np.median(np.abs(xs - t_tip))) * s_mm
    else:
        mids = np.array([0.5 * (prof.t[jp.j] + prof.t[jp.j + 1]) for jp in jumps])
        t_tip = float(np.median(mids))
        spread = float(np.median(np.abs(mids - t_tip))) * s_mm

    # along-plane coordinate
    opened = np.zeros(prof.a.shape[0], bool)
    for jp in jumps:
        opened[jp.index] = True
    runs = _runs(opened)
    # longest run; ties go to the one furthest along the growth direction
    if growth == "negative":
        start, stop = max(runs, key=lambda r: (r[1] - r[0], -r[0]))
    else:
        start, stop = max(runs, key=lambda r: (r[1] - r[0], r[1]))
    lead = start if growth == "negative" else stop - 1
    s_lead = float(prof.s[lead])
    s_tip = s_lead
    run = [jp for jp in jumps if start <= jp.index < stop]
    if len(run) >= 2:
        ss = np.array([prof.s[jp.index] for jp in run])
        op = np.abs(np.array([jp.opening for jp in run]))
        a0, b0 = _line_fit(ss, op)
        if b0 != 0.0:
            s0 = -a0 / b0
            ahead = (s_lead - s0) if growth == "negative" else (s0 - s_lead)
            if 0.0 <= ahead <= 2.0 * prof.step:
                s_tip = float(s0)

    tol = prof.step * s_mm if spread_tol is None else spread_tol
    if orientation == "vertical":
        x, y = t_tip, s_tip
    else:
        x, y = s_tip, t_tip
    return CrackTip(x * s_mm, y * s_mm, fld.frame, spread, spread > tol, "reference")


# ---------------------------------------------------------------------------
# CTOD


def _probe_positions(tip: CrackTip, lx: float, ly: float, orientation: str, growth: str,
                     s_mm: float):
    behind = ly if growth == "negative" else -ly
    if orientation == "vertical":
        py = (tip.y + behind) / s_mm
        return ((tip.x - lx) / s_mm, py), ((tip.x + lx) / s_mm, py)
    px = (tip.x + behind) / s_mm
    return (px, (tip.y - lx) / s_mm), (px, (tip.y + lx) / s_mm)


def measure_ctod(fld: DisplacementField, tip: CrackTip, lx: float, ly: float,
                 orientation: str = "vertical", growth: str = "negative",
                 scale: float | None = None) -> float:
    """Signed opening (mm) between two probes straddling the crack plane.

    The probes sit ``lx`` mm either side of the plane and ``ly`` mm behind the
    tip; the field is interpolated bilinearly between correlation points.
    Positive values mean opening.
    """
    _check_orientation(orientation, growth)
    if not lx > 0 or not ly >= 0:
        raise ValueError(f"probe offsets need L_x > 0 and L_y >= 0, got ({lx}, {ly})")
    s_mm = _scale_of(fld, scale)
    (x0, y0), (x1, y1) = _probe_positions(tip, lx, ly, orientation, growth, s_mm)
    u, v = fld.sample(np.array([x0, x1]), np.array([y0, y1]))
    comp = u if orientation == "vertical" else v
    if not np.all(np.isfinite(comp)):
        raise ProbeError(f"CTOD probe at L_x={lx}, L_y={ly} mm is outside the valid field")
    return float((comp[1] - comp[0]) * s_mm)


@dataclass(frozen=True, eq=False)
class DeltaCResult:
    """Critical CTOD and the plateau it was read from.

    ``ctod[i, j]`` is the CTOD at ``lx[i]``, ``ly[j]``; the plateau is the
    index block ``rows`` x ``cols``. ``onset`` gives its smallest offsets.
    """

    delta_c: float
    ctod: np.ndarray
    lx: np.ndarray
    ly: np.ndarray
    rows: tuple[int, int]
    cols: tuple[int, int]

    @property
    def onset(self) -> tuple[float, float]:
        return float(self.lx[self.rows[0]]), float(self.ly[self.cols[0]])

    @property
    def covers_grid(self) -> bool:
        return self.rows == (0, self.lx.size) and self.cols == (0, self.ly.size)


def ctod_grid(fld: DisplacementField, tip: CrackTip, lx_grid: Sequence[float],
              ly_grid: Sequence[float], orientation: str = "vertical",
              growth: str = "negative", scale: float | None = None) -> np.ndarray:
    """CTOD over a probe grid; NaN where a probe leaves the valid field."""
    out = np.full((len(lx_grid), len(ly_grid)), np.nan)
    for i, lx in enumerate(lx_grid):
        for j, ly in enumerate(ly_grid):
            try:
                out[i, j] = measure_ctod(fld, tip, float(lx), float(ly), orientation,
                                         growth, scale)
            except ProbeError:
                pass
    return out


def _largest_plateau(c: np.ndarray, max_ratio: float, min_size: int):
    """Largest rectangle (by area) whose positive values stay within ``max_ratio``.

    Ties go to the block with the smallest offsets.
    """
    n, m = c.shape
    best = None
    usable = np.isfinite(c) & (c > 0)
    for r0 in range(n):
        for c0 in range(m):
            if not usable[r0, c0]:
                continue
            for r1 in range(r0 + min_size, n + 1):
                lo = np.inf
                hi = -np.inf
                for c1 in range(c0 + 1, m + 1):
                    col = c[r0:r1, c1 - 1]
                    if not usable[r0:r1, c1 - 1].all():
                        break
                    lo = min(lo, col.min())
                    hi = max(hi, col.max())
                    if hi > max_ratio * lo:
                        break
                    if c1 - c0 < min_size:
                        continue
                    area = (r1 - r0) * (c1 - c0)
                    if best is None or area > best[0]:
                        best = (area, (r0, r1), (c0, c1))
    return best


def determine_delta_c(fld: DisplacementField, tip: CrackTip, lx_grid: Sequence[float],
                      ly_grid: Sequence[float], orientation: str = "vertical",
                      growth: str = "negative", scale: float | None = None,
                      max_ratio: float = 1.05, min_size: int = 3) -> DeltaCResult:
    """Critical CTOD as the median over the largest flat block of the probe grid.

    A block is flat when its largest CTOD is at most ``max_ratio`` times its
    smallest. Raises :class:`NoPlateauError` (carrying the CTOD grid) when no
    block of at least ``min_size`` x ``min_size`` probes qualifies.
    """
    lx = np.asarray(lx_grid, dtype=np.float64)
    ly = np.asarray(ly_grid, dtype=np.float64)
    if lx.ndim != 1 or ly.ndim != 1 or lx.size == 0 or ly.size == 0:
        raise ValueError("probe grids must be non-empty 1D sequences")
    if np.any(np.diff(lx) <= 0) or np.any(np.diff(ly) <= 0):
        raise ValueError("probe grids must be strictly increasing")
    c = ctod_grid(fld, tip, lx, ly, orientation, growth, scale)
    best = _largest_plateau(c, max_ratio, min_size)
    if best is None:
        raise NoPlateauError(
            f"no {min_size}x{min_size} block of the CTOD grid is flat within "
            f"ratio {max_ratio}", ctod=c)
    _, rows, cols = best
    delta_c = float(np.median(c[rows[0]:rows[1], cols[0]:cols[1]]))
    c.setflags(write=False)
    return DeltaCResult(delta_c, c, lx, ly, rows, cols)


# ---------------------------------------------------------------------------
# crack edges


@dataclass(frozen=True, eq=False)
class CrackEdges:
    """Edge points of one frame.

    ``flagged`` marks relative-displacement entries at or above delta_c.
    ``left``/``right`` hold the grid ``(row, col)`` of the two contributing
    points of every flagged entry (for horizontal cracks ``left`` is the
    upper point). Positions are in mm, reference and deformed.
    """

    flagged: np.ndarray
    left: np.ndarray
    right: np.ndarray
    left_ref: np.ndarray
    right_ref: np.ndarray
    left_def: np.ndarray
    right_def: np.ndarray
    delta_c: float
    frame: int = 0
    roi_mm: tuple = ((-np.inf, np.inf), (-np.inf, np.inf))

    @property
    def n_points(self) -> int:
        return 2 * int(self.flagged.sum())

    @property
    def empty(self) -> bool:
        return not self.flagged.any()


def detect_crack_edges(rel: RelativeDisplacementField, delta_c: float,
                       fld: DisplacementField) -> CrackEdges:
    """Flag openings of at least ``delta_c`` mm and collect their edge points."""
    if not delta_c > 0:
        raise ValueError(f"delta_c must be positive, got {delta_c}")
    if rel.grid != fld.grid:
        raise ValueError("relative field and displacement field use different grids")
    flagged = np.zeros(rel.values.shape, bool)
    ok = rel.defined
    flagged[ok] = rel.values[ok] >= delta_c
    rows, cols = np.nonzero(flagged)
    (r0, c0), (r1, c1) = rel.contributing_points(rows, cols)
    X, Y = fld.grid.positions()
    s = rel.scale

    def pos(r, c, deformed):
        x = X[r, c]
        y = Y[r, c]
        if deformed:
            x = x + fld.u[r, c]
            y = y + fld.v[r, c]
        return np.column_stack([x, y]) * s

    flagged.setflags(write=False)
    g = fld.grid
    roi = ((g.x * s, (g.x + g.width) * s), (g.y * s, (g.y + g.height) * s))
    return CrackEdges(flagged, np.column_stack([r0, c0]), np.column_stack([r1, c1]),
                      pos(r0, c0, False), pos(r1, c1, False),
                      pos(r0, c0, True), pos(r1, c1, True), float(delta_c), rel.frame, roi)


def _lead_component(flagged: np.ndarray, orientation: str, growth: str):
    """Labels of the kept component reaching furthest along the growth direction."""
    lab, n = ndimage.label(flagged, structure=np.ones((3, 3), int))
    if n == 0:
        return None
    sizes = ndimage.sum_labels(flagged, lab, index=np.arange(1, n + 1))
    axis = 0 if orientation == "vertical" else 1
    best = None
    for k in range(1, n + 1):
        if sizes[k - 1] < MIN_COMPONENT:
            continue
        idx = np.nonzero(lab == k)[axis]
        lead = idx.min() if growth == "negative" else -idx.max()
        key = (lead, -sizes[k - 1], k)
        if best is None or key < best[0]:
            best = (key, k)
    return None if best is None else lab == best[1]


def _in_roi(edges: CrackEdges, s_apex: float, a_ax: int) -> bool:
    lo, hi = edges.roi_mm[a_ax]
    return bool(lo <= s_apex <= hi)


def crack_tip_from_edges(edges: CrackEdges, orientation: str = "vertical",
                         growth: str = "negative") -> CrackTip | None:
    """Tip of the leading crack component from its edge points (deformed image).

    Grid entries are grouped with 8-connectivity and components smaller than
    three entries are ignored. For the component reaching furthest along the
    growth direction, a line is fitted through each flank's five leading edge
    points; the tip is the apex of that triangle, where the flanks close back
    to the reference spacing of an edge pair (zero opening). With shorter
    flanks, parallel or diverging lines, or an apex outside the ROI, the
    midpoint of the leading edge pair is used.
    """
    _check_orientation(orientation, growth)
    comp = _lead_component(np.asarray(edges.flagged), orientation, growth)
    if comp is None:
        return None
    # the relative-grid index of an entry equals its left point's grid index
    pick = comp[edges.left[:, 0], edges.left[:, 1]]
    L = edges.left_def[pick]
    R = edges.right_def[pick]
    entries = edges.left[pick]
    # a_ax: coordinate along the crack plane, c_ax: across it
    a_ax = 1 if orientation == "vertical" else 0
    c_ax = 1 - a_ax
    plane_idx = entries[:, 0] if orientation == "vertical" else entries[:, 1]
    order = np.argsort(plane_idx if growth == "negative" else -plane_idx, kind="stable")
    # one edge pair per profile: the outermost points of that profile
    left_pts, right_pts = [], []
    seen = set()
    for k in order:
        key = plane_idx[k]
        if key in seen:
            continue
        seen.add(key)
        same = plane_idx == key
        li = np.argmin(L[same, c_ax])
        ri = np.argmax(R[same, c_ax])
        left_pts.append(L[same][li])
        right_pts.append(R[same][ri])
    left_pts = np.array(left_pts)
    right_pts = np.array(right_pts)
    top_l, top_r = left_pts[0], right_pts[0]
    mid = 0.5 * (top_l + top_r)

    def finish(p, conf):
        return CrackTip(float(p[0]), float(p[1]), edges.frame, conf, False, "deformed")

    if len(left_pts) < FLANK_POINTS:
        return finish(mid, 0.0)
    lp = left_pts[:FLANK_POINTS]
    rp = right_pts[:FLANK_POINTS]
    # across = a + b * along for each flank; the flanks close to the reference
    # spacing of the edge pair (zero opening) at the apex
    gap = float(np.median(edges.right_ref[pick][:, c_ax] - edges.left_ref[pick][:, c_ax]))
    aL, bL = _line_fit(lp[:, a_ax], lp[:, c_ax])
    aR, bR = _line_fit(rp[:, a_ax], rp[:, c_ax])
    if abs(bR - bL) < 1e-12:
        return finish(mid, 0.0)
    s_apex = (gap - (aR - aL)) / (bR - bL)
    s_lead = mid[a_ax]
    ahead = (s_lead - s_apex) if growth == "negative" else (s_apex - s_lead)
    if not ahead >= 0.0 or not _in_roi(edges, s_apex, a_ax):
        return finish(mid, 0.0)
    apex = np.empty(2)
    apex[a_ax] = s_apex
    apex[c_ax] = 0.5 * (aL + aR + (bL + bR) * s_apex)
    resid = np.concatenate([lp[:, c_ax] - (aL + bL * lp[:, a_ax]),
                            rp[:, c_ax] - (aR + bR * rp[:, a_ax])])
    return finish(apex, float(np.sqrt(np.mean(resid ** 2))))


# ---------------------------------------------------------------------------
# tracking


@dataclass(frozen=True, eq=False)
class TipTrack:
    """Located tips over time and the propagation speed between them."""

    frames: np.ndarray
    times: np.ndarray
    x: np.ndarray
    y: np.ndarray
    speeds: np.ndarray

    @property
    def mean_speed(self) -> float:
        return float(self.speeds.mean())


def track_tip_and_speed(tips: Sequence[CrackTip | None], timestamps: Sequence[float],
                        orientation: str = "vertical") -> TipTrack:
    """Crack-tip trajectory and mean propagation speed (mm/s).

    ``tips[k]`` belongs to time ``timestamps[k]``; None entries (no tip) are
    skipped. Each interval between consecutive located tips contributes the
    absolute tip displacement along the crack plane divided by its duration.
    """
    _check_orientation(orientation)
    t = np.asarray(timestamps, dtype=np.float64)
    if t.shape != (len(tips),):
        raise ValueError("one timestamp per frame is required")
    if np.any(np.diff(t) <= 0):
        raise ValueError("timestamps must be strictly increasing")
    keep = [k for k, tp in enumerate(tips) if tp is not None]
    if len(keep) < 2:
        raise ValueError("at least two located crack tips are needed for a speed")
    x = np.array([tips[k].x for k in keep])
    y = np.array([tips[k].y for k in keep])
    tt = t[keep]
    along = y if orientation == "vertical" else x
    speeds = np.abs(np.diff(along)) / np.diff(tt)
    frames = np.array([tips[k].frame for k in keep])
    return TipTrack(frames, tt, x, y, speeds)


# ---------------------------------------------------------------------------
# whole sequence


@dataclass(frozen=True, eq=False)
class CrackReport:
    """Crack detection results for a sequence of fields."""

    delta_c: float
    orientation: str
    edges: list
    tips: list
    timestamps: np.ndarray
    track: TipTrack | None = None
    delta_c_result: DeltaCResult | None = None
    warnings: list = field(default_factory=list)

    @property
    def mean_speed(self) -> float:
        return float("nan") if self.track is None else self.track.mean_speed

    @property
    def detected(self) -> bool:
        return any(not e.empty for e in self.edges)

    def first_flagged_frame(self) -> int | None:
        for e in self.edges:
            if not e.empty:
                return e.frame
        return None


def analyze_cracks(fields: Sequence[DisplacementField], delta_c: float,
                   timestamps: Sequence[float], orientation: str = "vertical",
                   growth: str = "negative", scale: float | None = None,
                   delta_c_result: DeltaCResult | None = None) -> CrackReport:
    """Edges, tips and propagation speed for every field of a sequence."""
    _check_orientation(orientation, growth)
    if len(fields) != len(timestamps):
        raise ValueError("one timestamp per field is required")
    notes = []
    s = _scale_of(fields[0], scale) if fields else scale
    if fields:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            check_spatial_resolution(s, delta_c)
        for w in caught:
            notes.append(str(w.message))
            warnings.warn(w.message, SpatialResolutionWarning, stacklevel=2)
    edges = []
    tips = []
    for fld in fields:
        rel = relative_displacement(fld, orientation, scale)
        e = detect_crack_edges(rel, delta_c, fld)
        edges.append(e)
        tips.append(crack_tip_from_edges(e, orientation, growth))
    track = None
    if sum(tp is not None for tp in tips) >= 2:
        track = track_tip_and_speed(tips, timestamps, orientation)
    return CrackReport(float(delta_c), orientation, edges, tips,
                       np.asarray(timestamps, dtype=np.float64), track, delta_c_result, notes)


def select_pre_peak_frame(load_times: Sequence[float], loads: Sequence[float],
                          frame_times: Sequence[float]) -> int:
    """Index of the last frame recorded at or before the peak load."""
    lt = np.asarray(load_times, dtype=np.float64)
    ld = np.asarray(loads, dtype=np.float64)
    ft = np.asarray(frame_times, dtype=np.float64)
    if lt.size == 0 or lt.shape != ld.shape:
        raise ValueError("load history needs matching, non-empty time and load columns")
    t_peak = lt[int(np.argmax(ld))]
    before = np.nonzero(ft <= t_peak)[0]
    if before.size == 0:
        raise ValueError("no frame precedes the peak load")
    return int(before[-1])
