"""Synthetic speckle images, rotation fields and the large-deformation benchmark."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import _kernels as K
from .errors import DICError
from .image import GrayImage, bspline_coefficients, mean_intensity_gradient
from .rgdic import AnalysisConfig, RoiGrid, SeedSpec, analyze_sequence, mae

log = logging.getLogger(__name__)

MODES = ("one-seed", "multi-seed", "incremental-multi-seed")
BENCHMARK_COLUMNS = ("mode", "frame", "alpha_deg", "mae_x_px", "mae_y_px", "invalid_count",
                     "strict_mae_x_px", "strict_mae_y_px", "mae_x_all_px", "mae_y_all_px",
                     "n_points", "n_straddling")
_INT_COLUMNS = ("frame", "invalid_count", "n_points", "n_straddling")


@dataclass(frozen=True)
class RotationField:
    """Rigid rotation by ``alpha_deg`` (counter-clockwise positive) about ``(x0, 0)``.

    With ``hinged`` only material at ``x >= x0`` rotates and the left part
    stays fixed, which tears a wedge-shaped opening along ``x = x0`` that
    widens away from the pivot edge.
    """

    x0: float
    alpha_deg: float
    hinged: bool = True

    def __post_init__(self):
        if not math.isfinite(self.alpha_deg) or not math.isfinite(self.x0):
            raise ValueError("rotation parameters must be finite")

    @property
    def alpha(self) -> float:
        return math.radians(self.alpha_deg)

    def displacement(self, x, y):
        """Ground-truth ``(u_x, u_y)``, honouring the hinge."""
        ux, uy = eval_rotation(self, x, y)
        if self.hinged:
            right = np.asarray(x) >= self.x0
            ux = np.where(right, ux, 0.0)
            uy = np.where(right, uy, 0.0)
        return ux, uy


def eval_rotation(rot: RotationField, x, y):
    """Displacement of the rotation about ``(x0, 0)`` at ``(x, y)``.

    Uses the angle form ``sin(alpha + atan((x - x0) / y)) * r`` which is
    singular on ``y = 0`` away from the pivot.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    x, y = np.broadcast_arrays(x, y)
    dx = x - rot.x0
    pivot = (y == 0) & (dx == 0)
    if np.any((y <= 0) & ~pivot):
        raise ValueError("rotation field is undefined for y <= 0 away from the pivot")
    ys = np.where(pivot, 1.0, y)
    theta = np.arctan(dx / ys)
    r = np.sqrt(dx * dx + ys * ys)
    ux = np.sin(rot.alpha + theta) * r + rot.x0 - x
    uy = np.cos(rot.alpha + theta) * r - ys
    ux = np.where(pivot, 0.0, ux)
    uy = np.where(pivot, 0.0, uy)
    if ux.ndim == 0:
        return float(ux), float(uy)
    return ux, uy


@dataclass(frozen=True)
class SpeckleSpec:
    """Random Gaussian-blob speckle pattern.

    Dark blobs (``foreground``) on a light ``background``; radii are drawn
    from a normal distribution and clipped to ``[1, 3 * radius_mean]``.
    Overlapping blobs saturate as ``1 - exp(-ink_gain * sum)``.
    """

    width: int = 1024
    height: int = 1024
    n_speckles: int = 8000
    radius_mean: float = 3.0
    radius_spread: float = 0.6
    background: float = 0.95
    foreground: float = 0.03
    ink_gain: float = 4.0
    seed: int = 0
    mig_floor: float = 20.0
    max_attempts: int = 20
    max_code: int = 255


def _render_speckle(spec: SpeckleSpec, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    H, W = spec.height, spec.width
    acc = np.zeros((H, W))
    n = spec.n_speckles
    if n:
        pad = 3.0 * spec.radius_mean
        xs = rng.uniform(-pad, W - 1 + pad, n)
        ys = rng.uniform(-pad, H - 1 + pad, n)
        rs = np.clip(rng.normal(spec.radius_mean, spec.radius_spread, n),
                     1.0, 3.0 * spec.radius_mean)
        for cx, cy, r in zip(xs, ys, rs):
            h = int(math.ceil(3.0 * r))
            x0 = max(int(math.floor(cx)) - h, 0)
            x1 = min(int(math.floor(cx)) + h + 1, W)
            y0 = max(int(math.floor(cy)) - h, 0)
            y1 = min(int(math.floor(cy)) + h + 1, H)
            if x0 >= x1 or y0 >= y1:
                continue
            gx = np.arange(x0, x1) - cx
            gy = np.arange(y0, y1) - cy
            acc[y0:y1, x0:x1] += np.exp(-(gy[:, None] ** 2 + gx[None, :] ** 2) / (r * r))
    cover = 1.0 - np.exp(-spec.ink_gain * acc)
    return spec.background + (spec.foreground - spec.background) * cover


def generate_speckle(spec: SpeckleSpec = SpeckleSpec()) -> GrayImage:
    """Render a speckle image, re-drawing until its MIG reaches ``mig_floor``.

    Attempt ``k`` uses RNG seed ``spec.seed + k``. A pattern with no speckles
    is returned as-is (a constant image).
    """
    if spec.n_speckles < 0:
        raise ValueError("speckle count must be non-negative")
    for k in range(spec.max_attempts):
        data = np.clip(_render_speckle(spec, spec.seed + k), 0.0, 1.0)
        img = GrayImage(data, max_code=spec.max_code)
        mig = mean_intensity_gradient(img)
        log.info("speckle attempt %d (seed %d): MIG %.2f", k, spec.seed + k, mig)
        if spec.n_speckles == 0 or mig >= spec.mig_floor:
            return img
    raise DICError(f"speckle pattern did not reach MIG {spec.mig_floor} in {spec.max_attempts} attempts")


def render_deformed(ref: GrayImage, rot: RotationField, background: float | None = None,
                    noise_sigma: float = 0.0, rng: np.random.Generator | None = None) -> GrayImage:
    """Inverse-mapped bicubic rendering of ``ref`` under ``rot``.

    Pixels without a source inside ``ref`` (outside the image or inside the
    hinge opening) get ``background`` (default: the median intensity).
    """
    if background is None:
        background = float(np.median(ref.data))
    out = np.empty_like(ref.data)
    K.render_hinged_rotation(ref.data, bspline_coefficients(ref.data), float(rot.x0),
                             rot.alpha, bool(rot.hinged), float(background), out)
    if noise_sigma > 0:
        rng = rng or np.random.default_rng(0)
        out = out + rng.normal(0.0, noise_sigma, out.shape)
    return GrayImage(np.clip(out, 0.0, 1.0), scale=ref.scale, max_code=ref.max_code)


def rotation_angles(frames: int = 50, alpha_max: float = 15.0) -> np.ndarray:
    """Angles of frames ``1..frames``, evenly stepping up to ``alpha_max``."""
    return alpha_max * np.arange(1, frames + 1) / frames


def rotation_series(ref: GrayImage, angles: Sequence[float], x0: float | None = None,
                    hinged: bool = True, noise_sigma: float = 0.0, seed: int = 0):
    """Deformed frames for each angle; returns ``(frames, fields)``."""
    x0 = ref.width / 2 if x0 is None else x0
    rng = np.random.default_rng(seed)
    fields = [RotationField(x0, float(a), hinged) for a in angles]
    frames = [render_deformed(ref, f, noise_sigma=noise_sigma, rng=rng) for f in fields]
    return frames, fields


@dataclass(frozen=True)
class BenchmarkRow:
    mode: str
    frame: int
    alpha_deg: float
    mae_x_px: float
    mae_y_px: float
    invalid_count: int
    strict_mae_x_px: float
    strict_mae_y_px: float
    mae_x_all_px: float
    mae_y_all_px: float
    n_points: int
    n_straddling: int

    @property
    def invalid_fraction(self) -> float:
        return self.invalid_count / self.n_points


@dataclass
class BenchmarkResult:
    rows: list = field(default_factory=list)
    grid: RoiGrid | None = None
    seeds: dict = field(default_factory=dict)
    reference_updates: dict = field(default_factory=dict)

    def for_mode(self, mode: str) -> list:
        return [r for r in self.rows if r.mode == mode]


def benchmark_grid(width: int, height: int, roi_size=(640, 824), step: int = 8) -> RoiGrid:
    rw, rh = roi_size
    return RoiGrid((width - rw) // 2, (height - rh) // 2, rw, rh, step)


def benchmark_seeds(grid: RoiGrid, x0: float, radius: int = 50, reference=None,
                    half_width: int = 11) -> tuple[SeedSpec, SeedSpec]:
    """One seed per partition, nominally a quarter ROI either side of the hinge.

    With a ``reference`` image each seed moves to the most distinctive grid
    point nearby (:meth:`SeedSpec.distinctive`).
    """
    sy = grid.y + grid.height / 4
    pixels = [(x0 - grid.width / 4, sy), (x0 + grid.width / 4, sy)]
    if reference is None:
        multi = SeedSpec.from_pixels(grid, pixels, radius)
    else:
        multi = SeedSpec.distinctive(grid, reference, pixels, radius, half_width)
    return SeedSpec(multi.points[:1], multi.radii[:1]), multi


def straddle_mask(grid: RoiGrid, x0: float, half_width: int) -> np.ndarray:
    """Grid points whose subset covers material on both sides of ``x = x0``.

    Such a subset spans two rigid bodies, so no single warp describes it and
    the point has no well-defined true displacement.
    """
    X, _ = grid.positions()
    return (X - half_width < x0) & (X + half_width >= x0)


def run_benchmark(spec: SpeckleSpec = SpeckleSpec(), frames: int = 50, alpha_max: float = 15.0,
                  modes: Sequence[str] = MODES, roi_size=(640, 824), half_width: int = 11,
                  step: int = 8, update_every: int = 10, search_radius: int = 50,
                  x0: float | None = None, reference: GrayImage | None = None,
                  series=None, progress: Callable[[str, int], None] | None = None
                  ) -> BenchmarkResult:
    """Per-frame MAE of each analysis mode on a hinged-rotation series.

    ``series`` may carry pre-rendered ``(frames, fields)`` for ``reference``.
    ``mae_*_px`` and the strict values leave out the points whose subsets
    straddle the hinge line (see :func:`straddle_mask`); ``mae_*_all_px``
    keep them. ``invalid_count`` and ``n_points`` refer to the scored points.
    """
    for m in modes:
        if m not in MODES:
            raise ValueError(f"unknown benchmark mode {m!r}; choose from {MODES}")
    ref = reference if reference is not None else generate_speckle(spec)
    x0 = ref.width / 2 if x0 is None else x0
    if series is None:
        series = rotation_series(ref, rotation_angles(frames, alpha_max), x0)
    imgs, fields = series
    grid = benchmark_grid(ref.width, ref.height, roi_size, step)
    one, multi = benchmark_seeds(grid, x0, search_radius, ref, half_width)
    result = BenchmarkResult(grid=grid, seeds={"one-seed": one, "multi-seed": multi,
                                                "incremental-multi-seed": multi})
    straddle = straddle_mask(grid, x0, half_width)
    n_straddle = int(straddle.sum())
    seq = [ref] + list(imgs)
    for mode in modes:
        incremental = mode == "incremental-multi-seed"
        cfg = AnalysisConfig(subset_half_width=half_width, search_radius=search_radius,
                             update="interval", update_every=update_every)
        seeds = one if mode == "one-seed" else multi
        cb = (lambda i, f, mode=mode: progress(mode, i)) if progress else None
        out = analyze_sequence(seq, grid, seeds, cfg, incremental=incremental,
                               raise_on_failure=False, progress=cb)
        result.reference_updates[mode] = list(out.reference_updates)
        for fld, rot in zip(out, fields):
            s = mae(fld, rot.displacement, strict=True, exclude=straddle)
            mx, my = _plain_mae(fld, rot, straddle)
            ax, ay = _plain_mae(fld, rot, None)
            result.rows.append(BenchmarkRow(mode, fld.frame, rot.alpha_deg, mx, my,
                                            s.n_invalid, s.mae_x, s.mae_y, ax, ay,
                                            s.n_valid + s.n_invalid, n_straddle))
    return result


def _plain_mae(fld, rot, exclude) -> tuple[float, float]:
    try:
        m = mae(fld, rot.displacement, exclude=exclude)
    except ValueError:  # nothing valid to score
        return float("nan"), float("nan")
    return m.mae_x, m.mae_y


def write_benchmark_csv(result: BenchmarkResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(BENCHMARK_COLUMNS)
        for r in result.rows:
            w.writerow([getattr(r, c) if c == "mode" or c in _INT_COLUMNS else repr(getattr(r, c))
                        for c in BENCHMARK_COLUMNS])


def read_benchmark_csv(path) -> list[BenchmarkRow]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        vals = {c: (r[c] if c == "mode" else int(r[c]) if c in _INT_COLUMNS else float(r[c]))
                for c in BENCHMARK_COLUMNS}
        out.append(BenchmarkRow(**vals))
    return out


def plot_benchmark_svg(result: BenchmarkResult, path) -> None:
    """Per-frame MAE_x of each mode as an SVG line plot."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for mode in dict.fromkeys(r.mode for r in result.rows):
        rows = result.for_mode(mode)
        ax.plot([r.frame for r in rows], [r.mae_x_px for r in rows], marker=".", label=mode)
    ax.set_xlabel("frame")
    ax.set_ylabel("MAE x (px)")
    ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    fig.savefig(Path(path), format="svg")
    plt.close(fig)
