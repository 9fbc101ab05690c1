"""Input-validation helpers shared by the estimators, config loader and CLI.

Each ``check_*`` returns the validated (possibly converted) value or raises
:class:`~dicrack.errors.ConfigError` with a message naming the offending input.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .crack import GROWTH, ORIENTATIONS
from .errors import ConfigError
from .image import GrayImage, as_gray_image
from .rgdic import RoiGrid


def check_positive(value, name: str, allow_zero: bool = False) -> float:
    try:
        x = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a number, got {value!r}") from None
    if not math.isfinite(x) or x < 0 or (x == 0 and not allow_zero):
        bound = ">= 0" if allow_zero else "> 0"
        raise ConfigError(f"{name} must be finite and {bound}, got {value!r}")
    return x


def check_int(value, name: str, minimum: int | None = None) -> int:
    try:
        f = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be an integer, got {value!r}") from None
    if not f.is_integer():
        raise ConfigError(f"{name} must be an integer, got {value!r}")
    n = int(f)
    if minimum is not None and n < minimum:
        raise ConfigError(f"{name} must be >= {minimum}, got {n}")
    return n


def check_choice(value, name: str, choices: Sequence[str]) -> str:
    if value not in choices:
        raise ConfigError(f"{name} must be one of {tuple(choices)}, got {value!r}")
    return value


def check_orientation(value) -> str:
    return check_choice(value, "orientation", ORIENTATIONS)


def check_growth(value) -> str:
    return check_choice(value, "growth", GROWTH)


def check_image(img, name: str = "image") -> GrayImage:
    try:
        return as_gray_image(img)
    except ValueError as exc:
        raise ConfigError(f"{name}: {exc}") from exc


def check_frames(frames, min_frames: int = 2) -> list[GrayImage]:
    """A list of same-sized images."""
    imgs = [check_image(f, f"frame {k}") for k, f in enumerate(frames)]
    if len(imgs) < min_frames:
        raise ConfigError(f"need at least {min_frames} frames, got {len(imgs)}")
    shapes = {im.shape for im in imgs}
    if len(shapes) > 1:
        raise ConfigError(f"frames differ in size: {sorted(shapes)}")
    return imgs


def check_roi(grid: RoiGrid, width: int, height: int, half_width: int) -> RoiGrid:
    """Reject a grid whose subsets would leave a ``width x height`` image."""
    if not grid.fits(width, height, half_width):
        xs, ys = grid.xs(), grid.ys()
        raise ConfigError(
            f"ROI subsets leave the {width}x{height} image: points span x {xs[0]}..{xs[-1]}, "
            f"y {ys[0]}..{ys[-1]} with subset half-width {half_width} plus a 2 px margin")
    return grid


def check_seeds(pixels, grid: RoiGrid) -> list[tuple[float, float]]:
    """Seed pixel coordinates, each inside the ROI."""
    pts = [(float(x), float(y)) for x, y in pixels]
    if not pts:
        raise ConfigError("at least one seed is required")
    for x, y in pts:
        if not (grid.x <= x < grid.x + grid.width and grid.y <= y < grid.y + grid.height):
            raise ConfigError(
                f"seed ({x:g}, {y:g}) lies outside the ROI "
                f"x [{grid.x}, {grid.x + grid.width}) y [{grid.y}, {grid.y + grid.height})")
    return pts


def check_timestamps(times, n: int | None = None) -> np.ndarray:
    t = np.asarray(times, dtype=np.float64)
    if t.ndim != 1 or not np.all(np.isfinite(t)):
        raise ConfigError("timestamps must be a finite 1D sequence")
    if n is not None and t.size != n:
        raise ConfigError(f"expected {n} timestamps, got {t.size}")
    if np.any(np.diff(t) <= 0):
        raise ConfigError("timestamps must be strictly increasing")
    return t


def step_too_coarse(step: int, half_width: int) -> bool:
    """True when the grid step exceeds a sixth of the subset size."""
    return step > (2 * half_width + 1) / 6.0


def default_roi(width: int, height: int, half_width: int, step: int,
                margin: int = 2) -> RoiGrid:
    """Largest grid whose subsets all stay inside the image."""
    lo = half_width + margin
    w = width - 2 * lo
    h = height - 2 * lo
    if w < step or h < step:
        raise ConfigError(f"image {width}x{height} too small for subset half-width {half_width}")
    return RoiGrid(lo, lo, w, h, step)
