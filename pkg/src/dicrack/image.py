"""Grayscale images, subpixel interpolation and speckle-quality scoring."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.linalg import solve_banded

from . import _kernels as K
from .errors import ImageError, OutOfBoundsError

#: interpolation queries must stay this many pixels inside the image
INTERP_MARGIN = 2

_LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Immutable 2D intensity grid normalized to [0, 1].

    Attributes:
        data: ``(height, width)`` float64 intensities, row-major.
        scale: physical size of one pixel in mm, if known.
        max_code: full-scale code value of the source encoding (255 for
            8-bit, 65535 for 16-bit); used to recover native code values.
    """

    data: np.ndarray
    scale: float | None = None
    max_code: int = 255

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64, copy=True)
        if arr.ndim != 2:
            raise ImageError(f"expected a 2D intensity grid, got shape {arr.shape}")
        if arr.shape[0] < 3 or arr.shape[1] < 3:
            raise ImageError(f"image must be at least 3x3, got {arr.shape[1]}x{arr.shape[0]}")
        if not np.all(np.isfinite(arr)):
            raise ImageError("image contains non-finite intensities")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ImageError("intensities must lie in [0, 1]")
        if self.scale is not None and not (np.isfinite(self.scale) and self.scale > 0):
            raise ImageError(f"scale must be a positive length per pixel, got {self.scale}")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def codes(self) -> np.ndarray:
        """Intensities in native code values."""
        return self.data * self.max_code

    def with_scale(self, scale: float | None) -> "GrayImage":
        return GrayImage(self.data, scale=scale, max_code=self.max_code)


def load_image(path, scale: float | None = None) -> GrayImage:
    """Read an 8/16-bit grayscale (or RGB) PNG or TIFF."""
    path = Path(path)
    if not path.is_file():
        raise ImageError(f"no such image file: {path}")
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode == "P":
                im = im.convert("RGBA" if "transparency" in im.info else "RGB")
                mode = im.mode
            arr = np.asarray(im)
    except ImageError:
        raise
    except Exception as exc:  # PIL raises a zoo of exception types
        raise ImageError(f"cannot read image {path}: {exc}") from exc

    if arr.size == 0:
        raise ImageError(f"zero-sized image: {path}")
    if mode == "L":
        max_code = 255
        gray = arr.astype(np.float64)
    elif mode in ("RGB", "RGBA"):
        max_code = 255
        gray = arr[..., :3].astype(np.float64) @ _LUMA
    elif mode == "LA":
        max_code = 255
        gray = arr[..., 0].astype(np.float64)
    elif mode.startswith("I;16") or mode == "I":
        # 16-bit PNGs may open as mode "I" (int32 container)
        if arr.min() < 0 or arr.max() > 65535:
            raise ImageError(f"unsupported bit depth in {path} (mode {mode})")
        max_code = 65535
        gray = arr.astype(np.float64)
    else:
        raise ImageError(f"unsupported image mode {mode!r} in {path}")
    return GrayImage(np.clip(gray / max_code, 0.0, 1.0), scale=scale, max_code=max_code)


def save_image(img: GrayImage, path, bit_depth: int = 8) -> None:
    """Write ``img`` as an 8- or 16-bit grayscale PNG/TIFF (rounded codes)."""
    if bit_depth == 8:
        arr = np.rint(img.data * 255).astype(np.uint8)
    elif bit_depth == 16:
        arr = np.rint(img.data * 65535).astype(np.uint16)
    else:
        raise ImageError(f"unsupported bit depth {bit_depth}")
    Image.fromarray(arr).save(Path(path))


def as_gray_image(img, scale: float | None = None) -> GrayImage:
    """Accept a GrayImage or a 2D array in [0, 1]."""
    if isinstance(img, GrayImage):
        return img
    return GrayImage(np.asarray(img, dtype=np.float64), scale=scale)


def gradients(img: GrayImage) -> tuple[np.ndarray, np.ndarray]:
    """Intensity derivatives with normalized 3x3 Prewitt kernels.

    The raw Prewitt response is divided by 6 so a unit-slope ramp has unit
    derivative. Border pixels copy the nearest interior value.
    """
    f = img.data
    fx_in = (
        (f[:-2, 2:] - f[:-2, :-2])
        + (f[1:-1, 2:] - f[1:-1, :-2])
        + (f[2:, 2:] - f[2:, :-2])
    ) / 6.0
    fy_in = (
        (f[2:, :-2] - f[:-2, :-2])
        + (f[2:, 1:-1] - f[:-2, 1:-1])
        + (f[2:, 2:] - f[:-2, 2:])
    ) / 6.0
    return np.pad(fx_in, 1, mode="edge"), np.pad(fy_in, 1, mode="edge")


def mean_intensity_gradient(img: GrayImage) -> float:
    """Mean intensity gradient of the whole image, in native code values."""
    fx, fy = gradients(img)
    mag = np.hypot(fx, fy) * img.max_code
    return float(mag.sum() / (img.width * img.height))


def bspline_coefficients(data: np.ndarray) -> np.ndarray:
    """Cubic B-spline coefficients, padded by 2 cells.

    The image is extended point-symmetrically about its edge samples
    (``f[-k] = 2 f[0] - f[k]``), so linear ramps are reproduced exactly.
    """
    c = _prefilter_axis(np.asarray(data, dtype=np.float64), 0)
    c = _prefilter_axis(c, 1)
    return np.ascontiguousarray(np.pad(c, 2, mode="reflect", reflect_type="odd"))


def _prefilter_axis(a: np.ndarray, axis: int) -> np.ndarray:
    n = a.shape[axis]
    ab = np.empty((3, n))
    ab[0, :] = 1.0 / 6.0
    ab[1, :] = 4.0 / 6.0
    ab[2, :] = 1.0 / 6.0
    # point-symmetric extension pins the edge coefficients: c[0] = f[0]
    ab[1, 0] = ab[1, n - 1] = 1.0
    ab[0, 1] = ab[2, n - 2] = 0.0
    moved = np.moveaxis(a, axis, 0).reshape(n, -1)
    sol = solve_banded((1, 1), ab, moved)
    return np.moveaxis(sol.reshape(np.moveaxis(a, axis, 0).shape), 0, axis)


class Interpolant:
    """Bicubic B-spline evaluator over a :class:`GrayImage`.

    Queries are valid for ``margin <= x <= width - 1 - margin`` (likewise for
    ``y``); anything outside raises :class:`OutOfBoundsError`.
    """

    kind = "bicubic"

    def __init__(self, image: GrayImage, margin: int = INTERP_MARGIN):
        if image.width < 4 or image.height < 4:
            raise ImageError("bicubic interpolation needs an image of at least 4x4")
        self.image = image
        self.margin = margin
        self.coeffs = bspline_coefficients(image.data)
        self.coeffs.setflags(write=False)

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        """``(lo_x, hi_x, lo_y, hi_y)`` of the valid query region."""
        m = self.margin
        return (float(m), float(self.image.width - 1 - m),
                float(m), float(self.image.height - 1 - m))

    def _check(self, x, y):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        x, y = np.broadcast_arrays(x, y)
        lo_x, hi_x, lo_y, hi_y = self.bounds
        ok = (x >= lo_x) & (x <= hi_x) & (y >= lo_y) & (y <= hi_y)
        if not np.all(ok):
            raise OutOfBoundsError(
                f"interpolation query outside [{lo_x}, {hi_x}] x [{lo_y}, {hi_y}]")
        return x, y

    def __call__(self, x, y):
        x, y = self._check(x, y)
        out = np.empty(x.size)
        K.bspline_value_many(self.coeffs, np.ascontiguousarray(x.ravel()),
                             np.ascontiguousarray(y.ravel()), out)
        return out.reshape(x.shape) if x.ndim else float(out[0])

    def evaluate(self, x, y):
        """Return ``(value, d/dx, d/dy)`` at the query points."""
        x, y = self._check(x, y)
        v = np.empty(x.size)
        gx = np.empty(x.size)
        gy = np.empty(x.size)
        K.bspline_eval_many(self.coeffs, np.ascontiguousarray(x.ravel()),
                            np.ascontiguousarray(y.ravel()), v, gx, gy)
        if x.ndim == 0:
            return float(v[0]), float(gx[0]), float(gy[0])
        return v.reshape(x.shape), gx.reshape(x.shape), gy.reshape(x.shape)

    def gradient(self, x, y):
        _, gx, gy = self.evaluate(x, y)
        return gx, gy


def make_interpolant(img: GrayImage, kind: str = "bicubic") -> Interpolant:
    if kind != "bicubic":
        raise ValueError(f"unknown interpolation scheme {kind!r}")
    return Interpolant(img)


def as_interpolant(obj) -> Interpolant:
    if isinstance(obj, Interpolant):
        return obj
    return make_interpolant(as_gray_image(obj))
