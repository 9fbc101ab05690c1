"""Single-subset matching: warps, ZNSSD/ZNCC, integer search and NR refinement."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .errors import DegenerateSubsetError, OutOfBoundsError
from .image import GrayImage, Interpolant, as_gray_image, as_interpolant

DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 50
DEFAULT_COND_LIMIT = 1e12

PARAM_NAMES = ("u", "v", "u_x", "u_y", "v_x", "v_y",
               "u_xx", "u_yy", "u_xy", "v_xx", "v_yy", "v_xy")


def n_params(order: int) -> int:
    if order == 1:
        return 6
    if order == 2:
        return 12
    raise ValueError(f"shape-function order must be 1 or 2, got {order}")


@dataclass(frozen=True)
class SubsetSpec:
    """Square ``(2M+1) x (2M+1)`` subset centred on ``(x0, y0)``."""

    x0: float
    y0: float
    half_width: int

    def __post_init__(self):
        if int(self.half_width) != self.half_width or self.half_width < 3:
            raise ValueError(f"subset half-width must be an integer >= 3, got {self.half_width}")

    @property
    def size(self) -> int:
        return 2 * self.half_width + 1

    def offsets(self) -> tuple[np.ndarray, np.ndarray]:
        return subset_offsets(self.half_width)

    def fits(self, width: int, height: int, margin: int = 2) -> bool:
        M = self.half_width
        return (self.x0 - M >= margin and self.x0 + M <= width - 1 - margin
                and self.y0 - M >= margin and self.y0 + M <= height - 1 - margin)


def subset_offsets(M: int) -> tuple[np.ndarray, np.ndarray]:
    """Pixel offsets of a subset, x varying fastest."""
    r = np.arange(-M, M + 1, dtype=np.float64)
    dy, dx = np.meshgrid(r, r, indexing="ij")
    return np.ascontiguousarray(dx.ravel()), np.ascontiguousarray(dy.ravel())


@dataclass(frozen=True, eq=False)
class WarpVector:
    """Displacement-mapping parameters.

    Component order is ``(u, v, u_x, u_y, v_x, v_y)`` for first order, followed
    by ``(u_xx, u_yy, u_xy, v_xx, v_yy, v_xy)`` for second order.
    """

    params: np.ndarray
    order: int = 1

    def __post_init__(self):
        p = np.array(self.params, dtype=np.float64).ravel()
        if p.size != n_params(self.order):
            raise ValueError(f"order {self.order} warp needs {n_params(self.order)} components, got {p.size}")
        if not np.all(np.isfinite(p)):
            raise ValueError("warp components must be finite")
        p.setflags(write=False)
        object.__setattr__(self, "params", p)

    @classmethod
    def zeros(cls, order: int = 1) -> "WarpVector":
        return cls(np.zeros(n_params(order)), order)

    @classmethod
    def translation(cls, u: float, v: float, order: int = 1) -> "WarpVector":
        p = np.zeros(n_params(order))
        p[0], p[1] = u, v
        return cls(p, order)

    @property
    def u(self) -> float:
        return float(self.params[0])

    @property
    def v(self) -> float:
        return float(self.params[1])

    def as_order(self, order: int) -> "WarpVector":
        if order == self.order:
            return self
        p = np.zeros(n_params(order))
        k = min(p.size, self.params.size)
        p[:k] = self.params[:k]
        return WarpVector(p, order)

    def __eq__(self, other):
        return (isinstance(other, WarpVector) and self.order == other.order
                and np.array_equal(self.params, other.params))

    def __repr__(self):
        named = ", ".join(f"{n}={v:.6g}" for n, v in zip(PARAM_NAMES, self.params))
        return f"WarpVector(order={self.order}, {named})"


@dataclass(frozen=True)
class MatchResult:
    warp: WarpVector
    znssd: float
    zncc: float
    iterations: int
    converged: bool
    status: str = "converged"
    initial_znssd: float = float("nan")


def warp_point(spec: SubsetSpec, w: WarpVector, dx: float, dy: float) -> tuple[float, float]:
    """Map the reference point ``(x0 + dx, y0 + dy)`` into the deformed image."""
    p = w.params
    x = spec.x0 + dx + p[0] + p[2] * dx + p[3] * dy
    y = spec.y0 + dy + p[1] + p[4] * dx + p[5] * dy
    if w.order == 2:
        x += 0.5 * p[6] * dx * dx + 0.5 * p[7] * dy * dy + p[8] * dx * dy
        y += 0.5 * p[9] * dx * dx + 0.5 * p[10] * dy * dy + p[11] * dx * dy
    return float(x), float(y)


def zncc_from_znssd(c: float) -> float:
    return 1.0 - 0.5 * c


def _reference_values(ref: Interpolant, spec: SubsetSpec) -> np.ndarray:
    dx, dy = spec.offsets()
    return np.asarray(ref(spec.x0 + dx, spec.y0 + dy), dtype=np.float64)


def _normalized(vals: np.ndarray, what: str) -> np.ndarray:
    out = np.empty_like(vals)
    if K.normalize_subset(vals, out) < K.DEGENERATE_NORM:
        raise DegenerateSubsetError(f"{what} subset has zero intensity variance")
    return out


def znssd_cost(ref, dfm, spec: SubsetSpec, w: WarpVector) -> float:
    """Zero-normalized sum of squared differences of one subset pair."""
    ref = as_interpolant(ref)
    dfm = as_interpolant(dfm)
    dx, dy = spec.offsets()
    fhat = _normalized(_reference_values(ref, spec), "reference")
    xs = np.empty_like(dx)
    ys = np.empty_like(dy)
    K.warp_coords(w.params, w.order, float(spec.x0), float(spec.y0), dx, dy, xs, ys)
    g = dfm(xs, ys)  # raises OutOfBoundsError
    ghat = _normalized(np.asarray(g, dtype=np.float64), "deformed")
    return float(np.sum((fhat - ghat) ** 2))


def initial_guess(ref, dfm, spec: SubsetSpec, search_radius: int = 50) -> tuple[tuple[int, int], float]:
    """Best integer translation within ``+-search_radius`` by exhaustive ZNCC.

    Candidate windows leaving the deformed image are skipped.
    """
    ref = as_gray_image(ref)
    dfm = as_gray_image(dfm)
    cx, cy = int(round(spec.x0)), int(round(spec.y0))
    M = spec.half_width
    if not (cx - M >= 0 and cx + M < ref.width and cy - M >= 0 and cy + M < ref.height):
        raise OutOfBoundsError("reference subset leaves the reference image")
    tx, ty, z, count = K.integer_search(ref.data, cx, cy, M, dfm.data, int(search_radius))
    if count == 0:
        raise DegenerateSubsetError("no non-degenerate candidate window in the search region")
    return (int(tx), int(ty)), float(z)


def refine_nr(ref, dfm, spec: SubsetSpec, w0: WarpVector, tol: float = DEFAULT_TOL,
              max_iter: int = DEFAULT_MAX_ITER,
              cond_limit: float = DEFAULT_COND_LIMIT) -> MatchResult:
    """Newton-Raphson refinement of ``w0`` on the ZNSSD cost.

    Non-convergence (singular Hessian, warp leaving the image, no descent,
    iteration cap) is reported through ``converged``/``status`` rather than
    raised.
    """
    ref = as_interpolant(ref)
    dfm = as_interpolant(dfm)
    dx, dy = spec.offsets()
    vals = _reference_values(ref, spec)
    fhat = np.empty_like(vals)
    if K.normalize_subset(vals, fhat) < K.DEGENERATE_NORM:
        return MatchResult(w0, float("inf"), float("-inf"), 0, False,
                           K.STATUS_NAMES[K.DEGENERATE])
    lo_x, hi_x, lo_y, hi_y = dfm.bounds
    p, c, it, status, c0 = K.nr_refine(
        fhat, dx, dy, dfm.coeffs, float(spec.x0), float(spec.y0),
        np.array(w0.params, dtype=np.float64), w0.order, float(spec.half_width),
        lo_x, hi_x, lo_y, hi_y, float(tol), int(max_iter), float(cond_limit))
    ok = status == K.CONVERGED
    warp = WarpVector(p, w0.order) if np.all(np.isfinite(p)) else w0
    return MatchResult(warp, float(c), zncc_from_znssd(float(c)), int(it), ok,
                       K.STATUS_NAMES[int(status)], float(c0))
