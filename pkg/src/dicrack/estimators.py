"""scikit-learn style wrappers around the correlation and crack pipelines.

:class:`DICAnalyzer` is a transformer: ``fit`` takes the reference image,
``transform`` maps a sequence of deformed frames to displacement arrays.
:class:`CrackDetector` is a predictor over displacement fields: ``fit``
settles the critical CTOD, ``predict`` flags crack edges.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_is_fitted

from . import validation as V
from .crack import (CrackReport, analyze_cracks, detect_crack_edges, determine_delta_c,
                    locate_crack_tip, relative_displacement)
from .errors import ConfigError
from .rgdic import AnalysisConfig, RoiGrid, SeedSpec, analyze_sequence


class DICAnalyzer(TransformerMixin, BaseEstimator):
    """Reliability-guided DIC against a fixed reference image.

    Parameters
    ----------
    subset_half_width : int
        ``M``; subsets are ``(2M+1)`` pixels square.
    step : int
        Grid spacing in pixels.
    roi : tuple or None
        ``(x, y, width, height)``; None takes the largest ROI that fits.
    seeds : sequence of (x, y) or None
        Seed pixels; None picks the most distinctive point near the ROI centre.
    incremental : bool
        Rebase the reference during :meth:`transform` (see ``update``).
    update, update_every, composition, order, zncc_threshold, search_radius
        Passed to :class:`~dicrack.rgdic.AnalysisConfig`.
    scale : float or None
        mm per pixel, attached to the output fields.

    Attributes
    ----------
    grid_ : RoiGrid
    seeds_ : SeedSpec
    fields_ : list of DisplacementField
        Fields from the last :meth:`transform` call.
    reference_updates_ : list of int
    """

    def __init__(self, subset_half_width=11, step=8, roi=None, seeds=None, order=1,
                 zncc_threshold=0.7, search_radius=50, incremental=False, update="trigger",
                 update_every=10, composition="tracked", scale=None):
        self.subset_half_width = subset_half_width
        self.step = step
        self.roi = roi
        self.seeds = seeds
        self.order = order
        self.zncc_threshold = zncc_threshold
        self.search_radius = search_radius
        self.incremental = incremental
        self.update = update
        self.update_every = update_every
        self.composition = composition
        self.scale = scale

    def _config(self) -> AnalysisConfig:
        return AnalysisConfig(subset_half_width=V.check_int(self.subset_half_width,
                                                            "subset_half_width", 3),
                              order=self.order, zncc_threshold=self.zncc_threshold,
                              search_radius=self.search_radius, update=self.update,
                              update_every=self.update_every, composition=self.composition)

    def fit(self, X, y=None):
        """Take ``X`` (an image, or a sequence whose first item is used) as reference."""
        ref = X[0] if isinstance(X, (list, tuple)) else X
        ref = V.check_image(ref, "reference")
        if self.scale is not None:
            ref = ref.with_scale(V.check_positive(self.scale, "scale"))
        cfg = self._config()
        M = cfg.subset_half_width
        step = V.check_int(self.step, "step", 1)
        if self.roi is None:
            grid = V.default_roi(ref.width, ref.height, M, step)
        else:
            x, y0, w, h = (V.check_int(v, "roi") for v in self.roi)
            grid = RoiGrid(x, y0, w, h, step)
        V.check_roi(grid, ref.width, ref.height, M)
        if self.seeds is None:
            centre = [(grid.x + grid.width / 2, grid.y + grid.height / 2)]
            seeds = SeedSpec.distinctive(grid, ref, centre, cfg.search_radius, M)
        else:
            seeds = SeedSpec.from_pixels(grid, V.check_seeds(self.seeds, grid),
                                         cfg.search_radius)
        self.reference_ = ref
        self.grid_ = grid
        self.seeds_ = seeds
        self.config_ = cfg
        return self

    def transform(self, X):
        """Displacements of each frame in ``X`` relative to the reference.

        Returns an array of shape ``(n_frames, ny, nx, 2)`` holding ``(u, v)``
        in pixels, NaN at invalid points.
        """
        check_is_fitted(self, "grid_")
        frames = [X] if not isinstance(X, (list, tuple)) else list(X)
        frames = V.check_frames(frames, min_frames=1)
        if frames[0].shape != self.reference_.shape:
            raise ConfigError("frames and reference differ in size")
        seq = analyze_sequence([self.reference_] + frames, self.grid_, self.seeds_,
                               self.config_, incremental=self.incremental,
                               raise_on_failure=False)
        self.fields_ = list(seq)
        self.reference_updates_ = list(seq.reference_updates)
        return np.stack([np.stack([f.u, f.v], axis=-1) for f in seq])

    def fit_transform(self, X, y=None, **fit_params):
        """Fit on ``X[0]`` and transform ``X[1:]``."""
        X = list(X)
        return self.fit(X[0]).transform(X[1:])


class CrackDetector(BaseEstimator):
    """Critical-CTOD crack detection over displacement fields.

    Parameters
    ----------
    delta_c : float or "determine"
        Critical CTOD in mm; ``"determine"`` derives it in :meth:`fit` from
        the plateau of CTOD over the probe grids.
    orientation, growth : str
        Crack plane and growth direction (see :mod:`dicrack.crack`).
    scale : float or None
        mm per pixel when the fields carry none.
    lx_grid, ly_grid : sequence of float
        Probe offsets in mm for ``"determine"``.
    fit_frame : int
        Index into the fitted fields of the pre-peak field; -1 is the last.
    profile_band : tuple or None
        Grid rows (columns for horizontal cracks) searched for the tip.

    Attributes
    ----------
    delta_c_ : float
    delta_c_result_ : DeltaCResult or None
    tip_ : CrackTip or None
    """

    def __init__(self, delta_c="determine", orientation="vertical", growth="negative",
                 scale=None, lx_grid=(0.04, 0.06, 0.08, 0.10, 0.12, 0.14, 0.16),
                 ly_grid=(0.02, 0.04, 0.06, 0.08, 0.10), fit_frame=-1, profile_band=None):
        self.delta_c = delta_c
        self.orientation = orientation
        self.growth = growth
        self.scale = scale
        self.lx_grid = lx_grid
        self.ly_grid = ly_grid
        self.fit_frame = fit_frame
        self.profile_band = profile_band

    def fit(self, X, y=None):
        """``X``: a displacement field or a sequence of them."""
        V.check_orientation(self.orientation)
        V.check_growth(self.growth)
        fields = _as_fields(X)
        self.delta_c_result_ = None
        self.tip_ = None
        if isinstance(self.delta_c, str):
            if self.delta_c != "determine":
                raise ConfigError(f"delta_c must be a number or 'determine', got {self.delta_c!r}")
            fld = fields[self.fit_frame]
            tip = locate_crack_tip(fld, self.orientation, self.profile_band,
                                   growth=self.growth, scale=self.scale)
            if tip is None:
                raise ConfigError("no crack tip found in the pre-peak field")
            res = determine_delta_c(fld, tip, self.lx_grid, self.ly_grid, self.orientation,
                                    self.growth, self.scale)
            self.tip_ = tip
            self.delta_c_result_ = res
            self.delta_c_ = res.delta_c
        else:
            self.delta_c_ = V.check_positive(self.delta_c, "delta_c")
        return self

    def predict(self, X):
        """Boolean crack-edge masks over the relative-displacement grid, one per field."""
        self._check_fitted()
        out = []
        for fld in _as_fields(X):
            rel = relative_displacement(fld, self.orientation, self.scale)
            out.append(np.array(detect_crack_edges(rel, self.delta_c_, fld).flagged))
        return np.stack(out)

    def report(self, X, timestamps) -> CrackReport:
        """Full crack report (edges, tips, speed) for a field sequence."""
        self._check_fitted()
        return analyze_cracks(_as_fields(X), self.delta_c_, timestamps, self.orientation,
                              self.growth, self.scale, self.delta_c_result_)

    def _check_fitted(self):
        if not hasattr(self, "delta_c_"):
            raise NotFittedError("CrackDetector is not fitted yet; call fit first")


def _as_fields(X):
    from .rgdic import DisplacementField
    if isinstance(X, DisplacementField):
        return [X]
    fields = list(X)
    if not fields or not all(isinstance(f, DisplacementField) for f in fields):
        raise ConfigError("expected a displacement field or a non-empty sequence of them")
    return fields
