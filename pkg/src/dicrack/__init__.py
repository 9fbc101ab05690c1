"""Digital image correlation with reliability-guided multi-seed incremental
analysis, and crack detection from displacement fields by critical CTOD."""

__version__ = "0.1.0"

from .correlation import (MatchResult, SubsetSpec, WarpVector, initial_guess, refine_nr,
                          warp_point, zncc_from_znssd, znssd_cost)
from .crack import (CrackEdges, CrackReport, CrackTip, DeltaCResult, RelativeDisplacementField,
                    analyze_cracks, crack_tip_from_edges, detect_crack_edges, determine_delta_c,
                    locate_crack_tip, measure_ctod, relative_displacement, track_tip_and_speed)
from .errors import (ConfigError, DegenerateSubsetError, DICError, FrameFailureError, ImageError,
                     NoPlateauError, OutOfBoundsError)
from .estimators import CrackDetector, DICAnalyzer
from .image import (GrayImage, Interpolant, gradients, load_image, make_interpolant,
                    mean_intensity_gradient)
from .rgdic import (AnalysisConfig, DisplacementField, RoiGrid, SeedSpec, analyze_frame,
                    analyze_sequence, mae)
from .synthetic import (RotationField, SpeckleSpec, eval_rotation, generate_speckle,
                        render_deformed, run_benchmark)
