"""Test-time depth refinement by differentiable re-lighting.

A predicted disparity map is turned into depth, unprojected, shaded with a
randomized Blinn-Phong model, and optimized so the shaded image scores well
under a noise-prediction oracle or a remote diffusion scorer.
"""

from .errors import DomainError, FormatError, GuidanceError, NumericError, \
    ParameterError, ProtocolError, ShapeError
from .geometry import CameraModel, DisparityToDepthParams, compute_normals, \
    disparity_to_depth, normals_from_points, unproject
from .grids import MaskGrid, RgbGrid, ScalarGrid, Vec3Grid, grid_map2, \
    make_grid
from .guidance import EchoScorer, GuidanceConfig, NoiseSchedule, \
    OracleScorer, Scorer, ShadedReferenceScorer, sds_signal
from .protocol import RemoteScorer
from .refine import RefineConfig, RefineResult, ensemble, refine, \
    refine_ensemble, refine_run, smoothness_loss
from .shading import LightingSample, relight, sample_lighting

__version__ = "0.1.0"

__all__ = [
    "CameraModel", "DisparityToDepthParams", "DomainError", "EchoScorer",
    "FormatError", "GuidanceConfig", "GuidanceError", "LightingSample",
    "MaskGrid", "NoiseSchedule", "NumericError", "OracleScorer",
    "ParameterError", "ProtocolError", "RefineConfig", "RefineResult",
    "RemoteScorer", "RgbGrid", "ScalarGrid", "Scorer",
    "ShadedReferenceScorer", "ShapeError", "Vec3Grid", "compute_normals",
    "disparity_to_depth", "ensemble", "grid_map2", "make_grid",
    "normals_from_points", "refine", "refine_ensemble", "refine_run",
    "relight", "sample_lighting", "sds_signal", "smoothness_loss",
    "unproject",
]
