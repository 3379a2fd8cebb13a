"""Camera models, disparity-to-depth conversion, unprojection and normals.

Pixel coordinates U (horizontal) and V (vertical) span [-1, 1] linearly with
the endpoints at the centers of the first and last columns/rows. Normals are
oriented so that a fronto-parallel surface faces the viewer, n = (0, 0, 1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ParameterError, ShapeError
from .grids import ScalarGrid, Vec3Grid

ORTHOGRAPHIC = "orthographic"
PERSPECTIVE = "perspective"

ORTHO_SCALE_INIT = 7.0
PERSP_FOCAL_INIT = 2.0


@dataclass(frozen=True)
class CameraModel:
    """Scaled-orthographic or perspective projection.

    scale_or_focal is the orthographic image-plane scale (init 7.0) or the
    perspective focal length (init 2.0).
    """

    kind: str
    scale_or_focal: float
    optimizable: bool = False

    def __post_init__(self):
        if self.kind not in (ORTHOGRAPHIC, PERSPECTIVE):
            raise ParameterError(f"unknown camera kind {self.kind!r}")
        if self.scale_or_focal <= 0:
            raise ParameterError("camera scale/focal must be positive")

    @staticmethod
    def default(kind: str, optimizable: bool = False) -> "CameraModel":
        init = ORTHO_SCALE_INIT if kind == ORTHOGRAPHIC else PERSP_FOCAL_INIT
        return CameraModel(kind, init, optimizable)


@dataclass(frozen=True)
class DisparityToDepthParams:
    """depth = s / (disparity + b); b > 0 keeps zero-disparity pixels finite."""

    b: float = 0.1
    s: float = 1.0
    optimizable_b: bool = False

    def __post_init__(self):
        if self.b <= 0:
            raise ParameterError("offset b must be positive")
        if self.s <= 0:
            raise ParameterError("scale s must be positive")


def pixel_coords(height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    """(U, V) coordinate tensors, each H x W, spanning [-1, 1] inclusive."""
    if height < 2 or width < 2:
        raise ShapeError("pixel coordinates need at least a 2 x 2 grid")
    u = np.linspace(-1.0, 1.0, width)
    v = np.linspace(-1.0, 1.0, height)
    return np.broadcast_to(u, (height, width)).copy(), \
        np.broadcast_to(v[:, None], (height, width)).copy()


def disparity_to_depth(disp: ScalarGrid, p: DisparityToDepthParams) -> ScalarGrid:
    return ScalarGrid(_disparity_to_depth_raw(disp.values, p))


def _disparity_to_depth_raw(disp: np.ndarray, p: DisparityToDepthParams) -> np.ndarray:
    denom = disp + p.b
    if denom.min() <= 0:
        raise DomainError("disparity + b must stay positive")
    return p.s / denom


def unproject(depth: ScalarGrid, cam: CameraModel) -> Vec3Grid:
    return Vec3Grid(_unproject_raw(depth.values, cam))


def _unproject_raw(depth: np.ndarray, cam: CameraModel) -> np.ndarray:
    if depth.min() <= 0:
        raise DomainError("depth must be positive everywhere")
    h, w = depth.shape
    uu, vv = pixel_coords(h, w)
    pts = np.empty((h, w, 3), dtype=np.float64)
    if cam.kind == PERSPECTIVE:
        f = cam.scale_or_focal
        pts[..., 0] = uu * depth / f
        pts[..., 1] = vv * depth / f
    else:
        sigma = cam.scale_or_focal
        pts[..., 0] = uu / sigma
        pts[..., 1] = vv / sigma
    pts[..., 2] = depth
    return pts


def _grad_axis(arr: np.ndarray, axis: int) -> np.ndarray:
    """Central differences in the interior, one-sided at the borders.

    Matches np.gradient with unit spacing; kept explicit so the adjoint in
    the autodiff module mirrors it stencil for stencil.
    """
    out = np.empty_like(arr)
    a = np.moveaxis(arr, axis, 0)
    o = np.moveaxis(out, axis, 0)
    n = a.shape[0]
    if n < 2:
        raise ShapeError("gradient needs at least 2 samples along the axis")
    o[0] = a[1] - a[0]
    o[-1] = a[-1] - a[-2]
    if n > 2:
        o[1:-1] = 0.5 * (a[2:] - a[:-2])
    return out


def normals_from_points(points: Vec3Grid) -> tuple[Vec3Grid, int]:
    """Unit normals from an unprojected point grid.

    Returns the normal map and the count of degenerate pixels where the
    tangent cross product vanished and (0, 0, 1) was substituted.
    """
    normals, count = _normals_from_points_raw(points.values)
    return Vec3Grid(normals, unit=True), count


def _normals_from_points_raw(points: np.ndarray) -> tuple[np.ndarray, int]:
    t_u = _grad_axis(points, axis=1)
    t_v = _grad_axis(points, axis=0)
    # t_u x t_v makes a fronto-parallel plane face the viewer (+z).
    cross = np.cross(t_u, t_v)
    norm = np.linalg.norm(cross, axis=2)
    degenerate = norm == 0.0
    count = int(degenerate.sum())
    safe = np.where(degenerate, 1.0, norm)
    normals = cross / safe[..., None]
    if count:
        normals[degenerate] = (0.0, 0.0, 1.0)
    return normals, count


def compute_normals(disp: ScalarGrid, cam: CameraModel,
                    p: DisparityToDepthParams) -> tuple[Vec3Grid, int]:
    """disparity -> depth -> points -> unit normals, with degeneracy count."""
    depth = _disparity_to_depth_raw(disp.values, p)
    points = _unproject_raw(depth, cam)
    normals, count = _normals_from_points_raw(points)
    return Vec3Grid(normals, unit=True), count
