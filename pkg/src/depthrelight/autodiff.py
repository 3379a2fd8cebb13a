"""Hand-written reverse-mode gradients for the disparity -> image pipeline.

render_forward records every intermediate of

    disparity -> depth -> points -> tangents -> normals -> Blinn-Phong -> clamp

and render_pullback walks the tape backwards, returning gradients for the
disparity map, the camera parameter and the disparity offset b. The forward
stencils (central differences inside, one-sided at the borders) are mirrored
exactly in the adjoint so finite differences match to first order away from
the relu and clamp kinks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .geometry import (PERSPECTIVE, CameraModel, DisparityToDepthParams,
                       _grad_axis, pixel_coords)
from .shading import CLAMP_LO, GAMMA, LightingSample, gamma_decode

CLAMP_LITERAL = "literal"
CLAMP_STRAIGHT_THROUGH = "straight_through"

_TINY = np.finfo(np.float64).tiny


@dataclass
class RenderTape:
    """Forward intermediates needed by the pullback."""

    light: LightingSample
    cam: CameraModel
    dparams: DisparityToDepthParams
    clamp_mode: str
    uu: np.ndarray
    vv: np.ndarray
    denom: np.ndarray
    depth: np.ndarray
    t_u: np.ndarray
    t_v: np.ndarray
    cross: np.ndarray
    norm: np.ndarray
    degenerate: np.ndarray
    normals: np.ndarray
    ndl_pre: np.ndarray
    ndh_pre: np.ndarray
    albedo_lin: np.ndarray
    pre: np.ndarray
    encoded: np.ndarray
    rendered: np.ndarray


@dataclass(frozen=True)
class RenderGrads:
    """Cotangents pulled back to the pipeline inputs."""

    disparity: np.ndarray
    camera: float
    b: float


def render_forward(disp: np.ndarray, image: np.ndarray, light: LightingSample,
                   cam: CameraModel, dparams: DisparityToDepthParams,
                   clamp_mode: str = CLAMP_LITERAL) -> RenderTape:
    if clamp_mode not in (CLAMP_LITERAL, CLAMP_STRAIGHT_THROUGH):
        raise ParameterError(f"unknown clamp mode {clamp_mode!r}")
    h, w = disp.shape
    uu, vv = pixel_coords(h, w)

    denom = disp + dparams.b
    depth = dparams.s / denom

    points = np.empty((h, w, 3), dtype=np.float64)
    if cam.kind == PERSPECTIVE:
        f = cam.scale_or_focal
        points[..., 0] = uu * depth / f
        points[..., 1] = vv * depth / f
    else:
        sigma = cam.scale_or_focal
        points[..., 0] = uu / sigma
        points[..., 1] = vv / sigma
    points[..., 2] = depth

    t_u = _grad_axis(points, axis=1)
    t_v = _grad_axis(points, axis=0)
    cross = np.cross(t_u, t_v)
    norm = np.linalg.norm(cross, axis=2)
    degenerate = norm == 0.0
    safe = np.where(degenerate, 1.0, norm)
    normals = cross / safe[..., None]
    if degenerate.any():
        normals[degenerate] = (0.0, 0.0, 1.0)

    ndl_pre = normals @ light.direction
    ndh_pre = normals @ light.halfway
    ndl = np.maximum(ndl_pre, 0.0)
    ndh = np.maximum(ndh_pre, 0.0)

    albedo_lin = gamma_decode(image)
    pre = light.beta1 * ndl[..., None] * albedo_lin \
        + (light.beta2 * np.power(ndh, light.shininess))[..., None]
    encoded = np.power(pre, 1.0 / GAMMA)
    rendered = np.clip(encoded, CLAMP_LO, 1.0)

    return RenderTape(light, cam, dparams, clamp_mode, uu, vv, denom, depth,
                      t_u, t_v, cross, norm, degenerate, normals,
                      ndl_pre, ndh_pre, albedo_lin, pre, encoded, rendered)


def _grad_axis_adjoint(cot: np.ndarray, axis: int) -> np.ndarray:
    out = np.zeros_like(cot)
    g = np.moveaxis(cot, axis, 0)
    o = np.moveaxis(out, axis, 0)
    n = g.shape[0]
    o[0] -= g[0]
    o[1] += g[0]
    o[-1] += g[-1]
    o[-2] -= g[-1]
    if n > 2:
        o[:-2] -= 0.5 * g[1:-1]
        o[2:] += 0.5 * g[1:-1]
    return out


def render_pullback(tape: RenderTape, cot_rendered: np.ndarray) -> RenderGrads:
    light = tape.light

    if tape.clamp_mode == CLAMP_LITERAL:
        inside = (tape.encoded >= CLAMP_LO) & (tape.encoded <= 1.0)
        cot_enc = np.where(inside, cot_rendered, 0.0)
    else:
        cot_enc = cot_rendered

    # encoded = pre ** (1/gamma); derivative blows up at pre == 0, where the
    # clamp floor makes the output constant anyway, so pin it to zero there.
    exponent = 1.0 / GAMMA - 1.0
    denc = np.where(tape.pre > 0.0,
                    (1.0 / GAMMA) * np.power(np.maximum(tape.pre, _TINY),
                                             exponent),
                    0.0)
    cot_pre = cot_enc * denc

    cot_ndl = light.beta1 * (cot_pre * tape.albedo_lin).sum(axis=2)
    cot_spec = cot_pre.sum(axis=2)
    ndh = np.maximum(tape.ndh_pre, 0.0)
    a = light.shininess
    dspec = np.where(ndh > 0.0,
                     light.beta2 * a * np.power(np.maximum(ndh, _TINY),
                                                a - 1.0),
                     0.0)
    cot_ndh = cot_spec * dspec

    cot_ndl_pre = np.where(tape.ndl_pre > 0.0, cot_ndl, 0.0)
    cot_ndh_pre = np.where(tape.ndh_pre > 0.0, cot_ndh, 0.0)

    cot_n = cot_ndl_pre[..., None] * light.direction \
        + cot_ndh_pre[..., None] * light.halfway

    # n = c / |c|: project out the radial part, divide by the length; the
    # degenerate pixels were overwritten with a constant so they carry none.
    n_dot = (tape.normals * cot_n).sum(axis=2, keepdims=True)
    safe = np.where(tape.degenerate, 1.0, tape.norm)
    cot_cross = (cot_n - tape.normals * n_dot) / safe[..., None]
    if tape.degenerate.any():
        cot_cross[tape.degenerate] = 0.0

    # c = t_u x t_v: pull back through both factors of the cross product.
    cot_tu = np.cross(tape.t_v, cot_cross)
    cot_tv = np.cross(cot_cross, tape.t_u)

    cot_points = _grad_axis_adjoint(cot_tu, axis=1) \
        + _grad_axis_adjoint(cot_tv, axis=0)

    if tape.cam.kind == PERSPECTIVE:
        f = tape.cam.scale_or_focal
        cot_depth = cot_points[..., 0] * tape.uu / f \
            + cot_points[..., 1] * tape.vv / f \
            + cot_points[..., 2]
        cot_cam = float(-(cot_points[..., 0] * tape.uu * tape.depth
                          + cot_points[..., 1] * tape.vv * tape.depth
                          ).sum() / f ** 2)
    else:
        sigma = tape.cam.scale_or_focal
        cot_depth = cot_points[..., 2]
        cot_cam = float(-(cot_points[..., 0] * tape.uu
                          + cot_points[..., 1] * tape.vv
                          ).sum() / sigma ** 2)

    ddepth = -tape.dparams.s / tape.denom ** 2
    cot_disp = cot_depth * ddepth
    cot_b = float(cot_disp.sum())

    return RenderGrads(disparity=cot_disp, camera=cot_cam, b=cot_b)


def kink_distance(tape: RenderTape) -> np.ndarray:
    """Per-pixel distance to the nearest relu or clamp kink.

    Finite-difference checks exclude disparity entries whose perturbation
    could push any affected pixel across a nondifferentiable point.
    """
    d_relu = np.minimum(np.abs(tape.ndl_pre), np.abs(tape.ndh_pre))
    d_clamp = np.minimum(np.abs(tape.encoded - CLAMP_LO),
                         np.abs(1.0 - tape.encoded)).min(axis=2)
    return np.minimum(d_relu, d_clamp)


def fd_gradient(func, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function of an array."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = func(x)
        flat[i] = orig - eps
        lo = func(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * eps)
    return grad
