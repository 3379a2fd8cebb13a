"""Classical shape-from-shading baseline: Lambertian render, joint descent.

Normals are initialized from image gradients, then normals and the light
direction are optimized together on a photometric plus smoothness objective
with plain gradient descent and post-step renormalization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import NumericError, ParameterError
from .grids import MaskGrid, ScalarGrid, Vec3Grid

# Derivative along the vertical axis; the transpose differentiates along the
# horizontal one. True convolution, so the positive lobe sits at the smaller
# index and a unit ramp maps to +1.
_SCHARR_V = np.array([[3.0, 10.0, 3.0],
                      [0.0, 0.0, 0.0],
                      [-3.0, -10.0, -3.0]]) / 32.0

DEFAULT_PHOTO_WEIGHT = 10.0
DEFAULT_LR = 0.1


@dataclass(frozen=True)
class SfSState:
    """Optimized quantities plus the fixed weights of the objective."""

    normals: Vec3Grid
    light: np.ndarray
    mask: MaskGrid
    lam: float = DEFAULT_PHOTO_WEIGHT
    l_in: float = 1.0

    def __post_init__(self):
        d = np.asarray(self.light, dtype=np.float64).reshape(3)
        n = np.linalg.norm(d)
        if n == 0:
            raise ParameterError("light direction must be nonzero")
        object.__setattr__(self, "light", d / n)
        if self.lam < 0:
            raise ParameterError("photometric weight must be nonnegative")
        if self.mask.count() == 0:
            raise ParameterError("mask selects no pixels")


@dataclass(frozen=True)
class SfSGrads:
    normals: np.ndarray
    light: np.ndarray


def scharr_gradients(gray: ScalarGrid) -> tuple[ScalarGrid, ScalarGrid]:
    """Horizontal and vertical image derivatives, reflect-padded."""
    i_u = ndimage.convolve(gray.values, _SCHARR_V.T, mode="reflect")
    i_v = ndimage.convolve(gray.values, _SCHARR_V, mode="reflect")
    return ScalarGrid(i_u), ScalarGrid(i_v)


def init_normals(gray: ScalarGrid) -> Vec3Grid:
    """Unit normals from image gradients: normalize(-I_u, -I_v, 1)."""
    i_u, i_v = scharr_gradients(gray)
    n = np.stack([-i_u.values, -i_v.values,
                  np.ones_like(gray.values)], axis=2)
    n /= np.linalg.norm(n, axis=2, keepdims=True)
    return Vec3Grid(n, unit=True)


def sfs_render(normals: Vec3Grid, light: np.ndarray) -> ScalarGrid:
    """Lambertian shading max(0, N . l) of a unit normal field."""
    l = np.asarray(light, dtype=np.float64).reshape(3)
    l = l / np.linalg.norm(l)
    return ScalarGrid(np.maximum(normals.values @ l, 0.0))


def _render_raw(normals: np.ndarray, light: np.ndarray,
                l_in: float) -> tuple[np.ndarray, np.ndarray]:
    ndl = normals @ light
    return l_in * np.maximum(ndl, 0.0), ndl


def _loss_raw(normals: np.ndarray, light: np.ndarray, gray: np.ndarray,
              mask: np.ndarray, lam: float, l_in: float
              ) -> tuple[float, np.ndarray, np.ndarray]:
    m = int(mask.sum())
    if m == 0:
        raise ParameterError("mask selects no pixels")
    rendered, ndl = _render_raw(normals, light, l_in)
    resid = np.where(mask, rendered - gray, 0.0)
    photo = float(np.sum(resid * resid)) / m

    active = (ndl > 0.0) & mask
    coeff = (2.0 * l_in / m) * np.where(active, resid, 0.0)
    g_n = coeff[..., None] * light
    g_l = (coeff[..., None] * normals).sum(axis=(0, 1))

    # Forward differences of the first two normal components over pairs that
    # lie entirely inside the mask; averaged over the masked pixel count.
    smooth = 0.0
    g_s = np.zeros_like(normals)
    nxy = normals[..., :2]
    for axis in (0, 1):
        if axis == 0:
            pair = mask[1:, :] & mask[:-1, :]
            diff = np.where(pair[..., None], nxy[1:, :] - nxy[:-1, :], 0.0)
            g_s[1:, :, :2] += (2.0 / m) * diff
            g_s[:-1, :, :2] -= (2.0 / m) * diff
        else:
            pair = mask[:, 1:] & mask[:, :-1]
            diff = np.where(pair[..., None], nxy[:, 1:] - nxy[:, :-1], 0.0)
            g_s[:, 1:, :2] += (2.0 / m) * diff
            g_s[:, :-1, :2] -= (2.0 / m) * diff
        smooth += float(np.sum(diff * diff)) / m

    value = smooth + lam * photo
    return value, g_s + lam * g_n, lam * g_l


def sfs_loss(state: SfSState, gray: ScalarGrid) -> tuple[float, SfSGrads]:
    """Objective value and analytic gradients for normals and light."""
    value, g_n, g_l = _loss_raw(state.normals.values, state.light,
                                gray.values, state.mask.values,
                                state.lam, state.l_in)
    return value, SfSGrads(g_n, g_l)


def _renormalize(normals: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(normals, axis=2, keepdims=True)
    out = np.where(norm > 0, normals / np.where(norm > 0, norm, 1.0),
                   (0.0, 0.0, 1.0))
    return out


def sfs_optimize(gray: ScalarGrid, mask: MaskGrid, iterations: int,
                 lr: float = DEFAULT_LR, lam: float = DEFAULT_PHOTO_WEIGHT
                 ) -> tuple[SfSState, list[float]]:
    """Joint descent on normals and light; returns the state and loss trace.

    The incoming intensity is pinned to the image maximum; the light starts
    at the viewing axis and both quantities are reprojected to unit norm
    after every step.
    """
    if iterations < 1:
        raise ParameterError("optimization needs at least one iteration")
    if mask.count() == 0:
        raise ParameterError("mask selects no pixels")
    l_in = float(gray.values.max())
    if l_in == 0:
        l_in = 1.0
    normals = init_normals(gray).values.copy()
    light = np.array([0.0, 0.0, 1.0])
    g = gray.values
    msk = mask.values
    trace: list[float] = []
    for it in range(iterations):
        value, g_n, g_l = _loss_raw(normals, light, g, msk, lam, l_in)
        if not np.isfinite(value):
            raise NumericError(
                f"non-finite objective at iteration {it}; trace: "
                f"{trace[-3:]}")
        trace.append(value)
        normals = _renormalize(normals - lr * g_n)
        new_light = light - lr * g_l
        n = np.linalg.norm(new_light)
        light = new_light / n if n > 0 else np.array([0.0, 0.0, 1.0])
    final, _, _ = _loss_raw(normals, light, g, msk, lam, l_in)
    trace.append(final)
    state = SfSState(Vec3Grid(normals, unit=True), light, mask, lam, l_in)
    return state, trace
