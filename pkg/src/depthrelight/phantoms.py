"""Synthetic scenes with known geometry for tests and desk experiments."""

from __future__ import annotations

import numpy as np

from .grids import MaskGrid, RgbGrid, ScalarGrid, Vec3Grid
from .refine import binomial_matrix


def _uv(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    u = np.linspace(-1.0, 1.0, w)
    v = np.linspace(-1.0, 1.0, h)
    return np.meshgrid(u, v)


def gaussian_bump_disparity(h: int, w: int, base: float = 0.3,
                            amplitude: float = 0.4,
                            sigma: float = 0.35) -> ScalarGrid:
    """Smooth foreground bump on a flat background, valued in [0, 1]."""
    uu, vv = _uv(h, w)
    disp = base + amplitude * np.exp(-(uu ** 2 + vv ** 2) / (2 * sigma ** 2))
    return ScalarGrid(np.clip(disp, 0.0, 1.0))


def smooth_noise(h: int, w: int, rng: np.random.Generator,
                 amplitude: float, passes: int = 4) -> np.ndarray:
    """Zero-mean low-frequency field with peak magnitude ~= amplitude."""
    field = rng.standard_normal((h, w))
    a_v = binomial_matrix(h)
    a_u = binomial_matrix(w)
    for _ in range(passes):
        field = a_v @ field @ a_u.T
    field -= field.mean()
    peak = np.abs(field).max()
    if peak > 0:
        field *= amplitude / peak
    return field


def textured_image(h: int, w: int) -> RgbGrid:
    """Deterministic smooth color texture used as a stand-in photograph."""
    uu, vv = _uv(h, w)
    r = 0.55 + 0.25 * np.sin(3.1 * uu + 1.7 * vv)
    g = 0.50 + 0.25 * np.sin(2.3 * vv - 0.9 * uu + 1.0)
    b = 0.45 + 0.25 * np.sin(1.9 * (uu + vv) + 2.0)
    return RgbGrid(np.clip(np.stack([r, g, b], axis=2), 0.0, 1.0))


def lambertian_sphere(h: int, w: int, light: np.ndarray,
                      radius: float = 0.8
                      ) -> tuple[ScalarGrid, MaskGrid, Vec3Grid]:
    """Orthographic sphere cap shaded by a known light.

    Returns the rendered grayscale image, the disk mask, and the analytic
    unit normals (viewer-facing axis substituted outside the disk).
    """
    uu, vv = _uv(h, w)
    rho2 = uu ** 2 + vv ** 2
    inside = rho2 < radius ** 2
    z = np.sqrt(np.maximum(radius ** 2 - rho2, 0.0))
    normals = np.stack([uu, vv, z], axis=2) / radius
    normals[~inside] = (0.0, 0.0, 1.0)

    l = np.asarray(light, dtype=np.float64).reshape(3)
    l = l / np.linalg.norm(l)
    shaded = np.maximum(normals @ l, 0.0)
    gray = np.where(inside, shaded, 0.0)
    return ScalarGrid(gray), MaskGrid(inside), Vec3Grid(normals, unit=True)
