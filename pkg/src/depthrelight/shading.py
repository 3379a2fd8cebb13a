"""Differentiable Blinn-Phong re-shading of an image under sampled lighting.

The input image acts as its own albedo after gamma linearization. Shading is
composed in linear space and re-encoded, then clamped to [CLAMP_LO, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ShapeError
from .grids import RgbGrid, Vec3Grid

GAMMA = 2.2
CLAMP_LO = 1e-3
VIEW_DIR = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class LightingSample:
    """One random lighting condition: direction plus material mix."""

    direction: np.ndarray  # unit vector, z > 0
    beta1: float           # diffuse weight
    beta2: float           # specular weight
    shininess: float       # Blinn-Phong exponent

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64).reshape(3)
        n = np.linalg.norm(d)
        if n == 0:
            raise ParameterError("light direction must be nonzero")
        object.__setattr__(self, "direction", d / n)
        if self.beta1 < 0 or self.beta2 < 0:
            raise ParameterError("material weights must be nonnegative")
        if self.shininess <= 0:
            raise ParameterError("shininess must be positive")

    @property
    def halfway(self) -> np.ndarray:
        h = self.direction + VIEW_DIR
        return h / np.linalg.norm(h)


def sample_lighting(rng: np.random.Generator) -> LightingSample:
    """Random light over the visible hemisphere with diffuse/specular mix.

    The planar components are uniform in [-1, 1] with the vertical fixed to 1
    before normalization, the weights are uniform then scaled to sum to one,
    and the exponent is 2**k with k uniform in [2, 8].
    """
    lx, ly = rng.uniform(-1.0, 1.0, size=2)
    direction = np.array([lx, ly, 1.0])
    b1, b2 = rng.uniform(0.0, 1.0, size=2)
    total = b1 + b2
    if total == 0:
        b1 = b2 = 0.5
    else:
        b1, b2 = b1 / total, b2 / total
    shininess = 2.0 ** rng.uniform(2.0, 8.0)
    return LightingSample(direction, b1, b2, shininess)


def gamma_encode(x: np.ndarray) -> np.ndarray:
    return np.power(x, 1.0 / GAMMA)


def gamma_decode(x: np.ndarray) -> np.ndarray:
    return np.power(x, GAMMA)


def relight(normals: Vec3Grid, image: RgbGrid, light: LightingSample) -> RgbGrid:
    if normals.shape != image.shape:
        raise ShapeError(
            f"normals {normals.shape} do not match image {image.shape}")
    return RgbGrid(_relight_raw(normals.values, image.values, light))


def _relight_raw(normals: np.ndarray, image: np.ndarray,
                 light: LightingSample) -> np.ndarray:
    n_dot_l = np.maximum(normals @ light.direction, 0.0)
    n_dot_h = np.maximum(normals @ light.halfway, 0.0)
    diffuse = light.beta1 * n_dot_l[..., None] * gamma_decode(image)
    specular = light.beta2 * np.power(n_dot_h, light.shininess)
    pre = diffuse + specular[..., None]
    return np.clip(gamma_encode(pre), CLAMP_LO, 1.0)
