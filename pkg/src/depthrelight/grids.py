"""Dense 2-D grid containers used by every stage of the pipeline.

All numerics run in float64. Grids are validated on construction and their
backing arrays are frozen, so instances are safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import NumericError, ShapeError


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ScalarGrid:
    """H x W grid of finite float64 values, row-major, (row, col) = (v, u)."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.float64, order="C", copy=True)
        if arr.ndim != 2:
            raise ShapeError(f"scalar grid must be 2-D, got shape {arr.shape}")
        if arr.size == 0:
            raise ShapeError("scalar grid must be non-empty")
        if not np.isfinite(arr).all():
            raise NumericError("scalar grid contains non-finite values")
        object.__setattr__(self, "values", _freeze(arr))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class RgbGrid:
    """H x W x 3 image with channels in [0, 1].

    Intermediate linear-space buffers inside the shader may exceed 1; those
    live as raw arrays and only become RgbGrid after clamping.
    """

    values: np.ndarray

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.float64, order="C", copy=True)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ShapeError(f"rgb grid must be H x W x 3, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise NumericError("rgb grid contains non-finite values")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise NumericError("rgb channels must lie in [0, 1]")
        object.__setattr__(self, "values", _freeze(arr))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape[:2]


@dataclass(frozen=True)
class Vec3Grid:
    """H x W grid of 3-vectors; with unit=True every vector must have norm 1."""

    values: np.ndarray
    unit: bool = False

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.float64, order="C", copy=True)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ShapeError(f"vec3 grid must be H x W x 3, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise NumericError("vec3 grid contains non-finite values")
        if self.unit:
            norms = np.linalg.norm(arr, axis=2)
            if np.abs(norms - 1.0).max() > 1e-6:
                raise NumericError("unit-tagged vec3 grid has non-unit vectors")
        object.__setattr__(self, "values", _freeze(arr))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape[:2]


@dataclass(frozen=True)
class MaskGrid:
    """H x W boolean validity mask."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.array(self.values, dtype=bool, order="C", copy=True)
        if arr.ndim != 2:
            raise ShapeError(f"mask grid must be 2-D, got shape {arr.shape}")
        object.__setattr__(self, "values", _freeze(arr))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def count(self) -> int:
        return int(self.values.sum())

    @staticmethod
    def full(height: int, width: int, value: bool = True) -> "MaskGrid":
        return MaskGrid(np.full((height, width), value, dtype=bool))


def make_grid(height: int, width: int, fill: float) -> ScalarGrid:
    """Constant-filled grid; spatial gradients need at least 2 x 2."""
    if height < 2 or width < 2:
        raise ShapeError(f"grid must be at least 2 x 2, got {height} x {width}")
    return ScalarGrid(np.full((height, width), fill, dtype=np.float64))


def grid_map2(a: ScalarGrid, b: ScalarGrid,
              f: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> ScalarGrid:
    """Element-wise binary op; rejects shape mismatch and non-finite results."""
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    with np.errstate(all="ignore"):
        out = np.asarray(f(a.values, b.values), dtype=np.float64)
    if out.shape != a.values.shape:
        raise ShapeError("binary op changed the grid shape")
    if not np.isfinite(out).all():
        raise NumericError("binary op produced non-finite values")
    return ScalarGrid(out)
