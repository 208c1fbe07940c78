"""Shared buffer types: RGB images and 2-channel displacement grids.

Coordinate convention used throughout the package: x is the column index and
increases rightward, y is the row index and increases downward. Displacement
components (dx, dy) are measured in pixels of the full-resolution image.

Buffers store float32 (the dtype of the on-disk formats, so serialization
round-trips are bit-exact); numeric kernels upcast to float64 internally.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, InvalidDimensionError

STORAGE_DTYPE = np.float32


def _checked(data, name: str, channels: int) -> np.ndarray:
    arr = np.asarray(data, dtype=STORAGE_DTYPE)
    if arr.ndim != 3 or arr.shape[2] != channels:
        raise InvalidArgumentError(
            f"{name} expects an (H, W, {channels}) array, got shape {arr.shape}"
        )
    if not np.isfinite(arr).all():
        raise InvalidArgumentError(f"{name} contains non-finite values")
    return arr


@dataclass
class ImageBuffer:
    """H x W x 3 RGB image, float values nominally in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        self.data = _checked(self.data, "ImageBuffer", 3)
        if self.height < 1 or self.width < 1:
            raise InvalidDimensionError("image dimensions must be >= 1")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass
class CoarseField:
    """Low-resolution grid of (dx, dy) displacement vectors (default 32 x 32).

    Displacements are expressed in pixels of the image the field will warp
    after upsampling, so upsampling never rescales magnitudes.
    """

    data: np.ndarray

    def __post_init__(self):
        self.data = _checked(self.data, "CoarseField", 2)
        if self.height < 2 or self.width < 2:
            raise InvalidDimensionError(
                f"coarse field needs at least a 2x2 grid, got {self.height}x{self.width}"
            )

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass
class DenseField:
    """Per-pixel (dx, dy) displacement field matching an image's resolution."""

    data: np.ndarray

    def __post_init__(self):
        self.data = _checked(self.data, "DenseField", 2)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]
