"""Differentiable bilinear warping.

Backward-mapping semantics: output pixel (row i, col j) samples the source
image at (j + dx[i,j], i + dy[i,j]). Coordinates outside the image rectangle
clamp to the border, and at clamped samples the displacement gradient for the
clamped axis is zero (moving further out changes nothing).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import CoarseField, DenseField, ImageBuffer
from .errors import InvalidArgumentError
from .fields import _interp_matrix


@dataclass
class WarpGradients:
    """Backward-pass output: d_image matches the source image's shape,
    d_field the dense field's shape."""

    d_image: np.ndarray
    d_field: np.ndarray


@dataclass
class _SampleAux:
    """Gather products reused between the forward value and the backward pass."""

    corner00: np.ndarray
    corner01: np.ndarray
    corner10: np.ndarray
    corner11: np.ndarray
    x0: np.ndarray
    y0: np.ndarray
    wx: np.ndarray
    wy: np.ndarray
    inside_x: np.ndarray
    inside_y: np.ndarray


def _gather(image: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> tuple[np.ndarray, _SampleAux]:
    """Clamped bilinear sampling of an (H, W, C) float64 image at float coords."""
    h, w = image.shape[:2]
    xc = np.clip(xs, 0.0, w - 1.0)
    yc = np.clip(ys, 0.0, h - 1.0)
    # Pinning the lower corner to w-2 keeps the upper corner in range; the
    # border coordinate then lands on weight 1 for the pinned upper corner.
    x0 = np.clip(np.floor(xc), 0, max(w - 2, 0)).astype(np.intp)
    y0 = np.clip(np.floor(yc), 0, max(h - 2, 0)).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    wx = (xc - x0)[..., None]
    wy = (yc - y0)[..., None]

    corner00 = image[y0, x0]
    corner01 = image[y0, x1]
    corner10 = image[y1, x0]
    corner11 = image[y1, x1]
    value = (1.0 - wy) * ((1.0 - wx) * corner00 + wx * corner01) + wy * (
        (1.0 - wx) * corner10 + wx * corner11
    )
    aux = _SampleAux(
        corner00, corner01, corner10, corner11,
        x0, y0, wx, wy,
        inside_x=((xs >= 0.0) & (xs <= w - 1.0))[..., None],
        inside_y=((ys >= 0.0) & (ys <= h - 1.0))[..., None],
    )
    return value, aux


def _coords(field: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    h, w = field.shape[:2]
    xs = np.arange(w, dtype=np.float64)[None, :] + field[..., 0]
    ys = np.arange(h, dtype=np.float64)[:, None] + field[..., 1]
    return xs, ys


def _warp_raw(image: np.ndarray, field: np.ndarray) -> tuple[np.ndarray, _SampleAux]:
    xs, ys = _coords(field)
    return _gather(image, xs, ys)


def _field_gradient(aux: _SampleAux, upstream: np.ndarray) -> np.ndarray:
    """d(sum(upstream * warped)) / d(field), summed over channels."""
    dv_dx = (1.0 - aux.wy) * (aux.corner01 - aux.corner00) + aux.wy * (
        aux.corner11 - aux.corner10
    )
    dv_dy = (1.0 - aux.wx) * (aux.corner10 - aux.corner00) + aux.wx * (
        aux.corner11 - aux.corner01
    )
    gx = (upstream * dv_dx * aux.inside_x).sum(axis=-1)
    gy = (upstream * dv_dy * aux.inside_y).sum(axis=-1)
    return np.stack([gx, gy], axis=-1)


def _image_gradient(aux: _SampleAux, upstream: np.ndarray, shape: tuple) -> np.ndarray:
    """Scatter-add of the four corner weights; np.add.at keeps it deterministic."""
    grad = np.zeros(shape, dtype=np.float64)
    x1 = np.minimum(aux.x0 + 1, shape[1] - 1)
    y1 = np.minimum(aux.y0 + 1, shape[0] - 1)
    np.add.at(grad, (aux.y0, aux.x0), (1.0 - aux.wy) * (1.0 - aux.wx) * upstream)
    np.add.at(grad, (aux.y0, x1), (1.0 - aux.wy) * aux.wx * upstream)
    np.add.at(grad, (y1, aux.x0), aux.wy * (1.0 - aux.wx) * upstream)
    np.add.at(grad, (y1, x1), aux.wy * aux.wx * upstream)
    return grad


def sample_bilinear(image: ImageBuffer, x: float, y: float) -> np.ndarray:
    """RGB value at a continuous (x=col, y=row) location, border-clamped."""
    value, _ = _gather(
        image.data.astype(np.float64),
        np.asarray([[float(x)]]),
        np.asarray([[float(y)]]),
    )
    return value[0, 0]


def warp(image: ImageBuffer, field: DenseField) -> ImageBuffer:
    """Resample `image` through the displacement field (same output shape).

    A zero field reproduces the input bit-for-bit: lattice samples hit their
    own pixel with weight one.
    """
    if (field.height, field.width) != (image.height, image.width):
        raise InvalidArgumentError(
            f"field {field.height}x{field.width} does not match image "
            f"{image.height}x{image.width}"
        )
    warped, _ = _warp_raw(image.data.astype(np.float64), field.data.astype(np.float64))
    return ImageBuffer(warped)


def warp_backward(image: ImageBuffer, field: DenseField, upstream: np.ndarray) -> WarpGradients:
    """Exact vector-Jacobian products of `warp` for both inputs.

    `upstream` is the gradient w.r.t. the warped output (same shape as the
    image). Uses the piecewise-bilinear derivative; it is discontinuous at
    integer sample coordinates, where the left-sided value is returned.
    """
    if (field.height, field.width) != (image.height, image.width):
        raise InvalidArgumentError(
            f"field {field.height}x{field.width} does not match image "
            f"{image.height}x{image.width}"
        )
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != image.data.shape:
        raise InvalidArgumentError(
            f"upstream gradient shape {upstream.shape} does not match image "
            f"shape {image.data.shape}"
        )
    _, aux = _warp_raw(image.data.astype(np.float64), field.data.astype(np.float64))
    return WarpGradients(
        d_image=_image_gradient(aux, upstream, image.data.shape),
        d_field=_field_gradient(aux, upstream),
    )


def hflip_image(image: ImageBuffer) -> ImageBuffer:
    """Mirror an image left-right."""
    return ImageBuffer(image.data[:, ::-1].copy())


def _resize_data(data: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    rows = _interp_matrix(data.shape[0], out_h) if data.shape[0] > 1 else np.ones((out_h, 1))
    cols = _interp_matrix(data.shape[1], out_w) if data.shape[1] > 1 else np.ones((out_w, 1))
    data = np.asarray(data, dtype=np.float64)
    return np.einsum("ih,hwc,jw->ijc", rows, data, cols, optimize=True)


def resize_image(image: ImageBuffer, out_h: int, out_w: int) -> ImageBuffer:
    """Align-corners bilinear resize (used for dataset normalization)."""
    if out_h < 1 or out_w < 1:
        raise InvalidArgumentError("resize target must be at least 1x1")
    if (out_h, out_w) == (image.height, image.width):
        return ImageBuffer(image.data.copy())
    return ImageBuffer(_resize_data(image.data, out_h, out_w))
