"""Warp-field operations: construction, bilinear upsampling, scaling, flipping,
ATF1 file I/O, and color-wheel rendering.

Upsampling uses the align-corners convention: coarse cell (0, 0) lands on
dense pixel (0, 0) and coarse cell (h-1, w-1) on dense pixel (H-1, W-1), so
the coarse border controls the image border. Displacement magnitudes are
never rescaled; they are already in output-image pixel units.
"""

from __future__ import annotations

import struct
from functools import lru_cache
from pathlib import Path

import numpy as np

from .color import hsv_to_rgb
from .core import CoarseField, DenseField, ImageBuffer
from .errors import FormatError, InvalidArgumentError, InvalidDimensionError

FIELD_MAGIC = b"ATF1"
_HEADER = struct.Struct("<4sII")


def zero_field(height: int = 32, width: int = 32) -> CoarseField:
    """All-zero coarse field (the identity warp after upsampling)."""
    return CoarseField(np.zeros((height, width, 2), dtype=np.float32))


@lru_cache(maxsize=128)
def _interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) align-corners linear interpolation weights.

    Rows hold at most two nonzero weights summing to 1; n_out == n_in gives
    the identity, so upsampling a grid to its own size is a no-op.
    """
    positions = np.linspace(0.0, n_in - 1.0, n_out)
    lower = np.minimum(np.floor(positions).astype(int), n_in - 2)
    frac = positions - lower
    mat = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    mat[rows, lower] = 1.0 - frac
    mat[rows, lower + 1] += frac
    mat.flags.writeable = False
    return mat


def _upsample_data(data: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    rows = _interp_matrix(data.shape[0], out_h)
    cols = _interp_matrix(data.shape[1], out_w)
    data = np.asarray(data, dtype=np.float64)
    return np.einsum("ih,hwc,jw->ijc", rows, data, cols, optimize=True)


def _upsample_adjoint(grad: np.ndarray, in_h: int, in_w: int) -> np.ndarray:
    """Exact transpose of `_upsample_data`; pulls dense gradients back to the grid."""
    rows = _interp_matrix(in_h, grad.shape[0])
    cols = _interp_matrix(in_w, grad.shape[1])
    grad = np.asarray(grad, dtype=np.float64)
    return np.einsum("ih,ijc,jw->hwc", rows, grad, cols, optimize=True)


def upsample(field: CoarseField, out_h: int, out_w: int) -> DenseField:
    """Bilinearly upsample a coarse field to per-pixel resolution."""
    if out_h < field.height or out_w < field.width:
        raise InvalidDimensionError(
            f"output {out_h}x{out_w} is smaller than the {field.height}x{field.width} grid"
        )
    return DenseField(_upsample_data(field.data, out_h, out_w))


def scale_field(field, alpha: float):
    """Multiply every displacement component by `alpha` (same field kind out)."""
    if not np.isfinite(alpha):
        raise InvalidArgumentError(f"scaling factor must be finite, got {alpha}")
    return type(field)(field.data.astype(np.float64) * float(alpha))


def hflip_field(field):
    """Mirror a field left-right: columns reversed and dx negated, dy kept.

    This is the field that reproduces a horizontally flipped warp, so flipped
    training images stay consistent with their ground-truth fields.
    """
    flipped = field.data[:, ::-1].copy()
    flipped[:, :, 0] = -flipped[:, :, 0]
    return type(field)(flipped)


def save_field(field, path) -> None:
    """Write a field as an ATF1 file (header + row-major float32 LE pairs)."""
    data = np.ascontiguousarray(field.data, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(FIELD_MAGIC, field.height, field.width))
        fh.write(data.tobytes())


def load_field(path) -> CoarseField:
    """Read an ATF1 file back into a coarse field.

    Grids reload as CoarseField regardless of size; upsampling a grid to its
    own size is the identity, so saved dense fields survive the round trip.
    """
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise FormatError(f"truncated header: {len(blob)} bytes, need {_HEADER.size}")
    magic, height, width = _HEADER.unpack_from(blob)
    if magic != FIELD_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {FIELD_MAGIC!r}")
    payload = blob[_HEADER.size:]
    expected = height * width * 2 * 4
    if len(payload) != expected:
        raise FormatError(
            f"payload for {height}x{width} grid should be {expected} bytes, got {len(payload)}"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(height, width, 2)
    if not np.isfinite(data).all():
        raise FormatError("payload contains non-finite values")
    return CoarseField(data.copy())


def visualize_field(field) -> ImageBuffer:
    """Render a field with the optical-flow color wheel.

    Hue encodes the displacement angle; saturation encodes magnitude
    normalized by the field's own maximum. A zero field renders pure white.
    """
    data = field.data.astype(np.float64)
    dx, dy = data[..., 0], data[..., 1]
    magnitude = np.hypot(dx, dy)
    peak = magnitude.max()
    saturation = magnitude / peak if peak > 0 else np.zeros_like(magnitude)
    hue = (np.arctan2(dy, dx) / (2.0 * np.pi)) % 1.0
    hsv = np.stack([hue, saturation, np.ones_like(hue)], axis=-1)
    return ImageBuffer(hsv_to_rgb(hsv))
