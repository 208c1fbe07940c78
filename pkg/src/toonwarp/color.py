"""Vectorized color utilities: HSV conversion, Rec. 601 luminance, color jitter.

The HSV conversions follow the same piecewise definition as `colorsys`
(hue, saturation, value all in [0, 1]) but operate on whole arrays.
"""

from __future__ import annotations

import numpy as np

REC601 = np.array([0.299, 0.587, 0.114])


def luminance(rgb: np.ndarray) -> np.ndarray:
    """Rec. 601 luma of an (..., 3) RGB array."""
    return rgb @ REC601


def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    rgb = np.asarray(rgb, dtype=np.float64)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    maxc = rgb.max(axis=-1)
    minc = rgb.min(axis=-1)
    delta = maxc - minc

    safe_max = np.where(maxc > 0, maxc, 1.0)
    sat = np.where(maxc > 0, delta / safe_max, 0.0)

    safe_delta = np.where(delta > 0, delta, 1.0)
    rc = (maxc - r) / safe_delta
    gc = (maxc - g) / safe_delta
    bc = (maxc - b) / safe_delta
    hue = np.select(
        [delta == 0, r == maxc, g == maxc],
        [0.0, bc - gc, 2.0 + rc - bc],
        default=4.0 + gc - rc,
    )
    hue = (hue / 6.0) % 1.0
    return np.stack([hue, sat, maxc], axis=-1)


def hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    hsv = np.asarray(hsv, dtype=np.float64)
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    i = i.astype(int) % 6
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    r = np.select([i == 0, i == 1, i == 2, i == 3, i == 4], [v, q, p, p, t], default=v)
    g = np.select([i == 0, i == 1, i == 2, i == 3, i == 4], [t, v, v, q, p], default=p)
    b = np.select([i == 0, i == 1, i == 2, i == 3, i == 4], [p, p, t, v, v], default=q)
    return np.stack([r, g, b], axis=-1)


def color_jitter(
    rgb: np.ndarray,
    brightness: float = 1.0,
    contrast: float = 1.0,
    saturation: float = 1.0,
    hue: float = 0.0,
) -> np.ndarray:
    """Apply photometric jitter to an (H, W, 3) array in [0, 1].

    Stages run in the order brightness, contrast, saturation, hue, each
    followed by a clamp to [0, 1]. Identity parameters skip their stage
    entirely, so (1, 1, 1, 0) returns the input values unchanged.

    brightness multiplies all channels; contrast blends toward the image's
    mean luma; saturation blends toward per-pixel luma; hue rotates the HSV
    hue channel by `hue` (a full turn is 1.0).
    """
    out = np.asarray(rgb, dtype=np.float64)
    if brightness != 1.0:
        out = np.clip(out * brightness, 0.0, 1.0)
    if contrast != 1.0:
        gray = luminance(out).mean()
        out = np.clip(gray + contrast * (out - gray), 0.0, 1.0)
    if saturation != 1.0:
        luma = luminance(out)[..., None]
        out = np.clip(luma + saturation * (out - luma), 0.0, 1.0)
    if hue != 0.0:
        hsv = rgb_to_hsv(np.clip(out, 0.0, 1.0))
        hsv[..., 0] = (hsv[..., 0] + hue) % 1.0
        out = np.clip(hsv_to_rgb(hsv), 0.0, 1.0)
    return out
