"""Training losses with analytic gradients.

Reduction conventions: the two L1 terms are means over all elements (keeps
the weights resolution-independent); the smoothness term is a sum over
neighbor pairs of the dense field, which is what makes its tiny default
weight meaningful at full resolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import CoarseField, DenseField, ImageBuffer
from .errors import InvalidArgumentError

COSINE_EPS = 1e-8


@dataclass(frozen=True)
class LossWeights:
    """Weights of the combined objective: recon + warp supervision + smoothness."""

    recon: float = 1.0
    warp: float = 0.7
    reg: float = 1e-6

    def __post_init__(self):
        for name in ("recon", "warp", "reg"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise InvalidArgumentError(f"loss weight {name} must be finite and >= 0")


@dataclass(frozen=True)
class LossReport:
    recon: float
    warp: float
    reg: float
    total: float


def _mean_l1(predicted: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    diff = predicted - target
    value = float(np.abs(diff).mean())
    grad = np.sign(diff) / diff.size  # sign(0) = 0 keeps flat regions stable
    return value, grad


def recon_loss(predicted: ImageBuffer, target: ImageBuffer) -> tuple[float, np.ndarray]:
    """Mean absolute pixel difference and its subgradient w.r.t. `predicted`."""
    if predicted.data.shape != target.data.shape:
        raise InvalidArgumentError(
            f"image shapes differ: {predicted.data.shape} vs {target.data.shape}"
        )
    return _mean_l1(
        predicted.data.astype(np.float64), target.data.astype(np.float64)
    )


def warp_field_loss(predicted: CoarseField, target: CoarseField) -> tuple[float, np.ndarray]:
    """Mean absolute difference over grid cells and both components."""
    if predicted.data.shape != target.data.shape:
        raise InvalidArgumentError(
            f"field shapes differ: {predicted.data.shape} vs {target.data.shape}"
        )
    return _mean_l1(
        predicted.data.astype(np.float64), target.data.astype(np.float64)
    )


def _pair_terms(u: np.ndarray, v: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """Sum of (1 - cos angle) over vector pairs, plus gradients w.r.t. u and v.

    The cosine is stabilized as <u,v> / (|u||v| + eps); its exact derivative
    is returned, with the 0/0 direction at a zero vector resolved to 0.
    """
    dot = (u * v).sum(axis=-1)
    norm_u = np.linalg.norm(u, axis=-1)
    norm_v = np.linalg.norm(v, axis=-1)
    denom = norm_u * norm_v + COSINE_EPS
    cos = dot / denom
    value = float((1.0 - cos).sum())

    unit_u = np.divide(u, norm_u[..., None], out=np.zeros_like(u), where=norm_u[..., None] > 0)
    unit_v = np.divide(v, norm_v[..., None], out=np.zeros_like(v), where=norm_v[..., None] > 0)
    scale = (dot / denom**2)[..., None]
    grad_u = -(v / denom[..., None] - scale * norm_v[..., None] * unit_u)
    grad_v = -(u / denom[..., None] - scale * norm_u[..., None] * unit_v)
    return value, grad_u, grad_v


def _smooth_data(field: np.ndarray) -> tuple[float, np.ndarray]:
    total = 0.0
    grad = np.zeros_like(field)
    if field.shape[1] >= 2:
        value, grad_left, grad_right = _pair_terms(field[:, :-1], field[:, 1:])
        total += value
        grad[:, :-1] += grad_left
        grad[:, 1:] += grad_right
    if field.shape[0] >= 2:
        value, grad_up, grad_down = _pair_terms(field[:-1, :], field[1:, :])
        total += value
        grad[:-1, :] += grad_up
        grad[1:, :] += grad_down
    return total, grad


def smooth_loss(field: DenseField) -> tuple[float, np.ndarray]:
    """Cosine-similarity smoothness penalty over the dense field.

    Each horizontally or vertically adjacent vector pair contributes
    1 - cos(angle between them), so aligned neighbors cost nothing and
    antiparallel neighbors cost 2. Pairs that would reach outside the grid
    are dropped, and the result is a sum, not a mean.
    """
    return _smooth_data(field.data.astype(np.float64))


def total_loss(
    predicted_image: ImageBuffer,
    target_image: ImageBuffer,
    predicted_field: CoarseField,
    target_field: CoarseField,
    dense_predicted: DenseField,
    weights: LossWeights = LossWeights(),
) -> LossReport:
    """Weighted combination of the three terms (caller supplies the upsampled
    predicted field so the smoothness term sees per-pixel indexing)."""
    recon, _ = recon_loss(predicted_image, target_image)
    warp, _ = warp_field_loss(predicted_field, target_field)
    reg, _ = smooth_loss(dense_predicted)
    total = weights.recon * recon + weights.warp * warp + weights.reg * reg
    return LossReport(recon=recon, warp=warp, reg=reg, total=total)
