"""Recovery of coarse warp fields from image pairs by gradient descent through
the warping engine, plus the Adam optimizer shared with network training.

Fitting minimizes the mean-L1 residual between the target and the warped
input over the coarse grid values, chaining upsample -> warp -> L1. A zero
initial field biases the solution toward the smallest warp that explains
the pair.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import CoarseField, ImageBuffer
from .errors import InvalidArgumentError, NumericFailureError
from .fields import _upsample_adjoint, _upsample_data
from .losses import _mean_l1, _smooth_data
from .warp import _field_gradient, _warp_raw


@dataclass
class AdamState:
    """Optimizer state; moment buffers mirror the parameter shapes."""

    step: int
    m: list[np.ndarray]
    v: list[np.ndarray]
    beta1: float
    beta2: float
    epsilon: float
    lr: float
    lr_decay: float = 1.0


def init_adam(
    params: Sequence[np.ndarray],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    epsilon: float = 1e-8,
    lr_decay: float = 1.0,
) -> AdamState:
    if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
        raise InvalidArgumentError("Adam betas must lie in [0, 1)")
    if epsilon <= 0 or lr <= 0:
        raise InvalidArgumentError("Adam needs epsilon > 0 and lr > 0")
    return AdamState(
        step=0,
        m=[np.zeros(p.shape) for p in params],
        v=[np.zeros(p.shape) for p in params],
        beta1=beta1,
        beta2=beta2,
        epsilon=epsilon,
        lr=lr,
        lr_decay=lr_decay,
    )


def adam_step(
    params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState
) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected Adam update. Returns fresh parameter arrays (input
    dtype preserved) and a fresh state; nothing is mutated."""
    if len(params) != len(grads):
        raise InvalidArgumentError(f"{len(params)} params but {len(grads)} gradients")
    step = state.step + 1
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.shape:
            raise InvalidArgumentError(
                f"gradient shape {g.shape} does not match parameter shape {p.shape}"
            )
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1**step)
        v_hat = v / (1.0 - state.beta2**step)
        updated = p.astype(np.float64) - state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
        new_params.append(updated.astype(p.dtype))
        new_m.append(m)
        new_v.append(v)
    new_state = AdamState(
        step=step,
        m=new_m,
        v=new_v,
        beta1=state.beta1,
        beta2=state.beta2,
        epsilon=state.epsilon,
        lr=state.lr,
        lr_decay=state.lr_decay,
    )
    return new_params, new_state


@dataclass
class FitConfig:
    iterations: int = 500
    lr: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    smooth_weight: float = 0.0
    grid_height: int = 32
    grid_width: int = 32
    initial_field: CoarseField | None = None
    tolerance: float = 1e-6
    tolerance_window: int = 20

    def __post_init__(self):
        if self.iterations < 1:
            raise InvalidArgumentError("fit needs at least one iteration")
        if self.lr <= 0:
            raise InvalidArgumentError("fit learning rate must be > 0")


def fit_field(
    x_in: ImageBuffer, x_toon: ImageBuffer, cfg: FitConfig = FitConfig()
) -> tuple[CoarseField, list[float]]:
    """Recover the coarse field whose warp best reproduces `x_toon` from `x_in`.

    Returns the best field seen (so the result never ends worse than the
    start) and the per-iteration mean-L1 residual history; the final history
    entry is the returned field's residual. Stops early once the residual
    stops improving by `tolerance` over `tolerance_window` iterations.
    """
    if x_in.data.shape != x_toon.data.shape:
        raise InvalidArgumentError(
            f"image shapes differ: {x_in.data.shape} vs {x_toon.data.shape}"
        )
    source = x_in.data.astype(np.float64)
    target = x_toon.data.astype(np.float64)
    height, width = source.shape[:2]

    if cfg.initial_field is not None:
        grid = cfg.initial_field.data.astype(np.float64)
    else:
        grid = np.zeros((cfg.grid_height, cfg.grid_width, 2))
    if height < grid.shape[0] or width < grid.shape[1]:
        raise InvalidArgumentError(
            f"{grid.shape[0]}x{grid.shape[1]} grid does not fit {height}x{width} images"
        )

    state = init_adam([grid], lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)
    history: list[float] = []
    best_residual = np.inf
    best_grid = grid.copy()

    def evaluate(current: np.ndarray):
        dense = _upsample_data(current, height, width)
        warped, aux = _warp_raw(source, dense)
        residual, grad_image = _mean_l1(warped, target)
        return dense, aux, residual, grad_image

    for iteration in range(cfg.iterations):
        dense, aux, residual, grad_image = evaluate(grid)
        if not np.isfinite(residual):
            raise NumericFailureError(
                f"non-finite residual at iteration {iteration}", iteration=iteration
            )
        history.append(residual)
        if residual < best_residual:
            best_residual = residual
            best_grid = grid.copy()
        if (
            iteration >= cfg.tolerance_window
            and history[iteration - cfg.tolerance_window] - residual < cfg.tolerance
        ):
            break

        grad_dense = _field_gradient(aux, grad_image)
        if cfg.smooth_weight > 0:
            _, grad_smooth = _smooth_data(dense)
            grad_dense = grad_dense + cfg.smooth_weight * grad_smooth
        grad_grid = _upsample_adjoint(grad_dense, grid.shape[0], grid.shape[1])
        (grid,), state = adam_step([grid], [grad_grid], state)
        if not np.isfinite(grid).all():
            raise NumericFailureError(
                f"non-finite field values at iteration {iteration}", iteration=iteration
            )

    _, _, final_residual, _ = evaluate(grid)
    if final_residual < best_residual:
        best_residual = final_residual
        best_grid = grid
    history.append(best_residual)
    return CoarseField(best_grid), history


def fit_dataset(
    pairs: Sequence, cfg: FitConfig = FitConfig(), workers: int | None = None
) -> list[CoarseField]:
    """Run `fit_field` over (x_in, x_toon) pairs or PairedSample objects.

    Pairs are independent problems, so they may run on a thread pool; results
    keep the input order either way, so output is deterministic. `workers`
    defaults to the TOONWARP_THREADS environment variable (else 1). Failures
    re-raise tagged with the pair index (and sample id when available).
    """
    if len(pairs) == 0:
        raise InvalidArgumentError("fit_dataset needs at least one pair")
    if workers is None:
        workers = max(1, int(os.environ.get("TOONWARP_THREADS", "1")))

    def unpack(pair):
        if hasattr(pair, "x_in"):
            return pair.x_in, pair.x_toon, getattr(pair, "id", None)
        x_in, x_toon = pair
        return x_in, x_toon, None

    def run(index: int):
        x_in, x_toon, name = unpack(pairs[index])
        try:
            field, _ = fit_field(x_in, x_toon, cfg)
        except Exception as exc:
            label = f"pair {index}" + (f" ({name})" if name else "")
            raise type(exc)(f"{label}: {exc}") from exc
        return field

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(run, range(len(pairs))))
    return [run(i) for i in range(len(pairs))]
