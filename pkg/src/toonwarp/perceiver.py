"""A small trainable convolutional perceiver: image in, 32x32x2 coarse field
out, trained end-to-end through the warping engine.

Architecture: the input is resized to 128x128, then
conv 3->16 (k3 s2) -> leaky -> conv 16->32 (k3 s2) -> leaky ->
conv 32->32 (k3 s1) -> leaky -> conv 32->2 (k3 s1) -> adaptive avg pool
to the 32x32 grid. The final conv starts at zero so an untrained model is
exactly the identity warp.

Parameters are stored float32 (checkpoints round-trip bit-exactly); all
forward/backward arithmetic runs in float64.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .color import color_jitter
from .core import CoarseField, DenseField, ImageBuffer
from .data import PairedSample
from .errors import DatasetError, FormatError, InvalidArgumentError
from .fields import _upsample_adjoint, _upsample_data, hflip_field, scale_field, upsample
from .fit import adam_step, init_adam
from .losses import LossReport, LossWeights, _mean_l1, _smooth_data
from .warp import _field_gradient, _resize_data, _warp_raw, hflip_image, warp

CHECKPOINT_MAGIC = b"ATC1"
CHECKPOINT_VERSION = 1
MIN_INPUT_SIZE = 64


class Conv2d:
    """Zero-padded convolution over channel-last (H, W, C) arrays."""

    def __init__(self, in_channels, out_channels, kernel_size=3, stride=1, padding=1,
                 rng=None, zero_init=False):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = padding
        shape = (out_channels, in_channels, kernel_size, kernel_size)
        if zero_init:
            self.weight = np.zeros(shape, dtype=np.float32)
            self.bias = np.zeros(out_channels, dtype=np.float32)
        else:
            # Uniform fan-in scaling with the leaky-ramp gain, so activation
            # magnitudes survive the stack instead of decaying per layer.
            fan_in = in_channels * kernel_size * kernel_size
            gain = np.sqrt(2.0 / (1.0 + LeakyReLU.slope**2))
            bound = gain * np.sqrt(3.0 / fan_in)
            self.weight = rng.uniform(-bound, bound, size=shape).astype(np.float32)
            self.bias = np.zeros(out_channels, dtype=np.float32)

    def spec(self):
        return {
            "type": "conv",
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "kernel_size": self.kernel_size,
            "stride": self.stride,
            "padding": self.padding,
        }

    def parameters(self):
        return [self.weight, self.bias]

    def set_parameters(self, values):
        weight, bias = values
        if weight.shape != self.weight.shape or bias.shape != self.bias.shape:
            raise InvalidArgumentError(
                f"parameter shapes {weight.shape}/{bias.shape} do not match layer "
                f"{self.weight.shape}/{self.bias.shape}"
            )
        self.weight, self.bias = weight, bias

    def forward(self, x):
        k, s, p = self.kernel_size, self.stride, self.padding
        padded = np.pad(x, ((p, p), (p, p), (0, 0)))
        windows = sliding_window_view(padded, (k, k), axis=(0, 1))[::s, ::s]
        out_h, out_w = windows.shape[:2]
        cols = windows.reshape(out_h * out_w, -1)
        w_mat = self.weight.astype(np.float64).reshape(self.out_channels, -1)
        out = cols @ w_mat.T + self.bias.astype(np.float64)
        return out.reshape(out_h, out_w, self.out_channels), (cols, x.shape, (out_h, out_w))

    def backward(self, cache, grad_out):
        cols, x_shape, (out_h, out_w) = cache
        k, s, p = self.kernel_size, self.stride, self.padding
        w_mat = self.weight.astype(np.float64).reshape(self.out_channels, -1)
        grad_flat = grad_out.reshape(out_h * out_w, self.out_channels)
        grad_weight = (grad_flat.T @ cols).reshape(self.weight.shape)
        grad_bias = grad_flat.sum(axis=0)
        grad_cols = (grad_flat @ w_mat).reshape(out_h, out_w, self.in_channels, k, k)
        grad_padded = np.zeros((x_shape[0] + 2 * p, x_shape[1] + 2 * p, self.in_channels))
        for ki in range(k):
            for kj in range(k):
                grad_padded[ki:ki + s * out_h:s, kj:kj + s * out_w:s] += grad_cols[:, :, :, ki, kj]
        grad_x = grad_padded[p:p + x_shape[0], p:p + x_shape[1]]
        return grad_x, [grad_weight, grad_bias]


class LeakyReLU:
    """Pointwise leaky ramp, negative slope 0.1."""

    slope = 0.1

    def spec(self):
        return {"type": "leaky_relu", "negative_slope": self.slope}

    def parameters(self):
        return []

    def set_parameters(self, values):
        pass

    def forward(self, x):
        factor = np.where(x > 0, 1.0, self.slope)
        return x * factor, factor

    def backward(self, cache, grad_out):
        return grad_out * cache, []


class AdaptiveAvgPool:
    """Average pooling to a fixed output size, any input size.

    Output bin o over n inputs covers [floor(o*n/S), ceil((o+1)*n/S)); the
    rectangular windows make the pool separable, so it reduces to two
    averaging matrices (the identity when sizes already match).
    """

    def __init__(self, out_h, out_w):
        self.out_h = out_h
        self.out_w = out_w

    def spec(self):
        return {"type": "avg_pool", "out_height": self.out_h, "out_width": self.out_w}

    def parameters(self):
        return []

    def set_parameters(self, values):
        pass

    @staticmethod
    def _matrix(n_in, n_out):
        mat = np.zeros((n_out, n_in))
        for o in range(n_out):
            start = (o * n_in) // n_out
            end = -(-(o + 1) * n_in // n_out)  # ceil division
            mat[o, start:end] = 1.0 / (end - start)
        return mat

    def forward(self, x):
        rows = self._matrix(x.shape[0], self.out_h)
        cols = self._matrix(x.shape[1], self.out_w)
        out = np.einsum("ih,hwc,jw->ijc", rows, x, cols, optimize=True)
        return out, (rows, cols)

    def backward(self, cache, grad_out):
        rows, cols = cache
        return np.einsum("ih,ijc,jw->hwc", rows, grad_out, cols, optimize=True), []


def _layer_from_spec(spec: dict):
    kind = spec.get("type")
    if kind == "conv":
        layer = Conv2d.__new__(Conv2d)
        layer.in_channels = spec["in_channels"]
        layer.out_channels = spec["out_channels"]
        layer.kernel_size = spec["kernel_size"]
        layer.stride = spec["stride"]
        layer.padding = spec["padding"]
        layer.weight = np.zeros(
            (layer.out_channels, layer.in_channels, layer.kernel_size, layer.kernel_size),
            dtype=np.float32,
        )
        layer.bias = np.zeros(layer.out_channels, dtype=np.float32)
        return layer
    if kind == "leaky_relu":
        return LeakyReLU()
    if kind == "avg_pool":
        return AdaptiveAvgPool(spec["out_height"], spec["out_width"])
    raise FormatError(f"unknown layer type {kind!r} in checkpoint manifest")


class TinyPerceiver:
    """Image -> 32x32x2 coarse field, with cached activations for backprop.

    The first convolution sees five channels: RGB (zero-centered) plus two
    normalized coordinate channels. Coordinates restore the global spatial
    addressing a deep backbone would get from its receptive field; without
    them the 23-pixel receptive field of this small stack cannot represent
    smooth image-wide displacement fields.
    """

    def __init__(self, seed: int = 0, input_size: int = 128, grid_size: int = 32,
                 layers=None):
        self.input_size = input_size
        self.grid_size = grid_size
        if layers is not None:
            self.layers = layers
            return
        rng = np.random.default_rng(seed)
        self.layers = [
            Conv2d(5, 16, stride=2, rng=rng),
            LeakyReLU(),
            Conv2d(16, 32, stride=2, rng=rng),
            LeakyReLU(),
            Conv2d(32, 32, stride=1, rng=rng),
            LeakyReLU(),
            Conv2d(32, 2, stride=1, zero_init=True),
            AdaptiveAvgPool(grid_size, grid_size),
        ]

    def parameters(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.parameters()]

    def set_parameters(self, values) -> None:
        values = list(values)
        cursor = 0
        for layer in self.layers:
            count = len(layer.parameters())
            chunk = [np.asarray(v, dtype=np.float32) for v in values[cursor:cursor + count]]
            layer.set_parameters(chunk)
            cursor += count
        if cursor != len(values):
            raise InvalidArgumentError(
                f"expected {cursor} parameter arrays, got {len(values)}"
            )


@dataclass
class ForwardCache:
    model: TinyPerceiver
    layer_caches: list
    output: np.ndarray  # float64 coarse grid, before float32 storage


def _coordinate_channels(size: int) -> np.ndarray:
    axis = np.linspace(-0.5, 0.5, size)
    ys, xs = np.meshgrid(axis, axis, indexing="ij")
    return np.stack([xs, ys], axis=-1)


def _forward_raw(model: TinyPerceiver, image_data: np.ndarray) -> ForwardCache:
    x = np.asarray(image_data, dtype=np.float64)
    if x.shape[:2] != (model.input_size, model.input_size):
        x = _resize_data(x, model.input_size, model.input_size)
    x = x - 0.5  # zero-center [0,1] images before the conv stack
    x = np.concatenate([x, _coordinate_channels(model.input_size)], axis=-1)
    caches = []
    for layer in model.layers:
        x, cache = layer.forward(x)
        caches.append(cache)
    return ForwardCache(model=model, layer_caches=caches, output=x)


def perceiver_forward(model: TinyPerceiver, image: ImageBuffer) -> tuple[CoarseField, ForwardCache]:
    """Predict the coarse field for an image (resized internally). The cache
    holds everything `perceiver_backward` needs."""
    if image.height < MIN_INPUT_SIZE or image.width < MIN_INPUT_SIZE:
        raise InvalidArgumentError(
            f"perceiver needs images of at least {MIN_INPUT_SIZE}x{MIN_INPUT_SIZE}, "
            f"got {image.height}x{image.width}"
        )
    cache = _forward_raw(model, image.data)
    return CoarseField(cache.output), cache


def perceiver_backward(
    model: TinyPerceiver, cache: ForwardCache, grad_field: np.ndarray
) -> list[np.ndarray]:
    """Backpropagate a coarse-field gradient to every parameter (same order
    as `model.parameters()`)."""
    if cache.model is not model:
        raise InvalidArgumentError("cache does not belong to this model")
    grad = np.asarray(grad_field, dtype=np.float64)
    if grad.shape != cache.output.shape:
        raise InvalidArgumentError(
            f"gradient shape {grad.shape} does not match output {cache.output.shape}"
        )
    param_grads: list[np.ndarray] = []
    for layer, layer_cache in zip(reversed(model.layers), reversed(cache.layer_caches)):
        grad, layer_param_grads = layer.backward(layer_cache, grad)
        param_grads = layer_param_grads + param_grads
    return param_grads


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 16
    lr: float = 1e-3
    lr_decay: float = 0.95
    beta1: float = 0.5
    beta2: float = 0.999
    weights: LossWeights = dc_field(default_factory=LossWeights)
    hflip: bool = True
    jitter: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise InvalidArgumentError("batch size must be >= 1")
        if not 0.0 < self.lr_decay <= 1.0:
            raise InvalidArgumentError("lr decay must lie in (0, 1]")


@dataclass
class EpochRecord:
    epoch: int
    loss: LossReport
    lr: float


def augment_pair(
    sample: PairedSample, rng: np.random.Generator, flip: bool = True, jitter: bool = True
) -> PairedSample:
    """Online augmentation: a coin-flip horizontal mirror applied coherently
    to input, target, and field, then one shared color jitter for both images
    (brightness/contrast/saturation in [0.9, 1.1], hue in [-0.05, 0.05])."""
    x_in, x_toon, grid = sample.x_in, sample.x_toon, sample.field
    if flip and rng.random() < 0.5:
        x_in = hflip_image(x_in)
        x_toon = hflip_image(x_toon)
        if grid is not None:
            grid = hflip_field(grid)
    if jitter:
        brightness, contrast, saturation = rng.uniform(0.9, 1.1, size=3)
        hue = rng.uniform(-0.05, 0.05)
        x_in = ImageBuffer(color_jitter(x_in.data, brightness, contrast, saturation, hue))
        x_toon = ImageBuffer(color_jitter(x_toon.data, brightness, contrast, saturation, hue))
    return PairedSample(id=sample.id, x_in=x_in, x_toon=x_toon, field=grid)


def _chain_loss_and_grads(
    model: TinyPerceiver,
    x_in: np.ndarray,
    x_toon: np.ndarray,
    target_grid: np.ndarray,
    weights: LossWeights,
) -> tuple[LossReport, list[np.ndarray]]:
    """One sample through perceiver -> upsample -> warp -> losses, returning
    the report and parameter gradients of the weighted total."""
    cache = _forward_raw(model, x_in)
    grid = cache.output
    height, width = x_in.shape[:2]
    dense = _upsample_data(grid, height, width)
    warped, aux = _warp_raw(np.asarray(x_in, dtype=np.float64), dense)

    recon, grad_image = _mean_l1(warped, np.asarray(x_toon, dtype=np.float64))
    supervision, grad_grid_direct = _mean_l1(grid, np.asarray(target_grid, dtype=np.float64))
    smooth, grad_dense_smooth = _smooth_data(dense)

    grad_dense = _field_gradient(aux, weights.recon * grad_image)
    if weights.reg != 0.0:
        grad_dense += weights.reg * grad_dense_smooth
    grad_grid = _upsample_adjoint(grad_dense, grid.shape[0], grid.shape[1])
    grad_grid += weights.warp * grad_grid_direct

    report = LossReport(
        recon=recon,
        warp=supervision,
        reg=smooth,
        total=weights.recon * recon + weights.warp * supervision + weights.reg * smooth,
    )
    return report, perceiver_backward(model, cache, grad_grid)


def train(
    model: TinyPerceiver, dataset: list[PairedSample], cfg: TrainConfig = TrainConfig()
) -> tuple[TinyPerceiver, list[EpochRecord]]:
    """Train in place on pairs with ground-truth fields; returns the model and
    the per-epoch mean losses. Deterministic for a fixed seed: one RNG drives
    shuffling and augmentation, and batch gradients accumulate in sample-index
    order."""
    if len(dataset) == 0:
        raise DatasetError("training needs at least one sample")
    for sample in dataset:
        if sample.field is None:
            raise DatasetError(
                f"sample {sample.id} has no ground-truth field; fit one first"
            )

    rng = np.random.default_rng(cfg.seed)
    params = model.parameters()
    state = init_adam(params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2,
                      lr_decay=cfg.lr_decay)
    history: list[EpochRecord] = []

    for epoch in range(cfg.epochs):
        state.lr = cfg.lr * cfg.lr_decay**epoch
        order = rng.permutation(len(dataset))
        sums = np.zeros(4)
        for start in range(0, len(dataset), cfg.batch_size):
            batch = sorted(order[start:start + cfg.batch_size])
            grads_acc = None
            for index in batch:
                sample = dataset[index]
                if cfg.hflip or cfg.jitter:
                    sample = augment_pair(sample, rng, flip=cfg.hflip, jitter=cfg.jitter)
                report, grads = _chain_loss_and_grads(
                    model, sample.x_in.data, sample.x_toon.data,
                    sample.field.data, cfg.weights,
                )
                sums += (report.recon, report.warp, report.reg, report.total)
                if grads_acc is None:
                    grads_acc = grads
                else:
                    grads_acc = [a + g for a, g in zip(grads_acc, grads)]
            grads_acc = [g / len(batch) for g in grads_acc]
            params, state = adam_step(model.parameters(), grads_acc, state)
            model.set_parameters(params)
        mean = sums / len(dataset)
        history.append(EpochRecord(
            epoch=epoch,
            loss=LossReport(recon=mean[0], warp=mean[1], reg=mean[2], total=mean[3]),
            lr=state.lr,
        ))
    return model, history


def infer(
    model: TinyPerceiver, image: ImageBuffer, alpha: float = 1.0
) -> tuple[CoarseField, DenseField, ImageBuffer]:
    """Predicted field, its alpha-scaled dense version, and the cartoon."""
    grid, _ = perceiver_forward(model, image)
    dense = upsample(scale_field(grid, alpha), image.height, image.width)
    return grid, dense, warp(image, dense)


def save_model(model: TinyPerceiver, path) -> None:
    """Checkpoint: magic, version, JSON layer manifest, float32 LE parameters."""
    manifest = {
        "input_size": model.input_size,
        "grid_size": model.grid_size,
        "layers": [layer.spec() for layer in model.layers],
        "param_shapes": [list(p.shape) for p in model.parameters()],
    }
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for p in model.parameters():
            fh.write(np.ascontiguousarray(p, dtype="<f4").tobytes())


def load_model(path) -> TinyPerceiver:
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise FormatError(f"truncated checkpoint header: {len(raw)} bytes")
    if raw[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"bad magic {raw[:4]!r}, expected {CHECKPOINT_MAGIC!r}")
    version, manifest_len = struct.unpack("<II", raw[4:12])
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    if len(raw) < 12 + manifest_len:
        raise FormatError("truncated checkpoint manifest")
    try:
        manifest = json.loads(raw[12:12 + manifest_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable checkpoint manifest: {exc}") from exc

    layers = [_layer_from_spec(spec) for spec in manifest["layers"]]
    model = TinyPerceiver(
        input_size=manifest["input_size"], grid_size=manifest["grid_size"], layers=layers
    )
    shapes = [tuple(s) for s in manifest["param_shapes"]]
    payload = raw[12 + manifest_len:]
    expected = sum(int(np.prod(s)) * 4 for s in shapes)
    if len(payload) != expected:
        raise FormatError(f"parameter payload should be {expected} bytes, got {len(payload)}")
    values = []
    offset = 0
    for shape in shapes:
        count = int(np.prod(shape))
        values.append(
            np.frombuffer(payload, dtype="<f4", count=count, offset=offset).reshape(shape).copy()
        )
        offset += count * 4
    model.set_parameters(values)
    return model
