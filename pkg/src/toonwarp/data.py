"""Paired-data ingestion, PNG I/O, and the synthetic pair generator used as
the ground-truth oracle for desk-scale experiments.

On-disk layout for real datasets: `root/<id>/input.png`, `root/<id>/toon.png`,
optional `root/<id>/field.atf`. Images are 8-bit RGB PNG; floats are
value / 255 on load and round-to-nearest on save.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .core import CoarseField, ImageBuffer
from .errors import DatasetError, InvalidArgumentError
from .fields import load_field, save_field, upsample
from .warp import resize_image, warp

DEFAULT_DENSE_SIZE = 256
FIELD_STYLES = ("smooth-random", "bulge", "translation")


@dataclass
class PairedSample:
    """An aligned (input, cartoon) pair with an optional ground-truth grid."""

    id: str
    x_in: ImageBuffer
    x_toon: ImageBuffer
    field: CoarseField | None = None

    def __post_init__(self):
        if self.x_in.data.shape != self.x_toon.data.shape:
            raise DatasetError(
                f"sample {self.id}: input {self.x_in.data.shape} and toon "
                f"{self.x_toon.data.shape} dimensions differ"
            )
        if self.field is not None and (
            self.field.height > self.x_in.height or self.field.width > self.x_in.width
        ):
            raise DatasetError(
                f"sample {self.id}: {self.field.height}x{self.field.width} grid "
                f"cannot upsample to {self.x_in.height}x{self.x_in.width}"
            )


@dataclass
class DatasetManifest:
    root: Path
    ids: list[str]
    split: str = "all"
    dense_size: int = DEFAULT_DENSE_SIZE

    def __post_init__(self):
        self.root = Path(self.root)
        if len(set(self.ids)) != len(self.ids):
            raise DatasetError("manifest ids must be unique")


def load_image_png(path) -> ImageBuffer:
    with Image.open(path) as img:
        rgb = img.convert("RGB")
        arr = np.asarray(rgb, dtype=np.float64) / 255.0
    return ImageBuffer(arr)


def save_image_png(image: ImageBuffer, path) -> None:
    quantized = np.rint(np.clip(image.data.astype(np.float64), 0.0, 1.0) * 255.0)
    Image.fromarray(quantized.astype(np.uint8), mode="RGB").save(path, format="PNG")


def load_dataset(root, dense_size: int = DEFAULT_DENSE_SIZE) -> list[PairedSample]:
    """Load every sample directory under `root`, resized to `dense_size`."""
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root {root} is not a directory")
    samples = []
    for sample_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        sample_id = sample_dir.name
        input_path = sample_dir / "input.png"
        toon_path = sample_dir / "toon.png"
        if not input_path.is_file():
            raise DatasetError(f"sample {sample_id}: missing {input_path.name}")
        if not toon_path.is_file():
            raise DatasetError(f"sample {sample_id}: missing {toon_path.name}")
        x_in = resize_image(load_image_png(input_path), dense_size, dense_size)
        x_toon = resize_image(load_image_png(toon_path), dense_size, dense_size)
        field_path = sample_dir / "field.atf"
        field = load_field(field_path) if field_path.is_file() else None
        samples.append(PairedSample(id=sample_id, x_in=x_in, x_toon=x_toon, field=field))
    return samples


def write_dataset(samples, root) -> None:
    """Materialize samples in the directory layout `load_dataset` reads."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for sample in samples:
        sample_dir = root / sample.id
        sample_dir.mkdir(exist_ok=True)
        save_image_png(sample.x_in, sample_dir / "input.png")
        save_image_png(sample.x_toon, sample_dir / "toon.png")
        if sample.field is not None:
            save_field(sample.field, sample_dir / "field.atf")


def _band_limited_noise(rng: np.random.Generator, size: int) -> np.ndarray:
    """Textured RGB noise built from a few upsampled octaves. Fitting needs
    texture everywhere: flat regions make field recovery ill-posed, and the
    finest octave keeps gradients informative at few-pixel displacements."""
    acc = np.zeros((size, size, 3))
    for cells, weight in ((8, 0.3), (16, 0.35), (32, 0.35)):
        cells = min(cells, size)
        coarse = rng.uniform(0.0, 1.0, size=(cells, cells, 3))
        canvas = ImageBuffer(coarse)
        acc += weight * resize_image(canvas, size, size).data.astype(np.float64)
    return acc


def _face_shading(size: int) -> np.ndarray:
    """Soft centered ellipse, a stand-in for portrait shading."""
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    cx = cy = (size - 1) / 2.0
    r2 = ((xs - cx) / (0.36 * size)) ** 2 + ((ys - cy) / (0.46 * size)) ** 2
    return np.clip(1.0 - r2, 0.0, 1.0)[..., None]


def _style_field(
    rng: np.random.Generator, style: str, grid: int, magnitude: float, size: int
) -> CoarseField:
    if style == "translation":
        data = np.zeros((grid, grid, 2))
        data[..., 0] = magnitude
        return CoarseField(data)
    if style == "smooth-random":
        knots = rng.uniform(-1.0, 1.0, size=(4, 4, 2))
        data = upsample(CoarseField(knots), grid, grid).data.astype(np.float64)
        peak = np.abs(data).max()
        if peak > 0:
            data *= magnitude / peak
        return CoarseField(data)
    if style == "bulge":
        ys, xs = np.mgrid[0:grid, 0:grid].astype(np.float64)
        cx = cy = (grid - 1) / 2.0
        # Work in dense-pixel units so the stored displacements stay in the
        # image's coordinate system regardless of grid size.
        cell = (size - 1) / (grid - 1)
        px = (xs - cx) * cell
        py = (ys - cy) * cell
        sigma = 0.22 * size
        envelope = (magnitude / sigma) * np.exp(0.5 * (1.0 - (px**2 + py**2) / sigma**2))
        return CoarseField(np.stack([envelope * px, envelope * py], axis=-1))
    raise InvalidArgumentError(f"unknown field style {style!r}, expected one of {FIELD_STYLES}")


def synth_dataset(
    seed: int,
    n: int,
    field_style: str = "smooth-random",
    size: int = DEFAULT_DENSE_SIZE,
    grid: int = 32,
    magnitude: float = 3.0,
) -> list[PairedSample]:
    """Generate textured pairs whose cartoons are exact warps of the inputs.

    Every sample satisfies x_toon == warp(x_in, upsample(field)) by
    construction, which makes the stored field a recovery oracle.
    """
    if n < 1:
        raise InvalidArgumentError("synth_dataset needs n >= 1")
    if field_style not in FIELD_STYLES:
        raise InvalidArgumentError(
            f"unknown field style {field_style!r}, expected one of {FIELD_STYLES}"
        )
    rng = np.random.default_rng(seed)
    samples = []
    for index in range(n):
        texture = _band_limited_noise(rng, size)
        shaded = 0.65 * texture + 0.3 * _face_shading(size) + 0.05
        x_in = ImageBuffer(np.clip(shaded, 0.0, 1.0))
        field = _style_field(rng, field_style, grid, magnitude, size)
        x_toon = warp(x_in, upsample(field, size, size))
        samples.append(
            PairedSample(id=f"synth-{index:03d}", x_in=x_in, x_toon=x_toon, field=field)
        )
    return samples


def split(
    manifest: DatasetManifest, train_fraction: float, seed: int
) -> tuple[DatasetManifest, DatasetManifest]:
    """Deterministic shuffled partition into train and validation manifests."""
    if not 0.0 < train_fraction < 1.0:
        raise InvalidArgumentError("train_fraction must lie strictly between 0 and 1")
    order = np.random.default_rng(seed).permutation(len(manifest.ids))
    n_train = int(round(train_fraction * len(manifest.ids)))
    if n_train == 0 or n_train == len(manifest.ids):
        raise InvalidArgumentError(
            f"split of {len(manifest.ids)} ids at fraction {train_fraction} "
            "leaves one side empty"
        )
    shuffled = [manifest.ids[i] for i in order]
    make = lambda ids, tag: DatasetManifest(
        root=manifest.root, ids=ids, split=tag, dense_size=manifest.dense_size
    )
    return make(shuffled[:n_train], "train"), make(shuffled[n_train:], "val")


def write_manifest(manifests, path) -> None:
    """Plain-text listing, one `id,split` line per sample."""
    lines = []
    for manifest in manifests:
        lines.extend(f"{sample_id},{manifest.split}" for sample_id in manifest.ids)
    Path(path).write_text("\n".join(lines) + "\n")
