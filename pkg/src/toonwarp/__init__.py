"""toonwarp: coarse learnable warp fields for geometric face exaggeration.

The library covers the full warping pipeline: field construction and
bilinear upsampling, a differentiable warping engine with analytic
gradients, the three-part training loss, gradient-descent recovery of warp
fields from image pairs, and a small end-to-end trainable perceiver.
"""

from .core import CoarseField, DenseField, ImageBuffer
from .errors import (
    DatasetError,
    FormatError,
    InvalidArgumentError,
    InvalidDimensionError,
    NumericFailureError,
    ToonWarpError,
)
from .fields import (
    hflip_field,
    load_field,
    save_field,
    scale_field,
    upsample,
    visualize_field,
    zero_field,
)
from .warp import (
    WarpGradients,
    hflip_image,
    resize_image,
    sample_bilinear,
    warp,
    warp_backward,
)
from .losses import (
    LossReport,
    LossWeights,
    recon_loss,
    smooth_loss,
    total_loss,
    warp_field_loss,
)
from .fit import AdamState, FitConfig, adam_step, fit_dataset, fit_field, init_adam
from .color import color_jitter, hsv_to_rgb, rgb_to_hsv
from .data import (
    DatasetManifest,
    PairedSample,
    load_dataset,
    load_image_png,
    save_image_png,
    split,
    synth_dataset,
    write_dataset,
    write_manifest,
)
from .perceiver import (
    TinyPerceiver,
    TrainConfig,
    augment_pair,
    infer,
    load_model,
    perceiver_backward,
    perceiver_forward,
    save_model,
    train,
)

__version__ = "0.1.0"
