"""Reversed phase-encode EPI susceptibility distortion toolkit.

Estimates an anatomically-correct image and a per-pixel displacement field
from a blip-up / blip-down pair by direct optimization of a
forward-distortion objective, with the forward simulator, unwarping
operators, losses, and metrics needed to verify every piece.
"""

__version__ = "0.1.0"

from .core import (
    FormatError,
    InvalidInputError,
    NumericalError,
    PePolarity,
    ReversedPePair,
    UnsupportedFeatureError,
)
from .distortion import build_k_row, density_map, forward_distort, unwarp
from .losses import (
    LossBreakdown,
    LossWeights,
    bending_energy,
    loss_gradients,
    mse_loss,
    rigid_loss,
    total_loss,
    valley_loss,
)
from .metrics import mask_median_otsu, psnr, ssim
from .multires import MultiresConfig, downsample, gaussian_blur, make_levels
from .optimize import (
    CorrectionResult,
    OptimizerConfig,
    estimate_slice,
    estimate_volume,
    field_step,
    solve_image,
)
from .phantom import PhantomSpec, make_dataset, make_field, make_phantom, simulate_pair
from .rigid import RigidParams, apply_rigid, invert_rigid, rigid_gradient

__all__ = [
    "FormatError",
    "InvalidInputError",
    "NumericalError",
    "PePolarity",
    "ReversedPePair",
    "UnsupportedFeatureError",
    "build_k_row",
    "density_map",
    "forward_distort",
    "unwarp",
    "LossBreakdown",
    "LossWeights",
    "bending_energy",
    "loss_gradients",
    "mse_loss",
    "rigid_loss",
    "total_loss",
    "valley_loss",
    "mask_median_otsu",
    "psnr",
    "ssim",
    "MultiresConfig",
    "downsample",
    "gaussian_blur",
    "make_levels",
    "CorrectionResult",
    "OptimizerConfig",
    "estimate_slice",
    "estimate_volume",
    "field_step",
    "solve_image",
    "PhantomSpec",
    "make_dataset",
    "make_field",
    "make_phantom",
    "simulate_pair",
    "RigidParams",
    "apply_rigid",
    "invert_rigid",
    "rigid_gradient",
]
