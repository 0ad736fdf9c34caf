"""Multiresolution views (blurred and downsampled) of images and fields.

Every level is a linear map of the full-resolution arrays, represented by
explicit per-axis operator matrices so that level losses can be chained back
to full-resolution gradients exactly (the adjoint is just the transposed
matrices).  Level 0 is always the unmodified input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .core import InvalidInputError, ReversedPePair, check_slice

__all__ = [
    "MultiresConfig",
    "LevelOp",
    "gaussian_blur",
    "downsample",
    "build_level_ops",
    "make_levels",
]

MODES = ("none", "multiblur", "multiscale", "both")

# Level weights from the hyperparameter tables: full resolution first, then
# scale levels, then blur levels.
_DEFAULT_WEIGHTS = {
    "none": (1.0,),
    "multiblur": (0.4, 0.3, 0.2, 0.1),
    "multiscale": (0.6, 0.3, 0.1),
    "both": (0.5, 0.15, 0.05, 0.15, 0.1, 0.05),
}


@dataclass(frozen=True)
class MultiresConfig:
    mode: str = "multiblur"
    blur_sigmas: tuple[float, ...] = (0.5, 1.5, 2.5)
    scale_factors: tuple[int, ...] = (2, 4)
    weights: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidInputError(f"unknown multires mode {self.mode!r}")
        if any(s <= 0 for s in self.blur_sigmas):
            raise InvalidInputError("blur sigmas must be positive")
        for f in self.scale_factors:
            if f < 2 or (f & (f - 1)) != 0:
                raise InvalidInputError(f"scale factor {f} is not a power of two >= 2")
        object.__setattr__(self, "blur_sigmas", tuple(float(s) for s in self.blur_sigmas))
        object.__setattr__(self, "scale_factors", tuple(int(f) for f in self.scale_factors))
        w = self.weights
        if w is None:
            w = _DEFAULT_WEIGHTS[self.mode]
        w = tuple(float(x) for x in w)
        if len(w) != self.n_levels:
            raise InvalidInputError(
                f"{len(w)} weights for {self.n_levels} levels (mode {self.mode!r})"
            )
        if any(x < 0 for x in w) or sum(w) <= 0:
            raise InvalidInputError("level weights must be >= 0 with positive sum")
        object.__setattr__(self, "weights", w)

    @property
    def n_levels(self) -> int:
        n = 1
        if self.mode in ("multiscale", "both"):
            n += len(self.scale_factors)
        if self.mode in ("multiblur", "both"):
            n += len(self.blur_sigmas)
        return n


def blur_matrix(n: int, sigma: float) -> np.ndarray:
    """1D Gaussian blur as an n x n matrix with replicate (edge-clamped) taps.

    Kernel radius is ceil(4*sigma), i.e. 2*ceil(4*sigma) + 1 taps, normalized.
    Out-of-range taps accumulate onto the nearest edge sample, so rows sum to
    one and constants are preserved exactly.
    """
    if sigma <= 0:
        raise InvalidInputError("blur sigma must be positive")
    radius = math.ceil(4.0 * sigma)
    offs = np.arange(-radius, radius + 1, dtype=float)
    taps = np.exp(-0.5 * (offs / sigma) ** 2)
    taps /= taps.sum()
    mat = np.zeros((n, n))
    for a in range(n):
        idx = np.clip(a + np.arange(-radius, radius + 1), 0, n - 1)
        np.add.at(mat[a], idx, taps)
    return mat


def decimation_matrix(n: int, factor: int) -> np.ndarray:
    if n % factor != 0:
        raise InvalidInputError(f"dimension {n} not divisible by factor {factor}")
    sel = np.zeros((n // factor, n))
    sel[np.arange(n // factor), np.arange(0, n, factor)] = 1.0
    return sel


def gaussian_blur(slice_: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with replicate edge handling."""
    arr = check_slice(slice_, "slice")
    br = blur_matrix(arr.shape[0], sigma)
    bc = blur_matrix(arr.shape[1], sigma)
    return br @ arr @ bc.T


def downsample(slice_: np.ndarray, factor: int) -> np.ndarray:
    """Anti-alias blur (sigma = 0.5 * factor) followed by decimation."""
    arr = check_slice(slice_, "slice")
    factor = int(factor)
    if factor < 1 or (factor & (factor - 1)) != 0:
        raise InvalidInputError(f"factor {factor} is not a power of two")
    if factor == 1:
        return arr.copy()
    dr = decimation_matrix(arr.shape[0], factor) @ blur_matrix(arr.shape[0], 0.5 * factor)
    dc = decimation_matrix(arr.shape[1], factor) @ blur_matrix(arr.shape[1], 0.5 * factor)
    return dr @ arr @ dc.T


@dataclass
class LevelOp:
    """One multiresolution level as a pair of per-axis linear operators.

    `row_mat`/`col_mat` of None mean the identity (level 0 fast path).
    `field_value_scale` converts pixel-unit displacements into the level's
    grid units (1/factor for downsampled levels, 1 otherwise).
    """

    omega: float
    lam: float
    tau: float
    label: str = "full"
    row_mat: np.ndarray | None = None
    col_mat: np.ndarray | None = None
    field_value_scale: float = 1.0
    extras: dict = dc_field(default_factory=dict)

    def image_fwd(self, x: np.ndarray) -> np.ndarray:
        if self.row_mat is None:
            return x
        return self.row_mat @ x @ self.col_mat.T

    def image_adj(self, g: np.ndarray) -> np.ndarray:
        if self.row_mat is None:
            return g
        return self.row_mat.T @ g @ self.col_mat

    def field_fwd(self, f: np.ndarray) -> np.ndarray:
        return self.image_fwd(f) * self.field_value_scale

    def field_adj(self, g: np.ndarray) -> np.ndarray:
        return self.image_adj(g) * self.field_value_scale


def build_level_ops(
    shape: tuple[int, int],
    config: MultiresConfig,
    lam: float,
    tau: float,
) -> list[LevelOp]:
    """Concrete level operators for a given slice shape.

    The valley threshold scales with the grid for downsampled levels and stays
    fixed for blurred (full-size) levels.
    """
    n_fe, n_pe = shape
    w = iter(config.weights)
    ops = [LevelOp(omega=next(w), lam=lam, tau=tau, label="full")]
    if config.mode in ("multiscale", "both"):
        for f in config.scale_factors:
            rm = decimation_matrix(n_fe, f) @ blur_matrix(n_fe, 0.5 * f)
            cm = decimation_matrix(n_pe, f) @ blur_matrix(n_pe, 0.5 * f)
            ops.append(
                LevelOp(
                    omega=next(w), lam=lam, tau=tau / f, label=f"scale1/{f}",
                    row_mat=rm, col_mat=cm, field_value_scale=1.0 / f,
                )
            )
    if config.mode in ("multiblur", "both"):
        for s in config.blur_sigmas:
            ops.append(
                LevelOp(
                    omega=next(w), lam=lam, tau=tau, label=f"blur{s:g}",
                    row_mat=blur_matrix(n_fe, s), col_mat=blur_matrix(n_pe, s),
                )
            )
    return ops


def make_levels(
    image: np.ndarray,
    field: np.ndarray,
    pair: ReversedPePair,
    config: MultiresConfig,
    lam: float = 1e-5,
    tau: float = 32.0,
) -> list[tuple[np.ndarray, np.ndarray, ReversedPePair]]:
    """Materialize per-level (image, field, measured pair) tuples.

    The measured pair is transformed identically to the forward-distorted
    outputs it will be compared against.  Level 0 is the unmodified input.
    """
    image = check_slice(image, "image")
    field = check_slice(field, "field")
    if image.shape != field.shape or image.shape != pair.shape:
        raise InvalidInputError("image, field, and pair shapes must match")
    out = []
    for op in build_level_ops(image.shape, config, lam, tau):
        out.append(
            (
                op.image_fwd(image).copy(),
                op.field_fwd(field).copy(),
                ReversedPePair(op.image_fwd(pair.blip_up), op.image_fwd(pair.blip_down)),
            )
        )
    return out
