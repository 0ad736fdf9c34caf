"""In-plane rigid transform (two shifts plus a rotation) and its optimization
gradient for aligning a forward-distorted blip-down slice to the measurement.

Convention: rotate about the geometric center ((n_FE-1)/2, (n_PE-1)/2), then
translate; positive sx moves content toward increasing row (FE) index,
positive sy toward increasing column (PE) index.  Resampling is bilinear with
zeros outside the field of view.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import InvalidInputError, check_same_shape, check_slice

__all__ = ["RigidParams", "apply_rigid", "invert_rigid", "rigid_gradient"]

FD_STEPS = (1e-3, 1e-3, 1e-4)  # central-difference steps: sx px, sy px, r rad


@dataclass(frozen=True)
class RigidParams:
    sx: float = 0.0  # FE-axis shift, pixels
    sy: float = 0.0  # PE-axis shift, pixels
    r: float = 0.0   # in-plane rotation, radians

    def __post_init__(self):
        vals = (self.sx, self.sy, self.r)
        if not all(math.isfinite(v) for v in vals):
            raise InvalidInputError("rigid parameters must be finite")
        if abs(self.r) >= math.pi:
            raise InvalidInputError(f"|rotation| must be < pi, got {self.r}")

    def as_array(self) -> np.ndarray:
        return np.array([self.sx, self.sy, self.r])

    @property
    def is_identity(self) -> bool:
        return self.sx == 0.0 and self.sy == 0.0 and self.r == 0.0


def apply_rigid(slice_: np.ndarray, params: RigidParams) -> np.ndarray:
    """Resample a slice under rotate-then-translate about the image center."""
    arr = check_slice(slice_, "slice")
    if params.is_identity:
        return arr.copy()
    n_fe, n_pe = arr.shape
    cx = (n_fe - 1) / 2.0
    cy = (n_pe - 1) / 2.0
    rows, cols = np.meshgrid(
        np.arange(n_fe, dtype=float), np.arange(n_pe, dtype=float), indexing="ij"
    )
    # Inverse map: source = R^-1 (dest - center - t) + center
    u = rows - cx - params.sx
    v = cols - cy - params.sy
    c, s = math.cos(params.r), math.sin(params.r)
    src_r = c * u + s * v + cx
    src_c = -s * u + c * v + cy
    return ndimage.map_coordinates(
        arr, [src_r, src_c], order=1, mode="constant", cval=0.0, prefilter=False
    )


def invert_rigid(params: RigidParams) -> RigidParams:
    """Exact parameter inverse under the rotate-then-translate convention."""
    c, s = math.cos(params.r), math.sin(params.r)
    # Inverse transform: rotate by -r, then translate by -R(-r) @ (sx, sy)
    sx = -(c * params.sx + s * params.sy)
    sy = -(-s * params.sx + c * params.sy)
    return RigidParams(sx=sx, sy=sy, r=-params.r)


def alignment_loss(
    measured: np.ndarray, moving: np.ndarray, params: RigidParams, gamma: float
) -> float:
    """Blip-down data-fidelity term plus the weighted parameter penalty."""
    moved = apply_rigid(moving, params)
    n_fe, n_pe = measured.shape
    data = float(np.sum((moved - measured) ** 2)) / (2.0 * n_fe * n_pe)
    return data + gamma * float(params.sx**2 + params.sy**2 + params.r**2)


def rigid_gradient(
    measured: np.ndarray,
    moving: np.ndarray,
    params: RigidParams,
    gamma: float = 0.01,
) -> np.ndarray:
    """Central finite-difference gradient of `alignment_loss` in (sx, sy, r)."""
    measured = check_slice(measured, "measured")
    moving = check_slice(moving, "moving")
    check_same_shape(measured, moving, "measured/moving")
    base = params.as_array()
    grad = np.empty(3)
    for k, h in enumerate(FD_STEPS):
        plus = base.copy()
        minus = base.copy()
        plus[k] += h
        minus[k] -= h
        lp = alignment_loss(measured, moving, RigidParams(*plus), gamma)
        lm = alignment_loss(measured, moving, RigidParams(*minus), gamma)
        grad[k] = (lp - lm) / (2.0 * h)
    return grad
