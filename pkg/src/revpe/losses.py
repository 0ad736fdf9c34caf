"""Objective terms for forward-distortion estimation and their gradients.

The total objective is a weighted sum over multiresolution levels of a
data-fidelity MSE between measured and forward-distorted pairs, a bending
energy smoothness penalty on the field, and a hinge (valley) penalty on field
magnitudes beyond a threshold, plus a quadratic penalty on the rigid
parameters.  Image and field gradients are analytic; the rigid gradient is a
central finite difference through the measured blip-down resampling.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Sequence

import numpy as np

from .core import (
    InvalidInputError,
    PePolarity,
    ReversedPePair,
    check_same_shape,
    check_slice,
)
from .distortion import build_k, build_k_with_deriv
from .multires import LevelOp
from .rigid import FD_STEPS, RigidParams, apply_rigid, invert_rigid

__all__ = [
    "LossWeights",
    "LossBreakdown",
    "mse_loss",
    "bending_energy",
    "bending_energy_gradient",
    "valley_loss",
    "valley_gradient",
    "rigid_loss",
    "total_loss",
    "evaluate_objective",
    "loss_gradients",
    "identity_levels",
]


@dataclass(frozen=True)
class LossWeights:
    """Weights of the total objective.

    `lam` and `tau` may be scalars (shared across levels) or per-level tuples;
    `omega` always has one entry per level.  `valley_scale` is the fixed
    multiplier that makes the hinge penalty dominate when the field swings
    past `tau`.
    """

    omega: tuple[float, ...] = (0.4, 0.3, 0.2, 0.1)
    lam: float | tuple[float, ...] = 1e-5
    gamma: float = 0.01
    tau: float | tuple[float, ...] = 32.0
    valley_scale: float = 1e3

    def __post_init__(self):
        if any(w < 0 for w in self.omega) or sum(self.omega) <= 0:
            raise InvalidInputError("omega entries must be >= 0 with positive sum")
        if self.gamma < 0:
            raise InvalidInputError("gamma must be >= 0")
        for v in np.atleast_1d(self.lam):
            if v < 0:
                raise InvalidInputError("lam must be >= 0")
        for v in np.atleast_1d(self.tau):
            if v <= 0:
                raise InvalidInputError("tau must be > 0")

    def lam_at(self, m: int) -> float:
        return float(self.lam[m] if isinstance(self.lam, tuple) else self.lam)

    def tau_at(self, m: int) -> float:
        return float(self.tau[m] if isinstance(self.tau, tuple) else self.tau)


@dataclass
class LossBreakdown:
    """Per-level terms and their weighted combination."""

    mse: list[float] = dc_field(default_factory=list)
    bending: list[float] = dc_field(default_factory=list)
    valley: list[float] = dc_field(default_factory=list)
    omega: list[float] = dc_field(default_factory=list)
    lam: list[float] = dc_field(default_factory=list)
    rigid: float = 0.0
    gamma: float = 0.0
    valley_scale: float = 1e3
    total: float = 0.0

    def recombine(self) -> float:
        acc = self.gamma * self.rigid
        for w, l, m, b, v in zip(self.omega, self.lam, self.mse, self.bending, self.valley):
            acc += w * (m + l * (b + self.valley_scale * v))
        return acc


def mse_loss(measured: ReversedPePair, distorted: ReversedPePair) -> float:
    """Mean squared error across both polarities, normalized by 2 * n_FE * n_PE."""
    if measured.shape != distorted.shape:
        raise InvalidInputError(
            f"measured shape {measured.shape} != distorted shape {distorted.shape}"
        )
    n_fe, n_pe = measured.shape
    acc = np.sum((distorted.blip_up - measured.blip_up) ** 2)
    acc += np.sum((distorted.blip_down - measured.blip_down) ** 2)
    return float(acc) / (2.0 * n_fe * n_pe)


def bending_energy(field: np.ndarray) -> float:
    """Sum of squared second differences (xx, yy, xy, yx) of the field.

    Each stencil contributes only where it fits inside the grid; the cross
    term is counted twice (xy and yx coincide for central differences).
    """
    f = check_slice(field, "field")
    if f.shape[0] < 3 or f.shape[1] < 3:
        raise InvalidInputError(f"grid {f.shape} too small for second differences")
    fxx = f[2:, :] - 2.0 * f[1:-1, :] + f[:-2, :]
    fyy = f[:, 2:] - 2.0 * f[:, 1:-1] + f[:, :-2]
    fxy = (f[2:, 2:] - f[2:, :-2] - f[:-2, 2:] + f[:-2, :-2]) / 4.0
    return float(np.sum(fxx**2) + np.sum(fyy**2) + 2.0 * np.sum(fxy**2))


def bending_energy_gradient(field: np.ndarray) -> np.ndarray:
    """Analytic gradient of `bending_energy` (adjoint of each stencil)."""
    f = check_slice(field, "field")
    if f.shape[0] < 3 or f.shape[1] < 3:
        raise InvalidInputError(f"grid {f.shape} too small for second differences")
    g = np.zeros_like(f)
    fxx = f[2:, :] - 2.0 * f[1:-1, :] + f[:-2, :]
    g[2:, :] += 2.0 * fxx
    g[1:-1, :] -= 4.0 * fxx
    g[:-2, :] += 2.0 * fxx
    fyy = f[:, 2:] - 2.0 * f[:, 1:-1] + f[:, :-2]
    g[:, 2:] += 2.0 * fyy
    g[:, 1:-1] -= 4.0 * fyy
    g[:, :-2] += 2.0 * fyy
    fxy = (f[2:, 2:] - f[2:, :-2] - f[:-2, 2:] + f[:-2, :-2]) / 4.0
    g[2:, 2:] += fxy
    g[2:, :-2] -= fxy
    g[:-2, 2:] -= fxy
    g[:-2, :-2] += fxy
    return g


def valley_loss(field: np.ndarray, tau: float) -> float:
    """Hinge penalty on field magnitudes beyond tau, summed over pixels."""
    if tau <= 0:
        raise InvalidInputError("tau must be > 0")
    f = np.asarray(field, dtype=float)
    return float(np.sum(np.maximum(np.abs(f) - tau, 0.0)))


def valley_gradient(field: np.ndarray, tau: float) -> np.ndarray:
    """Subgradient of `valley_loss`; 0 at the kink |field| = tau."""
    f = np.asarray(field, dtype=float)
    return np.sign(f) * (np.abs(f) > tau)


def rigid_loss(params: RigidParams) -> float:
    """Quadratic penalty keeping the rigid transform small."""
    return float(params.sx**2 + params.sy**2 + params.r**2)


def total_loss(
    levels: Sequence[tuple[ReversedPePair, ReversedPePair, np.ndarray]],
    rigid: RigidParams,
    weights: LossWeights,
) -> LossBreakdown:
    """Combine per-level (measured, distorted, field) tuples into the objective."""
    if not levels:
        raise InvalidInputError("need at least one level")
    if len(weights.omega) != len(levels):
        raise InvalidInputError(
            f"{len(weights.omega)} omega entries for {len(levels)} levels"
        )
    bd = LossBreakdown(gamma=weights.gamma, valley_scale=weights.valley_scale)
    for m, (measured, distorted, field) in enumerate(levels):
        bd.omega.append(float(weights.omega[m]))
        bd.lam.append(weights.lam_at(m))
        bd.mse.append(mse_loss(measured, distorted))
        bd.bending.append(bending_energy(field))
        bd.valley.append(valley_loss(field, weights.tau_at(m)))
    bd.rigid = rigid_loss(rigid)
    bd.total = bd.recombine()
    return bd


def identity_levels(weights: LossWeights) -> list[LevelOp]:
    """Single full-resolution level carrying the first omega entry."""
    return [
        LevelOp(omega=float(weights.omega[0]), lam=weights.lam_at(0),
                tau=weights.tau_at(0), label="full")
    ]


def _aligned_measurements(pair: ReversedPePair, rigid: RigidParams):
    """Measured pair with the current rigid estimate undone on blip-down.

    Comparing the forward-distorted blip-down against the inverse-transformed
    measurement approximates applying the rigid transform to the distorted
    output; the approximation keeps the image and field subproblems linear.
    """
    if rigid.is_identity:
        return pair.blip_up, pair.blip_down
    return pair.blip_up, apply_rigid(pair.blip_down, invert_rigid(rigid))


def _level_mse_and_grads(image, field, meas_bu, meas_bd, op: LevelOp, want_grads: bool):
    """MSE at one level plus (optionally) its image/field gradients, chained
    back to full resolution through the level operators."""
    im = op.image_fwd(image)
    fl = op.field_fwd(field)
    mbu = op.image_fwd(meas_bu)
    mbd = op.image_fwd(meas_bd)
    n_fe, n_pe = im.shape
    c = 1.0 / (2.0 * n_fe * n_pe)
    out = {}
    g_im = None
    g_fl = None
    for pol, meas in ((PePolarity.BLIP_UP, mbu), (PePolarity.BLIP_DOWN, mbd)):
        if want_grads:
            kmat, dk, sgn = build_k_with_deriv(fl, pol)
        else:
            kmat = build_k(fl, pol)
        dist = np.einsum("ikj,ij->ik", kmat, im)
        resid = dist - meas
        out.setdefault("sq", 0.0)
        out["sq"] += float(np.sum(resid**2))
        if want_grads:
            gi = 2.0 * c * np.einsum("ikj,ik->ij", kmat, resid)
            gf = 2.0 * c * np.einsum("ik,ikj->ij", resid, dk) * im * sgn
            g_im = gi if g_im is None else g_im + gi
            g_fl = gf if g_fl is None else g_fl + gf
        if pol is PePolarity.BLIP_DOWN:
            out["bd_resid_sq"] = float(np.sum(resid**2))
            out["bd_dist"] = dist
    out["mse"] = c * out["sq"]
    out["c"] = c
    if want_grads:
        out["g_image"] = g_im
        out["g_field"] = g_fl
        out["level_field"] = fl
    return out


def evaluate_objective(
    image: np.ndarray,
    field: np.ndarray,
    pair: ReversedPePair,
    rigid: RigidParams,
    weights: LossWeights,
    level_ops: Sequence[LevelOp] | None = None,
) -> LossBreakdown:
    """Total objective for a candidate (image, field, rigid) triple."""
    image = check_slice(image, "image")
    field = check_slice(field, "field")
    check_same_shape(image, field, "image/field")
    if image.shape != pair.shape:
        raise InvalidInputError("image and measured pair shapes must match")
    ops = list(level_ops) if level_ops is not None else identity_levels(weights)
    meas_bu, meas_bd = _aligned_measurements(pair, rigid)
    bd = LossBreakdown(gamma=weights.gamma, valley_scale=weights.valley_scale)
    for op in ops:
        res = _level_mse_and_grads(image, field, meas_bu, meas_bd, op, want_grads=False)
        fl = op.field_fwd(field)
        bd.omega.append(op.omega)
        bd.lam.append(op.lam)
        bd.mse.append(res["mse"])
        bd.bending.append(bending_energy(fl))
        bd.valley.append(valley_loss(fl, op.tau))
    bd.rigid = rigid_loss(rigid)
    bd.total = bd.recombine()
    return bd


def loss_gradients(
    image: np.ndarray,
    field: np.ndarray,
    pair: ReversedPePair,
    rigid: RigidParams,
    weights: LossWeights,
    level_ops: Sequence[LevelOp] | None = None,
    with_rigid_grad: bool = True,
):
    """Gradients of the total objective.

    Returns (d_image, d_field, d_rigid, breakdown).  Image and field
    gradients are analytic; clipped destinations contribute zero field
    derivative.  The rigid gradient differentiates the blip-down fidelity
    terms by central differences through the measurement resampling, plus the
    analytic parameter-penalty term.
    """
    image = check_slice(image, "image")
    field = check_slice(field, "field")
    check_same_shape(image, field, "image/field")
    if image.shape != pair.shape:
        raise InvalidInputError("image and measured pair shapes must match")
    ops = list(level_ops) if level_ops is not None else identity_levels(weights)
    meas_bu, meas_bd = _aligned_measurements(pair, rigid)
    g_image = np.zeros_like(image)
    g_field = np.zeros_like(field)
    bd = LossBreakdown(gamma=weights.gamma, valley_scale=weights.valley_scale)
    bd_dists = []
    for op in ops:
        res = _level_mse_and_grads(image, field, meas_bu, meas_bd, op, want_grads=True)
        fl = res["level_field"]
        bd.omega.append(op.omega)
        bd.lam.append(op.lam)
        bd.mse.append(res["mse"])
        bd.bending.append(bending_energy(fl))
        bd.valley.append(valley_loss(fl, op.tau))
        bd_dists.append((res["bd_dist"], res["c"], op))
        g_image += op.omega * op.image_adj(res["g_image"])
        reg = op.lam * (
            bending_energy_gradient(fl)
            + weights.valley_scale * valley_gradient(fl, op.tau)
        )
        g_field += op.omega * (op.field_adj(res["g_field"] + reg))
    bd.rigid = rigid_loss(rigid)
    bd.total = bd.recombine()

    g_rigid = None
    if with_rigid_grad:
        g_rigid = 2.0 * weights.gamma * rigid.as_array()
        base = rigid.as_array()
        for k, h in enumerate(FD_STEPS):
            acc = 0.0
            for sgn_h in (+1.0, -1.0):
                p = base.copy()
                p[k] += sgn_h * h
                pert = RigidParams(*p)
                meas = apply_rigid(pair.blip_down, invert_rigid(pert))
                part = 0.0
                for dist, c, op in bd_dists:
                    resid = dist - op.image_fwd(meas)
                    part += op.omega * c * float(np.sum(resid**2))
                acc += sgn_h * part
            g_rigid[k] += acc / (2.0 * h)
    return g_image, g_field, g_rigid, bd
