"""Coarse-to-fine alternating estimation of the correct image, displacement
field, and rigid motion from a reversed-PE pair.

Per pyramid level the loop alternates an exact per-row image solve (ridge
regularized normal equations), momentum descent on the field with a
backtracking guard, and a trust-region rigid step.  Every accepted move must
not increase the objective, so the recorded loss trace is non-increasing
within a level.

The inner loop works through a cached workspace: the dense per-row operator
stacks are rebuilt only when the field changes and are kept in single
precision (the trigonometric kernel evaluation dominates runtime).  The
reference implementations in `losses` remain the double-precision oracle the
tests compare against.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field
from typing import Sequence

import numpy as np
from scipy import ndimage

from .core import (
    InvalidInputError,
    NumericalError,
    PePolarity,
    ReversedPePair,
    check_slice,
)
from .distortion import _destinations, build_k
from .losses import (
    LossWeights,
    bending_energy,
    bending_energy_gradient,
    valley_gradient,
    valley_loss,
)
from .multires import LevelOp, MultiresConfig, build_level_ops, downsample
from .rigid import RigidParams, apply_rigid, invert_rigid

__all__ = [
    "OptimizerConfig",
    "CorrectionResult",
    "FieldStepState",
    "solve_image",
    "field_step",
    "estimate_slice",
    "estimate_volume",
]

MAX_BACKTRACKS = 10
RIGID_SHIFT_CAP = 0.25  # pixels per step
RIGID_ANGLE_CAP = 0.005  # radians per step


@dataclass(frozen=True)
class OptimizerConfig:
    pyramid_factors: tuple[int, ...] = (4, 2, 1)
    max_iters: int = 200
    field_steps: int = 4
    field_step_px: float = 0.25  # initial per-step field motion, pixels
    momentum: float = 0.9
    epsilon_scale: float = 1e-3  # ridge eps = scale * (mean intensity)^2
    tol: float = 1e-6
    rigid_enabled: bool = True
    rigid_freeze_after_coarsest: bool = False
    clamp_margin: float = 8.0  # hard field box: [-tau - margin, tau + margin]
    weights: LossWeights = dc_field(default_factory=LossWeights)
    multires: MultiresConfig = dc_field(default_factory=MultiresConfig)

    def __post_init__(self):
        if self.max_iters < 1 or self.field_steps < 0:
            raise InvalidInputError("iteration counts must be positive")
        if self.epsilon_scale < 0 or self.tol <= 0:
            raise InvalidInputError("epsilon must be >= 0 and tol > 0")
        facs = tuple(int(f) for f in self.pyramid_factors)
        if not facs or facs[-1] != 1 or list(facs) != sorted(facs, reverse=True):
            raise InvalidInputError("pyramid factors must descend and end at 1")
        for f in facs:
            if f < 1 or (f & (f - 1)) != 0:
                raise InvalidInputError(f"pyramid factor {f} is not a power of two")
        object.__setattr__(self, "pyramid_factors", facs)


@dataclass
class CorrectionResult:
    image: np.ndarray
    field: np.ndarray
    rigid: RigidParams
    loss_trace: list[list[float]]  # per level, per outer iteration
    converged: bool


def solve_image(
    field: np.ndarray,
    pair: ReversedPePair,
    rigid: RigidParams | None = None,
    eps: float = 1e-3,
    project: bool = True,
) -> np.ndarray:
    """Exact per-row ridge solution of the two-polarity data fit.

    Solves (Kbu' Kbu + Kbd' Kbd + eps I) rho = Kbu' f_bu + Kbd' f_bd per FE
    row, where f_bd has the current rigid estimate undone.  Negative values
    are projected to 0 unless `project` is False.
    """
    field = check_slice(field, "field")
    if field.shape != pair.shape:
        raise InvalidInputError("field and pair shapes must match")
    if eps < 0:
        raise InvalidInputError("eps must be >= 0")
    rigid = rigid if rigid is not None else RigidParams()
    f_bu = pair.blip_up
    f_bd = pair.blip_down if rigid.is_identity else apply_rigid(
        pair.blip_down, invert_rigid(rigid)
    )
    k_bu = build_k(field, PePolarity.BLIP_UP)
    k_bd = build_k(field, PePolarity.BLIP_DOWN)
    kt_bu = k_bu.transpose(0, 2, 1)
    kt_bd = k_bd.transpose(0, 2, 1)
    normal = np.matmul(kt_bu, k_bu) + np.matmul(kt_bd, k_bd)
    normal += eps * np.eye(field.shape[1])
    rhs = np.matmul(kt_bu, f_bu[..., None]) + np.matmul(kt_bd, f_bd[..., None])
    try:
        rho = np.linalg.solve(normal, rhs)[..., 0]
    except np.linalg.LinAlgError as e:
        raise NumericalError(f"normal equations singular ({e}); use eps > 0") from e
    if not np.all(np.isfinite(rho)):
        raise NumericalError("image solve produced non-finite values; use eps > 0")
    if project:
        rho = np.maximum(rho, 0.0)
    return rho


@dataclass
class FieldStepState:
    """First-order moment accumulator for field descent."""

    moment: np.ndarray
    t: int = 0
    beta: float = 0.9


def field_step(
    field: np.ndarray,
    state: FieldStepState,
    grad: np.ndarray,
    step: float,
    tau: float,
    clamp_margin: float = 8.0,
) -> tuple[np.ndarray, FieldStepState]:
    """One bias-corrected momentum step opposite the gradient.

    Returns the updated field (clamped to the hard safety box) and the new
    momentum state; the inputs are not mutated, so a rejected step can simply
    discard the outputs.
    """
    if not np.all(np.isfinite(grad)):
        raise NumericalError("non-finite field gradient")
    t = state.t + 1
    moment = state.beta * state.moment + (1.0 - state.beta) * grad
    corrected = moment / (1.0 - state.beta**t)
    bound = tau + clamp_margin
    new_field = np.clip(field - step * corrected, -bound, bound)
    return new_field, FieldStepState(moment=moment, t=t, beta=state.beta)


# ---------------------------------------------------------------------------
# Cached per-level workspace
# ---------------------------------------------------------------------------


class _LevelState:
    """Field-dependent pieces of one multiresolution level."""

    __slots__ = ("level_field", "pos", "mask", "kmats", "be", "valley")

    def __init__(self, op: LevelOp, field: np.ndarray, dtype):
        fl = op.field_fwd(field)
        self.level_field = fl
        n_pe = fl.shape[1]
        k = np.arange(n_pe, dtype=dtype)
        self.pos = {}
        self.mask = {}
        self.kmats = {}
        for pol in (PePolarity.BLIP_UP, PePolarity.BLIP_DOWN):
            pos, unclipped = _destinations(fl, pol)
            pos = pos.astype(dtype)
            xi = pos[:, None, :] - k[None, :, None]
            self.pos[pol] = pos
            self.mask[pol] = unclipped
            self.kmats[pol] = np.sinc(xi)
        self.be = bending_energy(fl)
        self.valley = valley_loss(fl, op.tau)


class _Objective:
    """Evaluates the total objective and its gradients with caching.

    Measurements depend on the rigid estimate, level images on the current
    image, and the operator stacks on the current field; each is rebuilt only
    through its setter, so backtracking trials pay for exactly the piece they
    change.
    """

    def __init__(self, pair: ReversedPePair, weights: LossWeights,
                 ops: Sequence[LevelOp], dtype=np.float32):
        self.pair = pair
        self.weights = weights
        self.ops = list(ops)
        self.dtype = dtype
        self.rigid = RigidParams()
        self.meas = None
        self.images = None
        self.levels: list[_LevelState] | None = None
        self.field = None

    # -- setters -----------------------------------------------------------
    def set_rigid(self, rigid: RigidParams) -> None:
        self.rigid = rigid
        self.meas = self._measurements(rigid)

    def _measurements(self, rigid: RigidParams):
        bu = self.pair.blip_up
        bd = self.pair.blip_down if rigid.is_identity else apply_rigid(
            self.pair.blip_down, invert_rigid(rigid)
        )
        return [
            (op.image_fwd(bu).astype(self.dtype), op.image_fwd(bd).astype(self.dtype))
            for op in self.ops
        ]

    def set_image(self, image: np.ndarray) -> None:
        self.image = image
        self.images = [op.image_fwd(image).astype(self.dtype) for op in self.ops]

    def set_field(self, field: np.ndarray) -> None:
        self.field = field
        self.levels = [_LevelState(op, field, self.dtype) for op in self.ops]

    # -- evaluation --------------------------------------------------------
    def _value_from(self, levels, meas, images):
        total = self.weights.gamma * (
            self.rigid.sx**2 + self.rigid.sy**2 + self.rigid.r**2
        )
        dists = []
        for op, st, (mbu, mbd), im in zip(self.ops, levels, meas, images):
            n_fe, n_pe = im.shape
            c = 1.0 / (2.0 * n_fe * n_pe)
            sq = 0.0
            level_dists = {}
            for pol, m in ((PePolarity.BLIP_UP, mbu), (PePolarity.BLIP_DOWN, mbd)):
                dist = np.matmul(st.kmats[pol], im[..., None])[..., 0]
                sq += float(np.sum((dist - m) ** 2))
                level_dists[pol] = dist
            total += op.omega * (
                c * sq
                + op.lam * (st.be + self.weights.valley_scale * st.valley)
            )
            dists.append(level_dists)
        return total, dists

    def value(self) -> float:
        total, self._dists = self._value_from(self.levels, self.meas, self.images)
        return total

    def try_field(self, field: np.ndarray):
        """Objective value at a candidate field; commit the payload to adopt it."""
        levels = [_LevelState(op, field, self.dtype) for op in self.ops]
        total, _ = self._value_from(levels, self.meas, self.images)
        return total, (field, levels)

    def commit_field(self, payload) -> None:
        self.field, self.levels = payload

    def try_rigid(self, rigid: RigidParams):
        meas = self._measurements(rigid)
        saved = self.rigid
        self.rigid = rigid
        total, _ = self._value_from(self.levels, meas, self.images)
        self.rigid = saved
        return total, (rigid, meas)

    def commit_rigid(self, payload) -> None:
        self.rigid, self.meas = payload

    def try_image(self, image: np.ndarray):
        images = [op.image_fwd(image).astype(self.dtype) for op in self.ops]
        total, _ = self._value_from(self.levels, self.meas, images)
        return total, (image, images)

    def commit_image(self, payload) -> None:
        self.image, self.images = payload

    # -- gradients ---------------------------------------------------------
    def field_gradient(self) -> np.ndarray:
        """Analytic objective gradient with respect to the full-res field."""
        g_total = np.zeros(self.field.shape)
        for op, st, (mbu, mbd), im in zip(self.ops, self.levels, self.meas, self.images):
            n_fe, n_pe = im.shape
            c = 1.0 / (2.0 * n_fe * n_pe)
            k = np.arange(n_pe, dtype=self.dtype)
            g_level = None
            for pol, m in ((PePolarity.BLIP_UP, mbu), (PePolarity.BLIP_DOWN, mbd)):
                kmat = st.kmats[pol]
                xi = st.pos[pol][:, None, :] - k[None, :, None]
                small = np.abs(xi) < 1e-6
                xi_safe = np.where(small, 1.0, xi)
                dk = (np.cos(np.pi * xi) - kmat) / xi_safe
                dk = np.where(small, -(np.pi**2) * xi / 3.0, dk)
                dist = np.matmul(kmat, im[..., None])[..., 0]
                resid = dist - m
                sign = 1.0 if pol is PePolarity.BLIP_UP else -1.0
                g = np.matmul(resid[:, None, :], dk)[:, 0, :]
                g = 2.0 * c * g * im * (sign * st.mask[pol])
                g_level = g if g_level is None else g_level + g
            reg = op.lam * (
                bending_energy_gradient(st.level_field)
                + self.weights.valley_scale
                * valley_gradient(st.level_field, op.tau)
            )
            g_total += op.omega * op.field_adj(g_level.astype(float) + reg)
        return g_total

    def rigid_gradient(self) -> np.ndarray:
        """Central-difference gradient of the objective in the rigid params."""
        from .rigid import FD_STEPS

        self.value()  # refresh cached forward-distorted levels
        g = 2.0 * self.weights.gamma * self.rigid.as_array()
        base = self.rigid.as_array()
        for kk, h in enumerate(FD_STEPS):
            acc = 0.0
            for sgn in (+1.0, -1.0):
                p = base.copy()
                p[kk] += sgn * h
                meas_bd = apply_rigid(self.pair.blip_down, invert_rigid(RigidParams(*p)))
                part = 0.0
                for op, st, im, dists in zip(
                    self.ops, self.levels, self.images, self._dists
                ):
                    n_fe, n_pe = im.shape
                    c = 1.0 / (2.0 * n_fe * n_pe)
                    resid = dists[PePolarity.BLIP_DOWN] - op.image_fwd(meas_bd)
                    part += op.omega * c * float(np.sum(resid**2))
                acc += sgn * part
            g[kk] += acc / (2.0 * h)
        return g


def _upsample_field(field: np.ndarray, shape: tuple[int, int], ratio: float) -> np.ndarray:
    """Bilinear resize of a coarse field to a finer grid, rescaling the pixel
    displacements by the grid ratio."""
    rows = np.arange(shape[0], dtype=float) / ratio
    cols = np.arange(shape[1], dtype=float) / ratio
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    out = ndimage.map_coordinates(field, [rr, cc], order=1, mode="nearest", prefilter=False)
    return out * ratio


def _rigid_trust_step(grad: np.ndarray, params: RigidParams) -> RigidParams:
    caps = np.array([RIGID_SHIFT_CAP, RIGID_SHIFT_CAP, RIGID_ANGLE_CAP])
    mags = np.abs(grad)
    if mags.max() == 0.0:
        return params
    # Largest-relative component moves exactly its cap, others proportionally.
    scale = min(caps[k] / mags[k] for k in range(3) if mags[k] > 0)
    return RigidParams(*(params.as_array() - scale * grad))


def _run_level(
    pair_level: ReversedPePair,
    field: np.ndarray,
    rigid: RigidParams,
    config: OptimizerConfig,
    level_ops: Sequence[LevelOp],
    tau_level: float,
    allow_rigid: bool,
):
    """Alternating loop at one pyramid level; returns (image, field, rigid, trace)."""
    mean_int = 0.5 * float(pair_level.blip_up.mean() + pair_level.blip_down.mean())
    eps = config.epsilon_scale * mean_int**2
    obj = _Objective(pair_level, config.weights, level_ops)
    obj.set_rigid(rigid)
    obj.set_field(field)
    image = solve_image(field, pair_level, rigid, eps, project=False)
    obj.set_image(image)
    current = obj.value()
    trace = [current]
    state = FieldStepState(moment=np.zeros_like(field), beta=config.momentum)
    step = None
    converged = False
    for _ in range(config.max_iters):
        prev = current
        # Image solve: exact for the full-resolution data term; accept only if
        # the multiresolution objective does not increase.
        cand = solve_image(field, pair_level, rigid, eps, project=False)
        cand_loss, payload = obj.try_image(cand)
        if cand_loss <= current:
            image, current = cand, cand_loss
            obj.commit_image(payload)

        for _ in range(config.field_steps):
            g_field = obj.field_gradient()
            if not np.all(np.isfinite(g_field)):
                raise NumericalError("non-finite field gradient")
            gmax = float(np.abs(g_field).max())
            if gmax == 0.0:
                break
            if step is None:
                step = config.field_step_px / gmax
            accepted = False
            trial = step
            for _ in range(MAX_BACKTRACKS):
                cand_field, cand_state = field_step(
                    field, state, g_field, trial, tau_level, config.clamp_margin
                )
                cand_loss, payload = obj.try_field(cand_field)
                if cand_loss <= current:
                    field, state, current = cand_field, cand_state, cand_loss
                    obj.commit_field(payload)
                    step = min(trial * 1.25, 8.0 * config.field_step_px / gmax)
                    accepted = True
                    break
                trial *= 0.5
            if not accepted:
                break

        if allow_rigid:
            g_rigid = obj.rigid_gradient()
            cand_rigid = _rigid_trust_step(g_rigid, rigid)
            for _ in range(MAX_BACKTRACKS):
                cand_loss, payload = obj.try_rigid(cand_rigid)
                if cand_loss <= current:
                    rigid, current = cand_rigid, cand_loss
                    obj.commit_rigid(payload)
                    break
                delta = (cand_rigid.as_array() - rigid.as_array()) * 0.5
                if np.abs(delta).max() < 1e-12:
                    break
                cand_rigid = RigidParams(*(rigid.as_array() + delta))

        if not np.isfinite(current):
            raise NumericalError(f"objective diverged; trace={trace}")
        trace.append(current)
        if prev == 0.0 or (prev > 0 and abs(prev - current) / prev < config.tol):
            converged = True
            break
    return image, field, rigid, trace, converged


def estimate_slice(pair: ReversedPePair, config: OptimizerConfig) -> CorrectionResult:
    """Coarse-to-fine estimation for a single slice."""
    n_fe, n_pe = pair.shape
    top = config.pyramid_factors[0]
    pad_fe = (-n_fe) % top
    pad_pe = (-n_pe) % top
    bu = pair.blip_up
    bd = pair.blip_down
    if pad_fe or pad_pe:
        bu = np.pad(bu, ((0, pad_fe), (0, pad_pe)), mode="edge")
        bd = np.pad(bd, ((0, pad_fe), (0, pad_pe)), mode="edge")
    pair_full = ReversedPePair(bu, bd)
    weights = config.weights
    tau0 = weights.tau_at(0)

    field = None
    rigid = RigidParams()
    traces: list[list[float]] = []
    prev_factor = None
    converged = False
    for li, factor in enumerate(config.pyramid_factors):
        pair_level = ReversedPePair(
            downsample(pair_full.blip_up, factor), downsample(pair_full.blip_down, factor)
        )
        shape = pair_level.shape
        if field is None:
            field = np.zeros(shape)
        else:
            field = _upsample_field(field, shape, prev_factor / factor)
        tau_level = tau0 / factor
        is_finest = factor == 1
        if is_finest and config.multires.mode != "none":
            level_ops = build_level_ops(shape, config.multires, weights.lam_at(0), tau_level)
        else:
            level_ops = [
                LevelOp(omega=1.0, lam=weights.lam_at(0), tau=tau_level, label=f"pyr{factor}")
            ]
        # Rigid shifts live in level pixels; convert across grids.
        rigid_level = RigidParams(rigid.sx / factor, rigid.sy / factor, rigid.r)
        allow_rigid = config.rigid_enabled and (
            li == 0 or not config.rigid_freeze_after_coarsest
        )
        image, field, rigid_level, trace, converged = _run_level(
            pair_level, field, rigid_level, config, level_ops, tau_level, allow_rigid
        )
        rigid = RigidParams(rigid_level.sx * factor, rigid_level.sy * factor, rigid_level.r)
        traces.append(trace)
        prev_factor = factor

    mean_int = 0.5 * float(pair_full.blip_up.mean() + pair_full.blip_down.mean())
    image = solve_image(field, pair_full, rigid, config.epsilon_scale * mean_int**2)
    image = image[:n_fe, :n_pe]
    field = field[:n_fe, :n_pe]
    return CorrectionResult(
        image=image, field=field, rigid=rigid, loss_trace=traces, converged=converged
    )


def estimate_volume(
    pairs: Sequence[ReversedPePair], config: OptimizerConfig, threads: int = 1
) -> list[CorrectionResult]:
    """Independent per-slice estimation; thread count never changes outputs."""
    pairs = list(pairs)
    shapes = {p.shape for p in pairs}
    if len(shapes) > 1:
        raise InvalidInputError(f"inconsistent slice shapes: {sorted(shapes)}")

    def run(idx_pair):
        idx, p = idx_pair
        try:
            return estimate_slice(p, config)
        except Exception as e:
            raise type(e)(f"slice {idx}: {e}") from e

    if threads <= 1:
        return [run(ip) for ip in enumerate(pairs)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(run, enumerate(pairs)))
