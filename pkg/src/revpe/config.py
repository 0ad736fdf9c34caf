"""Runtime configuration files: key-value sections with strict key checking.

Round-trip guarantee: parsing a file, serializing, and parsing again yields
the same configuration with every default made explicit.
"""

from __future__ import annotations

import configparser
import io
import math
from pathlib import Path

from .core import FormatError
from .losses import LossWeights
from .multires import MultiresConfig
from .optimize import OptimizerConfig
from .phantom import PhantomSpec
from .rigid import RigidParams

__all__ = [
    "default_config",
    "parse_config",
    "serialize_config",
    "load_config",
    "save_config",
    "parse_phantom_spec",
    "serialize_phantom_spec",
]

_SCHEMA = {
    "loss": {"lambda", "gamma", "tau", "valley_scale"},
    "multires": {"mode", "blur_sigmas", "scale_factors", "weights"},
    "optimizer": {
        "pyramid_factors",
        "max_iters",
        "field_steps",
        "field_step_px",
        "momentum",
        "epsilon_scale",
        "tol",
        "rigid_enabled",
        "rigid_freeze_after_coarsest",
        "clamp_margin",
    },
}

_PHANTOM_SCHEMA = {
    "phantom": {
        "n_fe",
        "n_pe",
        "n_ellipses",
        "n_bumps",
        "field_amplitude",
        "noise_sd",
        "seed",
        "rigid_sx",
        "rigid_sy",
        "rigid_r_deg",
    }
}


def default_config() -> OptimizerConfig:
    return OptimizerConfig()


def _reader(text: str, schema) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise FormatError(f"bad config syntax: {e}") from e
    for section in cp.sections():
        if section not in schema:
            raise FormatError(f"unknown config section [{section}]")
        for key in cp[section]:
            if key not in schema[section]:
                raise FormatError(f"unknown key {key!r} in section [{section}]")
    return cp


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.split())


def parse_config(text: str) -> OptimizerConfig:
    cp = _reader(text, _SCHEMA)
    base = OptimizerConfig()
    loss = cp["loss"] if cp.has_section("loss") else {}
    mr = cp["multires"] if cp.has_section("multires") else {}
    opt = cp["optimizer"] if cp.has_section("optimizer") else {}
    try:
        multires = MultiresConfig(
            mode=mr.get("mode", base.multires.mode),
            blur_sigmas=_floats(mr["blur_sigmas"]) if "blur_sigmas" in mr else base.multires.blur_sigmas,
            scale_factors=_ints(mr["scale_factors"]) if "scale_factors" in mr else base.multires.scale_factors,
            weights=_floats(mr["weights"]) if "weights" in mr else None,
        )
        weights = LossWeights(
            omega=multires.weights,
            lam=float(loss.get("lambda", base.weights.lam)),
            gamma=float(loss.get("gamma", base.weights.gamma)),
            tau=float(loss.get("tau", base.weights.tau)),
            valley_scale=float(loss.get("valley_scale", base.weights.valley_scale)),
        )
        return OptimizerConfig(
            pyramid_factors=_ints(opt["pyramid_factors"]) if "pyramid_factors" in opt else base.pyramid_factors,
            max_iters=int(opt.get("max_iters", base.max_iters)),
            field_steps=int(opt.get("field_steps", base.field_steps)),
            field_step_px=float(opt.get("field_step_px", base.field_step_px)),
            momentum=float(opt.get("momentum", base.momentum)),
            epsilon_scale=float(opt.get("epsilon_scale", base.epsilon_scale)),
            tol=float(opt.get("tol", base.tol)),
            rigid_enabled=_to_bool(opt.get("rigid_enabled", str(base.rigid_enabled))),
            rigid_freeze_after_coarsest=_to_bool(
                opt.get("rigid_freeze_after_coarsest", str(base.rigid_freeze_after_coarsest))
            ),
            clamp_margin=float(opt.get("clamp_margin", base.clamp_margin)),
            weights=weights,
            multires=multires,
        )
    except ValueError as e:
        raise FormatError(f"bad config value: {e}") from e


def _to_bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("true", "1", "yes", "on"):
        return True
    if t in ("false", "0", "no", "off"):
        return False
    raise FormatError(f"bad boolean {text!r}")


def serialize_config(cfg: OptimizerConfig) -> str:
    w = cfg.weights
    mr = cfg.multires
    lam_s = " ".join(repr(x) for x in w.lam) if isinstance(w.lam, tuple) else repr(w.lam)
    tau_s = " ".join(repr(x) for x in w.tau) if isinstance(w.tau, tuple) else repr(w.tau)
    buf = io.StringIO()
    cp = configparser.ConfigParser(interpolation=None)
    cp["loss"] = {
        "lambda": lam_s,
        "gamma": repr(w.gamma),
        "tau": tau_s,
        "valley_scale": repr(w.valley_scale),
    }
    cp["multires"] = {
        "mode": mr.mode,
        "blur_sigmas": " ".join(repr(x) for x in mr.blur_sigmas),
        "scale_factors": " ".join(str(x) for x in mr.scale_factors),
        "weights": " ".join(repr(x) for x in mr.weights),
    }
    cp["optimizer"] = {
        "pyramid_factors": " ".join(str(x) for x in cfg.pyramid_factors),
        "max_iters": str(cfg.max_iters),
        "field_steps": str(cfg.field_steps),
        "field_step_px": repr(cfg.field_step_px),
        "momentum": repr(cfg.momentum),
        "epsilon_scale": repr(cfg.epsilon_scale),
        "tol": repr(cfg.tol),
        "rigid_enabled": str(cfg.rigid_enabled).lower(),
        "rigid_freeze_after_coarsest": str(cfg.rigid_freeze_after_coarsest).lower(),
        "clamp_margin": repr(cfg.clamp_margin),
    }
    cp.write(buf)
    return buf.getvalue()


def load_config(path) -> OptimizerConfig:
    return parse_config(Path(path).read_text())


def save_config(cfg: OptimizerConfig, path) -> None:
    Path(path).write_text(serialize_config(cfg))


def parse_phantom_spec(text: str) -> PhantomSpec:
    cp = _reader(text, _PHANTOM_SCHEMA)
    sec = cp["phantom"] if cp.has_section("phantom") else {}
    base = PhantomSpec()
    try:
        rigid = RigidParams(
            sx=float(sec.get("rigid_sx", 0.0)),
            sy=float(sec.get("rigid_sy", 0.0)),
            r=math.radians(float(sec.get("rigid_r_deg", 0.0))),
        )
        return PhantomSpec(
            n_fe=int(sec.get("n_fe", base.n_fe)),
            n_pe=int(sec.get("n_pe", base.n_pe)),
            n_ellipses=int(sec.get("n_ellipses", base.n_ellipses)),
            n_bumps=int(sec.get("n_bumps", base.n_bumps)),
            field_amplitude=float(sec.get("field_amplitude", base.field_amplitude)),
            noise_sd=float(sec.get("noise_sd", base.noise_sd)),
            seed=int(sec.get("seed", base.seed)),
            rigid=rigid,
        )
    except ValueError as e:
        raise FormatError(f"bad phantom spec value: {e}") from e


def serialize_phantom_spec(spec: PhantomSpec) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    cp["phantom"] = {
        "n_fe": str(spec.n_fe),
        "n_pe": str(spec.n_pe),
        "n_ellipses": str(spec.n_ellipses),
        "n_bumps": str(spec.n_bumps),
        "field_amplitude": repr(spec.field_amplitude),
        "noise_sd": repr(spec.noise_sd),
        "seed": str(spec.seed),
        "rigid_sx": repr(spec.rigid.sx),
        "rigid_sy": repr(spec.rigid.sy),
        "rigid_r_deg": repr(math.degrees(spec.rigid.r)),
    }
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()
