"""Shared data types, exceptions, and validation helpers."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np


class InvalidInputError(ValueError):
    """Inputs violate a documented precondition (shape, finiteness, range)."""


class FormatError(ValueError):
    """A file does not conform to its declared on-disk layout."""


class UnsupportedFeatureError(FormatError):
    """A file is well formed but uses a feature outside the supported subset."""


class NumericalError(RuntimeError):
    """An iterative or linear-algebra step failed to produce a usable result."""


class PePolarity(Enum):
    """Phase-encode blip polarity. BLIP_DOWN negates the displacement field."""

    BLIP_UP = "bu"
    BLIP_DOWN = "bd"


@dataclass(frozen=True)
class ReversedPePair:
    """A measured blip-up / blip-down slice pair (rows = FE, columns = PE)."""

    blip_up: np.ndarray
    blip_down: np.ndarray

    def __post_init__(self):
        bu = np.asarray(self.blip_up, dtype=float)
        bd = np.asarray(self.blip_down, dtype=float)
        if bu.shape != bd.shape:
            raise InvalidInputError(
                f"blip-up shape {bu.shape} != blip-down shape {bd.shape}"
            )
        check_slice(bu, "blip_up")
        check_slice(bd, "blip_down")
        object.__setattr__(self, "blip_up", bu)
        object.__setattr__(self, "blip_down", bd)

    @property
    def shape(self) -> tuple[int, int]:
        return self.blip_up.shape


def check_slice(data: np.ndarray, name: str = "image") -> np.ndarray:
    """Validate a 2D slice: finite, n_FE >= 1, n_PE >= 2."""
    arr = np.asarray(data, dtype=float)
    if arr.ndim != 2:
        raise InvalidInputError(f"{name} must be 2D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 2:
        raise InvalidInputError(f"{name} shape {arr.shape} too small (need >=1 x >=2)")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite values")
    return arr


def check_same_shape(a: np.ndarray, b: np.ndarray, what: str = "inputs") -> None:
    if a.shape != b.shape:
        raise InvalidInputError(f"{what} shapes differ: {a.shape} vs {b.shape}")
