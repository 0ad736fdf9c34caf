"""Per-row distortion operators built from a displacement field.

Each frequency-encode (FE) line of an image is distorted independently along
the phase-encode (PE) axis by a dense n_PE x n_PE matrix.  Column j of the
matrix places source pixel j at its displaced destination through a sinc
interpolation kernel; destinations are clipped to the field of view, so
out-of-range columns deposit at the edge.  Blip-down acquisitions use the
negated field.

Entries use 0-based destination positions internally; the zero-field operator
is the exact identity, which pins down the index convention.
"""

from __future__ import annotations

import numpy as np

from .core import InvalidInputError, PePolarity, check_same_shape, check_slice

__all__ = [
    "sinc_kernel",
    "sinc_kernel_deriv",
    "build_k_row",
    "build_k",
    "forward_distort",
    "unwarp",
    "density_map",
]


def sinc_kernel(x: np.ndarray) -> np.ndarray:
    """Normalized sinc: sin(pi x) / (pi x), value 1 at x = 0."""
    return np.sinc(x)


def sinc_kernel_deriv(x: np.ndarray) -> np.ndarray:
    """Derivative of the normalized sinc kernel; 0 at x = 0."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = np.abs(x) < 1e-6
    xs = np.where(small, 1.0, x)
    out = (np.cos(np.pi * xs) - np.sinc(xs)) / xs
    # Series expansion near 0: sinc'(x) ~ -pi^2 x / 3
    out = np.where(small, -(np.pi**2) * x / 3.0, out)
    return out


def _destinations(field: np.ndarray, polarity: PePolarity):
    """Clipped 0-based destination positions and the unclipped mask.

    field may be 1D (one row) or 2D (n_FE x n_PE); positions have the same
    shape.  The mask is False where clipping froze the position (derivative
    with respect to the field is zero there).
    """
    signed = field if polarity is PePolarity.BLIP_UP else -field
    n_pe = field.shape[-1]
    j = np.arange(n_pe, dtype=float)
    raw = signed + j
    pos = np.clip(raw, 0.0, float(n_pe - 1))
    unclipped = (raw > 0.0) & (raw < float(n_pe - 1))
    return pos, unclipped


def build_k_row(
    field_row: np.ndarray, polarity: PePolarity = PePolarity.BLIP_UP
) -> np.ndarray:
    """Dense n_PE x n_PE distortion matrix for a single FE line.

    Entry (k, j) = sinc(clip(field'(j) + j) - k) with field' negated for
    blip-down.  A zero field row yields the exact identity.
    """
    row = np.asarray(field_row, dtype=float)
    if row.ndim != 1 or row.size < 2:
        raise InvalidInputError(f"field row must be 1D with >=2 entries, got {row.shape}")
    if not np.all(np.isfinite(row)):
        raise InvalidInputError("field row contains non-finite values")
    pos, _ = _destinations(row, polarity)
    k = np.arange(row.size, dtype=float)
    return sinc_kernel(pos[None, :] - k[:, None])


def build_k(field: np.ndarray, polarity: PePolarity) -> np.ndarray:
    """Stack of per-row matrices, shape (n_FE, n_PE, n_PE)."""
    field = check_slice(field, "field")
    pos, _ = _destinations(field, polarity)
    k = np.arange(field.shape[1], dtype=float)
    return sinc_kernel(pos[:, None, :] - k[None, :, None])


def build_k_with_deriv(field: np.ndarray, polarity: PePolarity):
    """K stack plus entrywise derivative with respect to the signed position.

    Returns (K, dK, sign_mask) where dK[i, k, j] is the derivative of
    K[i, k, j] with respect to field[i, j]; clipped columns have zero
    derivative and blip-down carries the -1 chain factor in sign_mask.
    """
    field = check_slice(field, "field")
    pos, unclipped = _destinations(field, polarity)
    k = np.arange(field.shape[1], dtype=float)
    xi = pos[:, None, :] - k[None, :, None]
    pix = np.pi * xi
    sinpix = np.sin(pix)
    cospix = np.cos(pix)
    with np.errstate(divide="ignore", invalid="ignore"):
        kmat = np.where(np.abs(xi) < 1e-12, 1.0, sinpix / pix)
        dk = np.where(
            np.abs(xi) < 1e-6, -(np.pi**2) * xi / 3.0, (cospix - kmat) / xi
        )
    sign = 1.0 if polarity is PePolarity.BLIP_UP else -1.0
    return kmat, dk, sign * unclipped.astype(float)


def forward_distort(
    image: np.ndarray, field: np.ndarray, polarity: PePolarity
) -> np.ndarray:
    """Distort each FE line of `image` by its per-row operator.

    Many-to-one destination mappings sum intensities, emulating pileup.
    """
    image = check_slice(image, "image")
    field = check_slice(field, "field")
    check_same_shape(image, field, "image/field")
    kmat = build_k(field, polarity)
    return np.einsum("ikj,ij->ik", kmat, image)


def density_map(field: np.ndarray, polarity: PePolarity) -> np.ndarray:
    """Pileup density map: each row is its distortion matrix times all-ones."""
    field = check_slice(field, "field")
    kmat = build_k(field, polarity)
    return kmat.sum(axis=2)


def unwarp(
    image: np.ndarray,
    field: np.ndarray,
    polarity: PePolarity,
    compensate: bool = False,
) -> np.ndarray:
    """Transpose-operator unwarping of a distorted slice.

    With `compensate`, the input is first weighted by clamp(1/W, 0, 1) where W
    is the density map, suppressing double counting in pileup regions.
    """
    image = check_slice(image, "image")
    field = check_slice(field, "field")
    check_same_shape(image, field, "image/field")
    kmat = build_k(field, polarity)
    data = image
    if compensate:
        dens = kmat.sum(axis=2)
        with np.errstate(divide="ignore"):
            inv = np.where(dens == 0.0, np.inf, 1.0 / dens)
        data = image * np.clip(inv, 0.0, 1.0)
    return np.einsum("ijk,ij->ik", kmat, data)
