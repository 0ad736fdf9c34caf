"""Minimal single-file NIfTI-1 ingestion (3D, int16 or float32 only).

Parses the fixed 348-byte header, applies slope/intercept scaling, and
converts to the native container format.  Writing NIfTI is out of scope.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .core import FormatError, UnsupportedFeatureError
from .container import VolumeContainer

__all__ = ["read_nifti_basic"]

HEADER_SIZE = 348
DT_INT16 = 4
DT_FLOAT32 = 16


def read_nifti_basic(path) -> VolumeContainer:
    raw = Path(path).read_bytes()
    if len(raw) < HEADER_SIZE:
        raise FormatError(f"{path}: file shorter than the {HEADER_SIZE}-byte header")
    for endian in ("<", ">"):
        (sizeof_hdr,) = struct.unpack_from(endian + "i", raw, 0)
        if sizeof_hdr == HEADER_SIZE:
            break
    else:
        raise FormatError(f"{path}: sizeof_hdr != {HEADER_SIZE} in either byte order")
    magic = raw[344:348]
    if magic not in (b"n+1\x00", b"ni1\x00"):
        raise FormatError(f"{path}: bad magic {magic!r}")
    if magic == b"ni1\x00":
        raise UnsupportedFeatureError(f"{path}: two-file NIfTI pairs are not supported")
    dim = struct.unpack_from(endian + "8h", raw, 40)
    ndim = dim[0]
    if ndim != 3:
        raise UnsupportedFeatureError(f"{path}: {ndim}D volumes are not supported (3D only)")
    nx, ny, nz = dim[1], dim[2], dim[3]
    (datatype,) = struct.unpack_from(endian + "h", raw, 70)
    (bitpix,) = struct.unpack_from(endian + "h", raw, 72)
    (vox_offset,) = struct.unpack_from(endian + "f", raw, 108)
    scl_slope, scl_inter = struct.unpack_from(endian + "2f", raw, 112)
    if datatype == DT_INT16:
        dtype = np.dtype(endian + "i2")
    elif datatype == DT_FLOAT32:
        dtype = np.dtype(endian + "f4")
    else:
        raise UnsupportedFeatureError(
            f"{path}: datatype code {datatype} unsupported (int16 and float32 only)"
        )
    if bitpix != dtype.itemsize * 8:
        raise FormatError(f"{path}: bitpix {bitpix} inconsistent with datatype {datatype}")
    offset = int(vox_offset)
    count = nx * ny * nz
    if len(raw) < offset + count * dtype.itemsize:
        raise FormatError(
            f"{path}: payload at byte offset {offset} truncated "
            f"({len(raw) - offset} bytes, expected {count * dtype.itemsize})"
        )
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=offset).astype(np.float64)
    if scl_slope != 0.0:
        data = data * scl_slope + scl_inter
    # x varies fastest on disk; expose as (slices=z, rows=y, cols=x).
    vol = data.reshape(nz, ny, nx)
    prov = {"source": str(path), "format": "nifti1"}
    srows = struct.unpack_from(endian + "12f", raw, 280)
    prov["affine"] = " ".join(f"{v:g}" for v in srows)
    return VolumeContainer(kind="image", data=vol.astype(np.float32), provenance=prov)
