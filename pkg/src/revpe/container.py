"""On-disk volume container: a small text header plus float32 payload.

Layout: UTF-8 header lines terminated by a line "---", then little-endian
32-bit IEEE floats, row-major within a slice, slices consecutive.  Header
lines are `key=value`; provenance entries use a `prov.` key prefix.  The
first line must be the magic string EPIV1.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .core import FormatError, InvalidInputError

__all__ = ["VolumeContainer", "read_volume", "write_volume", "KIND_UNITS"]

MAGIC = "EPIV1"
SEPARATOR = b"---\n"
KIND_UNITS = {"image": "au", "field": "pixels", "mask": "binary"}


@dataclass
class VolumeContainer:
    kind: str
    data: np.ndarray  # (n_slices, n_FE, n_PE), float32
    units: str = ""
    pe_axis: int = 2  # payload axis carrying the PE direction
    provenance: dict[str, str] = dc_field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KIND_UNITS:
            raise InvalidInputError(f"unknown container kind {self.kind!r}")
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim == 2:
            arr = arr[None, ...]
        if arr.ndim != 3:
            raise InvalidInputError(f"volume must be 3D, got shape {arr.shape}")
        self.data = arr
        if not self.units:
            self.units = KIND_UNITS[self.kind]
        if self.units != KIND_UNITS[self.kind]:
            raise FormatError(
                f"kind {self.kind!r} requires units {KIND_UNITS[self.kind]!r}, "
                f"got {self.units!r}"
            )

    @property
    def slices(self) -> list[np.ndarray]:
        return [np.asarray(s, dtype=float) for s in self.data]


def write_volume(container: VolumeContainer, path) -> None:
    dims = container.data.shape
    lines = [
        MAGIC,
        f"kind={container.kind}",
        f"dims={dims[0]} {dims[1]} {dims[2]}",
        f"pe_axis={container.pe_axis}",
        f"units={container.units}",
    ]
    for k in sorted(container.provenance):
        v = str(container.provenance[k])
        if "\n" in v or "=" in k:
            raise InvalidInputError(f"provenance entry {k!r} not representable")
        lines.append(f"prov.{k}={v}")
    payload = np.ascontiguousarray(container.data, dtype="<f4").tobytes()
    Path(path).write_bytes("\n".join(lines).encode() + b"\n" + SEPARATOR + payload)


def read_volume(path) -> VolumeContainer:
    raw = Path(path).read_bytes()
    sep = raw.find(SEPARATOR)
    if sep < 0:
        raise FormatError(f"{path}: missing header terminator '---'")
    header = raw[:sep].decode("utf-8", errors="replace").splitlines()
    payload_off = sep + len(SEPARATOR)
    if not header or header[0] != MAGIC:
        raise FormatError(f"{path}: bad magic at byte 0 (expected {MAGIC!r})")
    fields: dict[str, str] = {}
    prov: dict[str, str] = {}
    for line in header[1:]:
        if not line.strip():
            continue
        if "=" not in line:
            raise FormatError(f"{path}: malformed header line {line!r}")
        k, v = line.split("=", 1)
        if k.startswith("prov."):
            prov[k[5:]] = v
        else:
            fields[k] = v
    for req in ("kind", "dims", "units"):
        if req not in fields:
            raise FormatError(f"{path}: missing header field {req!r}")
    try:
        dims = tuple(int(x) for x in fields["dims"].split())
    except ValueError as e:
        raise FormatError(f"{path}: bad dims {fields['dims']!r}") from e
    if len(dims) != 3 or any(d < 1 for d in dims):
        raise FormatError(f"{path}: dims must be three positive integers, got {dims}")
    kind = fields["kind"]
    if kind not in KIND_UNITS:
        raise FormatError(f"{path}: unknown kind {kind!r}")
    if fields["units"] != KIND_UNITS[kind]:
        raise FormatError(
            f"{path}: kind {kind!r} requires units {KIND_UNITS[kind]!r}, "
            f"got {fields['units']!r}"
        )
    expected = int(np.prod(dims)) * 4
    actual = len(raw) - payload_off
    if actual != expected:
        raise FormatError(
            f"{path}: payload at byte offset {payload_off} has {actual} bytes, "
            f"expected {expected} for dims {dims}"
        )
    data = np.frombuffer(raw, dtype="<f4", offset=payload_off).reshape(dims).copy()
    return VolumeContainer(
        kind=kind,
        data=data,
        units=fields["units"],
        pe_axis=int(fields.get("pe_axis", 2)),
        provenance=prov,
    )
