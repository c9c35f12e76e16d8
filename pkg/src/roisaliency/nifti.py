"""Minimal read-only NIfTI-1 loader.

Supports the subset this pipeline needs: single-file .nii, magic "n+1",
float32 or int16 data, 3D or 4D. Orientation and affine metadata are ignored
because inputs are assumed to be pre-registered to a common grid; the scanner
scaling (scl_slope/scl_inter) is applied when present.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .data import DataError, ensure_finite

HEADER_SIZE = 348
_MAGIC = b"n+1\x00"
_DATATYPES = {4: "i2", 16: "f4"}  # int16, float32


class NiftiError(DataError):
    """Unsupported or corrupt NIfTI file."""


def load_nifti(path: str | Path) -> np.ndarray:
    """Load a .nii volume as a float64 array with axes (x, y, z, t).

    3D files come back with a length-1 time axis. Values are scaled by
    scl_slope/scl_inter when scl_slope is nonzero.
    """
    path = Path(path)
    with open(path, "rb") as fh:
        header = fh.read(HEADER_SIZE)
        if len(header) < HEADER_SIZE:
            raise NiftiError(f"{path}: file shorter than the {HEADER_SIZE}-byte NIfTI-1 header")

        sizeof_hdr_le = struct.unpack("<i", header[0:4])[0]
        sizeof_hdr_be = struct.unpack(">i", header[0:4])[0]
        if sizeof_hdr_le == HEADER_SIZE:
            endian = "<"
        elif sizeof_hdr_be == HEADER_SIZE:
            endian = ">"
        else:
            raise NiftiError(f"{path}: not a NIfTI-1 file (sizeof_hdr != {HEADER_SIZE})")

        if header[344:348] != _MAGIC:
            raise NiftiError(f"{path}: unsupported magic {header[344:348]!r}, need b'n+1\\x00'")

        dim = struct.unpack(endian + "8h", header[40:56])
        datatype = struct.unpack(endian + "h", header[70:72])[0]
        vox_offset = struct.unpack(endian + "f", header[108:112])[0]
        scl_slope = struct.unpack(endian + "f", header[112:116])[0]
        scl_inter = struct.unpack(endian + "f", header[116:120])[0]

        ndim = dim[0]
        if ndim not in (3, 4):
            raise NiftiError(f"{path}: dim[0]={ndim} unsupported, need 3 or 4")
        if datatype not in _DATATYPES:
            raise NiftiError(f"{path}: datatype code {datatype} unsupported (float32/int16 only)")
        extents = dim[1 : 1 + ndim]
        if any(e < 1 for e in extents):
            raise NiftiError(f"{path}: non-positive extent in dim={extents}")
        nx, ny, nz = extents[0], extents[1], extents[2]
        nt = extents[3] if ndim == 4 else 1

        offset = int(vox_offset) if vox_offset else HEADER_SIZE + 4
        if offset < HEADER_SIZE:
            raise NiftiError(f"{path}: vox_offset {offset} inside the header")
        fh.seek(offset)
        dt = np.dtype(endian + _DATATYPES[datatype])
        count = nx * ny * nz * nt
        raw = fh.read(count * dt.itemsize)
        if len(raw) < count * dt.itemsize:
            raise NiftiError(
                f"{path}: truncated data section ({len(raw)} bytes, expected {count * dt.itemsize})"
            )

    values = np.frombuffer(raw, dtype=dt, count=count).astype(np.float64)
    slope_valid = np.isfinite(scl_slope) and scl_slope != 0.0
    if slope_valid and not (scl_slope == 1.0 and scl_inter == 0.0):
        values = values * np.float64(scl_slope) + np.float64(scl_inter)
    # nifti stores x fastest; produce a C-contiguous (x, y, z, t) array
    series = np.ascontiguousarray(values.reshape((nx, ny, nz, nt), order="F"))
    return ensure_finite(series, f"{path}")
