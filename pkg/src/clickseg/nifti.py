"""Minimal NIfTI-1 single-file (.nii / .nii.gz) reader and writer.

Covers exactly what the rest of the package needs: 3D volumes, voxel
spacing, a diagonal sform affine for the origin, and the common scalar
datatypes. Arrays are exchanged in (z, y, x) index order; on disk the data
is stored x-fastest as NIfTI expects, so a C-contiguous (z, y, x) array
maps 1:1 onto the file layout.
"""

from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np

HEADER_SIZE = 348
VOX_OFFSET = 352.0
MAGIC = b"n+1\x00"

# NIfTI-1 datatype codes we read/write.
_DTYPES = {
    2: np.uint8,
    4: np.int16,
    8: np.int32,
    16: np.float32,
    64: np.float64,
    256: np.int8,
    512: np.uint16,
    768: np.uint32,
}
_DTYPE_CODES = {np.dtype(v): k for k, v in _DTYPES.items()}


class NiftiError(ValueError):
    """Malformed or unsupported NIfTI file."""


def _open(path, mode):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, mode)
    return open(path, mode)


def _write_bytes(path, blob: bytes) -> None:
    """Write the file, gzip-compressed for .gz paths with mtime pinned to 0
    so identical volumes produce identical bytes across runs."""
    path = Path(path)
    if path.suffix == ".gz":
        blob = gzip.compress(blob, mtime=0)
    with open(path, "wb") as f:
        f.write(blob)


def read_nifti(path):
    """Read a 3D NIfTI-1 file.

    Returns (values, spacing, origin) where values is a (z, y, x) array and
    spacing/origin are (z, y, x) tuples in mm.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such volume: {path}")
    with _open(path, "rb") as f:
        hdr = f.read(HEADER_SIZE)
        if len(hdr) < HEADER_SIZE:
            raise NiftiError(f"{path}: truncated header")
        (sizeof_hdr,) = struct.unpack("<i", hdr[:4])
        endian = "<"
        if sizeof_hdr != HEADER_SIZE:
            (sizeof_hdr,) = struct.unpack(">i", hdr[:4])
            if sizeof_hdr != HEADER_SIZE:
                raise NiftiError(f"{path}: not a NIfTI-1 file")
            endian = ">"
        if hdr[344:347] != b"n+1":
            raise NiftiError(f"{path}: unsupported magic {hdr[344:348]!r}")

        dim = struct.unpack(endian + "8h", hdr[40:56])
        datatype, _bitpix = struct.unpack(endian + "2h", hdr[70:74])
        pixdim = struct.unpack(endian + "8f", hdr[76:108])
        (vox_offset,) = struct.unpack(endian + "f", hdr[108:112])
        scl_slope, scl_inter = struct.unpack(endian + "2f", hdr[112:120])
        sform_code = struct.unpack(endian + "h", hdr[254:256])[0]
        srow = np.array(struct.unpack(endian + "12f", hdr[280:328])).reshape(3, 4)

        ndim = dim[0]
        if ndim == 4 and dim[4] == 1:
            ndim = 3
        if ndim != 3:
            raise NiftiError(f"{path}: expected a 3D image, got dim={dim[0]}")
        nx, ny, nz = dim[1], dim[2], dim[3]
        if min(nx, ny, nz) < 1:
            raise NiftiError(f"{path}: bad dimensions {dim[1:4]}")
        if datatype not in _DTYPES:
            raise NiftiError(f"{path}: unsupported datatype code {datatype}")
        dtype = np.dtype(_DTYPES[datatype]).newbyteorder(endian)

        f.seek(int(vox_offset))
        raw = f.read(nx * ny * nz * dtype.itemsize)
        if len(raw) != nx * ny * nz * dtype.itemsize:
            raise NiftiError(f"{path}: truncated data section")

    # File is x-fastest; a C-order reshape to (z, y, x) matches it directly.
    values = np.frombuffer(raw, dtype=dtype).reshape((nz, ny, nx))
    values = values.astype(values.dtype.newbyteorder("="))
    if scl_slope not in (0.0, 1.0) or scl_inter != 0.0:
        slope = scl_slope if scl_slope != 0.0 else 1.0
        values = values.astype(np.float32) * slope + scl_inter

    spacing = (float(pixdim[3]), float(pixdim[2]), float(pixdim[1]))
    if sform_code > 0:
        origin = (float(srow[2, 3]), float(srow[1, 3]), float(srow[0, 3]))
    else:
        qoffset = struct.unpack(endian + "3f", hdr[268:280])
        origin = (float(qoffset[2]), float(qoffset[1]), float(qoffset[0]))
    return values, spacing, origin


def write_nifti(path, values, spacing, origin=(0.0, 0.0, 0.0)):
    """Write a (z, y, x) array as a single-file NIfTI-1 volume."""
    values = np.ascontiguousarray(values)
    if values.ndim != 3:
        raise NiftiError(f"can only write 3D volumes, got shape {values.shape}")
    if values.dtype == np.bool_:
        values = values.astype(np.uint8)
    if values.dtype == np.int64:
        values = values.astype(np.int32)
    dtype = np.dtype(values.dtype)
    if dtype not in _DTYPE_CODES:
        values = values.astype(np.float32)
        dtype = np.dtype(np.float32)

    nz, ny, nx = values.shape
    sz, sy, sx = (float(s) for s in spacing)
    oz, oy, ox = (float(o) for o in origin)

    hdr = bytearray(HEADER_SIZE)
    struct.pack_into("<i", hdr, 0, HEADER_SIZE)
    hdr[38] = ord("r")
    struct.pack_into("<8h", hdr, 40, 3, nx, ny, nz, 1, 1, 1, 1)
    struct.pack_into("<2h", hdr, 70, _DTYPE_CODES[dtype], dtype.itemsize * 8)
    struct.pack_into("<8f", hdr, 76, 1.0, sx, sy, sz, 0.0, 0.0, 0.0, 0.0)
    struct.pack_into("<f", hdr, 108, VOX_OFFSET)
    struct.pack_into("<2f", hdr, 112, 1.0, 0.0)  # scl_slope, scl_inter
    hdr[123] = 2  # xyzt_units: millimetres
    struct.pack_into("<2h", hdr, 252, 0, 1)  # qform off, sform aligned
    struct.pack_into("<3f", hdr, 268, ox, oy, oz)
    struct.pack_into("<4f", hdr, 280, sx, 0.0, 0.0, ox)
    struct.pack_into("<4f", hdr, 296, 0.0, sy, 0.0, oy)
    struct.pack_into("<4f", hdr, 312, 0.0, 0.0, sz, oz)
    hdr[344:348] = MAGIC

    # 4 zero bytes: no header extensions
    _write_bytes(path, bytes(hdr) + b"\x00\x00\x00\x00" + values.tobytes())
