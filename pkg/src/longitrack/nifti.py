"""Minimal NIfTI-1 reader/writer (.nii / .nii.gz).

Covers what this package emits: 3D scalar volumes and 4D displacement
fields (vector intent, fifth NIfTI dimension = 3). Arrays are exchanged in
(z, y, x[, component]) index order with spacing/origin vectors in the same
order; on disk the x axis is fastest-varying as NIfTI mandates.
"""

from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np

from .errors import ParseError

_DTYPES = {
    2: np.dtype(np.uint8),
    4: np.dtype(np.int16),
    8: np.dtype(np.int32),
    16: np.dtype(np.float32),
    64: np.dtype(np.float64),
    512: np.dtype(np.uint16),
}
_CODES = {v: k for k, v in _DTYPES.items()}
_INTENT_VECTOR = 1007


def _open_read(path: Path):
    with open(path, "rb") as f:
        magic = f.read(2)
    if magic == b"\x1f\x8b":
        return gzip.open(path, "rb")
    return open(path, "rb")


def save_nifti(path, array: np.ndarray, spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)) -> None:
    """Write a (z,y,x) or (z,y,x,3) array as NIfTI-1.

    Vector fields are stored with the component on the fifth NIfTI axis and
    NIFTI_INTENT_VECTOR set.
    """
    path = Path(path)
    array = np.asarray(array)
    if array.dtype not in _CODES:
        array = array.astype(np.float32)
    is_vector = array.ndim == 4
    if is_vector:
        if array.shape[-1] != 3:
            raise ValueError(f"vector arrays must end in a length-3 axis, got {array.shape}")
        nz, ny, nx = array.shape[:3]
        dim = (5, nx, ny, nz, 1, 3, 1, 1)
        payload = np.ascontiguousarray(np.moveaxis(array, -1, 0))  # (c,z,y,x): x fastest on disk
    elif array.ndim == 3:
        nz, ny, nx = array.shape
        dim = (3, nx, ny, nz, 1, 1, 1, 1)
        payload = np.ascontiguousarray(array)
    else:
        raise ValueError(f"only 3D or (z,y,x,3) arrays supported, got shape {array.shape}")

    sz, sy, sx = (float(s) for s in spacing)
    oz, oy, ox = (float(o) for o in origin)
    hdr = bytearray(352)
    struct.pack_into("<i", hdr, 0, 348)
    struct.pack_into("<8h", hdr, 40, *dim)
    struct.pack_into("<h", hdr, 68, _INTENT_VECTOR if is_vector else 0)
    struct.pack_into("<h", hdr, 70, _CODES[array.dtype])
    struct.pack_into("<h", hdr, 72, array.dtype.itemsize * 8)
    struct.pack_into("<8f", hdr, 76, 1.0, sx, sy, sz, 0.0, 0.0, 0.0, 0.0)
    struct.pack_into("<f", hdr, 108, 352.0)  # vox_offset
    struct.pack_into("<2f", hdr, 112, 1.0, 0.0)  # scl_slope / scl_inter
    struct.pack_into("<2h", hdr, 252, 0, 1)  # qform off, sform aligned
    struct.pack_into("<4f", hdr, 280, sx, 0.0, 0.0, ox)
    struct.pack_into("<4f", hdr, 296, 0.0, sy, 0.0, oy)
    struct.pack_into("<4f", hdr, 312, 0.0, 0.0, sz, oz)
    hdr[344:348] = b"n+1\x00"

    opener = gzip.open if path.name.endswith(".gz") else open
    with opener(path, "wb") as f:
        f.write(bytes(hdr))
        f.write(payload.astype(payload.dtype.newbyteorder("<"), copy=False).tobytes())


def load_nifti(path):
    """Read a NIfTI-1 file; returns (array, spacing_zyx, origin_zyx)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"NIfTI file not found: {path}")
    with _open_read(path) as f:
        hdr = f.read(352)
        if len(hdr) < 348:
            raise ParseError(f"{path}: truncated NIfTI header")
        endian = "<"
        if struct.unpack_from("<i", hdr, 0)[0] != 348:
            endian = ">"
            if struct.unpack_from(">i", hdr, 0)[0] != 348:
                raise ParseError(f"{path}: not a NIfTI-1 file (bad sizeof_hdr)")
        if hdr[344:347] not in (b"n+1", b"ni1"):
            raise ParseError(f"{path}: bad NIfTI magic {hdr[344:348]!r}")
        dim = struct.unpack_from(f"{endian}8h", hdr, 40)
        dtype_code = struct.unpack_from(f"{endian}h", hdr, 70)[0]
        pixdim = struct.unpack_from(f"{endian}8f", hdr, 76)
        vox_offset = int(struct.unpack_from(f"{endian}f", hdr, 108)[0])
        slope, inter = struct.unpack_from(f"{endian}2f", hdr, 112)
        srow = [struct.unpack_from(f"{endian}4f", hdr, 280 + 16 * i) for i in range(3)]
        sform = struct.unpack_from(f"{endian}h", hdr, 254)[0]
        if dtype_code not in _DTYPES:
            raise ParseError(f"{path}: unsupported NIfTI datatype code {dtype_code}")
        ndim = dim[0]
        if ndim not in (3, 4, 5):
            raise ParseError(f"{path}: unsupported dimensionality {ndim}")
        nx, ny, nz = dim[1], dim[2], dim[3]
        extra = [d for d in dim[4:1 + ndim] if d > 1]
        n_comp = extra[0] if extra else 1
        if len(extra) > 1:
            raise ParseError(f"{path}: more than one non-spatial axis is not supported")
        if vox_offset > 352:
            f.read(vox_offset - 352)
        dtype = _DTYPES[dtype_code].newbyteorder(endian)
        count = nx * ny * nz * n_comp
        raw = f.read(count * dtype.itemsize)
        if len(raw) < count * dtype.itemsize:
            raise ParseError(f"{path}: truncated NIfTI data section")
        flat = np.frombuffer(raw, dtype=dtype).astype(_DTYPES[dtype_code])

    if n_comp > 1:
        array = np.moveaxis(flat.reshape(n_comp, nz, ny, nx), 0, -1)
    else:
        array = flat.reshape(nz, ny, nx)
    if slope not in (0.0, 1.0) or inter != 0.0:
        array = array * (slope if slope != 0.0 else 1.0) + inter
    spacing = (float(pixdim[3]) or 1.0, float(pixdim[2]) or 1.0, float(pixdim[1]) or 1.0)
    if sform > 0:
        origin = (float(srow[2][3]), float(srow[1][3]), float(srow[0][3]))
    else:
        origin = (0.0, 0.0, 0.0)
    return array, spacing, origin
