"""Minimal NIfTI-1 reader and writer.

Supports the subset this toolkit needs: single-file little-endian
volumes (magic "n+1\\0"), datatypes uint8/int16/float32, a single frame,
optional gzip compression chosen by the ".gz" suffix. scl_slope and
scl_inter are applied on read when the slope is nonzero. Orientation
and affine header fields are carried through untouched and never
interpreted.
"""

from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np

from .errors import NiftiError
from .volume import MaskVolume, Volume

HEADER_SIZE = 348
VOX_OFFSET = 352
MAGIC = b"n+1\x00"

# field offsets in the 348-byte header
_OFF_SIZEOF_HDR = 0
_OFF_DIM = 40
_OFF_DATATYPE = 70
_OFF_BITPIX = 72
_OFF_PIXDIM = 76
_OFF_VOX_OFFSET = 108
_OFF_SCL_SLOPE = 112
_OFF_SCL_INTER = 116
_OFF_AFFINE = 252   # qform_code .. srow_z, passed through opaquely
_END_AFFINE = 328
_OFF_MAGIC = 344

_DTYPES = {2: np.dtype("u1"), 4: np.dtype("<i2"), 16: np.dtype("<f4")}


def _read_bytes(path: Path) -> bytes:
    if str(path).endswith(".gz"):
        with gzip.open(path, "rb") as fh:
            return fh.read()
    return path.read_bytes()


def read_nifti(path) -> Volume:
    """Parse one scan into a raw-domain Volume.

    Raises NiftiError with code bad_header, bad_magic, bad_datatype,
    bad_dims, or truncated.
    """
    path = Path(path)
    raw = _read_bytes(path)
    if len(raw) < HEADER_SIZE:
        raise NiftiError("truncated", f"{path} holds {len(raw)} bytes, header needs {HEADER_SIZE}")
    (sizeof_hdr,) = struct.unpack_from("<i", raw, _OFF_SIZEOF_HDR)
    if sizeof_hdr != HEADER_SIZE:
        raise NiftiError("bad_header", f"{path}: sizeof_hdr is {sizeof_hdr}, expected {HEADER_SIZE}")
    if raw[_OFF_MAGIC:_OFF_MAGIC + 4] != MAGIC:
        raise NiftiError("bad_magic", f"{path}: magic {raw[_OFF_MAGIC:_OFF_MAGIC + 4]!r}, expected {MAGIC!r}")
    dim = struct.unpack_from("<8h", raw, _OFF_DIM)
    nd = dim[0]
    if nd < 3 or nd > 7:
        raise NiftiError("bad_dims", f"{path}: dim[0] is {nd}, need a 3-D volume")
    if any(dim[i + 1] != 1 for i in range(3, nd)):
        raise NiftiError("bad_dims", f"{path}: trailing dims {dim[4:nd + 1]} are not all 1")
    dx, dy, dz = dim[1], dim[2], dim[3]
    if min(dx, dy, dz) < 1:
        raise NiftiError("bad_dims", f"{path}: non-positive extents {(dx, dy, dz)}")
    (datatype,) = struct.unpack_from("<h", raw, _OFF_DATATYPE)
    if datatype not in _DTYPES:
        raise NiftiError("bad_datatype", f"{path}: datatype code {datatype} not supported")
    (vox_offset,) = struct.unpack_from("<f", raw, _OFF_VOX_OFFSET)
    offset = int(vox_offset) if vox_offset >= HEADER_SIZE else VOX_OFFSET
    slope, inter = struct.unpack_from("<2f", raw, _OFF_SCL_SLOPE)

    dtype = _DTYPES[datatype]
    count = dx * dy * dz
    need = offset + count * dtype.itemsize
    if len(raw) < need:
        raise NiftiError("truncated", f"{path} holds {len(raw)} bytes, voxel data needs {need}")
    flat = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
    voxels = flat.reshape(dz, dy, dx).transpose(2, 1, 0).astype(np.float32)
    if slope != 0.0:
        voxels = voxels * np.float32(slope) + np.float32(inter)
    return Volume(voxels, domain="raw", affine_bytes=raw[_OFF_AFFINE:_END_AFFINE])


def read_nifti_mask(path, role: str) -> MaskVolume:
    """Read a binary mask; any voxel above 0.5 counts as set."""
    vol = read_nifti(path)
    return MaskVolume(vol.voxels > 0.5, role=role)


def write_nifti(volume: Volume, path) -> None:
    """Serialize as float32 with identity scaling; gzip when path ends .gz."""
    path = Path(path)
    header = bytearray(HEADER_SIZE)
    struct.pack_into("<i", header, _OFF_SIZEOF_HDR, HEADER_SIZE)
    dx, dy, dz = volume.dims
    struct.pack_into("<8h", header, _OFF_DIM, 3, dx, dy, dz, 1, 1, 1, 1)
    struct.pack_into("<h", header, _OFF_DATATYPE, 16)
    struct.pack_into("<h", header, _OFF_BITPIX, 32)
    struct.pack_into("<8f", header, _OFF_PIXDIM, 1, 1, 1, 1, 0, 0, 0, 0)
    struct.pack_into("<f", header, _OFF_VOX_OFFSET, VOX_OFFSET)
    struct.pack_into("<2f", header, _OFF_SCL_SLOPE, 1.0, 0.0)
    if volume.affine_bytes is not None and len(volume.affine_bytes) == _END_AFFINE - _OFF_AFFINE:
        header[_OFF_AFFINE:_END_AFFINE] = volume.affine_bytes
    header[_OFF_MAGIC:_OFF_MAGIC + 4] = MAGIC

    body = bytes(header)
    body += b"\x00" * (VOX_OFFSET - HEADER_SIZE)
    body += np.ascontiguousarray(volume.voxels.transpose(2, 1, 0), dtype="<f4").tobytes()
    if str(path).endswith(".gz"):
        # fileobj + fixed mtime: no filename or timestamp in the gzip header,
        # so identical volumes serialize to identical bytes anywhere
        with open(path, "wb") as out:
            with gzip.GzipFile(filename="", fileobj=out, mode="wb", mtime=0) as fh:
                fh.write(body)
    else:
        path.write_bytes(body)


def write_nifti_mask(mask: MaskVolume, path) -> None:
    write_nifti(Volume(mask.bits.astype(np.float32)), path)
