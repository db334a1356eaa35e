"""Volumes, masks, center cropping, and stitching.

Voxel arrays are indexed [x, y, z]. Intensity domains are tagged:
"raw" (scanner units), "unit" ([0,1]), "signed-unit" ([-1,1]).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, ShapeError

DOMAINS = ("raw", "unit", "signed-unit")
MASK_ROLES = ("healthy", "unhealthy", "combined", "brain")


@dataclass
class Volume:
    voxels: np.ndarray
    domain: str = "raw"
    max_intensity: float | None = None
    affine_bytes: bytes | None = field(default=None, repr=False)

    def __post_init__(self):
        self.voxels = np.asarray(self.voxels)
        if self.voxels.dtype != np.float32:
            self.voxels = self.voxels.astype(np.float32)
        if self.voxels.ndim != 3:
            raise ShapeError(f"volume must be 3-D, got shape {self.voxels.shape}")
        if self.domain not in DOMAINS:
            raise DataError(f"unknown intensity domain {self.domain!r}")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.voxels.shape


@dataclass
class MaskVolume:
    bits: np.ndarray
    role: str = "healthy"

    def __post_init__(self):
        self.bits = np.asarray(self.bits)
        if self.bits.dtype != np.bool_:
            self.bits = self.bits.astype(bool)
        if self.bits.ndim != 3:
            raise ShapeError(f"mask must be 3-D, got shape {self.bits.shape}")
        if self.role not in MASK_ROLES:
            raise DataError(f"unknown mask role {self.role!r}")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.bits.shape

    def count(self) -> int:
        return int(self.bits.sum())


@dataclass(frozen=True)
class CropSpec:
    source_dims: tuple[int, int, int]
    target_dims: tuple[int, int, int]
    starts: tuple[int, int, int]


def make_crop_spec(source_dims, target_dims) -> CropSpec:
    """Center crop placement: start = floor((source - target) / 2) per axis."""
    source = tuple(int(e) for e in source_dims)
    target = tuple(int(e) for e in target_dims)
    if len(source) != 3 or len(target) != 3:
        raise ShapeError("crop dims must be 3-tuples")
    for s, t in zip(source, target):
        if t < 1:
            raise ShapeError(f"target extents must be positive, got {target}")
        if t > s:
            raise ShapeError(f"target {target} exceeds source {source}")
    starts = tuple((s - t) // 2 for s, t in zip(source, target))
    return CropSpec(source, target, starts)


def _crop_slices(spec: CropSpec):
    return tuple(slice(a, a + t) for a, t in zip(spec.starts, spec.target_dims))


def crop_center(volume: Volume, target_dims) -> tuple[Volume, CropSpec]:
    spec = make_crop_spec(volume.dims, target_dims)
    cropped = Volume(volume.voxels[_crop_slices(spec)].copy(),
                     domain=volume.domain, max_intensity=volume.max_intensity)
    return cropped, spec


def crop_mask(mask: MaskVolume, spec: CropSpec) -> MaskVolume:
    if mask.dims != spec.source_dims:
        raise ShapeError(f"mask dims {mask.dims} do not match crop source {spec.source_dims}")
    return MaskVolume(mask.bits[_crop_slices(spec)].copy(), role=mask.role)


def stitch(original: Volume, prediction: Volume, mask: MaskVolume, spec: CropSpec) -> Volume:
    """Write prediction voxels under the mask back into a copy of original.

    prediction and mask live on the crop grid; every voxel outside the
    mask keeps its original value bit for bit.
    """
    if original.dims != spec.source_dims:
        raise ShapeError(f"original dims {original.dims} do not match crop source {spec.source_dims}")
    if prediction.dims != spec.target_dims:
        raise ShapeError(f"prediction dims {prediction.dims} do not match crop target {spec.target_dims}")
    if mask.dims != spec.target_dims:
        raise ShapeError(f"mask dims {mask.dims} do not match crop target {spec.target_dims}")
    out = original.voxels.copy()
    region = out[_crop_slices(spec)]
    region[mask.bits] = prediction.voxels[mask.bits]
    return Volume(out, domain=original.domain, max_intensity=original.max_intensity,
                  affine_bytes=original.affine_bytes)


# -- raw sidecar fixtures ----------------------------------------------------
#
# "<name>.vraw" is u32 dx,dy,dz then float32 voxels, all little-endian,
# x varying fastest. "<name>.vjson" holds {dims, domain, max_intensity}.


def write_raw(volume: Volume, base_path) -> None:
    base = Path(base_path)
    dx, dy, dz = volume.dims
    with open(base.with_suffix(".vraw"), "wb") as fh:
        fh.write(struct.pack("<III", dx, dy, dz))
        fh.write(np.ascontiguousarray(volume.voxels.transpose(2, 1, 0), dtype="<f4").tobytes())
    meta = {"dims": [dx, dy, dz], "domain": volume.domain, "max_intensity": volume.max_intensity}
    base.with_suffix(".vjson").write_text(json.dumps(meta, indent=2) + "\n")


def read_raw(base_path) -> Volume:
    base = Path(base_path)
    raw = base.with_suffix(".vraw").read_bytes()
    if len(raw) < 12:
        raise DataError(f"{base}.vraw is too short for a header")
    dx, dy, dz = struct.unpack("<III", raw[:12])
    count = dx * dy * dz
    if len(raw) != 12 + 4 * count:
        raise DataError(f"{base}.vraw holds {len(raw) - 12} data bytes, expected {4 * count}")
    flat = np.frombuffer(raw, dtype="<f4", offset=12)
    voxels = flat.reshape(dz, dy, dx).transpose(2, 1, 0).copy()
    meta = json.loads(base.with_suffix(".vjson").read_text())
    if tuple(meta["dims"]) != (dx, dy, dz):
        raise DataError(f"{base}.vjson dims {meta['dims']} disagree with .vraw {(dx, dy, dz)}")
    return Volume(voxels, domain=meta["domain"], max_intensity=meta.get("max_intensity"))
