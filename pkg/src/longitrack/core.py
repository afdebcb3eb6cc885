"""Domain types and the volume/field geometry shared by every other module.

Conventions fixed here and relied on everywhere else:

* arrays are indexed ``(z, y, x)``; spacing/origin vectors use the same order
* prompt coordinates are integer voxel indices (spacing only enters metric
  computations)
* a deformation field stores the *forward* per-voxel displacement in voxel
  units: a baseline point at voxel ``p`` lands at ``p + disp[p]`` in
  follow-up space; image warping inverts the field internally
* VOI crops place the requested center at patch index ``n // 2`` per axis
  (for even extents the center sits left of the midpoint)

All types are immutable after construction (their arrays are frozen), so
instances may be shared freely across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np
from scipy import ndimage

from .errors import MissingLesion
from .validation import (
    as_int_triple,
    check_finite,
    check_point_in_bounds,
    check_positive_triple,
    check_same_shape,
)


def _frozen(arr: np.ndarray, dtype) -> np.ndarray:
    out = np.ascontiguousarray(arr, dtype=dtype)
    out.flags.writeable = False
    return out


class Role(str, Enum):
    """Provenance of a point prompt in the verified-tracking loop."""

    BASELINE = "baseline"
    PROPOSED = "proposed"
    VERIFIED = "verified"


@dataclass(frozen=True)
class Volume:
    """A 3D scalar image with physical voxel spacing (mm per voxel, z/y/x)."""

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ValueError(f"volume data must be 3D with positive extents, got shape {data.shape}")
        check_finite(data, "volume data")
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or any(s <= 0 for s in spacing):
            raise ValueError(f"spacing must be 3 positive reals, got {self.spacing}")
        object.__setattr__(self, "data", _frozen(data, np.float32))
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape  # type: ignore[return-value]

    def with_data(self, data: np.ndarray) -> "Volume":
        return Volume(data, self.spacing, self.origin)


@dataclass(frozen=True)
class InstanceMask:
    """Integer lesion-instance labels on the same grid as a Volume.

    Label 0 is background. Instance ids are stable across the timepoints of
    one case: the same id names the same physical lesion.
    """

    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 3:
            raise ValueError(f"mask labels must be 3D, got shape {labels.shape}")
        if labels.size and labels.min() < 0:
            raise ValueError("mask labels must be non-negative")
        object.__setattr__(self, "labels", _frozen(labels, np.uint16))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.labels.shape  # type: ignore[return-value]

    @property
    def instance_ids(self) -> tuple[int, ...]:
        ids = np.unique(self.labels)
        return tuple(int(i) for i in ids if i != 0)

    def binary(self, lesion_id: int) -> np.ndarray:
        return self.labels == lesion_id

    def voxel_count(self, lesion_id: int) -> int:
        return int(np.count_nonzero(self.labels == lesion_id))


@dataclass(frozen=True)
class PromptPoint:
    """A single voxel click identifying one lesion."""

    coord: tuple[int, int, int]
    role: Role = Role.BASELINE
    lesion_id: int = 1

    def __post_init__(self):
        object.__setattr__(self, "coord", as_int_triple(self.coord, "prompt coord"))
        object.__setattr__(self, "role", Role(self.role))
        if self.lesion_id <= 0:
            raise ValueError("lesion_id must be positive")

    def as_array(self) -> np.ndarray:
        return np.asarray(self.coord, dtype=np.float64)


@dataclass(frozen=True)
class DeformationField:
    """Forward per-voxel displacement, shaped (z, y, x, 3), voxel units."""

    disp: np.ndarray

    def __post_init__(self):
        disp = np.asarray(self.disp)
        if disp.ndim != 4 or disp.shape[-1] != 3:
            raise ValueError(f"displacement must be shaped (z, y, x, 3), got {disp.shape}")
        check_finite(disp, "displacement")
        object.__setattr__(self, "disp", _frozen(disp, np.float32))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.disp.shape[:3]  # type: ignore[return-value]

    @classmethod
    def zeros(cls, shape) -> "DeformationField":
        shape = check_positive_triple(shape, "field shape")
        return cls(np.zeros(shape + (3,), dtype=np.float32))


@dataclass(frozen=True)
class LongitudinalCase:
    """One patient: baseline and follow-up scans with instance masks.

    ``truth_field`` is present for synthetic cases and is the exact forward
    field that produced the follow-up. ``baseline_prompts`` holds the
    canonical click per lesion present at baseline. Lesions may vanish
    (baseline only) or appear (follow-up only).
    """

    case_id: str
    baseline: tuple[Volume, InstanceMask]
    followup: tuple[Volume, InstanceMask]
    truth_field: Optional[DeformationField] = None
    baseline_prompts: dict[int, PromptPoint] = field(default_factory=dict)
    kind: str = "standard"

    def __post_init__(self):
        bvol, bmask = self.baseline
        fvol, fmask = self.followup
        check_same_shape(bvol.data, bmask.labels, "baseline volume/mask")
        check_same_shape(fvol.data, fmask.labels, "follow-up volume/mask")
        if self.truth_field is not None and self.truth_field.shape != bvol.shape:
            raise ValueError("truth field shape must equal the baseline volume shape")
        present = set(bmask.instance_ids)
        for lid, p in self.baseline_prompts.items():
            if lid not in present:
                raise MissingLesion(f"prompt for lesion {lid} but id absent from baseline mask")
            check_point_in_bounds(p.coord, bvol.shape, f"prompt for lesion {lid}")

    @property
    def lesion_ids(self) -> tuple[int, ...]:
        ids = set(self.baseline[1].instance_ids) | set(self.followup[1].instance_ids)
        return tuple(sorted(ids))


def centroid(mask: InstanceMask, lesion_id: int) -> PromptPoint:
    """In-mask centroid of a lesion.

    Returns the lesion voxel nearest (Euclidean, voxel units) to the mean
    coordinate of the lesion's voxels. Snapping to the mask guards non-convex
    lesions whose coordinate mean falls outside them. Distance ties are broken
    by lexicographic (z, y, x) order.
    """
    coords = np.argwhere(mask.labels == lesion_id)
    if coords.size == 0:
        raise MissingLesion(f"lesion {lesion_id} absent from mask")
    mean = coords.mean(axis=0)
    d2 = ((coords - mean) ** 2).sum(axis=1)
    order = np.lexsort((coords[:, 2], coords[:, 1], coords[:, 0], d2))
    z, y, x = (int(v) for v in coords[order[0]])
    return PromptPoint((z, y, x), Role.BASELINE, lesion_id)


def centroid_mean(mask_labels: np.ndarray, lesion_id: int) -> np.ndarray:
    """Unsnapped float mean coordinate of a lesion's voxels."""
    coords = np.argwhere(mask_labels == lesion_id)
    if coords.size == 0:
        raise MissingLesion(f"lesion {lesion_id} absent from mask")
    return coords.mean(axis=0)


def voi_start(center, size) -> np.ndarray:
    """Start index (possibly negative) of a VOI per the center-at-n//2 rule."""
    c = np.asarray(as_int_triple(center if not isinstance(center, PromptPoint) else center.coord))
    n = np.asarray(check_positive_triple(size, "size"))
    return c - n // 2


def _crop_pad_array(data: np.ndarray, center, size, pad_value: float) -> np.ndarray:
    size = check_positive_triple(size, "size")
    start = voi_start(center, size)
    out = np.full(size, pad_value, dtype=data.dtype)
    src_lo = np.maximum(start, 0)
    src_hi = np.minimum(start + size, data.shape)
    if np.any(src_lo >= src_hi):
        return out
    dst_lo = src_lo - start
    dst_hi = src_hi - start
    out[dst_lo[0]:dst_hi[0], dst_lo[1]:dst_hi[1], dst_lo[2]:dst_hi[2]] = \
        data[src_lo[0]:src_hi[0], src_lo[1]:src_hi[1], src_lo[2]:src_hi[2]]
    return out


def crop_pad(volume: Volume, center, size, pad_value: Optional[float] = None) -> Volume:
    """Extract a ``size``-shaped VOI centered at ``center``.

    Regions outside the source are filled with ``pad_value`` (default: the
    source minimum, mimicking background without hardcoding intensity
    conventions). Spacing is copied; the patch origin is shifted so physical
    coordinates stay consistent.
    """
    if pad_value is None:
        pad_value = float(volume.data.min())
    data = _crop_pad_array(volume.data, center, size, np.float32(pad_value))
    start = voi_start(center, size)
    origin = tuple(o + float(s) * sp for o, s, sp in zip(volume.origin, start, volume.spacing))
    return Volume(data, volume.spacing, origin)


def crop_pad_labels(mask: InstanceMask, center, size) -> InstanceMask:
    """VOI crop of an instance mask; outside regions pad with background."""
    return InstanceMask(_crop_pad_array(mask.labels, center, size, 0))


# ---------------------------------------------------------------------------
# Deformation-field arithmetic


def jacobian_determinant(field: DeformationField) -> np.ndarray:
    """Per-voxel determinant of the forward map's Jacobian, det(I + grad u)."""
    u = field.disp.astype(np.float64)
    jac = np.empty(u.shape[:3] + (3, 3), dtype=np.float64)
    for i in range(3):
        grads = np.gradient(u[..., i], axis=(0, 1, 2))
        for j in range(3):
            jac[..., i, j] = grads[j]
    jac[..., 0, 0] += 1.0
    jac[..., 1, 1] += 1.0
    jac[..., 2, 2] += 1.0
    return np.linalg.det(jac)


def is_fold_free(field: DeformationField) -> bool:
    return bool(jacobian_determinant(field).min() > 0.0)


def _sample_field(disp: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """Linearly interpolate a (z,y,x,3) displacement at fractional coords."""
    out = np.empty((3,) + coords.shape[1:], dtype=np.float64)
    for c in range(3):
        out[c] = ndimage.map_coordinates(disp[..., c], coords, order=1, mode="nearest")
    return out


def invert_field(field: DeformationField, max_iter: int = 400, err_tol: float = 0.05) -> np.ndarray:
    """Backward displacement b with  q + b(q) = phi^{-1}(q)  (fixed point).

    Iterates b <- -u(q + b(q)), restricted to the bounding box where the
    forward displacement is non-negligible (synthetic fields are compactly
    supported). The stop rule bounds the remaining error of the geometric
    tail via the observed per-step contraction ratio, so strong sinks run
    long enough and mild fields stop early. Deterministic for a given
    field.
    """
    disp = field.disp.astype(np.float64)
    b_full = -disp.copy()
    support = np.argwhere(np.abs(disp).sum(axis=-1) > 1e-4)
    if support.size == 0:
        return np.moveaxis(b_full, -1, 0)
    margin = int(np.ceil(np.abs(disp).max())) + 2
    lo = np.maximum(support.min(axis=0) - margin, 0)
    hi = np.minimum(support.max(axis=0) + margin + 1, field.shape)
    box = tuple(slice(l, h) for l, h in zip(lo, hi))

    # the iteration is pointwise independent, so converged voxels freeze and
    # only the shrinking active set (sink shells) keeps iterating; freezing
    # waits out the erratic warmup and needs two consecutive passing checks
    grid = np.indices(tuple(h - l for l, h in zip(lo, hi)), dtype=np.float64)
    grid += lo.reshape(3, 1, 1, 1)
    pts = grid.reshape(3, -1)
    b = np.zeros_like(pts)
    active = np.arange(pts.shape[1])
    prev_delta = np.full(pts.shape[1], np.inf)
    streak = np.zeros(pts.shape[1], dtype=np.int8)
    warmup = 8
    for it in range(max_iter):
        sampled = -_sample_field(disp, pts[:, active] + b[:, active])
        delta = np.abs(sampled - b[:, active]).max(axis=0)
        b[:, active] = sampled
        ratio = np.minimum(delta / np.maximum(prev_delta[active], 1e-30), 0.99)
        passing = (delta < 1e-4) | (delta * ratio / (1.0 - ratio) < err_tol)
        streak[active] = np.where(passing, streak[active] + 1, 0)
        prev_delta[active] = delta
        if it >= warmup:
            active = active[streak[active] < 2]
            if active.size == 0:
                break
    shape_box = tuple(h - l for l, h in zip(lo, hi))
    for c in range(3):
        b_full[..., c][box] = b[c].reshape(shape_box)
    return np.moveaxis(b_full, -1, 0)


def warp_backward(data: np.ndarray, backward: np.ndarray, order: int) -> np.ndarray:
    """Sample ``data`` at q + backward(q); order 0 for labels, 1 for images."""
    grid = np.indices(data.shape, dtype=np.float64)
    coords = grid + backward
    return ndimage.map_coordinates(data, coords, order=order, mode="nearest")


def warp_volume(volume: Volume, field: DeformationField) -> Volume:
    """Warp an image through a forward field (linear interpolation)."""
    check_same_shape(volume.data, field.disp[..., 0], "volume/field")
    backward = invert_field(field)
    return volume.with_data(warp_backward(volume.data.astype(np.float64), backward, order=1))


def warp_mask(mask: InstanceMask, field: DeformationField) -> InstanceMask:
    """Warp instance labels through a forward field (nearest neighbor).

    This operation *defines* the follow-up mask of a synthetic case, so
    re-applying it to the baseline mask with the emitted truth field
    reproduces the follow-up mask exactly.
    """
    check_same_shape(mask.labels, field.disp[..., 0], "mask/field")
    backward = invert_field(field)
    return InstanceMask(warp_backward(mask.labels, backward, order=0))
