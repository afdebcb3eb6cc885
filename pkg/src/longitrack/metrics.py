"""Segmentation evaluation: DSC, NSD, LDR, and bootstrap aggregation.

This module is the single source of truth for every overlap/surface number
the trainer, harness, and CLI report. Vanished lesions (empty ground truth)
score 1.0 when the prediction is also empty and 0.0 otherwise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage

from .errors import AlignmentError, EmptyInput
from .validation import as_binary_mask, check_same_shape

DETECTION_DSC_THRESHOLD = 0.1
DEFAULT_NSD_TOLERANCE_MM = 2.0


def dsc(pred: np.ndarray, gt: np.ndarray) -> float:
    """Dice similarity 2|P∩G| / (|P|+|G|); two empty masks score 1."""
    pred = as_binary_mask(pred, "pred")
    gt = as_binary_mask(gt, "gt")
    check_same_shape(pred, gt, "pred/gt masks")
    p = int(pred.sum())
    g = int(gt.sum())
    if p + g == 0:
        return 1.0
    inter = int(np.logical_and(pred, gt).sum())
    return 2.0 * inter / (p + g)


_SURFACE_STRUCTURE = ndimage.generate_binary_structure(3, 1)  # 6-connectivity


def surface_voxels(mask: np.ndarray) -> np.ndarray:
    """Boolean border map: mask voxels with a background (or out-of-grid) 6-neighbor."""
    mask = as_binary_mask(mask)
    if not mask.any():
        return np.zeros_like(mask, dtype=bool)
    interior = ndimage.binary_erosion(mask, structure=_SURFACE_STRUCTURE, border_value=0)
    return mask & ~interior


def nsd(pred: np.ndarray, gt: np.ndarray, tolerance_mm: float, spacing=(1.0, 1.0, 1.0)) -> float:
    """Normalized surface distance at tolerance ``tolerance_mm``.

    Fraction of border voxels of each mask lying within the tolerance of the
    other mask's border, distances in millimeters via an exact Euclidean
    distance transform. Both masks empty scores 1; exactly one empty scores 0.
    """
    pred = as_binary_mask(pred, "pred")
    gt = as_binary_mask(gt, "gt")
    check_same_shape(pred, gt, "pred/gt masks")
    if tolerance_mm <= 0:
        raise ValueError("tolerance_mm must be > 0")
    p_empty, g_empty = not pred.any(), not gt.any()
    if p_empty and g_empty:
        return 1.0
    if p_empty or g_empty:
        return 0.0
    surf_p = surface_voxels(pred)
    surf_g = surface_voxels(gt)
    dist_to_g = ndimage.distance_transform_edt(~surf_g, sampling=spacing)
    dist_to_p = ndimage.distance_transform_edt(~surf_p, sampling=spacing)
    hits_p = int((dist_to_g[surf_p] <= tolerance_mm).sum())
    hits_g = int((dist_to_p[surf_g] <= tolerance_mm).sum())
    return (hits_p + hits_g) / (int(surf_p.sum()) + int(surf_g.sum()))


def ldr(
    predictions: Sequence[np.ndarray],
    gt_instances: Sequence[tuple[np.ndarray, int]],
    dsc_threshold: float = DETECTION_DSC_THRESHOLD,
) -> float:
    """Fraction of lesions detected (per-lesion DSC >= threshold).

    Vanished lesions (empty ground truth) count as detected iff the paired
    prediction is empty too.
    """
    if len(predictions) != len(gt_instances):
        raise AlignmentError(
            f"{len(predictions)} predictions vs {len(gt_instances)} ground-truth lesions")
    if not predictions:
        raise EmptyInput("no lesions to score")
    detected = 0
    for pred, (gt, _lesion_id) in zip(predictions, gt_instances):
        gt = as_binary_mask(gt)
        pred = as_binary_mask(pred)
        if not gt.any():
            detected += int(not pred.any())
        else:
            detected += int(dsc(pred, gt) >= dsc_threshold)
    return detected / len(predictions)


def bootstrap(values: Sequence[float], n_resamples: int = 1000, seed: int = 0) -> tuple[float, float]:
    """Lesion-level bootstrap: (mean of resample means, std of resample means)."""
    values = np.asarray(list(values), dtype=np.float64)
    if values.size == 0:
        raise EmptyInput("bootstrap over empty values")
    if n_resamples < 1:
        raise ValueError("n_resamples must be >= 1")
    rng = np.random.default_rng(seed)
    means = np.empty(n_resamples, dtype=np.float64)
    chunk = 100_000
    for start in range(0, n_resamples, chunk):
        stop = min(start + chunk, n_resamples)
        idx = rng.integers(0, values.size, size=(stop - start, values.size))
        means[start:stop] = values[idx].mean(axis=1)
    return float(means.mean()), float(means.std())


def score_lesion(pred: np.ndarray, gt: np.ndarray, tolerance_mm: float,
                 spacing=(1.0, 1.0, 1.0),
                 dsc_threshold: float = DETECTION_DSC_THRESHOLD) -> tuple[float, float, bool]:
    """(dsc, nsd, detected) for one lesion, applying the vanished convention."""
    pred = as_binary_mask(pred)
    gt = as_binary_mask(gt)
    if not gt.any():
        hit = not pred.any()
        return (1.0, 1.0, True) if hit else (0.0, 0.0, False)
    d = dsc(pred, gt)
    s = nsd(pred, gt, tolerance_mm, spacing)
    return d, s, d >= dsc_threshold


@dataclass
class LesionScore:
    case_id: str
    lesion_id: int
    dsc: float
    nsd: float
    detected: bool


@dataclass
class MetricsReport:
    """Bootstrap-aggregated per-lesion scores; rates stored in [0, 1]."""

    dsc_mean: float
    dsc_std: float
    nsd_mean: float
    nsd_std: float
    ldr: float
    nsd_tolerance_mm: float
    n_bootstrap: int
    seed: int
    per_lesion: list[LesionScore] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "schema": 1,
            "dsc_mean": self.dsc_mean,
            "dsc_std": self.dsc_std,
            "nsd_mean": self.nsd_mean,
            "nsd_std": self.nsd_std,
            "ldr": self.ldr,
            "nsd_tolerance_mm": self.nsd_tolerance_mm,
            "n_bootstrap": self.n_bootstrap,
            "seed": self.seed,
            "per_lesion": [
                {"case_id": s.case_id, "lesion_id": s.lesion_id, "dsc": s.dsc,
                 "nsd": s.nsd, "detected": s.detected}
                for s in self.per_lesion
            ],
        }

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    def table_row(self) -> str:
        """DSC/NSD/LDR on the 0-100 scale with one decimal, for table parity."""
        return (f"{100 * self.dsc_mean:5.1f} ±{100 * self.dsc_std:4.1f}  "
                f"{100 * self.nsd_mean:5.1f} ±{100 * self.nsd_std:4.1f}  "
                f"{100 * self.ldr:5.1f}")


def build_report(scores: Sequence[LesionScore], tolerance_mm: float,
                 n_bootstrap: int = 1000, seed: int = 0) -> MetricsReport:
    scores = list(scores)
    if not scores:
        raise EmptyInput("no per-lesion scores to aggregate")
    dsc_mean, dsc_std = bootstrap([s.dsc for s in scores], n_bootstrap, seed)
    nsd_mean, nsd_std = bootstrap([s.nsd for s in scores], n_bootstrap, seed + 1)
    rate = sum(s.detected for s in scores) / len(scores)
    return MetricsReport(dsc_mean, dsc_std, nsd_mean, nsd_std, rate,
                         tolerance_mm, n_bootstrap, seed, scores)
