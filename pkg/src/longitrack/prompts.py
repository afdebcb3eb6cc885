"""Point-prompt encoding and training-prompt simulation.

Prompts enter the network as a Gaussian heatmap channel with unit value at
the click. Training prompts follow a per-sample 50/50 split between
mask-interior samples (centroid-distance weighted) and registration-derived
points with jitter, which may legitimately fall outside the lesion.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import InstanceMask, LongitudinalCase, PromptPoint, Role, centroid
from .errors import MissingField, MissingLesion
from .validation import check_point_in_bounds, check_positive_triple

FLUSH_THRESHOLD = 1e-8


@dataclass(frozen=True)
class PromptHeatmap:
    """Gaussian click encoding: unit value at the prompt, isotropic decay."""

    data: np.ndarray
    prompt: PromptPoint
    sigma: float

    @property
    def shape(self):
        return self.data.shape


def gaussian_heatmap(p: PromptPoint, shape, sigma: float = 1.0) -> PromptHeatmap:
    """Heatmap value exp(-||v - p||^2 / (2 sigma^2)) per voxel v.

    The value at the prompt voxel is exactly 1; values below 1e-8 are
    flushed to zero (with sigma=1 the effective support is a few voxels).
    """
    shape = check_positive_triple(shape, "shape")
    coord = check_point_in_bounds(p.coord, shape, "prompt")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    axes = [((np.arange(n, dtype=np.float64) - c) ** 2) for n, c in zip(shape, coord)]
    d2 = axes[0][:, None, None] + axes[1][None, :, None] + axes[2][None, None, :]
    data = np.exp(-d2 / (2.0 * sigma * sigma))
    data[data < FLUSH_THRESHOLD] = 0.0
    return PromptHeatmap(data, p, float(sigma))


def sample_mask_prompt(mask: InstanceMask, lesion_id: int, rng: np.random.Generator) -> PromptPoint:
    """Draw an in-mask voxel with probability proportional to 1/(d^2 + 1).

    d is the Euclidean voxel distance to the lesion's in-mask centroid; the
    +1 regularizes the otherwise singular weight at d=0 and keeps the
    centroid the modal sample.
    """
    coords = np.argwhere(mask.labels == lesion_id)
    if coords.size == 0:
        raise MissingLesion(f"lesion {lesion_id} absent from mask")
    center = np.asarray(centroid(mask, lesion_id).coord, dtype=np.float64)
    d2 = ((coords - center) ** 2).sum(axis=1)
    weights = 1.0 / (d2 + 1.0)
    weights /= weights.sum()
    idx = rng.choice(len(coords), p=weights)
    z, y, x = (int(v) for v in coords[idx])
    return PromptPoint((z, y, x), Role.VERIFIED, lesion_id)


def simulate_registered_prompt(
    case: LongitudinalCase,
    lesion_id: int,
    noise_sigma_vox: float,
    rng: np.random.Generator,
) -> PromptPoint:
    """Propagate the baseline prompt and jitter it like a registration error.

    The baseline click moves through the case's truth field, then isotropic
    Gaussian jitter with std ``noise_sigma_vox`` is added per axis and the
    result is rounded and clamped to the volume bounds.
    """
    if lesion_id not in case.baseline_prompts:
        raise MissingLesion(f"lesion {lesion_id} has no baseline prompt")
    if case.truth_field is None:
        raise MissingField(f"case {case.case_id} carries no truth field")
    from .registration import apply_field  # local import; registration depends on prompts' types

    moved = apply_field(case.truth_field, case.baseline_prompts[lesion_id])
    coord = moved.as_array()
    if noise_sigma_vox > 0:
        coord = coord + rng.normal(0.0, noise_sigma_vox, size=3)
    shape = case.followup[0].shape
    coord = np.clip(np.rint(coord), 0, np.asarray(shape) - 1).astype(int)
    return PromptPoint(tuple(coord), Role.PROPOSED, lesion_id)


def choose_training_prompt(
    case: LongitudinalCase,
    lesion_id: int,
    rng: np.random.Generator,
    noise_sigma_vox: float = 2.0,
) -> PromptPoint:
    """Per-sample 50/50 draw between mask sampling and registered simulation.

    The Bernoulli split is decided independently for every training sample.
    Lesions absent from the follow-up mask always take the registered branch
    (there is no mask to sample from).
    """
    followup_mask = case.followup[1]
    has_followup = followup_mask.voxel_count(lesion_id) > 0
    if has_followup and rng.random() < 0.5:
        return sample_mask_prompt(followup_mask, lesion_id, rng)
    return simulate_registered_prompt(case, lesion_id, noise_sigma_vox, rng)
