"""Synthetic longitudinal phantom generation.

Produces desk-scale longitudinal cases with exact correspondence ground
truth: a baseline phantom, a smooth forward deformation field built from
per-lesion growth modes, and a follow-up whose mask is *defined* by warping
the baseline mask through that field. Also builds the designed ambiguity
benchmark where only the baseline appearance disambiguates the target from
an abutting confounder.

All generators are pure functions of (seed, parameters).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import ndimage

from .core import (
    DeformationField,
    InstanceMask,
    LongitudinalCase,
    PromptPoint,
    Role,
    Volume,
    centroid,
    centroid_mean,
    invert_field,
    jacobian_determinant,
    warp_backward,
)
from .errors import GenerationError, MissingLesion
from .validation import check_positive_triple


class GrowthMode(str, Enum):
    GROW = "grow"
    SHRINK = "shrink"
    STABLE = "stable"
    VANISH = "vanish"
    SPLIT = "split"


@dataclass(frozen=True)
class GrowthParams:
    """Per-lesion follow-up behavior.

    magnitude scales the radial displacement (fraction of the lesion's
    equivalent radius); noise_sigma is the acquisition-noise std applied to
    the follow-up image (the max over a case's lesions is used, since noise
    is global); field_smoothness is the Gaussian sigma (voxels) applied to
    the lesion's displacement contribution.
    """

    mode: GrowthMode
    magnitude: float = 0.5
    noise_sigma: float = 0.01
    field_smoothness: float = 1.5

    def __post_init__(self):
        object.__setattr__(self, "mode", GrowthMode(self.mode))
        if not 0.0 <= self.magnitude <= 1.0:
            raise ValueError("magnitude must lie in [0, 1]")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.field_smoothness <= 0:
            raise ValueError("field_smoothness must be > 0")


# displacement amplitude per unit magnitude, as a fraction of lesion radius;
# keeps the analytic radial profile fold-free up to magnitude 1
_RADIAL_GAIN = 0.55
_VANISH_CONTRACTION = 0.9  # fraction of the offset-to-sink distance removed
_SPLIT_PINCH = 0.96  # peak transverse contraction at the split midplane


def _smooth_noise(rng: np.random.Generator, shape, sigma: float) -> np.ndarray:
    """Unit-std spatially smooth noise field."""
    raw = rng.standard_normal(shape)
    smooth = ndimage.gaussian_filter(raw, sigma=sigma, mode="nearest")
    return smooth / max(smooth.std(), 1e-12)


def _ellipsoid(shape, center, radii) -> np.ndarray:
    grids = np.indices(shape, dtype=np.float64)
    q = sum(((g - c) / r) ** 2 for g, c, r in zip(grids, center, radii))
    return q <= 1.0


def _background(rng: np.random.Generator, shape, n_organs: int = 3) -> np.ndarray:
    """Smooth tissue-like background with a few soft organ blobs."""
    img = 0.2 + 0.05 * _smooth_noise(rng, shape, sigma=6.0)
    extent = np.asarray(shape, dtype=np.float64)
    for _ in range(n_organs):
        c = rng.uniform(0.2, 0.8, size=3) * extent
        r = rng.uniform(0.12, 0.22, size=3) * extent
        grids = np.indices(shape, dtype=np.float64)
        q = sum(((g - ci) / ri) ** 2 for g, ci, ri in zip(grids, c, r))
        img += rng.uniform(0.1, 0.2) * np.exp(-q)
    return np.clip(img, 0.02, 0.62)


def generate_phantom(seed: int, shape=(48, 48, 48), n_lesions: int = 2) -> tuple[Volume, InstanceMask]:
    """Deterministic phantom: smooth background plus ellipsoidal lesions.

    Lesions get labels 1..n_lesions, distinct bright intensity, and pairwise
    separation of at least a 2-voxel gap. Raises GenerationError if lesion
    placement fails after bounded retries.
    """
    shape = check_positive_triple(shape, "shape")
    if n_lesions < 0:
        raise ValueError("n_lesions must be >= 0")
    rng = np.random.default_rng(seed)
    img = _background(rng, shape)
    labels = np.zeros(shape, dtype=np.uint16)

    placed: list[tuple[np.ndarray, float]] = []  # (center, max radius)
    for lid in range(1, n_lesions + 1):
        for _ in range(300):
            radii = rng.uniform(2.2, 4.2, size=3)
            rmax = float(radii.max())
            lo = rmax + 3.0
            hi = np.asarray(shape, dtype=np.float64) - rmax - 4.0
            if np.any(hi <= lo):
                raise GenerationError(f"shape {shape} too small for lesion of radius {rmax:.1f}")
            center = rng.uniform(lo, hi)
            # conservative separation: bounding spheres plus a 4-voxel gap
            if all(np.linalg.norm(center - c) >= rmax + r + 4.0 for c, r in placed):
                break
        else:
            raise GenerationError(f"could not place lesion {lid} of {n_lesions} in shape {shape}")
        placed.append((center, rmax))
        blob = _ellipsoid(shape, center, radii)
        img[blob] = rng.uniform(0.68, 0.88)
        labels[blob] = lid

    return Volume(img), InstanceMask(labels)


def _radial_field(shape, center: np.ndarray, radius: float, amplitude: float) -> np.ndarray:
    """Outward (amplitude > 0) or inward radial displacement around a center.

    The profile rises linearly from zero at the center, peaks at |amplitude|
    near the lesion boundary, and decays with a Gaussian envelope outside.
    """
    grids = np.indices(shape, dtype=np.float64)
    offset = np.stack([g - c for g, c in zip(grids, center)], axis=-1)
    r2 = (offset ** 2).sum(axis=-1)
    envelope = np.exp((radius ** 2 - r2) / (2.0 * radius ** 2)) / radius
    return amplitude * offset * envelope[..., None]


def _sink_field(shape, target: np.ndarray, inner: float, skirt: float, contraction: float) -> np.ndarray:
    """Contraction toward ``target``: full strength within ``inner``, Gaussian skirt outside."""
    grids = np.indices(shape, dtype=np.float64)
    offset = np.stack([t - g for g, t in zip(grids, target)], axis=-1)
    r = np.sqrt((offset ** 2).sum(axis=-1))
    bump = np.where(r <= inner, 1.0, np.exp(-((r - inner) ** 2) / (2.0 * skirt ** 2)))
    return contraction * offset * bump[..., None]


def _vanish_field(shape, center: np.ndarray, radius: float) -> np.ndarray:
    # sink at a half-voxel offset from the lattice so no voxel center is a
    # fixed point of the contraction; every surviving preimage then lands
    # outside the lesion
    target = np.rint(center) + 0.5
    return _sink_field(shape, target, inner=radius + 1.0, skirt=2.5 * radius + 2.0,
                       contraction=_VANISH_CONTRACTION)


def _split_field(shape, center: np.ndarray, radius: float, rng: np.random.Generator) -> np.ndarray:
    """Divergent pinch along a random axis: the lesion waist thins below a voxel.

    Displacement is purely transverse to the axis, strongest at the midplane,
    contracting toward a line offset half a voxel from the lattice so no voxel
    center is a fixed point. The two lobes survive while the waist drops out
    of the sampling grid, so the nearest-neighbor warp yields two components.
    With zero axial displacement the Jacobian is block triangular and the
    field is fold-free for any pinch strength < 1.
    """
    direction = rng.standard_normal(3)
    direction /= np.linalg.norm(direction)
    t1 = np.cross(direction, [1.0, 0.0, 0.0])
    if np.linalg.norm(t1) < 1e-6:
        t1 = np.cross(direction, [0.0, 1.0, 0.0])
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(direction, t1)
    offset = 0.5 * t1 + 0.5 * t2
    grids = np.stack(np.indices(shape, dtype=np.float64), axis=-1)
    rel = grids - center
    proj = rel @ direction
    trans = rel - proj[..., None] * direction[None, None, None, :] - offset
    tau = 0.9 * radius
    pinch = _SPLIT_PINCH * np.exp(-proj ** 2 / (2.0 * tau ** 2))
    tnorm = np.linalg.norm(trans, axis=-1)
    envelope = np.where(tnorm <= 2.0 * radius, 1.0,
                        np.exp(-((tnorm - 2.0 * radius) ** 2) / (2.0 * (1.5 * radius) ** 2)))
    return -(pinch * envelope)[..., None] * trans


def _affine_jitter_field(shape, rng: np.random.Generator, scale: float) -> tuple[np.ndarray, np.ndarray]:
    """Small random rotation/scale about the volume center plus translation.

    Returns (matrix, offset) of the forward map v -> M v + o in voxel space.
    """
    angles = rng.normal(0.0, 0.01 * scale, size=3)
    scales = 1.0 + rng.normal(0.0, 0.01 * scale, size=3)
    shift = rng.normal(0.0, scale, size=3)
    cz, cy, cx = np.cos(angles)
    sz, sy, sx = np.sin(angles)
    rot_z = np.array([[1, 0, 0], [0, cz, -sz], [0, sz, cz]])
    rot_y = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rot_x = np.array([[cx, -sx, 0], [sx, cx, 0], [0, 0, 1]])
    matrix = rot_z @ rot_y @ rot_x @ np.diag(scales)
    center = (np.asarray(shape, dtype=np.float64) - 1.0) / 2.0
    offset = center - matrix @ center + shift
    return matrix, offset


def synthesize_followup(
    base: tuple[Volume, InstanceMask],
    params: dict[int, GrowthParams],
    seed: int,
    affine_jitter: float = 0.0,
):
    """Warp a baseline phantom into a follow-up with known correspondence.

    Builds one smooth displacement contribution per keyed lesion (radial for
    grow/shrink, contraction sinks for vanish/split), smooths each by its
    field_smoothness, sums them, and composes the result with a small global
    affine jitter of scale ``affine_jitter`` (0 disables it). The follow-up
    image is the baseline warped through the field plus acquisition noise;
    the follow-up mask is the nearest-neighbor warp of the baseline mask.

    Returns (followup_volume, followup_mask, truth_field); the field is
    exactly the one used, forward (baseline -> follow-up) in voxel units.
    Raises GenerationError if the composed field folds (Jacobian <= 0) or a
    vanish lesion fails to disappear.
    """
    volume, mask = base
    shape = volume.shape
    rng = np.random.default_rng(seed)
    for lid in params:
        if mask.voxel_count(lid) == 0:
            raise MissingLesion(f"growth params reference lesion {lid} absent from baseline mask")

    disp = np.zeros(shape + (3,), dtype=np.float64)
    for lid in sorted(params):
        gp = params[lid]
        center = centroid_mean(mask.labels, lid)
        volume_vox = mask.voxel_count(lid)
        radius = max((3.0 * volume_vox / (4.0 * np.pi)) ** (1.0 / 3.0), 1.0)
        if gp.mode is GrowthMode.GROW:
            contrib = _radial_field(shape, center, radius, _RADIAL_GAIN * radius * gp.magnitude)
        elif gp.mode is GrowthMode.SHRINK:
            contrib = _radial_field(shape, center, radius, -_RADIAL_GAIN * radius * gp.magnitude)
        elif gp.mode is GrowthMode.VANISH:
            contrib = _vanish_field(shape, center, radius)
        elif gp.mode is GrowthMode.SPLIT:
            contrib = _split_field(shape, center, radius, rng)
        else:
            continue
        for c in range(3):
            contrib[..., c] = ndimage.gaussian_filter(contrib[..., c], sigma=gp.field_smoothness,
                                                      mode="nearest")
        disp += contrib

    if affine_jitter > 0:
        matrix, offset = _affine_jitter_field(shape, rng, affine_jitter)
        grids = np.stack(np.indices(shape, dtype=np.float64), axis=-1)
        radial_end = grids + disp
        disp = radial_end @ matrix.T + offset - grids

    field = DeformationField(disp)
    min_jac = float(jacobian_determinant(field).min())
    if min_jac <= 0.0:
        raise GenerationError(f"composed field folds (min Jacobian determinant {min_jac:.4f})")

    backward = invert_field(field)
    warped = warp_backward(volume.data.astype(np.float64), backward, order=1)
    warped_labels = warp_backward(mask.labels, backward, order=0)

    noise_sigma = max((gp.noise_sigma for gp in params.values()), default=0.0)
    if noise_sigma > 0:
        warped = warped + rng.normal(0.0, noise_sigma, size=shape)

    followup_mask = InstanceMask(warped_labels)
    for lid, gp in params.items():
        if gp.mode is GrowthMode.VANISH and followup_mask.voxel_count(lid) > 0:
            raise GenerationError(f"vanish lesion {lid} survived the warp")
    return Volume(warped, volume.spacing, volume.origin), followup_mask, field


def _ellipsoid_extent(radii: np.ndarray, direction: np.ndarray) -> float:
    """Distance from center to the ellipsoid surface along a unit direction."""
    return 1.0 / np.sqrt(((direction / radii) ** 2).sum())


def make_ambiguity_case(seed: int, shape=(48, 48, 48), case_id: str | None = None) -> LongitudinalCase:
    """Case solvable only with the baseline prior.

    The follow-up shows the target lesion directly abutting a confounder of
    identical intensity and identical volume, fused into one structure with
    no internal boundary. At baseline the target has a clearly distinct
    intensity while the confounder is unchanged, so the region that changed
    appearance is exactly the ground truth. The truth field is zero
    (anatomy is stable; only appearance changes).
    """
    shape = check_positive_triple(shape, "shape")
    rng = np.random.default_rng(seed)
    extent = np.asarray(shape, dtype=np.float64)

    bg_base = _background(rng, shape, n_organs=2)
    noise_b = rng.normal(0.0, 0.01, size=shape)
    noise_f = rng.normal(0.0, 0.01, size=shape)

    intensity_shared = 0.75
    intensity_target_baseline = 0.42

    for _ in range(50):
        t_radii = rng.uniform(2.5, 4.5, size=3)
        c_radii = rng.uniform(2.5, 5.5, size=3)
        c_radii *= (t_radii.prod() / c_radii.prod()) ** (1.0 / 3.0)  # equal volumes
        direction = rng.standard_normal(3)
        direction /= np.linalg.norm(direction)
        t_center = extent / 2.0 + rng.uniform(-3.0, 3.0, size=3)
        gap = _ellipsoid_extent(t_radii, direction) + _ellipsoid_extent(c_radii, direction) - 0.5
        c_center = t_center + direction * gap
        margin = 2.0
        ok = True
        for ctr, rad in ((t_center, t_radii), (c_center, c_radii)):
            if np.any(ctr - rad < margin) or np.any(ctr + rad > extent - margin):
                ok = False
        if not ok:
            continue
        target = _ellipsoid(shape, t_center, t_radii)
        confounder = _ellipsoid(shape, c_center, c_radii) & ~target
        if target.sum() > 30 and confounder.sum() > 30:
            break
    else:
        raise GenerationError(f"could not place ambiguity pair for seed {seed}")

    baseline_img = bg_base.copy()
    baseline_img[confounder] = intensity_shared
    baseline_img[target] = intensity_target_baseline
    followup_img = bg_base.copy()
    followup_img[confounder] = intensity_shared
    followup_img[target] = intensity_shared
    baseline_img = baseline_img + noise_b
    followup_img = followup_img + noise_f

    dynamic_range = float(followup_img.max() - followup_img.min())
    fu_gap = abs(float(followup_img[target].mean()) - float(followup_img[confounder].mean()))
    bl_gap = abs(float(baseline_img[target].mean()) - float(baseline_img[confounder].mean()))
    if fu_gap >= 0.01 * dynamic_range:
        raise GenerationError(f"ambiguity case {seed}: follow-up intensities separable ({fu_gap:.4f})")
    if bl_gap <= 0.30 * dynamic_range:
        raise GenerationError(f"ambiguity case {seed}: baseline prior too weak ({bl_gap:.4f})")

    labels = np.where(target, 1, 0)
    mask = InstanceMask(labels)
    b_vol = Volume(baseline_img)
    f_vol = Volume(followup_img)
    prompt = centroid(mask, 1)
    return LongitudinalCase(
        case_id=case_id or f"ambiguity_{seed:05d}",
        baseline=(b_vol, mask),
        followup=(f_vol, InstanceMask(labels)),
        truth_field=DeformationField.zeros(shape),
        baseline_prompts={1: prompt},
        kind="ambiguity",
    )


def make_standard_case(seed: int, shape=(48, 48, 48), case_id: str | None = None,
                       affine_jitter: float = 0.4) -> LongitudinalCase:
    """One random longitudinal case: phantom baseline plus simulated follow-up.

    About one case in seven is a single-lesion vanish case; the rest mix
    grow/shrink/stable/split lesions. Retries with damped magnitudes if the
    sampled parameters fold the field.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x10]))
    vanish_case = rng.random() < 0.15
    n_lesions = 1 if vanish_case else int(rng.integers(1, 4))
    volume, mask = generate_phantom(seed, shape, n_lesions)

    damp = 1.0
    for attempt in range(5):
        params: dict[int, GrowthParams] = {}
        for lid in mask.instance_ids:
            if vanish_case:
                mode = GrowthMode.VANISH
            else:
                modes = (GrowthMode.GROW, GrowthMode.SHRINK, GrowthMode.STABLE, GrowthMode.SPLIT)
                mode = modes[rng.choice(4, p=[0.3, 0.3, 0.25, 0.15])]
            # the split pinch relies on a sharp waist; heavy smoothing undoes it
            smoothness = 0.7 if mode is GrowthMode.SPLIT else float(rng.uniform(1.0, 2.0))
            params[lid] = GrowthParams(
                mode=mode,
                magnitude=float(rng.uniform(0.35, 0.7)) * damp,
                noise_sigma=float(rng.uniform(0.005, 0.02)),
                field_smoothness=smoothness,
            )
        try:
            followup_vol, followup_mask, field = synthesize_followup(
                (volume, mask), params, seed=seed + 7919 * (attempt + 1),
                affine_jitter=affine_jitter)
            break
        except GenerationError:
            damp *= 0.7
    else:
        raise GenerationError(f"case seed {seed}: field generation kept folding")

    prompts = {lid: centroid(mask, lid) for lid in mask.instance_ids}
    return LongitudinalCase(
        case_id=case_id or f"case_{seed:05d}",
        baseline=(volume, mask),
        followup=(followup_vol, followup_mask),
        truth_field=field,
        baseline_prompts=prompts,
        kind="standard",
    )


def generate_dataset(n_cases: int, shape=(48, 48, 48), seed: int = 0,
                     n_ambiguity: int = 0) -> list[LongitudinalCase]:
    """Batch of cases with independent per-case seeds; ambiguity cases last."""
    if n_ambiguity > n_cases:
        raise ValueError("n_ambiguity cannot exceed n_cases")
    cases = []
    for i in range(n_cases - n_ambiguity):
        cases.append(make_standard_case(seed + i, shape, case_id=f"case_{i:04d}"))
    for j in range(n_ambiguity):
        cases.append(make_ambiguity_case(seed + 100_000 + j, shape, case_id=f"case_{n_cases - n_ambiguity + j:04d}"))
    return cases
