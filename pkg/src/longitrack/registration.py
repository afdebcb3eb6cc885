"""Baseline-to-follow-up prompt propagation.

Two providers sit behind one result type: ``truth_with_noise`` perturbs a
synthetic case's exact field by a calibrated smooth error (the default for
experiments, letting registration quality be swept as an independent
variable), and ``affine_register`` estimates a 12-parameter affine transform
by multi-resolution gradient descent on intensity MSE (a real, if toy,
estimation path).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
import torch
from scipy import ndimage

from .core import DeformationField, LongitudinalCase, PromptPoint, Role, Volume
from .errors import MissingField, MissingLesion
from .validation import check_point_in_bounds, check_same_shape


class RegistrationMethod(str, Enum):
    TRUTH_NOISY = "truth_noisy"
    AFFINE = "affine"


@dataclass(frozen=True)
class RegistrationResult:
    """A dense forward field plus provenance.

    residual_error_vox is the injected mean landmark error for truth_noisy;
    for affine it is the mean voxel displacement of the final optimizer step
    (near zero when converged, larger when the iteration budget ran out).
    """

    field: DeformationField
    method: RegistrationMethod
    residual_error_vox: float
    loss_history: tuple[tuple[float, ...], ...] = ()


def apply_field(field: DeformationField, p: PromptPoint) -> PromptPoint:
    """Propagate a voxel click: round(p + disp[p]), clamped to bounds."""
    coord = check_point_in_bounds(p.coord, field.shape, "prompt")
    moved = np.asarray(coord, dtype=np.float64) + field.disp[coord]
    moved = np.clip(np.rint(moved), 0, np.asarray(field.shape) - 1).astype(int)
    return PromptPoint(tuple(moved), Role.PROPOSED, p.lesion_id)


def truth_with_noise(
    case: LongitudinalCase,
    error_vox: float,
    rng: np.random.Generator,
    smoothness: float = 12.0,
) -> RegistrationResult:
    """The case's exact field plus a smooth perturbation of calibrated size.

    The perturbation is Gaussian-smoothed vector noise rescaled so its mean
    displacement magnitude over the grid equals ``error_vox`` exactly.
    """
    if case.truth_field is None:
        raise MissingField(f"case {case.case_id} carries no truth field")
    if error_vox < 0:
        raise ValueError("error_vox must be >= 0")
    if error_vox == 0:
        return RegistrationResult(case.truth_field, RegistrationMethod.TRUTH_NOISY, 0.0)
    from .core import jacobian_determinant  # local import avoids a cycle

    shape = case.truth_field.shape
    sigma = smoothness
    for _ in range(6):
        delta = np.stack(
            [ndimage.gaussian_filter(rng.standard_normal(shape), sigma=sigma, mode="nearest")
             for _ in range(3)],
            axis=-1,
        )
        delta /= max(float(delta.std()), 1e-12)  # bounded peak-to-mean ratio
        magnitude = np.linalg.norm(delta, axis=-1).mean()
        delta *= error_vox / max(magnitude, 1e-12)
        disp = case.truth_field.disp.astype(np.float64) + delta
        field = DeformationField(disp)
        if jacobian_determinant(field).min() > 0:
            return RegistrationResult(field, RegistrationMethod.TRUTH_NOISY, float(error_vox))
        sigma *= 1.5  # smoother perturbation, same calibrated magnitude
    raise ValueError(f"could not build a fold-free perturbation at error_vox={error_vox}")


@dataclass(frozen=True)
class AffineConfig:
    levels: int = 3
    iterations: tuple[int, ...] = (120, 80, 40)
    lr: float = 0.1
    max_halvings: int = 12


def _downsample(data: np.ndarray, factor: int) -> np.ndarray:
    if factor == 1:
        return data
    smoothed = ndimage.gaussian_filter(data, sigma=factor / 2.0, mode="nearest")
    return smoothed[::factor, ::factor, ::factor]


def _normalized(data: np.ndarray) -> np.ndarray:
    data = data.astype(np.float64)
    return (data - data.mean()) / max(float(data.std()), 1e-8)


def _sample_loss(fixed_t: torch.Tensor, moving_t: torch.Tensor, w: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
    """MSE between fixed and the moving volume resampled through n -> W n + t.

    Coordinates are normalized to [-1, 1] per axis (align_corners
    convention), which makes the parameters resolution-independent.
    """
    shape = fixed_t.shape[2:]
    axes = [torch.linspace(-1.0, 1.0, n, dtype=torch.float64) for n in shape]
    gz, gy, gx = torch.meshgrid(*axes, indexing="ij")
    base = torch.stack([gz, gy, gx], dim=-1).reshape(-1, 3)
    mapped = base @ w.T + t
    # grid_sample wants (x, y, z) order in the last axis
    grid = mapped.flip(-1).reshape(1, *shape, 3)
    warped = torch.nn.functional.grid_sample(
        moving_t, grid, mode="bilinear", padding_mode="border", align_corners=True)
    return torch.mean((warped - fixed_t) ** 2)


def affine_register(fixed: Volume, moving: Volume, config: AffineConfig | None = None) -> RegistrationResult:
    """Estimate the affine sampling map fixed -> moving, coarse to fine.

    Plain gradient descent with backtracking line search, so the recorded
    loss is monotonically non-increasing within every level. The returned
    dense field is the induced *forward* map (moving-space points to
    fixed-space points), directly usable for prompt propagation when
    ``moving`` is the baseline and ``fixed`` the follow-up.
    """
    check_same_shape(fixed.data, moving.data, "fixed/moving volumes")
    config = config or AffineConfig()
    factors = [2 ** (config.levels - 1 - i) for i in range(config.levels)]

    w = torch.eye(3, dtype=torch.float64, requires_grad=True)
    t = torch.zeros(3, dtype=torch.float64, requires_grad=True)
    lr = config.lr
    history: list[tuple[float, ...]] = []
    last_step_vox = 0.0

    for level, factor in enumerate(factors):
        fixed_l = _normalized(_downsample(fixed.data, factor))
        moving_l = _normalized(_downsample(moving.data, factor))
        fixed_t = torch.from_numpy(fixed_l)[None, None]
        moving_t = torch.from_numpy(moving_l)[None, None]
        n_iter = config.iterations[min(level, len(config.iterations) - 1)]

        level_losses = []
        with torch.no_grad():
            level_losses.append(float(_sample_loss(fixed_t, moving_t, w, t)))
        for _ in range(n_iter):
            w.grad = None
            t.grad = None
            loss = _sample_loss(fixed_t, moving_t, w, t)
            loss.backward()
            accepted = False
            for _ in range(config.max_halvings):
                with torch.no_grad():
                    w_new = (w - lr * w.grad).detach().requires_grad_(True)
                    t_new = (t - lr * t.grad).detach().requires_grad_(True)
                with torch.no_grad():
                    new_loss = float(_sample_loss(fixed_t, moving_t, w_new, t_new))
                if new_loss < level_losses[-1]:
                    with torch.no_grad():
                        step_norm = float(torch.norm(torch.cat([(w_new - w).reshape(-1), t_new - t])))
                    last_step_vox = step_norm * max(fixed.shape) / 2.0
                    w, t = w_new, t_new
                    level_losses.append(new_loss)
                    lr *= 1.2
                    accepted = True
                    break
                lr *= 0.5
            if not accepted:
                break
        history.append(tuple(level_losses))

    # convert normalized-coordinate map to a voxel-space sampling map
    shape = np.asarray(fixed.shape, dtype=np.float64)
    scale = 2.0 / np.maximum(shape - 1.0, 1.0)
    d = np.diag(scale)
    d_inv = np.diag(1.0 / scale)
    w_np = w.detach().numpy()
    t_np = t.detach().numpy()
    a_vox = d_inv @ w_np @ d
    b_vox = d_inv @ (t_np + w_np @ (-np.ones(3)) + np.ones(3))

    # forward map for prompts is the inverse of the sampling map
    a_fwd = np.linalg.inv(a_vox)
    grid = np.stack(np.indices(fixed.shape, dtype=np.float64), axis=-1)
    disp = (grid - b_vox) @ a_fwd.T - grid
    return RegistrationResult(
        DeformationField(disp), RegistrationMethod.AFFINE,
        residual_error_vox=float(last_step_vox), loss_history=tuple(history))


def propose_followup_prompt(case: LongitudinalCase, lesion_id: int, reg: RegistrationResult) -> PromptPoint:
    """Registration-propagated follow-up prompt for a baseline click."""
    if lesion_id not in case.baseline_prompts:
        raise MissingLesion(f"lesion {lesion_id} has no baseline prompt in case {case.case_id}")
    return apply_field(reg.field, case.baseline_prompts[lesion_id])
