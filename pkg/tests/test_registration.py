import numpy as np
import pytest

import longitrack as lt
from longitrack.registration import RegistrationMethod
from longitrack.synth import GrowthMode

from conftest import make_case


class TestApplyField:
    def test_zero_field_identity(self):
        field = lt.DeformationField.zeros((16, 16, 16))
        p = lt.PromptPoint((5, 6, 7), lesion_id=2)
        moved = lt.apply_field(field, p)
        assert moved.coord == (5, 6, 7)
        assert moved.role is lt.Role.PROPOSED
        assert moved.lesion_id == 2

    def test_constant_field(self):
        disp = np.zeros((16, 16, 16, 3), dtype=np.float32)
        disp[..., 0] = 2.0
        disp[..., 1] = -1.0
        moved = lt.apply_field(lt.DeformationField(disp), lt.PromptPoint((10, 10, 10)))
        assert moved.coord == (12, 9, 10)

    def test_clamped_to_bounds(self):
        disp = np.full((8, 8, 8, 3), 20.0, dtype=np.float32)
        moved = lt.apply_field(lt.DeformationField(disp), lt.PromptPoint((4, 4, 4)))
        assert moved.coord == (7, 7, 7)

    def test_out_of_bounds_prompt(self):
        field = lt.DeformationField.zeros((8, 8, 8))
        with pytest.raises(lt.OutOfBounds):
            lt.apply_field(field, lt.PromptPoint((9, 0, 0)))

    def test_grow_field_moves_boundary_outward(self):
        case = make_case(seed=15, mode=lt.GrowthMode.GROW, magnitude=0.6)
        mask = case.baseline[1]
        center = np.asarray(lt.centroid(mask, 1).coord, dtype=float)
        surface = np.argwhere(mask.labels == 1)
        # pick the lesion voxel farthest from the centroid (a boundary voxel)
        boundary = surface[np.argmax(((surface - center) ** 2).sum(axis=1))]
        disp = case.truth_field.disp[tuple(boundary)]
        outward = boundary - center
        assert float(np.dot(disp, outward)) > 0


class TestTruthWithNoise:
    def test_zero_error_exact(self, stable_case, rng):
        reg = lt.truth_with_noise(stable_case, 0.0, rng)
        assert reg.method is RegistrationMethod.TRUTH_NOISY
        np.testing.assert_array_equal(reg.field.disp, stable_case.truth_field.disp)
        assert reg.residual_error_vox == 0.0

    def test_mean_perturbation_calibrated(self, stable_case):
        for error in (0.5, 2.0, 3.0):
            rng = np.random.default_rng(17)
            reg = lt.truth_with_noise(stable_case, error, rng)
            delta = reg.field.disp.astype(np.float64) - stable_case.truth_field.disp
            mean_mag = np.linalg.norm(delta, axis=-1).mean()
            assert abs(mean_mag - error) < 0.1 * error

    def test_fold_free_at_moderate_error(self):
        case = make_case(seed=20, mode=lt.GrowthMode.GROW, magnitude=0.5)
        for seed in range(3):
            rng = np.random.default_rng(seed)
            reg = lt.truth_with_noise(case, 3.0, rng)
            assert lt.jacobian_determinant(reg.field).min() > 0

    def test_requires_truth_field(self, stable_case, rng):
        case = lt.LongitudinalCase(
            "nf", stable_case.baseline, stable_case.followup, None,
            stable_case.baseline_prompts)
        with pytest.raises(lt.MissingField):
            lt.truth_with_noise(case, 1.0, rng)


class TestAffineRegister:
    def test_self_registration_near_identity(self):
        vol, _ = lt.generate_phantom(30, (32, 32, 32), 2)
        reg = lt.affine_register(vol, vol)
        assert reg.method is RegistrationMethod.AFFINE
        mean_disp = np.linalg.norm(reg.field.disp, axis=-1).mean()
        assert mean_disp < 0.1

    def test_translation_recovery(self):
        from scipy import ndimage

        vol, _ = lt.generate_phantom(31, (32, 32, 32), 2)
        shifted = lt.Volume(ndimage.shift(vol.data, (0, 0, 3), order=1, mode="nearest"),
                            vol.spacing)
        # moving content sits +3 along x relative to fixed
        reg = lt.affine_register(vol, shifted)
        # forward field maps moving points onto fixed: expect about (0, 0, -3)
        inner = reg.field.disp[8:-8, 8:-8, 8:-8]
        mean_vec = inner.reshape(-1, 3).mean(axis=0)
        np.testing.assert_allclose(mean_vec, [0.0, 0.0, -3.0], atol=0.5)

    def test_loss_monotone_per_level(self):
        vol, _ = lt.generate_phantom(32, (32, 32, 32), 1)
        shifted = lt.Volume(np.roll(vol.data, 2, axis=0), vol.spacing)
        reg = lt.affine_register(vol, shifted)
        for level_losses in reg.loss_history:
            diffs = np.diff(np.asarray(level_losses))
            assert np.all(diffs <= 0)

    def test_deterministic(self):
        vol, _ = lt.generate_phantom(33, (32, 32, 32), 1)
        shifted = lt.Volume(np.roll(vol.data, 2, axis=1), vol.spacing)
        a = lt.affine_register(vol, shifted)
        b = lt.affine_register(vol, shifted)
        np.testing.assert_array_equal(a.field.disp, b.field.disp)

    def test_shape_mismatch(self):
        a = lt.Volume(np.zeros((8, 8, 8)))
        b = lt.Volume(np.zeros((8, 8, 10)))
        with pytest.raises(lt.ShapeError):
            lt.affine_register(a, b)


class TestProposeFollowupPrompt:
    def test_exact_truth_lands_inside_stable_lesion(self, stable_case, rng):
        reg = lt.truth_with_noise(stable_case, 0.0, rng)
        p = lt.propose_followup_prompt(stable_case, 1, reg)
        assert stable_case.followup[1].labels[p.coord] == 1
        assert p.role is lt.Role.PROPOSED

    def test_vanished_lesion_still_gets_proposal(self):
        case = make_case(seed=40, mode=lt.GrowthMode.VANISH)
        rng = np.random.default_rng(0)
        reg = lt.truth_with_noise(case, 0.0, rng)
        p = lt.propose_followup_prompt(case, 1, reg)
        assert case.followup[1].voxel_count(1) == 0
        assert p is not None

    def test_unknown_lesion(self, stable_case, rng):
        reg = lt.truth_with_noise(stable_case, 0.0, rng)
        with pytest.raises(lt.MissingLesion):
            lt.propose_followup_prompt(stable_case, 9, reg)

    def test_miss_rate_grows_with_error(self):
        cases = [make_case(seed=50 + i, mode=lt.GrowthMode.STABLE) for i in range(12)]
        miss = {}
        for error in (0.0, 2.0, 6.0):
            outside = total = 0
            for i, case in enumerate(cases):
                rng = np.random.default_rng(1000 + i)
                reg = lt.truth_with_noise(case, error, rng)
                p = lt.propose_followup_prompt(case, 1, reg)
                outside += int(case.followup[1].labels[p.coord] != 1)
                total += 1
            miss[error] = outside / total
        assert miss[0.0] <= miss[2.0] <= miss[6.0]
        assert miss[6.0] > miss[0.0]
