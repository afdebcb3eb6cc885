import numpy as np
import pytest
from scipy import ndimage

import longitrack as lt
from longitrack.synth import GrowthMode, GrowthParams


class TestGeneratePhantom:
    def test_empty_case(self):
        vol, mask = lt.generate_phantom(0, (32, 32, 32), 0)
        assert mask.labels.max() == 0
        assert mask.instance_ids == ()

    def test_determinism(self):
        a_vol, a_mask = lt.generate_phantom(5, (32, 32, 32), 2)
        b_vol, b_mask = lt.generate_phantom(5, (32, 32, 32), 2)
        np.testing.assert_array_equal(a_vol.data, b_vol.data)
        np.testing.assert_array_equal(a_mask.labels, b_mask.labels)

    def test_labels_match_connected_components(self):
        _, mask = lt.generate_phantom(1, (48, 48, 48), 3)
        assert mask.instance_ids == (1, 2, 3)
        structure = ndimage.generate_binary_structure(3, 3)
        labeled, n = ndimage.label(mask.labels > 0, structure=structure)
        assert n == 3
        # each connected component must coincide with exactly one label
        for comp in range(1, n + 1):
            ids = np.unique(mask.labels[labeled == comp])
            assert len(ids) == 1 and ids[0] != 0

    def test_lesion_gap(self):
        _, mask = lt.generate_phantom(2, (48, 48, 48), 3)
        for lid in (1, 2, 3):
            blob = mask.labels == lid
            grown = ndimage.binary_dilation(blob, iterations=2,
                                            structure=ndimage.generate_binary_structure(3, 3))
            others = (mask.labels > 0) & ~blob
            assert not np.any(grown & others)

    def test_placement_failure(self):
        with pytest.raises(lt.GenerationError):
            lt.generate_phantom(0, (16, 16, 16), 10)

    def test_lesions_brighter_than_background(self):
        vol, mask = lt.generate_phantom(3, (32, 32, 32), 1)
        lesion_mean = vol.data[mask.labels == 1].mean()
        bg_mean = vol.data[mask.labels == 0].mean()
        assert lesion_mean > bg_mean + 0.2


class TestSynthesizeFollowup:
    def test_identity(self):
        base = lt.generate_phantom(7, (32, 32, 32), 2)
        params = {lid: GrowthParams(GrowthMode.STABLE, magnitude=0.0, noise_sigma=0.0)
                  for lid in (1, 2)}
        f_vol, f_mask, field = lt.synthesize_followup(base, params, seed=1)
        np.testing.assert_array_equal(field.disp, 0.0)
        np.testing.assert_array_equal(f_vol.data, base[0].data)
        np.testing.assert_array_equal(f_mask.labels, base[1].labels)

    def test_grow_strictly_increases_count(self):
        base = lt.generate_phantom(8, (32, 32, 32), 1)
        _, f_mask, _ = lt.synthesize_followup(
            base, {1: GrowthParams(GrowthMode.GROW, magnitude=0.5)}, seed=2)
        assert f_mask.voxel_count(1) > base[1].voxel_count(1)

    def test_shrink_strictly_decreases_count(self):
        base = lt.generate_phantom(8, (32, 32, 32), 1)
        _, f_mask, _ = lt.synthesize_followup(
            base, {1: GrowthParams(GrowthMode.SHRINK, magnitude=0.5)}, seed=2)
        assert 0 < f_mask.voxel_count(1) < base[1].voxel_count(1)

    def test_vanish_empties_lesion(self):
        base = lt.generate_phantom(9, (32, 32, 32), 1)
        _, f_mask, field = lt.synthesize_followup(
            base, {1: GrowthParams(GrowthMode.VANISH)}, seed=3)
        assert f_mask.voxel_count(1) == 0
        assert 1 not in f_mask.instance_ids
        assert lt.jacobian_determinant(field).min() > 0

    def test_split_produces_two_components(self):
        base = lt.generate_phantom(11, (32, 32, 32), 1)
        _, f_mask, field = lt.synthesize_followup(
            base, {1: GrowthParams(GrowthMode.SPLIT, field_smoothness=0.7)}, seed=4)
        assert lt.jacobian_determinant(field).min() > 0
        _, n = ndimage.label(f_mask.labels == 1)
        assert n >= 2

    def test_warp_reproduces_followup_mask(self):
        base = lt.generate_phantom(10, (32, 32, 32), 2)
        params = {1: GrowthParams(GrowthMode.GROW, magnitude=0.6),
                  2: GrowthParams(GrowthMode.SHRINK, magnitude=0.4)}
        _, f_mask, field = lt.synthesize_followup(base, params, seed=5, affine_jitter=0.3)
        rewarped = lt.warp_mask(base[1], field)
        np.testing.assert_array_equal(rewarped.labels, f_mask.labels)

    def test_unknown_lesion_rejected(self):
        base = lt.generate_phantom(7, (32, 32, 32), 1)
        with pytest.raises(lt.MissingLesion):
            lt.synthesize_followup(base, {4: GrowthParams(GrowthMode.GROW)}, seed=0)

    def test_noise_applied(self):
        base = lt.generate_phantom(7, (32, 32, 32), 1)
        _, _, _ = lt.synthesize_followup(
            base, {1: GrowthParams(GrowthMode.STABLE, noise_sigma=0.0)}, seed=6)
        quiet, _, _ = lt.synthesize_followup(
            base, {1: GrowthParams(GrowthMode.STABLE, noise_sigma=0.0)}, seed=6)
        noisy, _, _ = lt.synthesize_followup(
            base, {1: GrowthParams(GrowthMode.STABLE, noise_sigma=0.05)}, seed=6)
        residual = noisy.data.astype(np.float64) - quiet.data
        assert abs(residual.std() - 0.05) < 0.005

    def test_determinism(self):
        base = lt.generate_phantom(12, (32, 32, 32), 1)
        params = {1: GrowthParams(GrowthMode.GROW, magnitude=0.5)}
        a = lt.synthesize_followup(base, params, seed=9, affine_jitter=0.5)
        b = lt.synthesize_followup(base, params, seed=9, affine_jitter=0.5)
        np.testing.assert_array_equal(a[0].data, b[0].data)
        np.testing.assert_array_equal(a[1].labels, b[1].labels)
        np.testing.assert_array_equal(a[2].disp, b[2].disp)

    def test_magnitude_validation(self):
        with pytest.raises(ValueError):
            GrowthParams(GrowthMode.GROW, magnitude=1.5)


class TestAmbiguityCase:
    def test_mask_excludes_confounder_and_field_zero(self):
        case = lt.make_ambiguity_case(0)
        assert case.kind == "ambiguity"
        assert case.baseline[1].instance_ids == (1,)
        np.testing.assert_array_equal(case.truth_field.disp, 0.0)
        np.testing.assert_array_equal(case.baseline[1].labels, case.followup[1].labels)

    def test_followup_intensities_indistinguishable(self):
        for seed in (0, 1, 2):
            case = lt.make_ambiguity_case(seed)
            target = case.followup[1].labels == 1
            img = case.followup[0].data.astype(np.float64)
            rng_span = img.max() - img.min()
            # confounder: the bright fused region minus the target
            bright = img > (img[target].mean() - 0.1 * rng_span)
            confounder = bright & ~ndimage.binary_dilation(target, iterations=1)
            assert confounder.sum() > 20
            gap = abs(img[target].mean() - img[confounder].mean())
            assert gap < 0.01 * rng_span

    def test_baseline_prior_is_strong(self):
        for seed in (0, 1, 2):
            case = lt.make_ambiguity_case(seed)
            target = case.baseline[1].labels == 1
            img_b = case.baseline[0].data.astype(np.float64)
            img_f = case.followup[0].data.astype(np.float64)
            rng_span = img_f.max() - img_f.min()
            bright_f = img_f > (img_f[target].mean() - 0.1 * rng_span)
            confounder = bright_f & ~ndimage.binary_dilation(target, iterations=1)
            gap = abs(img_b[target].mean() - img_b[confounder].mean())
            assert gap > 0.30 * rng_span

    def test_target_abuts_confounder(self):
        case = lt.make_ambiguity_case(3)
        target = case.followup[1].labels == 1
        img = case.followup[0].data
        grown = ndimage.binary_dilation(target, iterations=2)
        ring = grown & ~target
        # some immediately adjacent voxels share the lesion intensity
        lesion_level = img[target].mean()
        assert np.sum(np.abs(img[ring] - lesion_level) < 0.05) > 10

    def test_determinism(self):
        a = lt.make_ambiguity_case(4)
        b = lt.make_ambiguity_case(4)
        np.testing.assert_array_equal(a.baseline[0].data, b.baseline[0].data)
        np.testing.assert_array_equal(a.followup[0].data, b.followup[0].data)


class TestDatasetGeneration:
    def test_counts_and_kinds(self):
        cases = lt.generate_dataset(6, (32, 32, 32), seed=0, n_ambiguity=2)
        assert len(cases) == 6
        assert sum(c.kind == "ambiguity" for c in cases) == 2
        assert len({c.case_id for c in cases}) == 6

    def test_standard_case_has_prompts_and_field(self):
        case = lt.make_standard_case(21, (32, 32, 32))
        assert case.truth_field is not None
        assert set(case.baseline_prompts) == set(case.baseline[1].instance_ids)
        for lid, p in case.baseline_prompts.items():
            assert case.baseline[1].labels[p.coord] == lid
