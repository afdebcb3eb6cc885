import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import longitrack as lt
from longitrack.core import voi_start


class TestVolume:
    def test_rejects_nan(self):
        data = np.zeros((4, 4, 4))
        data[0, 0, 0] = np.nan
        with pytest.raises(ValueError):
            lt.Volume(data)

    def test_rejects_bad_spacing(self):
        with pytest.raises(ValueError):
            lt.Volume(np.zeros((4, 4, 4)), spacing=(0.0, 1.0, 1.0))

    def test_rejects_2d(self):
        with pytest.raises(ValueError):
            lt.Volume(np.zeros((4, 4)))

    def test_data_is_immutable(self):
        vol = lt.Volume(np.zeros((4, 4, 4)))
        with pytest.raises(ValueError):
            vol.data[0, 0, 0] = 1.0


class TestInstanceMask:
    def test_instance_ids(self, cube_mask):
        assert cube_mask.instance_ids == (1,)

    def test_rejects_negative_labels(self):
        with pytest.raises(ValueError):
            lt.InstanceMask(np.full((3, 3, 3), -1, dtype=np.int32))


class TestPromptPoint:
    def test_role_coercion(self):
        p = lt.PromptPoint((1, 2, 3), "proposed", 2)
        assert p.role is lt.Role.PROPOSED

    def test_rejects_nonpositive_lesion(self):
        with pytest.raises(ValueError):
            lt.PromptPoint((0, 0, 0), lesion_id=0)


class TestCentroid:
    def test_single_voxel(self):
        labels = np.zeros((9, 9, 9), dtype=np.uint16)
        labels[4, 4, 4] = 1
        assert lt.centroid(lt.InstanceMask(labels), 1).coord == (4, 4, 4)

    def test_solid_cube(self):
        labels = np.zeros((9, 9, 9), dtype=np.uint16)
        labels[2:5, 2:5, 2:5] = 1
        assert lt.centroid(lt.InstanceMask(labels), 1).coord == (3, 3, 3)

    def test_missing_lesion(self, cube_mask):
        with pytest.raises(lt.MissingLesion):
            lt.centroid(cube_mask, 7)

    def test_c_shape_snaps_into_mask(self):
        # ring in one z-plane; the coordinate mean falls in the hole
        labels = np.zeros((5, 11, 11), dtype=np.uint16)
        yy, xx = np.mgrid[0:11, 0:11]
        r = np.sqrt((yy - 5.0) ** 2 + (xx - 5.0) ** 2)
        ring = (r >= 3.0) & (r <= 4.6)
        labels[2][ring] = 1
        mask = lt.InstanceMask(labels)
        got = lt.centroid(mask, 1)
        assert mask.labels[got.coord] == 1
        # oracle: exhaustive scan for the in-mask voxel nearest the float mean
        coords = np.argwhere(labels == 1)
        mean = coords.mean(axis=0)
        d2 = ((coords - mean) ** 2).sum(axis=1)
        best = sorted(
            (float(d), tuple(int(v) for v in c)) for d, c in zip(d2, coords)
        )[0]
        assert got.coord == best[1]

    def test_translation_equivariance(self):
        labels = np.zeros((16, 16, 16), dtype=np.uint16)
        labels[3:6, 4:9, 2:7] = 1
        base = lt.centroid(lt.InstanceMask(labels), 1).coord
        shifted = np.roll(labels, (4, 2, 5), axis=(0, 1, 2))
        got = lt.centroid(lt.InstanceMask(shifted), 1).coord
        assert got == (base[0] + 4, base[1] + 2, base[2] + 5)


class TestCropPad:
    def test_interior_crop_equals_slice(self, small_volume):
        patch = lt.crop_pad(small_volume, (8, 8, 8), (6, 6, 6))
        np.testing.assert_array_equal(patch.data, small_volume.data[5:11, 5:11, 5:11])
        assert patch.spacing == small_volume.spacing

    def test_corner_crop_matches_loop_oracle(self, small_volume):
        size = (8, 8, 8)
        patch = lt.crop_pad(small_volume, (0, 0, 0), size)
        pad = float(small_volume.data.min())
        expected = np.full(size, pad, dtype=np.float32)
        for dz in range(size[0]):
            for dy in range(size[1]):
                for dx in range(size[2]):
                    z, y, x = dz - 4, dy - 4, dx - 4
                    if 0 <= z < 16 and 0 <= y < 16 and 0 <= x < 16:
                        expected[dz, dy, dx] = small_volume.data[z, y, x]
        np.testing.assert_array_equal(patch.data, expected)

    def test_full_volume_crop_is_identity(self, small_volume):
        patch = lt.crop_pad(small_volume, (8, 8, 8), (16, 16, 16))
        np.testing.assert_array_equal(patch.data, small_volume.data)

    def test_custom_pad_value(self, small_volume):
        patch = lt.crop_pad(small_volume, (0, 0, 0), (4, 4, 4), pad_value=-7.0)
        assert patch.data[0, 0, 0] == -7.0

    @settings(max_examples=40, deadline=None)
    @given(
        center=st.tuples(*(st.integers(0, 15) for _ in range(3))),
        size=st.tuples(*(st.integers(1, 20) for _ in range(3))),
    )
    def test_center_voxel_roundtrip(self, center, size):
        data = np.arange(16 ** 3, dtype=np.float32).reshape(16, 16, 16)
        vol = lt.Volume(data)
        patch = lt.crop_pad(vol, center, size)
        local = tuple(s // 2 for s in size)
        assert patch.data[local] == data[center]

    def test_mask_crop_pads_background(self, cube_mask):
        patch = lt.crop_pad_labels(cube_mask, (0, 0, 0), (8, 8, 8))
        assert patch.labels[0, 0, 0] == 0


class TestFields:
    def test_zero_field_jacobian_is_one(self):
        field = lt.DeformationField.zeros((8, 8, 8))
        np.testing.assert_allclose(lt.jacobian_determinant(field), 1.0)

    def test_fold_detection(self):
        # displacement reversing the z axis folds the map
        disp = np.zeros((8, 8, 8, 3), dtype=np.float32)
        disp[..., 0] = -2.0 * (np.arange(8)[:, None, None] - 3.5)
        field = lt.DeformationField(disp)
        assert lt.jacobian_determinant(field).min() < 0

    def test_warp_with_zero_field_is_identity(self, small_volume, cube_mask):
        field = lt.DeformationField.zeros((16, 16, 16))
        np.testing.assert_array_equal(lt.warp_volume(small_volume, field).data,
                                      small_volume.data)
        np.testing.assert_array_equal(lt.warp_mask(cube_mask, field).labels,
                                      cube_mask.labels)

    def test_translation_field_moves_mask(self, cube_mask):
        disp = np.zeros((16, 16, 16, 3), dtype=np.float32)
        disp[..., 2] = 3.0  # content moves +3 along x
        warped = lt.warp_mask(cube_mask, lt.DeformationField(disp))
        np.testing.assert_array_equal(warped.labels[4:9, 5:10, 9:14], 1)
        assert warped.voxel_count(1) == cube_mask.voxel_count(1)


class TestLongitudinalCase:
    def test_prompt_must_reference_existing_lesion(self, small_volume, cube_mask):
        with pytest.raises(lt.MissingLesion):
            lt.LongitudinalCase(
                "c", (small_volume, cube_mask), (small_volume, cube_mask),
                baseline_prompts={2: lt.PromptPoint((1, 1, 1), lesion_id=2)})

    def test_lesion_ids_union(self, small_volume, cube_mask):
        other = np.zeros((16, 16, 16), dtype=np.uint16)
        other[1:3, 1:3, 1:3] = 5
        case = lt.LongitudinalCase(
            "c", (small_volume, cube_mask), (small_volume, lt.InstanceMask(other)))
        assert case.lesion_ids == (1, 5)


def test_voi_start_even_rule():
    np.testing.assert_array_equal(voi_start((10, 10, 10), (8, 8, 8)), [6, 6, 6])
    np.testing.assert_array_equal(voi_start((10, 10, 10), (7, 7, 7)), [7, 7, 7])
