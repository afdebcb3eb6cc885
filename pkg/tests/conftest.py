"""Shared fixtures. Heavy experiment fixtures live in test_acceptance.py."""

import numpy as np
import pytest

import longitrack as lt


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


@pytest.fixture()
def small_volume():
    data = np.linspace(0.0, 1.0, 16 ** 3, dtype=np.float32).reshape(16, 16, 16)
    return lt.Volume(data, spacing=(1.5, 1.0, 1.0))


@pytest.fixture()
def cube_mask():
    labels = np.zeros((16, 16, 16), dtype=np.uint16)
    labels[4:9, 5:10, 6:11] = 1
    return lt.InstanceMask(labels)


def make_case(seed=3, shape=(32, 32, 32), mode=lt.GrowthMode.STABLE, magnitude=0.4):
    vol, mask = lt.generate_phantom(seed, shape, n_lesions=1)
    params = {1: lt.GrowthParams(mode, magnitude=magnitude, noise_sigma=0.0)}
    f_vol, f_mask, field = lt.synthesize_followup((vol, mask), params, seed=seed + 1)
    return lt.LongitudinalCase(
        case_id=f"case_{seed}",
        baseline=(vol, mask),
        followup=(f_vol, f_mask),
        truth_field=field,
        baseline_prompts={1: lt.centroid(mask, 1)},
    )


@pytest.fixture()
def stable_case():
    return make_case()
