import json

import numpy as np
import pytest

import longitrack as lt
from longitrack.manifest import load_manifest, save_manifest

from conftest import make_case


def case_equal(a: lt.LongitudinalCase, b: lt.LongitudinalCase) -> bool:
    checks = [
        a.case_id == b.case_id,
        a.kind == b.kind,
        np.array_equal(a.baseline[0].data, b.baseline[0].data),
        a.baseline[0].spacing == b.baseline[0].spacing,
        np.array_equal(a.baseline[1].labels, b.baseline[1].labels),
        np.array_equal(a.followup[0].data, b.followup[0].data),
        np.array_equal(a.followup[1].labels, b.followup[1].labels),
        {k: v.coord for k, v in a.baseline_prompts.items()}
        == {k: v.coord for k, v in b.baseline_prompts.items()},
    ]
    if a.truth_field is None or b.truth_field is None:
        checks.append(a.truth_field is b.truth_field)
    else:
        checks.append(np.array_equal(a.truth_field.disp, b.truth_field.disp))
    return all(checks)


@pytest.fixture(scope="module")
def dataset():
    return [make_case(seed=500, shape=(24, 24, 24), mode=lt.GrowthMode.GROW),
            lt.make_ambiguity_case(7, (24, 24, 24), case_id="amb_0")]


def test_round_trip(tmp_path, dataset):
    save_manifest(dataset, tmp_path)
    loaded = load_manifest(tmp_path)
    assert len(loaded) == len(dataset)
    for a, b in zip(dataset, loaded):
        assert case_equal(a, b)


def test_kind_preserved(tmp_path, dataset):
    save_manifest(dataset, tmp_path)
    loaded = load_manifest(tmp_path)
    assert loaded[1].kind == "ambiguity"


def test_missing_prompt_named(tmp_path, dataset):
    path = save_manifest(dataset, tmp_path)
    doc = json.loads(path.read_text())
    doc["cases"][0]["prompts"] = {}
    path.write_text(json.dumps(doc))
    with pytest.raises(lt.ParseError, match="lesion 1"):
        load_manifest(tmp_path)


def test_missing_nifti_named(tmp_path, dataset):
    path = save_manifest(dataset, tmp_path)
    missing = tmp_path / dataset[0].case_id
    target = json.loads(path.read_text())["cases"][0]["baseline_image"]
    (tmp_path / target).unlink()
    with pytest.raises(FileNotFoundError, match=target):
        load_manifest(tmp_path)


def test_unknown_schema_rejected(tmp_path, dataset):
    path = save_manifest(dataset, tmp_path)
    doc = json.loads(path.read_text())
    doc["schema"] = 2
    path.write_text(json.dumps(doc))
    with pytest.raises(lt.ParseError, match="schema"):
        load_manifest(tmp_path)


def test_invalid_json_has_line_context(tmp_path, dataset):
    path = save_manifest(dataset, tmp_path)
    path.write_text("{broken json")
    with pytest.raises(lt.ParseError, match="line"):
        load_manifest(tmp_path)


def test_missing_field_context(tmp_path, dataset):
    path = save_manifest(dataset, tmp_path)
    doc = json.loads(path.read_text())
    del doc["cases"][0]["followup_image"]
    path.write_text(json.dumps(doc))
    with pytest.raises(lt.ParseError, match="followup_image"):
        load_manifest(tmp_path)


def test_manifest_not_found(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_manifest(tmp_path / "nowhere")
