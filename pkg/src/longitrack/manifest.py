"""Dataset manifests: NIfTI volumes plus a versioned JSON index.

Manifest schema (version 1)::

    {
      "schema": 1,
      "cases": [
        {
          "case_id": "case_0000",
          "kind": "standard" | "ambiguity",
          "baseline_image": "case_0000_baseline.nii.gz",
          "baseline_mask": "case_0000_baseline_mask.nii.gz",
          "followup_image": "case_0000_followup.nii.gz",
          "followup_mask": "case_0000_followup_mask.nii.gz",
          "truth_field": "case_0000_field.nii.gz" | null,
          "prompts": {"1": [z, y, x], ...}
        }, ...
      ]
    }

Paths are relative to the manifest file. Every lesion id present in the
baseline mask must have a prompt entry.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

from .core import DeformationField, InstanceMask, LongitudinalCase, PromptPoint, Role, Volume
from .errors import ParseError
from .nifti import load_nifti, save_nifti

MANIFEST_SCHEMA = 1
MANIFEST_NAME = "manifest.json"


def save_manifest(cases: Sequence[LongitudinalCase], out_dir) -> Path:
    """Write all case volumes as .nii.gz plus the manifest; returns its path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for case in cases:
        b_vol, b_mask = case.baseline
        f_vol, f_mask = case.followup
        names = {
            "baseline_image": f"{case.case_id}_baseline.nii.gz",
            "baseline_mask": f"{case.case_id}_baseline_mask.nii.gz",
            "followup_image": f"{case.case_id}_followup.nii.gz",
            "followup_mask": f"{case.case_id}_followup_mask.nii.gz",
        }
        save_nifti(out_dir / names["baseline_image"], b_vol.data, b_vol.spacing, b_vol.origin)
        save_nifti(out_dir / names["baseline_mask"], b_mask.labels, b_vol.spacing, b_vol.origin)
        save_nifti(out_dir / names["followup_image"], f_vol.data, f_vol.spacing, f_vol.origin)
        save_nifti(out_dir / names["followup_mask"], f_mask.labels, f_vol.spacing, f_vol.origin)
        entry = {"case_id": case.case_id, "kind": case.kind, **names, "truth_field": None}
        if case.truth_field is not None:
            entry["truth_field"] = f"{case.case_id}_field.nii.gz"
            save_nifti(out_dir / entry["truth_field"], case.truth_field.disp,
                       b_vol.spacing, b_vol.origin)
        entry["prompts"] = {str(lid): list(p.coord) for lid, p in sorted(case.baseline_prompts.items())}
        entries.append(entry)
    manifest_path = out_dir / MANIFEST_NAME
    with open(manifest_path, "w") as f:
        json.dump({"schema": MANIFEST_SCHEMA, "cases": entries}, f, indent=2)
    return manifest_path


def _require(entry: dict, key: str, case_ref: str):
    if key not in entry:
        raise ParseError(f"manifest case {case_ref}: missing field '{key}'")
    return entry[key]


def _load_volume(base: Path, name: str, case_ref: str) -> Volume:
    path = base / name
    if not path.exists():
        raise FileNotFoundError(f"manifest case {case_ref}: missing NIfTI file {path}")
    data, spacing, origin = load_nifti(path)
    return Volume(data, spacing, origin)


def load_manifest(path) -> list[LongitudinalCase]:
    """Load and validate a dataset; raises ParseError with field context."""
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(doc, dict) or "schema" not in doc:
        raise ParseError(f"{path}: missing 'schema' field")
    if doc["schema"] != MANIFEST_SCHEMA:
        raise ParseError(f"{path}: unsupported schema version {doc['schema']} "
                         f"(expected {MANIFEST_SCHEMA})")
    base = path.parent
    cases = []
    for i, entry in enumerate(doc.get("cases", [])):
        ref = entry.get("case_id", f"#{i}")
        case_id = _require(entry, "case_id", ref)
        b_vol = _load_volume(base, _require(entry, "baseline_image", ref), ref)
        b_mask_arr, _, _ = _load_maybe(base, _require(entry, "baseline_mask", ref), ref)
        f_vol = _load_volume(base, _require(entry, "followup_image", ref), ref)
        f_mask_arr, _, _ = _load_maybe(base, _require(entry, "followup_mask", ref), ref)
        b_mask = InstanceMask(b_mask_arr)
        f_mask = InstanceMask(f_mask_arr)

        field = None
        if entry.get("truth_field"):
            disp, _, _ = _load_maybe(base, entry["truth_field"], ref)
            field = DeformationField(disp)

        raw_prompts = _require(entry, "prompts", ref)
        prompts = {}
        for lid_str, coord in raw_prompts.items():
            try:
                lid = int(lid_str)
            except ValueError as exc:
                raise ParseError(f"manifest case {ref}: non-integer lesion id '{lid_str}'") from exc
            if not isinstance(coord, (list, tuple)) or len(coord) != 3:
                raise ParseError(f"manifest case {ref}: prompt for lesion {lid} must be [z, y, x]")
            prompts[lid] = PromptPoint(tuple(int(c) for c in coord), Role.BASELINE, lid)
        missing = [lid for lid in b_mask.instance_ids if lid not in prompts]
        if missing:
            raise ParseError(f"manifest case {ref}: missing prompt for lesion {missing[0]}")

        cases.append(LongitudinalCase(
            case_id=case_id,
            baseline=(b_vol, b_mask),
            followup=(f_vol, f_mask),
            truth_field=field,
            baseline_prompts=prompts,
            kind=entry.get("kind", "standard"),
        ))
    return cases


def _load_maybe(base: Path, name: str, case_ref: str):
    path = base / name
    if not path.exists():
        raise FileNotFoundError(f"manifest case {case_ref}: missing NIfTI file {path}")
    return load_nifti(path)
