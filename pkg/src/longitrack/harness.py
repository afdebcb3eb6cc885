"""Experiment orchestration: the ablation grid and the paradigm comparison.

Reproduces the structure of the development tables at phantom scale: a
six-row ablation over fusion mode / prompt simulation / pretraining, and an
automatic-vs-verified evaluation with a sweep over registration error.
Acceptance is formulated as ordering constraints between rows, not absolute
scores; every emitted row carries the provenance (seed, config hash,
dataset hash) needed to re-run it.
"""

from __future__ import annotations

import hashlib
import json
import zlib
from dataclasses import dataclass, asdict, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import LongitudinalCase, centroid
from .errors import ConfigError
from .estimator import LongitudinalSegmenter
from .metrics import (
    DEFAULT_NSD_TOLERANCE_MM,
    LesionScore,
    MetricsReport,
    build_report,
    score_lesion,
)
from .registration import (
    RegistrationResult,
    affine_register,
    propose_followup_prompt,
    truth_with_noise,
)
from .synth import generate_dataset
from .train import pretrain_finetune

PARADIGMS = ("automatic", "verified")


@dataclass(frozen=True)
class RegistrationSpec:
    method: str = "truth"  # "truth" (calibrated noise) or "affine"
    error_vox: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.method not in ("truth", "affine"):
            raise ConfigError(f"unknown registration method '{self.method}'")
        if self.error_vox < 0:
            raise ConfigError("error_vox must be >= 0")


@dataclass(frozen=True)
class AblationRow:
    fusion_mode: str
    prompt_sim: bool = True
    pretrain: bool = False

    @property
    def label(self) -> str:
        arch = "single-tp" if self.fusion_mode == "single_timepoint" else "longitudinal"
        fusion = {"single_timepoint": "--", "concat": "concat",
                  "diff_weighting": "diff-weighting"}[self.fusion_mode]
        return (f"{arch:12s} {fusion:15s} sim={'y' if self.prompt_sim else 'n'} "
                f"pre={'y' if self.pretrain else 'n'}")


# six-row grid: single-timepoint with/without pretraining, concat ladder,
# then difference weighting with the full recipe
DEFAULT_ROWS = (
    AblationRow("single_timepoint", prompt_sim=True, pretrain=False),
    AblationRow("single_timepoint", prompt_sim=True, pretrain=True),
    AblationRow("concat", prompt_sim=False, pretrain=False),
    AblationRow("concat", prompt_sim=True, pretrain=False),
    AblationRow("concat", prompt_sim=True, pretrain=True),
    AblationRow("diff_weighting", prompt_sim=True, pretrain=True),
)


@dataclass(frozen=True)
class ExperimentSpec:
    """Dataset, split, training scale, and the rows/paradigms to run."""

    n_cases: int = 200
    ambiguity_fraction: float = 0.3
    shape: tuple[int, int, int] = (48, 48, 48)
    seed: int = 0
    split: tuple[float, float, float] = (0.534, 0.133, 0.333)
    rows: tuple[AblationRow, ...] = DEFAULT_ROWS
    paradigms: tuple[str, ...] = PARADIGMS
    error_vox_sweep: tuple[float, ...] = (0.0, 1.0, 2.0, 4.0)
    # training scale (single-core friendly defaults)
    voi_size: int = 32
    n_levels: int = 3
    base_channels: int = 8
    epochs: int = 100
    batch_size: int = 4
    samples_per_epoch: int | None = 160
    pretrain_cases: int = 60
    pretrain_epochs: int = 20
    n_bootstrap: int = 1000
    nsd_tolerance_mm: float = DEFAULT_NSD_TOLERANCE_MM

    def __post_init__(self):
        if abs(sum(self.split) - 1.0) > 1e-6:
            raise ConfigError(f"split ratios must sum to 1, got {self.split}")
        if not 0.0 <= self.ambiguity_fraction <= 1.0:
            raise ConfigError("ambiguity_fraction must lie in [0, 1]")
        for p in self.paradigms:
            if p not in PARADIGMS:
                raise ConfigError(f"unknown paradigm '{p}'")

    def to_json(self) -> str:
        doc = asdict(self)
        doc["rows"] = [asdict(r) for r in self.rows]
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentSpec":
        doc = json.loads(text)
        if "rows" in doc:
            doc["rows"] = tuple(AblationRow(**r) for r in doc["rows"])
        for key in ("shape", "split", "paradigms", "error_vox_sweep"):
            if key in doc:
                doc[key] = tuple(doc[key])
        return cls(**doc)


def split_cases(cases: Sequence[LongitudinalCase], ratios: tuple[float, float, float],
                seed: int) -> dict[str, list[LongitudinalCase]]:
    """Patient-level split; every case lands in exactly one of train/val/test."""
    if abs(sum(ratios) - 1.0) > 1e-6:
        raise ConfigError(f"split ratios must sum to 1, got {ratios}")
    order = np.random.default_rng(seed).permutation(len(cases))
    n_train = int(round(ratios[0] * len(cases)))
    n_val = int(round(ratios[1] * len(cases)))
    idx = {
        "train": order[:n_train],
        "val": order[n_train:n_train + n_val],
        "test": order[n_train + n_val:],
    }
    return {k: [cases[i] for i in v] for k, v in idx.items()}


def _case_rng(seed: int, case_id: str) -> np.random.Generator:
    """Stable per-case generator: independent of case ordering."""
    return np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(case_id.encode())]))


def case_registration(case: LongitudinalCase, reg_spec: RegistrationSpec) -> RegistrationResult:
    if reg_spec.method == "affine":
        return affine_register(case.followup[0], case.baseline[0])
    rng = _case_rng(reg_spec.seed, case.case_id)
    return truth_with_noise(case, reg_spec.error_vox, rng)


def dataset_hash(cases: Sequence[LongitudinalCase]) -> str:
    digest = hashlib.sha256()
    for case in cases:
        digest.update(case.case_id.encode())
        digest.update(case.baseline[0].data.tobytes())
        digest.update(case.baseline[1].labels.tobytes())
        digest.update(case.followup[1].labels.tobytes())
    return digest.hexdigest()[:16]


def config_hash(params: dict) -> str:
    return hashlib.sha256(json.dumps(params, sort_keys=True, default=str).encode()).hexdigest()[:16]


def run_paradigm_eval(
    estimator: LongitudinalSegmenter,
    cases: Sequence[LongitudinalCase],
    paradigm: str,
    reg_spec: RegistrationSpec = RegistrationSpec(),
    tolerance_mm: float = DEFAULT_NSD_TOLERANCE_MM,
    n_bootstrap: int = 1000,
    seed: int = 0,
) -> MetricsReport:
    """Per-lesion inference under one tracking paradigm, bootstrap-aggregated.

    automatic: the follow-up prompt comes solely from registration applied
    to the baseline click. verified: the ground-truth follow-up centroid is
    used (falling back to the registration proposal for vanished lesions,
    which the model should segment as empty).
    """
    if paradigm not in PARADIGMS:
        raise ConfigError(f"unknown paradigm '{paradigm}'")
    scores: list[LesionScore] = []
    for case in cases:
        reg = None
        for lid in sorted(case.baseline_prompts):
            if paradigm == "automatic" or case.followup[1].voxel_count(lid) == 0:
                if reg is None:
                    reg = case_registration(case, reg_spec)
                prompt = propose_followup_prompt(case, lid, reg)
            else:
                prompt = centroid(case.followup[1], lid)
            pred = estimator.predict_one(case, lid, prompt)
            gt = case.followup[1].binary(lid)
            d, s, hit = score_lesion(pred, gt, tolerance_mm, case.followup[0].spacing)
            scores.append(LesionScore(case.case_id, lid, d, s, hit))
    return build_report(scores, tolerance_mm, n_bootstrap, seed)


def _row_estimator(spec: ExperimentSpec, row: AblationRow, seed: int) -> LongitudinalSegmenter:
    return LongitudinalSegmenter(
        fusion_mode=row.fusion_mode,
        n_levels=spec.n_levels,
        base_channels=spec.base_channels,
        voi_size=spec.voi_size,
        epochs=spec.epochs,
        batch_size=spec.batch_size,
        samples_per_epoch=spec.samples_per_epoch,
        prompt_sim_enabled=row.prompt_sim,
        seed=seed,
    )


def train_row(spec: ExperimentSpec, row: AblationRow,
              train_val_cases: Sequence[LongitudinalCase],
              pretrain_pool: Sequence[LongitudinalCase] | None = None,
              seed: int | None = None) -> LongitudinalSegmenter:
    """Train one ablation row on the shared data with the shared seed."""
    seed = spec.seed if seed is None else seed
    est = _row_estimator(spec, row, seed)
    if not row.pretrain:
        return est.fit(train_val_cases)
    if pretrain_pool is None:
        pretrain_pool = generate_dataset(spec.pretrain_cases, spec.shape,
                                         seed=spec.seed + 500_000,
                                         n_ambiguity=int(round(spec.ambiguity_fraction
                                                               * spec.pretrain_cases)))
    pre_cfg = replace(est.train_config(), epochs=spec.pretrain_epochs)
    model, log = pretrain_finetune(list(pretrain_pool), list(train_val_cases),
                                   est.net_config(), pre_cfg, est.train_config())
    est.model_ = model
    est.history_ = log
    return est


@dataclass
class AblationResult:
    rows: list[dict] = field(default_factory=list)

    def table(self) -> str:
        header = (f"{'row':44s}  {'DSC':12s} {'NSD':12s} {'LDR':5s}\n"
                  + "-" * 80)
        lines = [header]
        for row in self.rows:
            lines.append(f"{row['label']:44s}  {row['table_row']}")
        return "\n".join(lines)

    def to_json(self) -> str:
        return json.dumps({"schema": 1, "rows": self.rows}, indent=2)


def run_ablation(spec: ExperimentSpec, out_dir=None, log=print) -> AblationResult:
    """Train/evaluate every row on identical data, splits, and seeds.

    Rows are evaluated on the validation split under verified-style prompts;
    the emitted table mirrors the six-row ablation layout (DSC, NSD, LDR on
    the 0-100 scale).
    """
    if not spec.rows:
        raise ConfigError("ablation spec has no rows")
    n_amb = int(round(spec.ambiguity_fraction * spec.n_cases))
    cases = generate_dataset(spec.n_cases, spec.shape, seed=spec.seed, n_ambiguity=n_amb)
    splits = split_cases(cases, spec.split, spec.seed)
    train_val = splits["train"] + splits["val"]
    ds_hash = dataset_hash(cases)

    pretrain_pool = None
    if any(row.pretrain for row in spec.rows):
        pretrain_pool = generate_dataset(
            spec.pretrain_cases, spec.shape, seed=spec.seed + 500_000,
            n_ambiguity=int(round(spec.ambiguity_fraction * spec.pretrain_cases)))

    result = AblationResult()
    for row in spec.rows:
        log(f"[ablation] training {row.label}")
        est = train_row(spec, row, train_val, pretrain_pool)
        report = run_paradigm_eval(est, splits["val"], "verified",
                                   RegistrationSpec(seed=spec.seed),
                                   tolerance_mm=spec.nsd_tolerance_mm,
                                   n_bootstrap=spec.n_bootstrap, seed=spec.seed)
        result.rows.append({
            "label": row.label,
            "fusion_mode": row.fusion_mode,
            "prompt_sim": row.prompt_sim,
            "pretrain": row.pretrain,
            "dsc": report.dsc_mean, "dsc_std": report.dsc_std,
            "nsd": report.nsd_mean, "nsd_std": report.nsd_std,
            "ldr": report.ldr,
            "table_row": report.table_row(),
            "provenance": {
                "seed": spec.seed,
                "config_hash": config_hash(est.get_params()),
                "dataset_hash": ds_hash,
            },
        })
        log(f"[ablation]   {row.label}: {report.table_row()}")

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "results.json").write_text(result.to_json())
        (out_dir / "table.txt").write_text(result.table() + "\n")
        (out_dir / "spec.json").write_text(spec.to_json())
    return result
