"""Scikit-learn style facade over the dual-timepoint segmenter.

``LongitudinalSegmenter`` wraps network construction, training, and
per-lesion inference behind fit/predict/score with sklearn parameter
semantics (constructor args stored verbatim, ``get_params``/``set_params``
inherited), so the model drops into pipelines and grid searches.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .core import LongitudinalCase, PromptPoint
from .errors import ConfigError
from .net import (
    DualTimepointUNet,
    NetConfig,
    load_checkpoint,
    save_checkpoint,
)
from .train import TrainConfig, TrainingLog, fit, predict_voi, _verified_prompt
from .validation import check_point_in_bounds

PredictionRequest = tuple[LongitudinalCase, int, Optional[PromptPoint]]


class LongitudinalSegmenter(BaseEstimator):
    """Promptable dual-timepoint lesion segmenter.

    Parameters mirror NetConfig/TrainConfig; ``fit`` takes a list of
    LongitudinalCase, ``predict`` takes (case, lesion_id, follow-up prompt)
    requests and returns full-volume boolean masks. A request with prompt
    ``None`` uses the verified-tracking convention (ground-truth follow-up
    centroid, or the propagated baseline click for vanished lesions).
    """

    def __init__(
        self,
        fusion_mode: str = "diff_weighting",
        n_levels: int = 4,
        base_channels: int = 16,
        voi_size=(48, 48, 48),
        instnorm_epsilon: float = 1e-5,
        instnorm_affine: bool = False,
        prompt_sigma: float = 1.0,
        epochs: int = 30,
        batch_size: int = 4,
        lr: float = 0.01,
        momentum: float = 0.99,
        dice_weight: float = 1.0,
        ce_weight: float = 1.0,
        prompt_sim_enabled: bool = True,
        prompt_noise_vox: float = 2.0,
        val_fraction: float = 0.2,
        samples_per_epoch: Optional[int] = None,
        pretrain_checkpoint: Optional[str] = None,
        threshold: float = 0.5,
        seed: int = 0,
    ):
        self.fusion_mode = fusion_mode
        self.n_levels = n_levels
        self.base_channels = base_channels
        self.voi_size = voi_size
        self.instnorm_epsilon = instnorm_epsilon
        self.instnorm_affine = instnorm_affine
        self.prompt_sigma = prompt_sigma
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.momentum = momentum
        self.dice_weight = dice_weight
        self.ce_weight = ce_weight
        self.prompt_sim_enabled = prompt_sim_enabled
        self.prompt_noise_vox = prompt_noise_vox
        self.val_fraction = val_fraction
        self.samples_per_epoch = samples_per_epoch
        self.pretrain_checkpoint = pretrain_checkpoint
        self.threshold = threshold
        self.seed = seed

    # -- config assembly ----------------------------------------------------

    def net_config(self) -> NetConfig:
        return NetConfig(
            n_levels=self.n_levels,
            base_channels=self.base_channels,
            fusion_mode=self.fusion_mode,
            voi_size=self.voi_size if not np.isscalar(self.voi_size)
            else (self.voi_size,) * 3,
            instnorm_epsilon=self.instnorm_epsilon,
            instnorm_affine=self.instnorm_affine,
            prompt_sigma=self.prompt_sigma,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr=self.lr,
            momentum=self.momentum,
            dice_weight=self.dice_weight,
            ce_weight=self.ce_weight,
            seed=self.seed,
            prompt_sim_enabled=self.prompt_sim_enabled,
            prompt_noise_vox=self.prompt_noise_vox,
            val_fraction=self.val_fraction,
            samples_per_epoch=self.samples_per_epoch,
            pretrain_checkpoint=self.pretrain_checkpoint,
        )

    # -- estimator API -------------------------------------------------------

    def fit(self, X: Sequence[LongitudinalCase], y=None, log_path=None):
        model, log = fit(list(X), self.net_config(), self.train_config(), log_path=log_path)
        self.model_ = model
        self.history_ = log
        return self

    def _require_model(self) -> DualTimepointUNet:
        model = getattr(self, "model_", None)
        if model is None:
            raise ConfigError("estimator is not fitted and no checkpoint was loaded")
        return model

    def predict_proba_voi(self, case: LongitudinalCase, lesion_id: int,
                          prompt: Optional[PromptPoint] = None) -> tuple[np.ndarray, np.ndarray]:
        """(probability VOI, VOI start index) for a single request."""
        model = self._require_model()
        if prompt is None:
            prompt = _verified_prompt(case, lesion_id, np.random.default_rng(self.seed))
        else:
            check_point_in_bounds(prompt.coord, case.followup[0].shape, "follow-up prompt")
        return predict_voi(model, case, lesion_id, prompt)

    def predict_one(self, case: LongitudinalCase, lesion_id: int,
                    prompt: Optional[PromptPoint] = None) -> np.ndarray:
        """Full-volume boolean mask for one lesion."""
        probs, start = self.predict_proba_voi(case, lesion_id, prompt)
        full = np.zeros(case.followup[0].shape, dtype=bool)
        voi_mask = probs >= self.threshold
        lo = np.maximum(start, 0)
        hi = np.minimum(start + np.asarray(voi_mask.shape), full.shape)
        src_lo = lo - start
        src_hi = hi - start
        if np.all(hi > lo):
            full[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]] = \
                voi_mask[src_lo[0]:src_hi[0], src_lo[1]:src_hi[1], src_lo[2]:src_hi[2]]
        return full

    def predict(self, X: Sequence[PredictionRequest]) -> list[np.ndarray]:
        return [self.predict_one(case, lesion_id, prompt) for case, lesion_id, prompt in X]

    def score(self, X: Sequence[LongitudinalCase], y=None) -> float:
        """Mean verified-paradigm DSC over all promptable lesions."""
        from .metrics import score_lesion

        scores = []
        for case in X:
            for lid in sorted(case.baseline_prompts):
                pred = self.predict_one(case, lid, None)
                gt = case.followup[1].binary(lid)
                scores.append(score_lesion(pred, gt, tolerance_mm=2.0,
                                           spacing=case.followup[0].spacing)[0])
        return float(np.mean(scores)) if scores else float("nan")

    # -- persistence ----------------------------------------------------------

    def save(self, path) -> None:
        model = self._require_model()
        save_checkpoint(path, model, extra={"estimator_params": self.get_params()})

    @classmethod
    def load(cls, path) -> "LongitudinalSegmenter":
        model, extra = load_checkpoint(path)
        params = extra.get("estimator_params", {})
        est = cls(**params) if params else cls()
        est.fusion_mode = model.config.fusion_mode.value
        est.n_levels = model.config.n_levels
        est.base_channels = model.config.base_channels
        est.voi_size = model.config.voi_size
        est.instnorm_epsilon = model.config.instnorm_epsilon
        est.instnorm_affine = model.config.instnorm_affine
        est.prompt_sigma = model.config.prompt_sigma
        est.model_ = model
        est.history_ = TrainingLog()
        return est
