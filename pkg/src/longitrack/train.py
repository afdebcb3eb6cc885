"""Loss, optimization loop, and the pretrain-then-finetune schedule.

One training sample is a (case, lesion) pair: a baseline VOI around a
mask-sampled baseline click and a follow-up VOI around the simulated
training prompt, with the lesion's follow-up mask as the binary target.
Lesions that vanished by follow-up are kept as all-background targets so
the model learns to output empty masks. All randomness flows from the
config seed.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, asdict, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from .core import LongitudinalCase, PromptPoint, centroid, crop_pad, crop_pad_labels
from .errors import ConfigError, EmptyTaskError, ShapeError
from .metrics import dsc
from .net import DualTimepointUNet, FusionMode, NetConfig, build_input, load_checkpoint
from .prompts import choose_training_prompt, sample_mask_prompt, simulate_registered_prompt


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 4
    lr: float = 0.01
    momentum: float = 0.99
    dice_weight: float = 1.0
    ce_weight: float = 1.0
    seed: int = 0
    prompt_sim_enabled: bool = True
    prompt_noise_vox: float = 2.0
    val_fraction: float = 0.2
    samples_per_epoch: Optional[int] = None
    lr_power: float = 0.9
    pretrain_checkpoint: Optional[str] = None

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if self.lr <= 0:
            raise ConfigError("lr must be > 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.dice_weight < 0 or self.ce_weight < 0 or self.dice_weight + self.ce_weight <= 0:
            raise ConfigError("dice_weight + ce_weight must be positive")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError("val_fraction must lie in [0, 1)")


def dice_ce_loss(probabilities, target, dice_weight: float = 1.0, ce_weight: float = 1.0) -> torch.Tensor:
    """Combined soft-Dice and binary cross-entropy loss.

    Soft Dice uses a smoothing term of 1 in numerator and denominator (so a
    perfect empty prediction on an empty target costs nothing); BCE is the
    mean over voxels with probabilities clamped away from {0, 1}.
    """
    probs = torch.as_tensor(probabilities)
    tgt = torch.as_tensor(target, dtype=probs.dtype)
    if probs.shape != tgt.shape:
        raise ShapeError(f"probabilities {tuple(probs.shape)} vs target {tuple(tgt.shape)}")
    if probs.dim() < 4:  # single sample: add batch axis
        probs = probs[None]
        tgt = tgt[None]
    with torch.no_grad():
        if probs.numel() and (float(probs.min()) < 0.0 or float(probs.max()) > 1.0):
            raise ValueError("probabilities must lie in [0, 1]")
    flat_p = probs.reshape(probs.shape[0], -1)
    flat_t = tgt.reshape(tgt.shape[0], -1)
    inter = (flat_p * flat_t).sum(dim=1)
    dice = (2.0 * inter + 1.0) / (flat_p.sum(dim=1) + flat_t.sum(dim=1) + 1.0)
    clamped = flat_p.clamp(1e-7, 1.0 - 1e-7)
    bce = -(flat_t * torch.log(clamped) + (1.0 - flat_t) * torch.log(1.0 - clamped)).mean()
    return dice_weight * (1.0 - dice).mean() + ce_weight * bce


@dataclass
class TrainingLog:
    entries: list[dict] = field(default_factory=list)

    def append(self, entry: dict, path: Optional[Path] = None):
        self.entries.append(entry)
        if path is not None:
            with open(path, "a") as f:
                f.write(json.dumps(entry) + "\n")


def parameter_hash(model: torch.nn.Module) -> str:
    digest = hashlib.sha256()
    for name, tensor in sorted(model.state_dict().items()):
        digest.update(name.encode())
        digest.update(tensor.detach().cpu().numpy().tobytes())
    return digest.hexdigest()


def _lesion_pairs(cases: Sequence[LongitudinalCase]) -> list[tuple[int, int]]:
    """(case index, lesion id) pairs with a baseline prompt to train/validate on."""
    pairs = []
    for i, case in enumerate(cases):
        for lid in sorted(case.baseline_prompts):
            pairs.append((i, lid))
    return pairs


def _verified_prompt(case: LongitudinalCase, lesion_id: int,
                     rng: np.random.Generator) -> PromptPoint:
    """Ground-truth follow-up centroid; propagated click for vanished lesions."""
    if case.followup[1].voxel_count(lesion_id) > 0:
        return centroid(case.followup[1], lesion_id)
    return simulate_registered_prompt(case, lesion_id, 0.0, rng)


def _build_sample(case: LongitudinalCase, lesion_id: int, config: NetConfig,
                  train_config: TrainConfig, rng: np.random.Generator):
    b_vol, b_mask = case.baseline
    f_vol, f_mask = case.followup
    if train_config.prompt_sim_enabled:
        p0 = sample_mask_prompt(b_mask, lesion_id, rng)
        if case.truth_field is not None:
            pt = choose_training_prompt(case, lesion_id, rng, train_config.prompt_noise_vox)
        else:
            pt = sample_mask_prompt(f_mask, lesion_id, rng)
    else:
        p0 = case.baseline_prompts[lesion_id]
        pt = _verified_prompt(case, lesion_id, rng)
    size = config.voi_size
    x0 = build_input(crop_pad(b_vol, p0, size), _center_prompt(size, lesion_id), config.prompt_sigma)
    xt = build_input(crop_pad(f_vol, pt, size), _center_prompt(size, lesion_id), config.prompt_sigma)
    target = crop_pad_labels(f_mask, pt, size).binary(lesion_id).astype(np.float32)
    return x0, xt, target


def _center_prompt(size, lesion_id: int) -> PromptPoint:
    return PromptPoint(tuple(s // 2 for s in size), lesion_id=lesion_id)


def predict_voi(model: DualTimepointUNet, case: LongitudinalCase, lesion_id: int,
                followup_prompt: PromptPoint) -> tuple[np.ndarray, np.ndarray]:
    """Probability map over the follow-up VOI at a given prompt plus its start index."""
    from .core import voi_start
    from .net import forward as net_forward

    config = model.config
    p0 = case.baseline_prompts[lesion_id]
    b_voi = crop_pad(case.baseline[0], p0, config.voi_size)
    f_voi = crop_pad(case.followup[0], followup_prompt, config.voi_size)
    center = _center_prompt(config.voi_size, lesion_id)
    probs = net_forward(model, b_voi, center, f_voi, center)
    return probs, voi_start(followup_prompt, config.voi_size)


def _validation_dsc(model: DualTimepointUNet, cases: Sequence[LongitudinalCase],
                    pairs: Sequence[tuple[int, int]], config: NetConfig,
                    rng: np.random.Generator, threshold: float = 0.5) -> float:
    if not pairs:
        return float("nan")
    scores = []
    for ci, lid in pairs:
        case = cases[ci]
        pt = _verified_prompt(case, lid, rng)
        probs, _ = predict_voi(model, case, lid, pt)
        gt = crop_pad_labels(case.followup[1], pt, config.voi_size).binary(lid)
        scores.append(dsc(probs >= threshold, gt))
    return float(np.mean(scores))


def fit(
    dataset: Sequence[LongitudinalCase],
    net_config: NetConfig,
    train_config: TrainConfig,
    init_state: Optional[dict] = None,
    log_path=None,
    phase: str = "train",
) -> tuple[DualTimepointUNet, TrainingLog]:
    """Train a model; returns the best-validation checkpoint and the log.

    The dataset is split case-wise into train/validation by
    ``val_fraction``; per-epoch entries record train loss, validation DSC
    (computed by the metrics module), and the learning rate. Deterministic
    for a fixed seed.
    """
    cases = list(dataset)
    if not cases:
        raise EmptyTaskError("empty dataset")
    if not any(case.followup[1].voxel_count(lid) > 0
               for case in cases for lid in case.baseline_prompts):
        raise EmptyTaskError("no lesion is present at follow-up in any case")

    rng = np.random.default_rng(train_config.seed)
    torch.manual_seed(train_config.seed)

    order = rng.permutation(len(cases))
    n_val = int(round(train_config.val_fraction * len(cases)))
    n_val = min(n_val, len(cases) - 1)
    val_cases = [cases[i] for i in order[:n_val]]
    train_cases = [cases[i] for i in order[n_val:]]
    train_pairs = _lesion_pairs(train_cases)
    val_pairs = _lesion_pairs(val_cases)
    if not train_pairs:
        raise EmptyTaskError("no trainable (case, lesion) pairs after the split")

    model = DualTimepointUNet(net_config)
    if train_config.pretrain_checkpoint:
        loaded, _ = load_checkpoint(train_config.pretrain_checkpoint)
        if loaded.config != net_config:
            raise ConfigError(
                f"pretrain checkpoint config {loaded.config} incompatible with {net_config}")
        init_state = loaded.state_dict()
    if init_state is not None:
        try:
            model.load_state_dict(init_state)
        except RuntimeError as exc:
            raise ConfigError(f"initial state incompatible with net config: {exc}") from exc

    log = TrainingLog()
    log_path = Path(log_path) if log_path is not None else None
    log.append({"phase": phase, "event": "start", "seed": train_config.seed,
                "n_train_cases": len(train_cases), "n_val_cases": len(val_cases),
                "net_config": {**asdict(net_config), "fusion_mode": net_config.fusion_mode.value},
                "train_config": asdict(train_config)}, log_path)

    optimizer = torch.optim.SGD(model.parameters(), lr=train_config.lr,
                                momentum=train_config.momentum)
    single = net_config.fusion_mode is FusionMode.SINGLE_TIMEPOINT
    best_state = copy.deepcopy(model.state_dict())
    best_dsc = -np.inf

    for epoch in range(train_config.epochs):
        lr = train_config.lr * (1.0 - epoch / max(train_config.epochs, 1)) ** train_config.lr_power
        for group in optimizer.param_groups:
            group["lr"] = lr
        perm = rng.permutation(len(train_pairs))
        if train_config.samples_per_epoch is not None:
            perm = perm[:train_config.samples_per_epoch]

        model.train()
        losses = []
        for start in range(0, len(perm), train_config.batch_size):
            batch_idx = perm[start:start + train_config.batch_size]
            samples = []
            for k in batch_idx:
                ci, lid = train_pairs[k]
                samples.append(_build_sample(train_cases[ci], lid, net_config, train_config, rng))
            x0 = torch.from_numpy(np.stack([s[0] for s in samples]))
            xt = torch.from_numpy(np.stack([s[1] for s in samples]))
            target = torch.from_numpy(np.stack([s[2] for s in samples]))
            optimizer.zero_grad()
            logits = model(None if single else x0, xt)
            probs = torch.sigmoid(logits)[:, 0]
            loss = dice_ce_loss(probs, target, train_config.dice_weight, train_config.ce_weight)
            loss.backward()
            optimizer.step()
            losses.append(float(loss.detach()))

        val_rng = np.random.default_rng(train_config.seed + 1_000_003)
        val_dsc = _validation_dsc(model, val_cases, val_pairs, net_config, val_rng)
        log.append({"phase": phase, "epoch": epoch, "loss": float(np.mean(losses)),
                    "val_dsc": None if np.isnan(val_dsc) else val_dsc, "lr": lr}, log_path)
        if not np.isnan(val_dsc) and val_dsc >= best_dsc:
            best_dsc = val_dsc
            best_state = copy.deepcopy(model.state_dict())

    if np.isfinite(best_dsc):
        model.load_state_dict(best_state)
    model.eval()
    log.append({"phase": phase, "event": "end",
                "best_val_dsc": None if not np.isfinite(best_dsc) else best_dsc,
                "parameter_hash": parameter_hash(model)}, log_path)
    return model, log


def pretrain_finetune(
    pretrain_dataset: Sequence[LongitudinalCase],
    finetune_dataset: Sequence[LongitudinalCase],
    net_config: NetConfig,
    pretrain_config: TrainConfig,
    finetune_config: TrainConfig,
    log_path=None,
) -> tuple[DualTimepointUNet, TrainingLog]:
    """Fit on the pretraining corpus, then fine-tune from that checkpoint."""
    pre_model, pre_log = fit(pretrain_dataset, net_config, pretrain_config,
                             log_path=log_path, phase="pretrain")
    model, fine_log = fit(finetune_dataset, net_config, finetune_config,
                          init_state=pre_model.state_dict(), log_path=log_path,
                          phase="finetune")
    combined = TrainingLog(pre_log.entries + fine_log.entries)
    return model, combined
