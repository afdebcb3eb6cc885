"""Promptable dual-timepoint segmentation network.

A residual encoder shared (one parameter set) between the baseline and
follow-up (image, prompt-heatmap) pairs, a temporal fusion step at every
skip connection, and a decoder producing a per-voxel foreground
probability. Three fusion modes are supported:

* ``single_timepoint``: decode from follow-up features only; the baseline
  branch is never evaluated.
* ``concat``: channel-concatenate both feature maps at each skip and
  project back to the level width with a 1x1x1 conv.
* ``diff_weighting``: gate follow-up features by the instance-normalized
  temporal difference,  x' = x_t * InstNorm(x_t - x_0) + x_t,  which leaves
  features untouched where nothing changed and amplifies regions of change.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict
from enum import Enum
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .core import PromptPoint, Volume
from .errors import ConfigError, ShapeError
from .prompts import PromptHeatmap, gaussian_heatmap
from .validation import as_int_triple

CHECKPOINT_FORMAT_VERSION = 1


class FusionMode(str, Enum):
    SINGLE_TIMEPOINT = "single_timepoint"
    CONCAT = "concat"
    DIFF_WEIGHTING = "diff_weighting"


@dataclass(frozen=True)
class NetConfig:
    """Architecture hyperparameters.

    ``instnorm_epsilon``/``instnorm_affine`` govern the difference-weighting
    InstNorm; affine stays off by default so that a zero temporal difference
    passes follow-up features through exactly. Encoder/decoder norms are
    standard affine instance norms.
    """

    n_levels: int = 4
    base_channels: int = 16
    max_channels: int = 256
    fusion_mode: FusionMode = FusionMode.DIFF_WEIGHTING
    voi_size: tuple[int, int, int] = (48, 48, 48)
    instnorm_epsilon: float = 1e-5
    instnorm_affine: bool = False
    prompt_sigma: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "fusion_mode", FusionMode(self.fusion_mode))
        object.__setattr__(self, "voi_size", as_int_triple(self.voi_size, "voi_size"))
        if self.n_levels < 3:
            raise ConfigError("n_levels must be >= 3")
        if self.base_channels < 1:
            raise ConfigError("base_channels must be >= 1")
        if self.instnorm_epsilon <= 0:
            raise ConfigError("instnorm_epsilon must be > 0")
        stride = 2 ** (self.n_levels - 1)
        if any(v % stride for v in self.voi_size):
            raise ConfigError(f"voi_size {self.voi_size} must be divisible by {stride}")

    @property
    def channels(self) -> tuple[int, ...]:
        return tuple(min(self.base_channels * 2 ** l, self.max_channels)
                     for l in range(self.n_levels))


def _spatial_standardize(x: torch.Tensor, eps: float) -> torch.Tensor:
    """Per-channel zero-mean/unit-variance over the trailing spatial dims."""
    dims = tuple(range(x.dim() - 3, x.dim()))
    mean = x.mean(dim=dims, keepdim=True)
    var = x.var(dim=dims, unbiased=False, keepdim=True)
    return (x - mean) / torch.sqrt(var + eps)


def diff_weight(x0, xt, epsilon: float = 1e-5):
    """Difference weighting:  x_t * InstNorm(x_t - x_0) + x_t.

    The normalized difference acts as an attention gate over temporal
    change; identical inputs pass through exactly. Accepts (C, z, y, x) or
    batched (B, C, z, y, x) tensors; numpy arrays are converted and the
    result returned as numpy.
    """
    was_numpy = isinstance(xt, np.ndarray)
    x0_t = torch.as_tensor(np.ascontiguousarray(x0)) if isinstance(x0, np.ndarray) else x0
    xt_t = torch.as_tensor(np.ascontiguousarray(xt)) if was_numpy else xt
    if x0_t.shape != xt_t.shape:
        raise ShapeError(f"feature maps must match, got {tuple(x0_t.shape)} vs {tuple(xt_t.shape)}")
    if xt_t.dim() not in (4, 5):
        raise ShapeError(f"expected (C, z, y, x) or (B, C, z, y, x), got {tuple(xt_t.shape)}")
    gate = _spatial_standardize(xt_t - x0_t, epsilon)
    out = xt_t * gate + xt_t
    return out.numpy() if was_numpy else out


class DifferenceWeighting(nn.Module):
    """Parameter-free fusion module wrapping :func:`diff_weight`."""

    def __init__(self, channels: int, epsilon: float, affine: bool):
        super().__init__()
        self.epsilon = epsilon
        self.norm = nn.InstanceNorm3d(channels, eps=epsilon, affine=True) if affine else None

    def forward(self, x0: torch.Tensor, xt: torch.Tensor) -> torch.Tensor:
        if self.norm is not None:
            return xt * self.norm(xt - x0) + xt
        return xt * _spatial_standardize(xt - x0, self.epsilon) + xt


class ResidualBlock(nn.Module):
    def __init__(self, in_channels: int, out_channels: int, stride: int, eps: float):
        super().__init__()
        self.conv1 = nn.Conv3d(in_channels, out_channels, 3, stride=stride, padding=1)
        self.norm1 = nn.InstanceNorm3d(out_channels, eps=eps, affine=True)
        self.conv2 = nn.Conv3d(out_channels, out_channels, 3, padding=1)
        self.norm2 = nn.InstanceNorm3d(out_channels, eps=eps, affine=True)
        self.act = nn.LeakyReLU(0.01, inplace=True)
        if stride != 1 or in_channels != out_channels:
            self.skip = nn.Conv3d(in_channels, out_channels, 1, stride=stride)
        else:
            self.skip = nn.Identity()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.act(self.norm1(self.conv1(x)))
        h = self.norm2(self.conv2(h))
        return self.act(h + self.skip(x))


class DualTimepointUNet(nn.Module):
    """Shared-weight residual encoder, per-skip temporal fusion, decoder."""

    def __init__(self, config: NetConfig):
        super().__init__()
        self.config = config
        chans = config.channels
        eps = config.instnorm_epsilon

        encoder = [ResidualBlock(2, chans[0], stride=1, eps=eps)]
        for l in range(1, config.n_levels):
            encoder.append(ResidualBlock(chans[l - 1], chans[l], stride=2, eps=eps))
        self.encoder = nn.ModuleList(encoder)

        if config.fusion_mode is FusionMode.CONCAT:
            self.fusion = nn.ModuleList(
                [nn.Conv3d(2 * c, c, kernel_size=1) for c in chans])
        elif config.fusion_mode is FusionMode.DIFF_WEIGHTING:
            self.fusion = nn.ModuleList(
                [DifferenceWeighting(c, eps, config.instnorm_affine) for c in chans])
        else:
            self.fusion = None

        ups, blocks = [], []
        for l in range(config.n_levels - 1, 0, -1):
            ups.append(nn.ConvTranspose3d(chans[l], chans[l - 1], kernel_size=2, stride=2))
            blocks.append(ResidualBlock(2 * chans[l - 1], chans[l - 1], stride=1, eps=eps))
        self.upsamplers = nn.ModuleList(ups)
        self.decoder = nn.ModuleList(blocks)
        self.head = nn.Conv3d(chans[0], 1, kernel_size=1)

    def encode(self, x: torch.Tensor) -> list[torch.Tensor]:
        """Multi-scale features for one (image, heatmap) input, finest first."""
        if x.dim() == 4:
            x = x[None]
        if x.shape[1] != 2:
            raise ShapeError(f"expected a 2-channel input, got {x.shape[1]} channels")
        features = []
        h = x
        for block in self.encoder:
            h = block(h)
            features.append(h)
        return features

    def _fuse(self, f0: list[torch.Tensor] | None, ft: list[torch.Tensor]) -> list[torch.Tensor]:
        mode = self.config.fusion_mode
        if mode is FusionMode.SINGLE_TIMEPOINT:
            return ft
        assert f0 is not None
        if mode is FusionMode.CONCAT:
            return [proj(torch.cat([a, b], dim=1)) for proj, a, b in zip(self.fusion, f0, ft)]
        return [dw(a, b) for dw, a, b in zip(self.fusion, f0, ft)]

    def forward(self, x0: torch.Tensor | None, xt: torch.Tensor) -> torch.Tensor:
        """Foreground logits over the follow-up VOI.

        ``x0`` is ignored (and may be None) in single-timepoint mode; the
        other modes run the shared encoder over both inputs.
        """
        single = self.config.fusion_mode is FusionMode.SINGLE_TIMEPOINT
        if not single and x0 is None:
            raise ShapeError("baseline input required for longitudinal fusion modes")
        ft = self.encode(xt)
        f0 = None if single else self.encode(x0)
        skips = self._fuse(f0, ft)
        h = skips[-1]
        for up, block, skip in zip(self.upsamplers, self.decoder, reversed(skips[:-1])):
            h = up(h)
            h = block(torch.cat([h, skip], dim=1))
        return self.head(h)

    def encoder_parameter_count(self) -> int:
        return sum(p.numel() for p in self.encoder.parameters())


def fuse_input(image_voi: Volume, heatmap: PromptHeatmap) -> np.ndarray:
    """Stack a z-scored image VOI with its (unnormalized) prompt heatmap.

    Channel 0 is the image standardized over the VOI; channel 1 keeps the
    heatmap untouched so its center stays exactly 1.
    """
    if image_voi.shape != heatmap.shape:
        raise ShapeError(f"VOI {image_voi.shape} vs heatmap {heatmap.shape}")
    img = image_voi.data.astype(np.float64)
    std = float(img.std())
    img = (img - img.mean()) / max(std, 1e-8)
    return np.stack([img, heatmap.data]).astype(np.float32)


def build_input(image_voi: Volume, prompt_local: PromptPoint, sigma: float = 1.0) -> np.ndarray:
    """Image VOI + Gaussian heatmap at a VOI-local prompt, as one 2-channel block."""
    heatmap = gaussian_heatmap(prompt_local, image_voi.shape, sigma)
    return fuse_input(image_voi, heatmap)


def forward(model: DualTimepointUNet, baseline_voi: Volume, p0_local: PromptPoint,
            followup_voi: Volume, pt_local: PromptPoint) -> np.ndarray:
    """Inference-mode probability map over the follow-up VOI (values in [0, 1])."""
    sigma = model.config.prompt_sigma
    xt = torch.from_numpy(build_input(followup_voi, pt_local, sigma))
    x0 = None
    if model.config.fusion_mode is not FusionMode.SINGLE_TIMEPOINT:
        x0 = torch.from_numpy(build_input(baseline_voi, p0_local, sigma))[None]
    model.eval()
    with torch.inference_mode():
        logits = model(x0, xt[None])
        probs = torch.sigmoid(logits)[0, 0]
    return probs.numpy()


def save_checkpoint(path, model: DualTimepointUNet, extra: dict | None = None) -> None:
    """Single-file checkpoint embedding the architecture config."""
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "net_config": {**asdict(model.config),
                       "fusion_mode": model.config.fusion_mode.value},
        "state_dict": model.state_dict(),
        "extra": extra or {},
    }
    torch.save(payload, Path(path))


def load_checkpoint(path) -> tuple[DualTimepointUNet, dict]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ConfigError(f"unsupported checkpoint format version {version}")
    config = NetConfig(**payload["net_config"])
    model = DualTimepointUNet(config)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, payload.get("extra", {})
