"""
Dual-branch mask predictor
One sound analysis network and one synthesizer are shared by the visual
branch (conditioned on pooled frame features) and the semantic branch
(conditioned on aligned class-label embeddings)
"""

import logging
import math
from dataclasses import dataclass
from typing import Literal, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn as nn

from config.settings import SeparatorConfig, StftConfig, LOG_EPS
from core.dsp.signal_processing import (
    AudioClip, LogMagSpectrogram, Mask, apply_mask, log_magnitude, stft,
)
from core.exceptions import DataError, LengthError, ShapeError

logger = logging.getLogger(__name__)

ConditionKind = Literal["visual", "semantic"]

# log(|z| + eps) lies in [ln eps, ~0] for unit-range audio; map that band to [-1, 1]
INPUT_CENTER = 0.5 * math.log(LOG_EPS)
INPUT_SCALE = 0.5 * abs(math.log(LOG_EPS))
MASK_THRESHOLD = 0.5


@dataclass(frozen=True)
class ConditionVector:
    """k_r-dim conditioning embedding, f_v (visual) or f_s (semantic)"""

    values: torch.Tensor
    kind: ConditionKind

    def __post_init__(self):
        if self.values.dim() != 1:
            raise ShapeError(f"condition must be a vector, got shape {tuple(self.values.shape)}")
        if not torch.all(torch.isfinite(self.values)):
            raise DataError("condition vector contains non-finite values")

    def __len__(self) -> int:
        return self.values.numel()


def scale_log_magnitude(values: Union[np.ndarray, torch.Tensor], dtype=torch.float32) -> torch.Tensor:
    """Fixed affine normalisation of a log-magnitude grid"""
    return (torch.as_tensor(values, dtype=dtype) - INPUT_CENTER) / INPUT_SCALE


def pool_frame_features(frames: Union[Sequence[np.ndarray], np.ndarray]) -> np.ndarray:
    """Average per-frame feature vectors into one visual feature"""
    stacked = np.asarray(frames, dtype=np.float64)
    if stacked.ndim == 1:
        return stacked.copy()
    if stacked.ndim != 2 or stacked.shape[0] == 0:
        raise ShapeError(f"expected [frames x k_r] features, got shape {stacked.shape}")
    return stacked.mean(axis=0)


class PerBinLift(nn.Module):
    """Scalar-to-vector affine map with separate weights for every frequency bin"""

    def __init__(self, n_bins: int, channels: int):
        super().__init__()
        self.weight = nn.Parameter(torch.zeros(n_bins, channels))
        self.bias = nn.Parameter(torch.zeros(n_bins, channels))

    def forward(self, grid: torch.Tensor) -> torch.Tensor:
        # [..., T, F] -> [..., T, F, channels]
        if grid.shape[-1] != self.weight.shape[0]:
            raise ShapeError(f"expected {self.weight.shape[0]} frequency bins, got {grid.shape[-1]}")
        return grid.unsqueeze(-1) * self.weight + self.bias


class SoundAnalysisNetwork(nn.Module):
    """Per-bin lift, 3x3 conv over (frames, bins) with ReLU, per-cell linear to k_r"""

    def __init__(self, n_bins: int, hidden: int, k_r: int):
        super().__init__()
        self.lift = PerBinLift(n_bins, hidden)
        self.conv = nn.Conv2d(hidden, hidden, kernel_size=3, padding=1)
        self.project = nn.Linear(hidden, k_r)

    def forward(self, logspec: torch.Tensor) -> torch.Tensor:
        """[B, T, F] (or [T, F]) scaled log-magnitude -> [B, T, F, k_r] features"""
        squeeze = logspec.dim() == 2
        if squeeze:
            logspec = logspec.unsqueeze(0)
        lifted = self.lift(logspec).permute(0, 3, 1, 2)
        hidden = torch.relu(self.conv(lifted)).permute(0, 2, 3, 1)
        features = self.project(hidden)
        return features.squeeze(0) if squeeze else features


class LabelAlignmentNetwork(nn.Module):
    """f_s = sigmoid(W onehot(c) + b)"""

    def __init__(self, num_classes: int, k_r: int):
        super().__init__()
        self.linear = nn.Linear(num_classes, k_r)
        self.num_classes = num_classes

    def forward(self, class_ids: torch.Tensor) -> torch.Tensor:
        onehot = nn.functional.one_hot(class_ids.long(), self.num_classes).to(self.linear.weight.dtype)
        return torch.sigmoid(self.linear(onehot))


class SoundSynthesizer(nn.Module):
    """mask[t, f] = sigmoid(<condition, f_a[t, f]> + bias)"""

    def __init__(self, bias: float = 0.0):
        super().__init__()
        self.bias = nn.Parameter(torch.tensor(float(bias)))

    def logits(self, features: torch.Tensor, conditions: torch.Tensor) -> torch.Tensor:
        """[T, F, k] features with a [k] condition -> [T, F]; with [m, k] conditions -> [m, T, F]"""
        if features.shape[-1] != conditions.shape[-1]:
            raise ShapeError(f"condition has {conditions.shape[-1]} channels, features have {features.shape[-1]}")
        if conditions.dim() == 1:
            return features @ conditions + self.bias
        return torch.einsum("tfk,mk->mtf", features, conditions) + self.bias

    def forward(self, features: torch.Tensor, conditions: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.logits(features, conditions))


class SeparatorModel(nn.Module):
    """
    Scene-aware separator.

    Both branches route through the same `analysis` and `synthesizer`
    modules; only the condition vector differs between them.
    """

    def __init__(self, config: SeparatorConfig, seed: int = 0):
        super().__init__()
        self.config = config
        self.analysis = SoundAnalysisNetwork(config.n_bins, config.hidden, config.k_r)
        self.label_alignment = LabelAlignmentNetwork(config.num_classes, config.k_r)
        self.synthesizer = SoundSynthesizer(config.synth_bias)
        self._initialize_parameters(seed)

    def _initialize_parameters(self, seed: int):
        generator = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for name, param in self.named_parameters():
                if name == "synthesizer.bias":
                    continue
                if name.endswith("bias") or name.startswith("analysis.lift"):
                    std = self.config.init_scale
                else:
                    std = 1.0 / math.sqrt(param[0].numel())
                param.copy_(torch.randn(param.shape, generator=generator, dtype=param.dtype) * std)

    @property
    def k_r(self) -> int:
        return self.config.k_r

    def branch_components(self, kind: ConditionKind) -> Tuple[nn.Module, nn.Module]:
        """(analysis, synthesizer) used by a branch; identical objects for both kinds"""
        if kind not in ("visual", "semantic"):
            raise ValueError(f"unknown branch kind: {kind}")
        return self.analysis, self.synthesizer

    def analyze_audio(self, logspec: Union[LogMagSpectrogram, torch.Tensor]) -> torch.Tensor:
        """f_a over every T-F cell: [T, F, k_r]"""
        if isinstance(logspec, LogMagSpectrogram):
            logspec = scale_log_magnitude(logspec.values, dtype=self._dtype)
        if not torch.all(torch.isfinite(logspec)):
            raise DataError("non-finite log-magnitude input")
        return self.analysis(logspec)

    def align_label(self, class_id: int) -> ConditionVector:
        if not 0 <= int(class_id) < self.config.num_classes:
            raise ShapeError(f"class id {class_id} outside [0, {self.config.num_classes})")
        values = self.label_alignment(torch.tensor([int(class_id)]))[0]
        return ConditionVector(values=values, kind="semantic")

    def visual_condition(self, feature: Union[np.ndarray, torch.Tensor]) -> ConditionVector:
        values = torch.as_tensor(feature, dtype=self._dtype).reshape(-1)
        if values.numel() != self.k_r:
            raise LengthError(f"visual feature has {values.numel()} entries, expected k_r={self.k_r}")
        return ConditionVector(values=values, kind="visual")

    def mask_logits(self, features: torch.Tensor, condition: ConditionVector) -> torch.Tensor:
        """Pre-sigmoid mask [T, F]; depends only on the numeric condition values"""
        _, synthesizer = self.branch_components(condition.kind)
        return synthesizer.logits(features, condition.values.to(features.dtype))

    def synthesize_mask(self, features: torch.Tensor, condition: ConditionVector) -> torch.Tensor:
        """Soft mask [T, F]"""
        return torch.sigmoid(self.mask_logits(features, condition))

    def forward(self, logspec: torch.Tensor, conditions: torch.Tensor) -> torch.Tensor:
        """[T, F] scaled log-magnitude, [m, k_r] conditions -> [m, T, F] soft masks"""
        return self.synthesizer(self.analysis(logspec), conditions)

    def separate(self, mixture: AudioClip, condition: ConditionVector, stft_config: StftConfig,
                 binary: bool = True) -> Tuple[Mask, AudioClip]:
        """
        stft -> log-magnitude -> analysis -> synthesizer -> mask -> ISTFT.

        Returns the soft mask and the reconstructed clip; the clip uses the
        mask thresholded at 0.5 when `binary` is set.
        """
        spectrogram = stft(mixture, stft_config)
        with torch.no_grad():
            features = self.analyze_audio(log_magnitude(spectrogram))
            soft = self.synthesize_mask(features, condition).double().numpy()
        mask = Mask(soft)
        estimate = apply_mask(spectrogram, mask.binarize(MASK_THRESHOLD) if binary else mask)
        return mask, estimate

    @property
    def _dtype(self) -> torch.dtype:
        return self.synthesizer.bias.dtype
