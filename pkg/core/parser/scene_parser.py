"""
Scene parser
Visible-scene head over summation-fused audio + visual features, audible-scene
head over audio alone (separate encoder weights), invisible = audible minus visible
"""

import logging
from dataclasses import dataclass
from typing import FrozenSet, List, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn as nn

from config.settings import ParserConfig, StftConfig
from core.dsp.signal_processing import AudioClip, LogMagSpectrogram, log_magnitude, stft
from core.exceptions import ConfigError, DataError, ShapeError
from core.separator.separator_model import PerBinLift, scale_log_magnitude

logger = logging.getLogger(__name__)

AUDIO_BRANCHES = ("visible", "audible")


@dataclass(frozen=True)
class SceneLabels:
    """Per-class scores and the thresholded visible / audible / invisible sets"""

    visible_scores: np.ndarray
    audible_scores: np.ndarray
    visible_set: FrozenSet[int]
    audible_set: FrozenSet[int]
    invisible_set: FrozenSet[int]
    threshold: float

    @classmethod
    def from_scores(cls, visible_scores: np.ndarray, audible_scores: np.ndarray, threshold: float) -> "SceneLabels":
        visible = frozenset(int(c) for c in np.flatnonzero(visible_scores >= threshold))
        audible = frozenset(int(c) for c in np.flatnonzero(audible_scores >= threshold))
        return cls(
            visible_scores=np.asarray(visible_scores, dtype=np.float64),
            audible_scores=np.asarray(audible_scores, dtype=np.float64),
            visible_set=visible,
            audible_set=audible,
            invisible_set=audible - visible,
            threshold=threshold,
        )


class AudioEncoder(nn.Module):
    """Per-bin lift, ReLU, per-cell linear to k_r, global mean over time and frequency"""

    def __init__(self, n_bins: int, hidden: int, k_r: int):
        super().__init__()
        self.lift = PerBinLift(n_bins, hidden)
        self.project = nn.Linear(hidden, k_r)

    def forward(self, logspec: torch.Tensor) -> torch.Tensor:
        # [..., T, F] -> [..., k_r]
        cells = self.project(torch.relu(self.lift(logspec)))
        return cells.mean(dim=(-3, -2))


class ScenePredictor(nn.Module):
    """Visible and audible scene recognizers with distinct audio encoders"""

    def __init__(self, config: ParserConfig, seed: int = 0):
        super().__init__()
        self.config = config
        self.visible_encoder = AudioEncoder(config.n_bins, config.hidden, config.k_r)   # phi_a
        self.audible_encoder = AudioEncoder(config.n_bins, config.hidden, config.k_r)   # phi_a'
        self.visual_projection = nn.Linear(config.k_r, config.k_r)
        self.visible_head = nn.Linear(config.k_r, config.num_classes)
        self.audible_head = nn.Linear(config.k_r, config.num_classes)
        self._initialize_parameters(seed)

    def _initialize_parameters(self, seed: int):
        generator = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for name, param in self.named_parameters():
                if name.endswith("bias") or ".lift." in name:
                    std = self.config.init_scale
                else:
                    std = 1.0 / np.sqrt(param[0].numel())
                param.copy_(torch.randn(param.shape, generator=generator, dtype=param.dtype) * std)

    @property
    def _dtype(self) -> torch.dtype:
        return self.visible_head.weight.dtype

    def encode_audio(self, logspec: Union[LogMagSpectrogram, torch.Tensor], branch: str = "visible") -> torch.Tensor:
        """k_r summary of a log-magnitude grid through the visible (phi_a) or audible (phi_a') encoder"""
        if isinstance(logspec, LogMagSpectrogram):
            logspec = scale_log_magnitude(logspec.values, dtype=self._dtype)
        if not torch.all(torch.isfinite(logspec)):
            raise DataError("non-finite log-magnitude input")
        if branch not in AUDIO_BRANCHES:
            raise ConfigError(f"unknown audio branch {branch!r}; choose from {AUDIO_BRANCHES}")
        encoder = self.visible_encoder if branch == "visible" else self.audible_encoder
        return encoder(logspec)

    def pool_visual(self, visual_feats: torch.Tensor) -> torch.Tensor:
        """phi_v: mean of projected features, zero vector when no source is visible"""
        if visual_feats.shape[0] == 0:
            return torch.zeros(self.config.k_r, dtype=self._dtype)
        if visual_feats.shape[-1] != self.config.k_r:
            raise ShapeError(f"visual features have {visual_feats.shape[-1]} entries, expected {self.config.k_r}")
        return self.visual_projection(visual_feats).mean(dim=0)

    def visible_head_scores(self, phi_v: torch.Tensor, phi_a: torch.Tensor) -> torch.Tensor:
        """Summation fusion followed by the visible multi-label head"""
        return torch.sigmoid(self.visible_head(phi_v + phi_a))

    def audible_head_scores(self, phi_a_prime: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.audible_head(phi_a_prime))

    def logits(self, visual_feats: torch.Tensor, logspec: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """Pre-sigmoid (visible, audible) head outputs"""
        phi_v = self.pool_visual(visual_feats)
        visible = self.visible_head(phi_v + self.visible_encoder(logspec))
        audible = self.audible_head(self.audible_encoder(logspec))
        return visible, audible

    def forward(self, visual_feats: torch.Tensor, logspec: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """([n, k_r] visible features, [T, F] scaled log-magnitude) -> (visible, audible) scores"""
        visible, audible = self.logits(visual_feats, logspec)
        return torch.sigmoid(visible), torch.sigmoid(audible)

    def parse_scene(self, visual_feats: Sequence[np.ndarray], mixture: AudioClip,
                    stft_config: StftConfig, threshold: float = None) -> SceneLabels:
        """Scene labels for a mixture and the features of its visible sources"""
        threshold = self.config.threshold if threshold is None else threshold
        try:
            feats = np.asarray(visual_feats, dtype=np.float64)
        except ValueError as e:
            raise ShapeError(f"visual features must be [n, {self.config.k_r}]: {e}") from e
        if feats.size == 0:
            feats = feats.reshape(0, self.config.k_r)
        elif feats.ndim != 2 or feats.shape[1] != self.config.k_r:
            raise ShapeError(f"visual features must be [n, {self.config.k_r}], got {feats.shape}")
        feats = torch.as_tensor(feats, dtype=self._dtype)
        logspec = scale_log_magnitude(log_magnitude(stft(mixture, stft_config)).values, dtype=self._dtype)
        with torch.no_grad():
            visible, audible = self(feats, logspec)
        return SceneLabels.from_scores(visible.double().numpy(), audible.double().numpy(), threshold)


def build_parser_targets(classes: Sequence[int], n_visible: int, num_classes: int) -> Tuple[np.ndarray, np.ndarray]:
    """Multi-hot (visible, audible) targets; the first n_visible classes are the visible ones"""
    if not 0 <= n_visible <= len(classes):
        raise ShapeError(f"visible count {n_visible} outside [0, {len(classes)}]")
    visible = np.zeros(num_classes)
    audible = np.zeros(num_classes)
    visible[list(classes[:n_visible])] = 1.0
    audible[list(classes)] = 1.0
    return visible, audible


def exact_set_accuracy(predictions: Sequence[SceneLabels],
                       truths: Sequence[Tuple[FrozenSet[int], FrozenSet[int]]]) -> float:
    """Fraction of scenes whose visible, audible and invisible sets are all exactly right"""
    if len(predictions) != len(truths):
        raise ShapeError(f"{len(predictions)} predictions for {len(truths)} scenes")
    if not predictions:
        return 0.0
    hits = 0
    for labels, (visible, audible) in zip(predictions, truths):
        visible, audible = frozenset(visible), frozenset(audible)
        hits += (labels.visible_set == visible and labels.audible_set == audible
                 and labels.invisible_set == audible - visible)
    return hits / len(predictions)


def scene_truth(classes: Sequence[int], n_visible: int) -> Tuple[FrozenSet[int], FrozenSet[int]]:
    return frozenset(classes[:n_visible]), frozenset(classes)


def class_names_for(indices: List[int], names: Sequence[str]) -> List[str]:
    return [names[i] for i in sorted(indices)]
