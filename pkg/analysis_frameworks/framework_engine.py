"""
Separation Method Engine
Scene-aware inference routing (visible sources through the visual branch,
invisible ones through the semantic branch), the residual-subtraction
baseline and per-method evaluation against ground-truth stems
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, Any, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import torch

from config.settings import BssEvalConfig, StftConfig
from core.data.synth_data import Corpus, MixtureDraw, draw_mixture, train_frame_features
from core.dsp.signal_processing import AudioClip, Mask, log_magnitude, mix, stft
from core.exceptions import ConfigError, LengthError
from core.metrics.bss_eval import bss_eval, score_estimate
from core.parser.scene_parser import SceneLabels, ScenePredictor, scene_truth
from core.separator.separator_model import SeparatorModel, pool_frame_features, scale_log_magnitude
from utils.separation_utils import measure_performance

logger = logging.getLogger(__name__)

FEATURE_MODES = ("clip", "prototype", "train-frames")
ROW_COLUMNS = ["mixture_id", "method", "source_id", "class_id", "visibility", "sdr_db", "sir_db", "sar_db",
               "perm_index"]


@dataclass
class SeparatedStem:
    class_id: int
    visibility: str
    clip: AudioClip
    mask: Optional[Mask] = None


def baseline_subtract(mixture: AudioClip, vis_estimates: Sequence[Optional[AudioClip]]) -> List[AudioClip]:
    """
    Residual estimates for every source without a visual estimate (None entries):
    S_mix minus the sum of all predicted visible sounds.
    """
    available = [clip for clip in vis_estimates if clip is not None]
    for clip in available:
        if len(clip) != len(mixture) or clip.sample_rate != mixture.sample_rate:
            raise LengthError("visual estimates must match the mixture length and rate")

    residuals = []
    for i, clip in enumerate(vis_estimates):
        if clip is not None:
            continue
        others = [other for j, other in enumerate(vis_estimates) if j != i and other is not None]
        if others:
            residual = mixture.samples - mix(others).samples
        else:
            residual = mixture.samples.copy()
        residuals.append(AudioClip(samples=residual, sample_rate=mixture.sample_rate))
    return residuals


class SeparationMethodEngine:
    """Registry of separation methods and the scene-aware inference pipeline"""

    def __init__(self, separator: SeparatorModel, stft_config: StftConfig,
                 bss_config: Optional[BssEvalConfig] = None, parser: Optional[ScenePredictor] = None):
        self.separator = separator
        self.parser = parser
        self.stft_config = stft_config
        self.bss_config = bss_config or BssEvalConfig()
        self.method_registry = self._initialize_method_registry()

    def _initialize_method_registry(self) -> Dict[str, Dict[str, Any]]:
        """Evaluated methods; `visibility` lists which sources each one estimates"""
        return {
            "avsa": {
                "description": "Visible sources via frame features, invisible sources via aligned labels",
                "visibility": ("visible", "invisible"),
                "separate": self._separate_scene_aware,
                "priority": 1,
            },
            "visual-only": {
                "description": "Visual branch alone; no estimate for invisible sources",
                "visibility": ("visible",),
                "separate": self._separate_visual_only,
                "priority": 2,
            },
            "semantic-only": {
                "description": "Semantic branch alone, applied to the invisible sources",
                "visibility": ("invisible",),
                "separate": self._separate_semantic_only,
                "priority": 3,
            },
            "subtract-baseline": {
                "description": "Visual branch for visible sources, mixture residual for invisible ones",
                "visibility": ("visible", "invisible"),
                "separate": self._separate_subtract_baseline,
                "priority": 4,
            },
            "subtract-ablation": {
                "description": "Visual branch for every source on its own frames; each invisible source is "
                               "the mixture minus the visual estimates of all other sources",
                "visibility": ("invisible",),
                "separate": self._separate_subtract_ablation,
                "priority": 5,
            },
        }

    def select_methods(self, methods: Optional[Sequence[str]] = None) -> List[str]:
        """Validated method names, in registry priority order"""
        if methods is None:
            return list(self.method_registry)
        unknown = [m for m in methods if m not in self.method_registry]
        if unknown:
            raise ConfigError(f"unknown methods {unknown}; choose from {list(self.method_registry)}")
        return sorted(set(methods), key=lambda m: self.method_registry[m]["priority"])

    def _visual(self, mixture: AudioClip, feature: np.ndarray, class_id: int) -> SeparatedStem:
        mask, clip = self.separator.separate(mixture, self.separator.visual_condition(feature), self.stft_config)
        return SeparatedStem(class_id=class_id, visibility="visible", clip=clip, mask=mask)

    def _semantic(self, mixture: AudioClip, class_id: int) -> SeparatedStem:
        mask, clip = self.separator.separate(mixture, self.separator.align_label(class_id), self.stft_config)
        return SeparatedStem(class_id=class_id, visibility="invisible", clip=clip, mask=mask)

    # Each method maps (mixture, classes, visible flags, features) -> {source index: stem}
    def _separate_scene_aware(self, mixture, classes, visible, features) -> Dict[int, SeparatedStem]:
        return {
            i: self._visual(mixture, features[i], c) if visible[i] else self._semantic(mixture, c)
            for i, c in enumerate(classes)
        }

    def _separate_visual_only(self, mixture, classes, visible, features) -> Dict[int, SeparatedStem]:
        return {i: self._visual(mixture, features[i], c) for i, c in enumerate(classes) if visible[i]}

    def _separate_semantic_only(self, mixture, classes, visible, features) -> Dict[int, SeparatedStem]:
        return {i: self._semantic(mixture, c) for i, c in enumerate(classes) if not visible[i]}

    def _separate_subtract_baseline(self, mixture, classes, visible, features) -> Dict[int, SeparatedStem]:
        stems = self._separate_visual_only(mixture, classes, visible, features)
        vis_estimates = [stems[i].clip if i in stems else None for i in range(len(classes))]
        residuals = iter(baseline_subtract(mixture, vis_estimates))
        for i, c in enumerate(classes):
            if not visible[i]:
                stems[i] = SeparatedStem(class_id=c, visibility="invisible", clip=next(residuals))
        return stems

    def _separate_subtract_ablation(self, mixture, classes, visible, features) -> Dict[int, SeparatedStem]:
        # the frames of source i are left out when estimating source i
        vis_estimates = [self._visual(mixture, features[j], c).clip for j, c in enumerate(classes)]
        stems = {}
        for i, c in enumerate(classes):
            if visible[i]:
                continue
            ablated = [None if j == i else clip for j, clip in enumerate(vis_estimates)]
            stems[i] = SeparatedStem(class_id=c, visibility="invisible",
                                     clip=baseline_subtract(mixture, ablated)[0])
        return stems

    def _match_visible_features(self, labels: SceneLabels, mixture: AudioClip,
                                visual_feats: Sequence[np.ndarray]) -> Dict[int, np.ndarray]:
        """Assign each predicted visible class the visual feature that scores it highest"""
        if not visual_feats or not labels.visible_set:
            return {}
        dtype = self.parser.visible_head.weight.dtype
        logspec = scale_log_magnitude(log_magnitude(stft(mixture, self.stft_config)).values, dtype=dtype)
        feats = torch.as_tensor(np.asarray(visual_feats, dtype=np.float64), dtype=dtype)
        with torch.no_grad():
            phi_a = self.parser.encode_audio(logspec, branch="visible")
            per_feature = self.parser.visible_head_scores(self.parser.visual_projection(feats), phi_a)
        return {
            c: np.asarray(visual_feats[int(torch.argmax(per_feature[:, c]))])
            for c in sorted(labels.visible_set)
        }

    def run_inference(self, mixture: AudioClip, visual_feats: Sequence[np.ndarray],
                      threshold: Optional[float] = None) -> List[Tuple[int, str, AudioClip]]:
        """
        Parse the scene, then separate each visible class with its frame feature and
        each invisible class with its aligned label embedding.
        """
        if self.parser is None:
            raise ConfigError("scene-aware inference needs a trained parser")
        visual_feats = [pool_frame_features(f) for f in visual_feats]
        labels = self.parser.parse_scene(visual_feats, mixture, self.stft_config, threshold)
        if not labels.audible_set:
            logger.warning("⚠️ Parser predicted no audible classes; nothing to separate")
            return []

        matched = self._match_visible_features(labels, mixture, visual_feats)
        outputs = []
        for c in sorted(labels.visible_set | labels.audible_set):
            if c in matched:
                stem = self._visual(mixture, matched[c], c)
            else:
                stem = self._semantic(mixture, c)
            outputs.append((c, stem.visibility, stem.clip))
        logger.info(f"✅ Separated {len(outputs)} stems "
                    f"({len(matched)} visible, {len(outputs) - len(matched)} invisible)")
        return outputs

    def source_features(self, corpus: Corpus, draw: MixtureDraw, feature_mode: str, seed: int) -> List[np.ndarray]:
        if feature_mode == "clip":
            return [record.visual_feature for record in draw.records]
        if feature_mode == "prototype":
            return [corpus.prototypes[record.class_id] for record in draw.records]
        if feature_mode == "train-frames":
            return [pool_frame_features(train_frame_features(corpus, record.class_id, seed + i))
                    for i, record in enumerate(draw.records)]
        raise ConfigError(f"unknown feature mode {feature_mode}; choose from {FEATURE_MODES}")

    def separate_draw(self, method: str, draw: MixtureDraw,
                      features: Sequence[np.ndarray]) -> Dict[int, SeparatedStem]:
        """Stems of one method for a mixture with known classes and visibility"""
        if method not in self.method_registry:
            raise ConfigError(f"unknown method {method}; choose from {list(self.method_registry)}")
        separate: Callable = self.method_registry[method]["separate"]
        return separate(draw.mixture, draw.classes, draw.manifest.visible, features)

    def _score_stems(self, draw: MixtureDraw, stems: Dict[int, SeparatedStem]) -> Dict[int, Tuple[Tuple, int]]:
        """
        Metrics of each stem against its own source, plus the estimate index the
        best-mean-SIR assignment gives that source (the source itself for partial methods)
        """
        if len(stems) == len(draw.stems) and self.bss_config.compute_permutation:
            report = bss_eval(draw.stems, [stems[i].clip for i in range(len(stems))], self.bss_config)
            pairs = report.metadata["pair_scores"]
            return {i: (tuple(float(v) for v in pairs[i, i]), report.estimate_for_reference(i)) for i in stems}
        return {i: (score_estimate(draw.stems, stem.clip, i, self.bss_config), i) for i, stem in stems.items()}

    def score_mixture(self, corpus: Corpus, draw: MixtureDraw, methods: Sequence[str],
                      feature_mode: str) -> Tuple[List[Dict[str, Any]], Optional[SceneLabels]]:
        """Per-source metric rows of every method for one mixture, plus the parser output"""
        classes = draw.classes
        visible = draw.manifest.visible
        features = self.source_features(corpus, draw, feature_mode, draw.manifest.seed)

        rows = []
        for method in methods:
            stems = self.separate_draw(method, draw, features)
            for i, ((sdr, sir, sar), perm_index) in sorted(self._score_stems(draw, stems).items()):
                rows.append({
                    "mixture_id": draw.manifest.mixture_id,
                    "method": method,
                    "source_id": i,
                    "class_id": classes[i],
                    "visibility": "visible" if visible[i] else "invisible",
                    "sdr_db": sdr,
                    "sir_db": sir,
                    "sar_db": sar,
                    "perm_index": perm_index,
                })

        labels = None
        if self.parser is not None:
            visible_feats = [f for f, flag in zip(features, visible) if flag]
            labels = self.parser.parse_scene(visible_feats, draw.mixture, self.stft_config)
        return rows, labels

    @measure_performance("evaluate")
    def evaluate(self, corpus: Corpus, mixtures: int, m: int, n: int, split: str = "test",
                 methods: Optional[Sequence[str]] = None, feature_mode: str = "clip",
                 seed: int = 0, workers: int = 1) -> Tuple[pd.DataFrame, List[SceneLabels], List[Tuple]]:
        """Metric rows for every (mixture, method, source), parser outputs and scene truths"""

        methods = self.select_methods(methods)
        if feature_mode not in FEATURE_MODES:
            raise ConfigError(f"unknown feature mode {feature_mode}; choose from {FEATURE_MODES}")
        logger.info(f"🔄 Evaluating {methods} on {mixtures} {split} mixtures "
                    f"(m={m}, n={n}, features={feature_mode}, seed {seed})")

        draws = [
            draw_mixture(corpus, m, n, seed=seed * 100003 + k, split=split, mixture_id=f"{split}-{k:04d}")
            for k in range(mixtures)
        ]

        def work(draw: MixtureDraw):
            return self.score_mixture(corpus, draw, methods, feature_mode)

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(work, draws))
        else:
            results = [work(draw) for draw in draws]

        rows = [row for mixture_rows, _ in results for row in mixture_rows]
        labels = [label for _, label in results if label is not None]
        truths = [scene_truth(draw.classes, n) for draw in draws] if labels else []
        return pd.DataFrame(rows, columns=ROW_COLUMNS), labels, truths
