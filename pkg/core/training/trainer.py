"""
Mix-and-predict training loops
Joint dual-branch separator training (with visual-only and semantic-only
ablation modes) and multi-label scene-parser training
"""

import logging
from dataclasses import dataclass
from typing import Dict, Any, List, Literal, Tuple

import numpy as np
import pandas as pd
import torch
import torch.nn as nn

from config.settings import LossConfig, StftConfig, TrainConfig
from core.data.synth_data import Corpus, MixtureDraw, draw_mixture
from core.dsp.signal_processing import Spectrogram, ideal_binary_masks, log_magnitude, stft
from core.exceptions import DataError
from core.parser.scene_parser import ScenePredictor, build_parser_targets
from core.separator.separator_model import SeparatorModel, scale_log_magnitude
from core.training.gradients import ForwardTrace, backward, named_parameters
from core.training.losses import LossBreakdown, mask_loss, total_loss
from utils.separation_utils import log_operation, measure_performance

logger = logging.getLogger(__name__)

TrainingMode = Literal["joint", "visual-only", "semantic-only"]

HISTORY_COLUMNS = ["iter", "L_ss", "L_triplet", "L_total", "vis_mask_loss", "scn_mask_loss"]
PARSER_HISTORY_COLUMNS = ["iter", "L_visible", "L_audible", "L_total"]


def mode_loss_config(cfg: LossConfig, mode: TrainingMode) -> LossConfig:
    """Branch gating of the ablation modes"""
    if mode == "joint":
        return cfg
    if mode == "visual-only":
        return cfg.model_copy(update={"lam": 2.0, "eta": 0.0})
    if mode == "semantic-only":
        return cfg.model_copy(update={"lam": 0.0, "eta": 0.0})
    raise ValueError(f"unknown training mode: {mode}")


def mixture_seed(train_seed: int, iteration: int, slot: int, batch_size: int) -> int:
    return train_seed * 1_000_003 + iteration * batch_size + slot


class SpectrogramCache:
    """Per-clip STFTs; mixture grids are sums of stem grids (STFT is linear)"""

    def __init__(self, corpus: Corpus, stft_config: StftConfig):
        self.corpus = corpus
        self.stft_config = stft_config
        self._cache: Dict[str, Spectrogram] = {}

    def stem(self, clip_id: str) -> Spectrogram:
        if clip_id not in self._cache:
            self._cache[clip_id] = stft(self.corpus.audio(clip_id), self.stft_config)
        return self._cache[clip_id]

    def prepare(self, draw: MixtureDraw, dtype: torch.dtype) -> Tuple[torch.Tensor, torch.Tensor]:
        """(scaled mixture log-magnitude [T, F], ideal binary masks [m, T, F])"""
        stems = [self.stem(clip_id) for clip_id in draw.manifest.clip_ids]
        mixture = Spectrogram(
            bins=np.sum([s.bins for s in stems], axis=0),
            config=self.stft_config,
            length=stems[0].length,
        )
        logspec = scale_log_magnitude(log_magnitude(mixture).values, dtype=dtype)
        masks = torch.as_tensor(np.stack([m.values for m in ideal_binary_masks(stems)]), dtype=dtype)
        return logspec, masks


@dataclass
class TrainingResult:
    model: nn.Module
    history: pd.DataFrame


class SeparatorTrainer:
    """Joint training of the visual and semantic branches with SGD + momentum"""

    def __init__(self, model: SeparatorModel, corpus: Corpus, stft_config: StftConfig,
                 train_config: TrainConfig, loss_config: LossConfig, mode: TrainingMode = "joint"):
        self.model = model
        self.corpus = corpus
        self.train_config = train_config
        self.loss_config = mode_loss_config(loss_config, mode)
        self.mode = mode
        self.spectrograms = SpectrogramCache(corpus, stft_config)
        self.optimizer = torch.optim.SGD(model.parameters(), lr=train_config.learning_rate,
                                         momentum=train_config.momentum)
        self.parameters = named_parameters(model)
        self._check_dataset()

    def _check_dataset(self):
        available = len(self.corpus.classes_in("train"))
        if available < self.train_config.sources:
            raise DataError(f"training split has {available} classes, need {self.train_config.sources}")

    def _draws(self, iteration: int) -> List[MixtureDraw]:
        cfg = self.train_config
        return [
            draw_mixture(self.corpus, cfg.sources, cfg.visible,
                         seed=mixture_seed(cfg.seed, iteration, slot, cfg.batch_size), split="train")
            for slot in range(cfg.batch_size)
        ]

    def compute_loss(self, draws: List[MixtureDraw], trace: ForwardTrace) -> LossBreakdown:
        dtype = self.model.synthesizer.bias.dtype
        gt_groups, vis_groups, scn_groups = [], [], []
        for k, draw in enumerate(draws):
            logspec, gt = self.spectrograms.prepare(draw, dtype)
            visual = torch.as_tensor(np.stack([r.visual_feature for r in draw.records]), dtype=dtype)
            semantic = self.model.label_alignment(torch.tensor(draw.classes))

            features = trace.record(f"mixture{k}.analysis", self.model.analysis(logspec))
            synthesize = self.model.synthesizer.logits
            vis_logits = trace.record(f"mixture{k}.visual_logits", synthesize(features, visual))
            scn_logits = trace.record(f"mixture{k}.semantic_logits", synthesize(features, semantic))

            gt_groups.append(list(gt))
            vis_groups.append(list(vis_logits))
            scn_groups.append(list(scn_logits))
        return total_loss(gt_groups, vis_groups, scn_groups, self.loss_config)

    def step(self, iteration: int) -> Dict[str, Any]:
        trace = ForwardTrace()
        breakdown = self.compute_loss(self._draws(iteration), trace)
        grads = backward(breakdown.total, self.parameters, trace)

        for name, param in self.parameters.items():
            param.grad = grads[name]
        torch.nn.utils.clip_grad_norm_(self.model.parameters(), self.train_config.grad_clip)
        self.optimizer.step()
        self.optimizer.zero_grad(set_to_none=True)
        return {"iter": iteration, **breakdown.as_floats()}

    @measure_performance("train_separator")
    def train(self) -> TrainingResult:
        cfg = self.train_config
        logger.info(f"🔄 Training separator ({self.mode}, lam={self.loss_config.lam}, eta={self.loss_config.eta}) "
                    f"for {cfg.total_iterations} iterations, seed {cfg.seed}")
        self.model.train()
        rows = []
        for iteration in range(cfg.total_iterations):
            rows.append(self.step(iteration))
            if (iteration + 1) % cfg.iterations_per_epoch == 0:
                epoch_rows = rows[-cfg.iterations_per_epoch:]
                mean_total = float(np.mean([r["L_total"] for r in epoch_rows]))
                logger.info(f"✅ Epoch {(iteration + 1) // cfg.iterations_per_epoch}/{cfg.epochs}: "
                            f"mean L_total {mean_total:.4f}")
        self.model.eval()

        history = pd.DataFrame(rows, columns=HISTORY_COLUMNS)
        log_operation("separator_trained", {"mode": self.mode, "iterations": len(rows),
                                            "final_L_total": rows[-1]["L_total"]})
        return TrainingResult(model=self.model, history=history)


class ParserTrainer:
    """Multi-label BCE on the visible and audible heads"""

    def __init__(self, model: ScenePredictor, corpus: Corpus, stft_config: StftConfig,
                 train_config: TrainConfig):
        self.model = model
        self.corpus = corpus
        self.train_config = train_config
        self.spectrograms = SpectrogramCache(corpus, stft_config)
        self.optimizer = torch.optim.SGD(model.parameters(), lr=train_config.learning_rate,
                                         momentum=train_config.momentum)
        self.parameters = named_parameters(model)
        available = len(corpus.classes_in("train"))
        if available < train_config.sources:
            raise DataError(f"training split has {available} classes, need {train_config.sources}")

    def step(self, iteration: int) -> Dict[str, Any]:
        cfg = self.train_config
        dtype = self.model.visible_head.weight.dtype
        trace = ForwardTrace()
        visible_losses, audible_losses = [], []
        for slot in range(cfg.batch_size):
            draw = draw_mixture(self.corpus, cfg.sources, cfg.visible,
                                seed=mixture_seed(cfg.seed, iteration, slot, cfg.batch_size), split="train")
            logspec, _ = self.spectrograms.prepare(draw, dtype)
            feats = torch.as_tensor(
                np.stack([r.visual_feature for r in draw.records[:cfg.visible]]), dtype=dtype
            )
            visible_target, audible_target = build_parser_targets(draw.classes, cfg.visible,
                                                                  self.model.config.num_classes)
            visible, audible = self.model.logits(feats, logspec)
            trace.record(f"mixture{slot}.visible_logits", visible)
            trace.record(f"mixture{slot}.audible_logits", audible)
            visible_losses.append(mask_loss(torch.as_tensor(visible_target, dtype=dtype), visible))
            audible_losses.append(mask_loss(torch.as_tensor(audible_target, dtype=dtype), audible))

        l_visible = torch.stack(visible_losses).mean()
        l_audible = torch.stack(audible_losses).mean()
        loss = l_visible + l_audible
        grads = backward(loss, self.parameters, trace)
        for name, param in self.parameters.items():
            param.grad = grads[name]
        torch.nn.utils.clip_grad_norm_(self.model.parameters(), cfg.grad_clip)
        self.optimizer.step()
        self.optimizer.zero_grad(set_to_none=True)
        return {"iter": iteration, "L_visible": float(l_visible), "L_audible": float(l_audible),
                "L_total": float(loss)}

    @measure_performance("train_parser")
    def train(self) -> TrainingResult:
        cfg = self.train_config
        logger.info(f"🔄 Training scene parser for {cfg.total_iterations} iterations, seed {cfg.seed}")
        self.model.train()
        rows = [self.step(iteration) for iteration in range(cfg.total_iterations)]
        self.model.eval()
        history = pd.DataFrame(rows, columns=PARSER_HISTORY_COLUMNS)
        log_operation("parser_trained", {"iterations": len(rows), "final_L_total": rows[-1]["L_total"]})
        return TrainingResult(model=self.model, history=history)


def train_separator(model: SeparatorModel, corpus: Corpus, stft_config: StftConfig, train_config: TrainConfig,
                    loss_config: LossConfig, mode: TrainingMode = "joint") -> TrainingResult:
    return SeparatorTrainer(model, corpus, stft_config, train_config, loss_config, mode).train()


def train_parser(model: ScenePredictor, corpus: Corpus, stft_config: StftConfig,
                 train_config: TrainConfig) -> TrainingResult:
    return ParserTrainer(model, corpus, stft_config, train_config).train()
