"""
Tests for the separator and parser training loops
"""
import numpy as np
import pytest
import torch

from config.settings import LossConfig, TrainConfig
from core.data.synth_data import draw_mixture
from core.exceptions import DataError
from core.parser.scene_parser import ScenePredictor
from core.separator.checkpoint import SEPARATOR_PREFIX, save_checkpoint
from core.separator.separator_model import SeparatorModel
from core.training.trainer import (HISTORY_COLUMNS, PARSER_HISTORY_COLUMNS, SpectrogramCache, mode_loss_config,
                                   train_parser, train_separator)


def test_mode_gating():
    cfg = LossConfig(lam=1.5, eta=0.1)
    assert mode_loss_config(cfg, "joint") == cfg
    visual = mode_loss_config(cfg, "visual-only")
    assert (visual.lam, visual.eta) == (2.0, 0.0)
    semantic = mode_loss_config(cfg, "semantic-only")
    assert (semantic.lam, semantic.eta) == (0.0, 0.0)
    with pytest.raises(ValueError):
        mode_loss_config(cfg, "audio-only")


def test_spectrogram_cache_prepares_mixture_and_masks(tiny_corpus, stft_config):
    draw = draw_mixture(tiny_corpus, 3, 1, seed=4)
    logspec, masks = SpectrogramCache(tiny_corpus, stft_config).prepare(draw, torch.float64)
    frames = 1 + (len(draw.mixture) - stft_config.fft_size) // stft_config.hop
    assert logspec.shape == (frames, stft_config.n_bins)
    assert masks.shape == (3, frames, stft_config.n_bins)
    torch.testing.assert_close(masks.sum(dim=0), torch.ones_like(logspec))


def test_separator_training_is_deterministic(tiny_corpus, stft_config, separator_config, train_config, tmp_path):
    runs = []
    for name in ("a", "b"):
        model = SeparatorModel(separator_config, seed=train_config.seed)
        result = train_separator(model, tiny_corpus, stft_config, train_config, LossConfig())
        path = save_checkpoint(tmp_path / f"{name}.avsa", {SEPARATOR_PREFIX: result.model})
        runs.append((result.history, path.read_bytes()))

    (history_a, bytes_a), (history_b, bytes_b) = runs
    assert list(history_a.columns) == HISTORY_COLUMNS
    assert len(history_a) == train_config.total_iterations
    assert np.all(np.isfinite(history_a[HISTORY_COLUMNS[1:]].to_numpy()))
    assert history_a.equals(history_b)
    assert bytes_a == bytes_b


def test_training_changes_parameters(tiny_corpus, stft_config, separator_config, train_config):
    model = SeparatorModel(separator_config, seed=0)
    before = {name: p.detach().clone() for name, p in model.named_parameters()}
    train_separator(model, tiny_corpus, stft_config, train_config, LossConfig())
    changed = [name for name, p in model.named_parameters() if not torch.equal(before[name], p.detach())]
    assert "analysis.project.weight" in changed
    assert "label_alignment.linear.weight" in changed


def test_visual_only_mode_has_no_triplet_term(tiny_corpus, stft_config, separator_config, train_config):
    model = SeparatorModel(separator_config, seed=0)
    history = train_separator(model, tiny_corpus, stft_config, train_config, LossConfig(), mode="visual-only").history
    assert np.all(history["L_triplet"] == 0.0)


def test_separation_loss_decreases(tiny_corpus, stft_config, separator_config):
    longer = TrainConfig(batch_size=2, sources=3, visible=1, epochs=3, iterations_per_epoch=8, seed=0)
    history = train_separator(SeparatorModel(separator_config, seed=0), tiny_corpus, stft_config, longer,
                              LossConfig()).history
    first, last = history["L_ss"].iloc[:8].mean(), history["L_ss"].iloc[-8:].mean()
    assert last < first


def test_label_conditions_give_class_specific_masks(tiny_corpus, stft_config, separator_config, train_config):
    model = train_separator(SeparatorModel(separator_config, seed=0), tiny_corpus, stft_config, train_config,
                            LossConfig()).model
    draw = draw_mixture(tiny_corpus, 3, 1, seed=9, split="test")
    masks = [model.separate(draw.mixture, model.align_label(c), stft_config)[0].values for c in range(4)]
    for a in range(4):
        for b in range(a + 1, 4):
            assert not np.allclose(masks[a], masks[b])


def test_parser_training_history(tiny_corpus, stft_config, parser_config, train_config):
    result = train_parser(ScenePredictor(parser_config, seed=0), tiny_corpus, stft_config, train_config)
    assert list(result.history.columns) == PARSER_HISTORY_COLUMNS
    assert len(result.history) == train_config.total_iterations
    assert np.all(result.history["L_total"] > 0)


def test_parser_learns_the_visible_class(tiny_corpus, stft_config, parser_config):
    config = TrainConfig(batch_size=4, sources=3, visible=1, epochs=5, iterations_per_epoch=20,
                         learning_rate=0.1, seed=0)
    result = train_parser(ScenePredictor(parser_config, seed=0), tiny_corpus, stft_config, config)
    history = result.history
    assert history["L_total"].iloc[-20:].mean() < history["L_total"].iloc[:20].mean()

    hits = 0
    for k in range(12):
        draw = draw_mixture(tiny_corpus, 3, 1, seed=500 + k, split="train")
        labels = result.model.parse_scene([draw.records[0].visual_feature], draw.mixture, stft_config)
        hits += int(np.argmax(labels.visible_scores)) == draw.classes[0]
    assert hits >= 6


def test_training_needs_enough_classes(tiny_corpus, stft_config, separator_config):
    too_many = TrainConfig(batch_size=1, sources=5, visible=1, epochs=1, iterations_per_epoch=1)
    with pytest.raises(DataError):
        train_separator(SeparatorModel(separator_config), tiny_corpus, stft_config, too_many, LossConfig())


if __name__ == "__main__":
    pytest.main([__file__])
