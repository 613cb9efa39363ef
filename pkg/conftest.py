"""
Shared pytest fixtures: small STFT/model configs and a tiny synthetic corpus
"""
import numpy as np
import pytest

from config.settings import CorpusConfig, ParserConfig, SeparatorConfig, StftConfig, TrainConfig
from core.data.synth_data import gen_corpus

SMALL_STFT = StftConfig(fft_size=256, hop=64, sample_rate=11025)
TINY_CORPUS = CorpusConfig(num_classes=4, clips_per_class=5, duration=0.5, sample_rate=11025, k_r=8,
                           train_fraction=0.6, seed=0)


@pytest.fixture
def stft_config() -> StftConfig:
    return SMALL_STFT


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def separator_config() -> SeparatorConfig:
    return SeparatorConfig(k_r=8, num_classes=4, n_bins=SMALL_STFT.n_bins)


@pytest.fixture
def parser_config() -> ParserConfig:
    return ParserConfig(k_r=8, num_classes=4, n_bins=SMALL_STFT.n_bins)


@pytest.fixture
def train_config() -> TrainConfig:
    return TrainConfig(batch_size=2, sources=3, visible=1, epochs=1, iterations_per_epoch=3, seed=0)


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """4 classes x 5 half-second clips (3 train, 2 test per class), k_r = 8"""
    return gen_corpus(tmp_path_factory.mktemp("corpus"), TINY_CORPUS, check_separability=False)
