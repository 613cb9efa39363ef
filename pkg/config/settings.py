"""
Configuration for the Scene-Aware Separation System
Typed config models plus a sectioned config manager fed by defaults,
a flat key=value file and command-line overrides
"""

import logging
import math
from pathlib import Path
from typing import Dict, Any, Optional, Literal, Union

from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator, model_validator

from core.exceptions import ConfigError

logger = logging.getLogger(__name__)

# Fixed numeric constants shared by every module
LOG_EPS = 1e-7
SCHEMA_VERSION = 1
CHECKPOINT_MAGIC = b"AVSA"
CHECKPOINT_VERSION = 1


class StftConfig(BaseModel):
    """Analysis/synthesis parameters of the short-time Fourier transform"""

    model_config = ConfigDict(frozen=True)

    fft_size: int = 1024
    hop: int = 256
    window: Literal["hann", "hamming", "rectangular"] = "hann"
    sample_rate: int = 11025

    @field_validator("fft_size")
    @classmethod
    def _even_fft(cls, value: int) -> int:
        if value < 2 or value % 2:
            raise ValueError("fft_size must be an even number >= 2")
        return value

    @field_validator("sample_rate")
    @classmethod
    def _positive_rate(cls, value: int) -> int:
        if value <= 0:
            raise ValueError("sample_rate must be positive")
        return value

    @model_validator(mode="after")
    def _hop_range(self) -> "StftConfig":
        if not 0 < self.hop <= self.fft_size:
            raise ValueError("hop must satisfy 0 < hop <= fft_size")
        return self

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1


class BssEvalConfig(BaseModel):
    """BSS-Eval decomposition settings"""

    model_config = ConfigDict(frozen=True)

    filter_len: int = 512
    clamp_db: float = 300.0
    degenerate_db: float = 150.0
    ridge_scale: float = 1e-10
    compute_permutation: bool = True
    max_sources: int = 8
    workers: int = 1

    @field_validator("filter_len", "max_sources", "workers")
    @classmethod
    def _at_least_one(cls, value: int) -> int:
        if value < 1:
            raise ValueError("must be >= 1")
        return value

    @field_validator("clamp_db", "degenerate_db")
    @classmethod
    def _finite(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("must be finite")
        return value


class SeparatorConfig(BaseModel):
    """Size of the dual-branch separator"""

    model_config = ConfigDict(frozen=True)

    k_r: int = 32
    num_classes: int = 11
    n_bins: int = 513
    init_scale: float = 0.1
    synth_bias: float = 0.0

    @field_validator("k_r")
    @classmethod
    def _channels(cls, value: int) -> int:
        if value < 2 or value % 2 or value > 512:
            raise ValueError("k_r must be even and within [2, 512]")
        return value

    @field_validator("num_classes", "n_bins")
    @classmethod
    def _positive(cls, value: int) -> int:
        if value < 1:
            raise ValueError("must be >= 1")
        return value

    @property
    def hidden(self) -> int:
        return self.k_r // 2


class ParserConfig(BaseModel):
    """Size and decision threshold of the scene parser"""

    model_config = ConfigDict(frozen=True)

    k_r: int = 32
    num_classes: int = 11
    n_bins: int = 513
    threshold: float = 0.5
    init_scale: float = 0.1

    @field_validator("threshold")
    @classmethod
    def _open_unit(cls, value: float) -> float:
        if not 0.0 < value < 1.0:
            raise ValueError("threshold must lie in (0, 1)")
        return value

    @field_validator("k_r", "num_classes", "n_bins")
    @classmethod
    def _positive(cls, value: int) -> int:
        if value < 1:
            raise ValueError("must be >= 1")
        return value

    @property
    def hidden(self) -> int:
        return max(1, self.k_r // 2)


class LossConfig(BaseModel):
    """Weights of the separation objective"""

    model_config = ConfigDict(frozen=True)

    lam: float = 1.5
    eta: float = 0.1
    margin: float = 0.2
    mask_loss: Literal["bce"] = "bce"

    @field_validator("lam")
    @classmethod
    def _lam_range(cls, value: float) -> float:
        if not 0.0 <= value <= 2.0:
            raise ValueError("lam must lie in [0, 2]")
        return value

    @field_validator("eta", "margin")
    @classmethod
    def _non_negative(cls, value: float) -> float:
        if value < 0:
            raise ValueError("must be >= 0")
        return value


class TrainConfig(BaseModel):
    """Mix-and-predict training loop settings"""

    model_config = ConfigDict(frozen=True)

    batch_size: int = 4
    sources: int = 3
    visible: int = 1
    epochs: int = 10
    iterations_per_epoch: int = 100
    learning_rate: float = 1e-2
    momentum: float = 0.9
    optimizer: Literal["sgd"] = "sgd"
    grad_clip: float = 5.0
    seed: int = 0

    @model_validator(mode="after")
    def _counts(self) -> "TrainConfig":
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 1 <= self.visible <= self.sources:
            raise ValueError("visible count must satisfy 1 <= n <= m")
        if self.epochs < 1 or self.iterations_per_epoch < 1:
            raise ValueError("epochs and iterations_per_epoch must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        return self

    @property
    def total_iterations(self) -> int:
        return self.epochs * self.iterations_per_epoch


class CorpusConfig(BaseModel):
    """Synthetic corpus generation settings"""

    model_config = ConfigDict(frozen=True)

    num_classes: int = 11
    clips_per_class: int = 50
    duration: float = 6.0
    sample_rate: int = 11025
    k_r: int = 32
    frames_per_clip: int = 3
    feature_noise: float = 0.1
    train_fraction: float = 0.8
    encoding: Literal["float32", "pcm16"] = "float32"
    seed: int = 0

    @model_validator(mode="after")
    def _ranges(self) -> "CorpusConfig":
        if self.num_classes < 1 or self.clips_per_class < 1:
            raise ValueError("num_classes and clips_per_class must be >= 1")
        if self.duration <= 0 or self.sample_rate <= 0:
            raise ValueError("duration and sample_rate must be positive")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie in (0, 1)")
        if self.frames_per_clip < 1:
            raise ValueError("frames_per_clip must be >= 1")
        return self


# flat key -> (section, field, type)
FLAT_KEYS: Dict[str, tuple] = {
    "sample_rate": ("dsp", "sample_rate", int),
    "fft_size": ("dsp", "fft_size", int),
    "hop": ("dsp", "hop", int),
    "window": ("dsp", "window", str),
    "filter_len": ("metrics", "filter_len", int),
    "clamp_db": ("metrics", "clamp_db", float),
    "k_r": ("model", "k_r", int),
    "num_classes": ("model", "num_classes", int),
    "threshold": ("parser", "threshold", float),
    "lam": ("loss", "lam", float),
    "eta": ("loss", "eta", float),
    "margin": ("loss", "margin", float),
    "batch_size": ("train", "batch_size", int),
    "sources": ("train", "sources", int),
    "visible": ("train", "visible", int),
    "epochs": ("train", "epochs", int),
    "iterations_per_epoch": ("train", "iterations_per_epoch", int),
    "learning_rate": ("train", "learning_rate", float),
    "momentum": ("train", "momentum", float),
    "grad_clip": ("train", "grad_clip", float),
    "seed": ("train", "seed", int),
    "clips_per_class": ("data", "clips_per_class", int),
    "duration": ("data", "duration", float),
    "feature_noise": ("data", "feature_noise", float),
    "train_fraction": ("data", "train_fraction", float),
    "corpus_seed": ("data", "seed", int),
    "eval_mixtures": ("runtime", "eval_mixtures", int),
    "log_level": ("runtime", "log_level", str),
}


class SeparationConfigManager:
    """Sectioned configuration manager: defaults < key=value file < CLI overrides"""

    def __init__(self, config_file: Optional[Union[str, Path]] = None,
                 overrides: Optional[Dict[str, Any]] = None):
        self.config_file = Path(config_file) if config_file else None
        self.config = self._load_config(overrides or {})
        self.validation_cache: Dict[str, bool] = {}

    def _default_sections(self) -> Dict[str, Dict[str, Any]]:
        """Defaults for every section"""
        return {
            "dsp": StftConfig().model_dump(),
            "metrics": BssEvalConfig().model_dump(),
            "model": {"k_r": 32, "num_classes": 11},
            "parser": {"threshold": 0.5},
            "loss": LossConfig().model_dump(),
            "train": TrainConfig().model_dump(),
            "data": {
                "clips_per_class": 50,
                "duration": 6.0,
                "feature_noise": 0.1,
                "train_fraction": 0.8,
                "seed": 0,
            },
            "runtime": {"eval_mixtures": 50, "log_level": "INFO"},
        }

    def _load_config(self, overrides: Dict[str, Any]) -> Dict[str, Dict[str, Any]]:
        """Merge defaults, file values and overrides"""
        sections = self._default_sections()

        flat: Dict[str, Any] = {}
        if self.config_file is not None:
            if not self.config_file.exists():
                raise ConfigError(f"config file not found: {self.config_file}")
            flat.update({k: v for k, v in dotenv_values(self.config_file).items() if v is not None})
            logger.info(f"🔄 Loaded {len(flat)} keys from {self.config_file}")

        flat.update({k: v for k, v in overrides.items() if v is not None})

        for key, raw in flat.items():
            if key not in FLAT_KEYS:
                raise ConfigError(f"unknown config key: {key}")
            section, field, caster = FLAT_KEYS[key]
            try:
                sections[section][field] = caster(raw)
            except (TypeError, ValueError) as e:
                raise ConfigError(f"bad value for {key}: {raw!r} ({e})") from e

        return sections

    def get_config(self, section: str = None) -> Any:
        """Get configuration section or entire config"""
        if section:
            return self.config.get(section, {})
        return self.config

    def as_flat_dict(self) -> Dict[str, Any]:
        """Flat key=value view, the form written into run directories"""
        return {key: self.config[section][field] for key, (section, field, _) in FLAT_KEYS.items()}

    def write_flat_file(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        lines = [f"{key}={value}" for key, value in sorted(self.as_flat_dict().items())]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path

    def validate_config(self) -> Dict[str, bool]:
        """Check every typed section; results cached per section"""
        builders = {
            "dsp": self.stft_config,
            "metrics": self.bss_config,
            "model": self.separator_config,
            "parser": self.parser_config,
            "loss": self.loss_config,
            "train": self.train_config,
            "data": self.corpus_config,
        }
        results = {}
        for section, builder in builders.items():
            try:
                builder()
                results[section] = True
            except ConfigError as e:
                logger.warning(f"⚠️ Invalid {section} config: {e}")
                results[section] = False
        results["overall"] = all(results.values())
        self.validation_cache = results
        return results

    def _build(self, model_cls, values: Dict[str, Any]):
        try:
            return model_cls(**values)
        except ValidationError as e:
            raise ConfigError(f"invalid {model_cls.__name__}: {e.errors()[0]['msg']}") from e

    def stft_config(self) -> StftConfig:
        return self._build(StftConfig, self.config["dsp"])

    def bss_config(self) -> BssEvalConfig:
        return self._build(BssEvalConfig, self.config["metrics"])

    def separator_config(self) -> SeparatorConfig:
        return self._build(SeparatorConfig, {**self.config["model"], "n_bins": self.stft_config().n_bins})

    def parser_config(self) -> ParserConfig:
        return self._build(ParserConfig, {
            "k_r": self.config["model"]["k_r"],
            "num_classes": self.config["model"]["num_classes"],
            "n_bins": self.stft_config().n_bins,
            **self.config["parser"],
        })

    def loss_config(self) -> LossConfig:
        return self._build(LossConfig, self.config["loss"])

    def train_config(self) -> TrainConfig:
        return self._build(TrainConfig, self.config["train"])

    def corpus_config(self) -> CorpusConfig:
        return self._build(CorpusConfig, {
            **self.config["data"],
            "num_classes": self.config["model"]["num_classes"],
            "k_r": self.config["model"]["k_r"],
            "sample_rate": self.config["dsp"]["sample_rate"],
        })
