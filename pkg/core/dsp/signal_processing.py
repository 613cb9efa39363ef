"""
Signal processing primitives for mask-based separation
STFT/ISTFT with weighted overlap-add, log-magnitude spectrograms,
ideal binary masks and lossless mixture synthesis
"""

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import List, Sequence

import numpy as np
from scipy.signal import get_window

from config.settings import StftConfig, LOG_EPS
from core.exceptions import ConfigError, DataError, LengthError, ShapeError

logger = logging.getLogger(__name__)

COLA_TOLERANCE = 1e-10
# ISTFT denominator floor, as a fraction of the interior squared-window sum
EDGE_FLOOR = 0.1

_WINDOW_NAMES = {"hann": "hann", "hamming": "hamming", "rectangular": "boxcar"}


def _frozen(values: np.ndarray) -> np.ndarray:
    values.setflags(write=False)
    return values


@dataclass(frozen=True)
class AudioClip:
    """Mono sample buffer with its sample rate"""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.array(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ShapeError(f"audio must be mono (1-D), got shape {samples.shape}")
        if samples.size == 0:
            raise LengthError("audio clip is empty")
        if not np.all(np.isfinite(samples)):
            raise DataError("audio clip contains non-finite samples")
        if int(self.sample_rate) <= 0:
            raise DataError(f"sample rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", _frozen(samples))
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class Spectrogram:
    """Complex time-frequency grid [frames x (fft_size/2 + 1)]"""

    bins: np.ndarray
    config: StftConfig
    length: int

    def __post_init__(self):
        bins = np.array(self.bins, dtype=np.complex128)
        if bins.ndim != 2 or bins.shape[1] != self.config.n_bins:
            raise ShapeError(f"expected [frames x {self.config.n_bins}] grid, got {bins.shape}")
        if bins.shape[0] != frame_count(self.length, self.config):
            raise ShapeError(f"{bins.shape[0]} frames inconsistent with length {self.length}")
        if not np.all(np.isfinite(bins)):
            raise DataError("spectrogram contains non-finite bins")
        object.__setattr__(self, "bins", _frozen(bins))

    @property
    def shape(self):
        return self.bins.shape


@dataclass(frozen=True)
class LogMagSpectrogram:
    """log(|z| + eps) of a spectrogram"""

    values: np.ndarray
    config: StftConfig

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True)
class Mask:
    """Real-valued [0, 1] time-frequency mask"""

    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ShapeError(f"mask must be a 2-D grid, got shape {values.shape}")
        if not np.all(np.isfinite(values)) or values.min(initial=0.0) < 0.0 or values.max(initial=0.0) > 1.0:
            raise DataError("mask entries must be finite and within [0, 1]")
        object.__setattr__(self, "values", _frozen(values))

    @property
    def shape(self):
        return self.values.shape

    @property
    def is_binary(self) -> bool:
        return bool(np.all((self.values == 0.0) | (self.values == 1.0)))

    def binarize(self, threshold: float = 0.5) -> "Mask":
        return Mask((self.values >= threshold).astype(np.float64))


@lru_cache(maxsize=16)
def _analysis_window(window: str, fft_size: int) -> np.ndarray:
    return _frozen(get_window(_WINDOW_NAMES[window], fft_size, fftbins=True).astype(np.float64))


def analysis_window(cfg: StftConfig) -> np.ndarray:
    """Periodic analysis window of the config"""
    return _analysis_window(cfg.window, cfg.fft_size)


def frame_count(length: int, cfg: StftConfig) -> int:
    if length < cfg.fft_size:
        return 0
    return 1 + (length - cfg.fft_size) // cfg.hop


def _squared_window_period(cfg: StftConfig) -> np.ndarray:
    """Sum of the squared window shifted by every multiple of hop, over one hop period"""
    squared = analysis_window(cfg) ** 2
    period = np.zeros(cfg.hop)
    for start in range(0, cfg.fft_size, cfg.hop):
        chunk = squared[start:start + cfg.hop]
        period[:chunk.size] += chunk
    return period


def cola_deviation(cfg: StftConfig) -> float:
    """Relative spread of the overlap-added squared window"""
    period = _squared_window_period(cfg)
    mean = period.mean()
    if mean <= 0:
        return float("inf")
    return float((period.max() - period.min()) / mean)


def check_cola(cfg: StftConfig) -> None:
    deviation = cola_deviation(cfg)
    if deviation > COLA_TOLERANCE:
        raise ConfigError(
            f"window/hop pair is not COLA-valid: {cfg.window} window, fft {cfg.fft_size}, "
            f"hop {cfg.hop} (relative deviation {deviation:.3e})"
        )


def edge_samples(cfg: StftConfig) -> int:
    """Samples at each end not covered by the full window overlap"""
    return cfg.fft_size - cfg.hop


def interior_slice(cfg: StftConfig, length: int) -> slice:
    """Region where istft(stft(x)) == x is guaranteed"""
    frames = frame_count(length, cfg)
    covered = cfg.fft_size + (frames - 1) * cfg.hop if frames else 0
    edge = edge_samples(cfg)
    return slice(edge, max(edge, covered - edge))


def stft(clip: AudioClip, cfg: StftConfig) -> Spectrogram:
    """Windowed DFT of every frame starting at t*hop (no padding, no centring)"""

    samples = clip.samples
    if not np.all(np.isfinite(samples)):
        raise DataError("cannot transform non-finite audio")
    if clip.sample_rate != cfg.sample_rate:
        raise LengthError(f"clip rate {clip.sample_rate} Hz does not match config rate {cfg.sample_rate} Hz")
    if samples.size < cfg.fft_size:
        raise LengthError(f"clip of {samples.size} samples is shorter than one {cfg.fft_size}-sample frame")

    frames = np.lib.stride_tricks.sliding_window_view(samples, cfg.fft_size)[::cfg.hop]
    bins = np.fft.rfft(frames * analysis_window(cfg), axis=1)
    return Spectrogram(bins=bins, config=cfg, length=samples.size)


def istft(spec: Spectrogram) -> AudioClip:
    """Weighted overlap-add resynthesis back to the original clip length"""

    cfg = spec.config
    check_cola(cfg)

    window = analysis_window(cfg)
    n_frames = spec.bins.shape[0]
    covered = cfg.fft_size + (n_frames - 1) * cfg.hop

    frames = np.fft.irfft(spec.bins, n=cfg.fft_size, axis=1) * window
    output = np.zeros(covered)
    weight = np.zeros(covered)
    squared = window ** 2
    for t in range(n_frames):
        start = t * cfg.hop
        output[start:start + cfg.fft_size] += frames[t]
        weight[start:start + cfg.fft_size] += squared

    floor = EDGE_FLOOR * _squared_window_period(cfg).mean()
    output /= np.maximum(weight, floor)

    samples = np.zeros(spec.length)
    samples[:covered] = output[:spec.length]
    return AudioClip(samples=samples, sample_rate=cfg.sample_rate)


def full_spectrum(spec: Spectrogram) -> np.ndarray:
    """Conjugate-mirrored [frames x fft_size] DFT of every frame"""
    n = spec.config.fft_size
    mirrored = np.conj(spec.bins[:, n // 2 - 1:0:-1])
    return np.concatenate([spec.bins, mirrored], axis=1)


def log_magnitude(spec: Spectrogram) -> LogMagSpectrogram:
    """Elementwise log(|z| + eps)"""
    return LogMagSpectrogram(values=_frozen(np.log(np.abs(spec.bins) + LOG_EPS)), config=spec.config)


def _check_same_grid(reference: Spectrogram, others: Sequence[Spectrogram]) -> None:
    for other in others:
        if other.shape != reference.shape or other.config != reference.config:
            raise ShapeError(f"spectrogram grid mismatch: {reference.shape} vs {other.shape}")


def ideal_binary_mask(target: Spectrogram, others: Sequence[Spectrogram]) -> Mask:
    """1 where the target magnitude is at least every other source's magnitude"""

    _check_same_grid(target, others)
    if not others:
        return Mask(np.ones(target.shape))
    loudest_other = np.max(np.stack([np.abs(o.bins) for o in others]), axis=0)
    return Mask((np.abs(target.bins) >= loudest_other).astype(np.float64))


def ideal_binary_masks(spectrograms: Sequence[Spectrogram]) -> List[Mask]:
    """Partitioning masks for all sources; ties go to the lowest source index"""

    if not spectrograms:
        return []
    _check_same_grid(spectrograms[0], spectrograms[1:])
    dominant = np.argmax(np.stack([np.abs(s.bins) for s in spectrograms]), axis=0)
    return [Mask((dominant == i).astype(np.float64)) for i in range(len(spectrograms))]


def apply_mask(mixture: Spectrogram, mask: Mask) -> AudioClip:
    """ISTFT of mask * mixture, reusing the mixture phase"""

    if mask.shape != mixture.shape:
        raise ShapeError(f"mask shape {mask.shape} does not match spectrogram {mixture.shape}")
    masked = Spectrogram(bins=mixture.bins * mask.values, config=mixture.config, length=mixture.length)
    return istft(masked)


def mix(clips: Sequence[AudioClip]) -> AudioClip:
    """Elementwise sum without normalisation"""

    if not clips:
        raise LengthError("cannot mix an empty list of clips")
    rate, length = clips[0].sample_rate, len(clips[0])
    for clip in clips[1:]:
        if clip.sample_rate != rate:
            raise LengthError(f"sample rate mismatch: {clip.sample_rate} vs {rate}")
        if len(clip) != length:
            raise LengthError(f"length mismatch: {len(clip)} vs {length}")
    total = np.zeros(length)
    for clip in clips:
        total += clip.samples
    return AudioClip(samples=total, sample_rate=rate)
