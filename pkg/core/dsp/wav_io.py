"""
Mono WAV reading and writing (16-bit PCM or 32-bit IEEE float)
"""

import logging
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy.io import wavfile

from core.dsp.signal_processing import AudioClip
from core.exceptions import DataError, LengthError

logger = logging.getLogger(__name__)

PCM16_SCALE = 32768.0


def read_wav(path: Union[str, Path], expected_rate: Optional[int] = None) -> AudioClip:
    """Load a mono WAV file; the header rate must match expected_rate when given"""

    path = Path(path)
    if not path.exists():
        raise DataError(f"WAV file not found: {path}")

    try:
        rate, data = wavfile.read(path)
    except ValueError as e:
        raise DataError(f"unreadable WAV file {path}: {e}") from e

    if data.ndim != 1:
        raise DataError(f"{path} has {data.shape[1]} channels; only mono is supported")
    if expected_rate is not None and rate != expected_rate:
        raise LengthError(f"{path} is {rate} Hz, expected {expected_rate} Hz (no resampling)")

    if data.dtype == np.int16:
        samples = data.astype(np.float64) / PCM16_SCALE
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise DataError(f"{path}: unsupported sample format {data.dtype}")

    return AudioClip(samples=samples, sample_rate=rate)


def write_wav(path: Union[str, Path], clip: AudioClip, encoding: str = "float32") -> Path:
    """Write a clip as float32 (lossless within float32 precision) or clipped pcm16"""

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    if encoding == "float32":
        data = clip.samples.astype(np.float32)
    elif encoding == "pcm16":
        scaled = np.round(clip.samples * PCM16_SCALE)
        if np.any(np.abs(clip.samples) > 1.0):
            logger.warning(f"⚠️ Clipping {path.name} to the 16-bit range")
        data = np.clip(scaled, -PCM16_SCALE, PCM16_SCALE - 1).astype(np.int16)
    else:
        raise DataError(f"unknown WAV encoding: {encoding}")

    wavfile.write(path, clip.sample_rate, data)
    return path
