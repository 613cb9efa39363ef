"""
Tests for mono WAV reading and writing
"""
import numpy as np
import pytest
from scipy.io import wavfile

from core.dsp.signal_processing import AudioClip
from core.dsp.wav_io import read_wav, write_wav
from core.exceptions import DataError, LengthError


def test_float32_round_trip(tmp_path, rng):
    clip = AudioClip(samples=rng.uniform(-0.9, 0.9, 2000), sample_rate=11025)
    path = write_wav(tmp_path / "clip.wav", clip)
    restored = read_wav(path, expected_rate=11025)
    assert restored.sample_rate == 11025
    np.testing.assert_allclose(restored.samples, clip.samples, atol=1e-7)


def test_pcm16_quantizes_and_clips(tmp_path):
    clip = AudioClip(samples=np.array([0.0, 0.25, -0.5, 1.5, -2.0]), sample_rate=8000)
    restored = read_wav(write_wav(tmp_path / "clip.wav", clip, encoding="pcm16"))
    np.testing.assert_allclose(restored.samples[:3], [0.0, 0.25, -0.5], atol=1.0 / 32768)
    assert restored.samples[3] == pytest.approx(32767 / 32768)
    assert restored.samples[4] == -1.0


def test_read_rejects_bad_files(tmp_path):
    with pytest.raises(DataError):
        read_wav(tmp_path / "missing.wav")

    stereo = tmp_path / "stereo.wav"
    wavfile.write(stereo, 8000, np.zeros((100, 2), dtype=np.int16))
    with pytest.raises(DataError):
        read_wav(stereo)

    int32 = tmp_path / "int32.wav"
    wavfile.write(int32, 8000, np.zeros(100, dtype=np.int32))
    with pytest.raises(DataError):
        read_wav(int32)


def test_read_rejects_rate_mismatch(tmp_path):
    clip = AudioClip(samples=np.zeros(100), sample_rate=8000)
    path = write_wav(tmp_path / "clip.wav", clip)
    with pytest.raises(LengthError):
        read_wav(path, expected_rate=11025)


def test_write_rejects_unknown_encoding(tmp_path):
    clip = AudioClip(samples=np.zeros(10), sample_rate=8000)
    with pytest.raises(DataError):
        write_wav(tmp_path / "clip.wav", clip, encoding="mp3")


if __name__ == "__main__":
    pytest.main([__file__])
