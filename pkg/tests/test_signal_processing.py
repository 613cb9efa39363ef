"""
Tests for STFT/ISTFT, log-magnitude, ideal binary masks and mixing
"""
import numpy as np
import pytest

from config.settings import LOG_EPS, BssEvalConfig, StftConfig
from core.dsp.signal_processing import (AudioClip, Mask, Spectrogram, apply_mask, check_cola, cola_deviation,
                                        frame_count, full_spectrum, ideal_binary_mask, ideal_binary_masks,
                                        interior_slice, istft, log_magnitude, mix, stft)
from core.exceptions import ConfigError, DataError, LengthError, ShapeError
from core.metrics.bss_eval import score_estimate


def _noise(rng, length=4000, rate=11025):
    return AudioClip(samples=rng.standard_normal(length), sample_rate=rate)


@pytest.mark.parametrize("window,hop", [("hann", 64), ("hamming", 64), ("rectangular", 128)])
def test_istft_inverts_stft_on_interior(window, hop):
    """Test perfect reconstruction away from the edges for COLA configurations"""
    cfg = StftConfig(fft_size=256, hop=hop, window=window, sample_rate=11025)
    for seed in range(20):
        clip = _noise(np.random.default_rng(seed), length=3000 + 37 * seed)
        restored = istft(stft(clip, cfg))
        assert len(restored) == len(clip)
        interior = interior_slice(cfg, len(clip))
        error = np.linalg.norm(restored.samples[interior] - clip.samples[interior])
        assert error / np.linalg.norm(clip.samples[interior]) < 1e-6


def test_cola_check():
    """Test that squared-window COLA is enforced"""
    assert cola_deviation(StftConfig(fft_size=256, hop=64)) < 1e-10
    check_cola(StftConfig(fft_size=256, hop=256, window="rectangular"))
    with pytest.raises(ConfigError):
        check_cola(StftConfig(fft_size=256, hop=128, window="hann"))


def test_stft_grid_shape(stft_config, rng):
    clip = _noise(rng, length=1000)
    spec = stft(clip, stft_config)
    assert spec.shape == (frame_count(1000, stft_config), 129)
    assert spec.shape[0] == 1 + (1000 - 256) // 64
    assert spec.length == 1000


def test_stft_rejects_short_or_mismatched_clips(stft_config, rng):
    with pytest.raises(LengthError):
        stft(_noise(rng, length=100), stft_config)
    with pytest.raises(LengthError):
        stft(_noise(rng, rate=8000), stft_config)


def test_full_spectrum_is_conjugate_symmetric(stft_config, rng):
    spec = stft(_noise(rng), stft_config)
    full = full_spectrum(spec)
    assert full.shape == (spec.shape[0], 256)
    np.testing.assert_allclose(full[:, 1:], np.conj(full[:, :0:-1]), atol=1e-10)


def test_log_magnitude_floor_and_scaling(stft_config, rng):
    spec = stft(_noise(rng), stft_config)
    silent = Spectrogram(bins=np.zeros(spec.shape), config=stft_config, length=spec.length)
    np.testing.assert_allclose(log_magnitude(silent).values, np.log(LOG_EPS))

    louder = Spectrogram(bins=spec.bins * 10.0, config=stft_config, length=spec.length)
    base = log_magnitude(spec).values
    shifted = log_magnitude(louder).values
    large = np.abs(spec.bins) > 1e-2
    np.testing.assert_allclose(shifted[large] - base[large], np.log(10.0), atol=1e-4)


def test_ideal_binary_masks_partition(stft_config, rng):
    specs = [stft(_noise(rng), stft_config) for _ in range(3)]
    masks = ideal_binary_masks(specs)
    assert all(mask.is_binary for mask in masks)
    np.testing.assert_array_equal(np.sum([m.values for m in masks], axis=0), 1.0)

    single = ideal_binary_mask(specs[0], specs[1:])
    np.testing.assert_array_equal(single.values, masks[0].values)
    assert np.all(ideal_binary_mask(specs[0], []).values == 1.0)


def test_ideal_binary_mask_ties_keep_target(stft_config, rng):
    spec = stft(_noise(rng), stft_config)
    assert np.all(ideal_binary_mask(spec, [spec]).values == 1.0)


def test_apply_all_ones_mask_returns_mixture(stft_config, rng):
    clip = _noise(rng)
    spec = stft(clip, stft_config)
    restored = apply_mask(spec, Mask(np.ones(spec.shape)))
    interior = interior_slice(stft_config, len(clip))
    np.testing.assert_allclose(restored.samples[interior], clip.samples[interior], atol=1e-9)

    with pytest.raises(ShapeError):
        apply_mask(spec, Mask(np.ones((2, 2))))


def test_stft_is_linear(stft_config, rng):
    a, b = _noise(rng), _noise(rng)
    combined = stft(AudioClip(samples=2.0 * a.samples - 0.5 * b.samples, sample_rate=a.sample_rate), stft_config)
    np.testing.assert_allclose(combined.bins, 2.0 * stft(a, stft_config).bins - 0.5 * stft(b, stft_config).bins,
                               atol=1e-9)
    silent = stft(AudioClip(samples=np.zeros(1000), sample_rate=11025), stft_config)
    assert not np.any(silent.bins)


def test_bin_centred_sinusoid_lands_in_its_bin():
    cfg = StftConfig(fft_size=256, hop=256, window="rectangular", sample_rate=11025)
    k = 17
    t = np.arange(256 * 8) / cfg.sample_rate
    clip = AudioClip(samples=np.sin(2 * np.pi * k * cfg.sample_rate / cfg.fft_size * t + 0.3), sample_rate=11025)
    energy = np.abs(stft(clip, cfg).bins) ** 2
    assert np.all(energy[:, k] / energy.sum(axis=1) > 0.99)


def _tone(frequency, length=8000, rate=11025):
    t = np.arange(length) / rate
    return AudioClip(samples=np.sin(2 * np.pi * frequency * t), sample_rate=rate)


def test_disjoint_band_mixture_separates_with_ideal_masks(stft_config):
    low = _tone(10 * stft_config.sample_rate / stft_config.fft_size)
    high = _tone(60 * stft_config.sample_rate / stft_config.fft_size)
    mixture = stft(mix([low, high]), stft_config)
    masks = ideal_binary_masks([stft(low, stft_config), stft(high, stft_config)])
    assert np.all(masks[0].values[:, 9:12] == 1.0)
    assert np.all(masks[1].values[:, 59:62] == 1.0)

    estimates = [apply_mask(mixture, mask) for mask in masks]
    for i, estimate in enumerate(estimates):
        sdr, sir, _ = score_estimate([low, high], estimate, i, BssEvalConfig(filter_len=32))
        assert sir > 20.0
        assert sdr > 15.0


def test_masking_never_adds_energy(stft_config, rng):
    clip = _noise(rng)
    spec = stft(clip, stft_config)
    interior = interior_slice(stft_config, len(clip))
    for _ in range(5):
        restored = apply_mask(spec, Mask(rng.uniform(size=spec.shape)))
        assert np.sum(restored.samples[interior] ** 2) <= np.sum(clip.samples ** 2) * (1 + 1e-9)


def test_mix_is_exact_sum(rng):
    clips = [_noise(rng) for _ in range(3)]
    total = mix(clips)
    np.testing.assert_array_equal(total.samples, clips[0].samples + clips[1].samples + clips[2].samples)

    with pytest.raises(LengthError):
        mix([])
    with pytest.raises(LengthError):
        mix([clips[0], _noise(rng, length=10)])


def test_value_types_validate_inputs():
    with pytest.raises(DataError):
        AudioClip(samples=np.array([0.0, np.nan]), sample_rate=8000)
    with pytest.raises(ShapeError):
        AudioClip(samples=np.zeros((2, 2)), sample_rate=8000)
    with pytest.raises(LengthError):
        AudioClip(samples=np.zeros(0), sample_rate=8000)
    with pytest.raises(DataError):
        Mask(np.array([[0.0, 1.5]]))

    mask = Mask(np.array([[0.2, 0.5, 0.9]]))
    assert not mask.is_binary
    np.testing.assert_array_equal(mask.binarize().values, [[0.0, 1.0, 1.0]])


if __name__ == "__main__":
    pytest.main([__file__])
