"""LMBE feature chain tests: STFT framing, mel filterbank shape and
coverage, segmentation and normalization rules."""

import numpy as np
import pytest

from micfed import features
from micfed.features import (AudioClip, FeatureSegment, MelFilterbank, lmbe_segments,
                             load_wav, mel_filterbank, minmax_normalize, save_wav,
                             stft_power)


def tone(freq, seconds=10.0, rate=16000, amp=0.5):
    t = np.arange(int(seconds * rate)) / rate
    return AudioClip(amp * np.sin(2 * np.pi * freq * t), rate)


class TestStft:
    def test_frame_count(self):
        clip = AudioClip(np.zeros(160000))
        assert stft_power(clip).shape == (311, 513)

    def test_short_clip_rejected(self):
        with pytest.raises(ValueError):
            stft_power(AudioClip(np.zeros(1000)))

    def test_zero_signal(self):
        out = stft_power(AudioClip(np.zeros(4096)))
        assert np.all(out == 0.0)

    def test_dc_energy_in_lowest_bins(self):
        out = stft_power(AudioClip(np.ones(4096)))
        # the Hann window smears DC into bins 0 and 1 only
        assert np.all(out.argmax(axis=1) == 0)
        assert np.allclose(out[:, 2:], 0.0, atol=1e-12)
        assert out[:, 0].min() > 0.0

    def test_tone_peaks_at_expected_bin(self):
        clip = tone(1000.0, seconds=1.0)
        out = stft_power(clip)
        assert np.all(out.argmax(axis=1) == 64)  # 1000 Hz / (16000/1024)

    def test_non_integer_window_rejected(self):
        with pytest.raises(ValueError):
            stft_power(AudioClip(np.zeros(4096)), win_s=0.0641)


class TestMelFilterbank:
    def test_shape(self):
        fb = mel_filterbank(128, 1024, 16000)
        assert fb.weights.shape == (128, 513)
        assert fb.n_filters == 128

    def test_peak_normalization(self):
        fb = mel_filterbank(40, 1024, 16000)
        # each filter's maximum on a dense frequency grid would be exactly 1;
        # on the bin grid it stays positive and bounded by 1
        assert np.all(fb.weights.max(axis=1) <= 1.0 + 1e-12)
        assert np.all(fb.weights.max(axis=1) > 0.0)

    def test_single_triangular_peak(self):
        fb = mel_filterbank(32, 1024, 16000)
        for row in fb.weights:
            support = np.flatnonzero(row)
            assert support.size > 0
            assert np.array_equal(support, np.arange(support[0], support[-1] + 1))
            peak = row.argmax()
            assert np.all(np.diff(row[support[0]:peak + 1]) >= -1e-12)
            assert np.all(np.diff(row[peak:support[-1] + 1]) <= 1e-12)

    def test_full_coverage_between_edges(self):
        fb = mel_filterbank(128, 1024, 16000)
        total = fb.weights.sum(axis=0)
        # bins strictly between the outermost filter edges (DC and Nyquist
        # sit exactly on an edge) all receive positive weight
        assert np.all(total[1:-1] > 0.0)

    def test_centers_strictly_increasing(self):
        fb = mel_filterbank(64, 1024, 16000)
        centers = fb.weights.argmax(axis=1)
        assert np.all(np.diff(centers) > 0)

    def test_too_few_filters(self):
        with pytest.raises(ValueError):
            mel_filterbank(1, 1024, 16000)

    def test_mel_scale_round_trip(self):
        f = np.linspace(0, 8000, 50)
        assert np.allclose(features.mel_to_hz(features.hz_to_mel(f)), f)


class TestSegments:
    def test_ten_second_clip_gives_two_segments(self):
        rng = np.random.default_rng(0)
        clip = AudioClip(rng.normal(0, 0.1, 160000))
        segs = lmbe_segments(clip, mel_filterbank(), node_id=3)
        assert len(segs) == 2
        for k, seg in enumerate(segs):
            assert seg.values.shape == (128, 128)
            assert seg.node_id == 3
            assert seg.segment_index == k
            assert seg.values.min() >= 0.0 and seg.values.max() <= 1.0

    def test_too_short_clip(self):
        with pytest.raises(ValueError):
            lmbe_segments(AudioClip(np.zeros(16000)), mel_filterbank())

    def test_constant_signal_gives_half(self):
        segs = lmbe_segments(AudioClip(np.zeros(160000)), mel_filterbank())
        for seg in segs:
            assert np.all(seg.values == 0.5)

    def test_wrong_filter_count_rejected(self):
        clip = AudioClip(np.zeros(160000))
        with pytest.raises(ValueError):
            lmbe_segments(clip, mel_filterbank(64))

    def test_scale_invariance_of_normalized_segments(self):
        rng = np.random.default_rng(1)
        x = rng.normal(0, 0.1, 160000)
        a = lmbe_segments(AudioClip(x), mel_filterbank())
        b = lmbe_segments(AudioClip(2.0 * x), mel_filterbank())
        # log of a scaled spectrum shifts by a constant; min-max removes it
        for sa, sb in zip(a, b):
            assert np.allclose(sa.values, sb.values, atol=1e-9)


class TestNormalize:
    def test_idempotent(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(16, 16))
        once = minmax_normalize(x)
        assert np.allclose(minmax_normalize(once), once, atol=1e-15)

    def test_constant_maps_to_half(self):
        assert np.all(minmax_normalize(np.full((4, 4), 3.7)) == 0.5)

    def test_energy_monotonicity(self):
        rng = np.random.default_rng(3)
        clip = rng.normal(0, 0.1, 160000)
        fb = mel_filterbank()
        e1 = stft_power(AudioClip(clip)) @ fb.weights.T
        e2 = stft_power(AudioClip(3.0 * clip)) @ fb.weights.T
        assert np.all(e2 >= e1)


class TestWav(object):
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(4)
        clip = AudioClip(rng.uniform(-0.5, 0.5, 16000))
        path = tmp_path / "x.wav"
        save_wav(path, clip)
        back = load_wav(path)
        assert back.sample_rate == 16000
        assert np.allclose(back.samples, clip.samples, atol=1.0 / 32768)

    def test_feature_segment_validation(self):
        with pytest.raises(ValueError):
            FeatureSegment(np.zeros((64, 128)))
        with pytest.raises(ValueError):
            FeatureSegment(np.full((128, 128), 1.5))

    def test_filterbank_validation(self):
        with pytest.raises(ValueError):
            MelFilterbank(-np.ones((4, 513)), 16000, 1024)
