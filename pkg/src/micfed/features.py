"""Time-domain audio to log-mel band energy (LMBE) feature segments.

The chain is: Hann-windowed STFT power spectra (64 ms window, 32 ms hop at
16 kHz), a 128-filter triangular mel filterbank, natural-log compression
with a small floor, then segmentation into non-overlapping 128-frame
blocks that are min-max normalized to [0,1].  Each segment is a 128x128
matrix (mel bands x frames) ready for the autoencoder.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.io import wavfile
from scipy.signal import get_window

SAMPLE_RATE = 16000
WIN_S = 0.064
HOP_S = 0.032
N_MELS = 128
SEGMENT_FRAMES = 128
LOG_FLOOR = 1e-10


@dataclass(frozen=True)
class AudioClip:
    """Mono audio samples at a fixed rate."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError(f"samples must be 1-D, got shape {samples.shape}")
        if self.sample_rate <= 0:
            raise ValueError("sample rate must be positive")
        object.__setattr__(self, "samples", samples)

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


def load_wav(path) -> AudioClip:
    """Read a 16-bit mono PCM WAV into a float clip scaled to [-1, 1)."""
    rate, data = wavfile.read(path)
    if data.dtype != np.int16:
        raise ValueError(f"expected 16-bit PCM, got dtype {data.dtype}")
    if data.ndim != 1:
        raise ValueError("expected mono audio")
    return AudioClip(data.astype(np.float64) / 32768.0, rate)


def save_wav(path, clip: AudioClip):
    """Write a clip as 16-bit PCM, clipping to the representable range."""
    scaled = np.clip(clip.samples, -1.0, 1.0 - 1.0 / 32768) * 32768.0
    wavfile.write(path, clip.sample_rate, scaled.astype(np.int16))


def _window_samples(seconds: float, rate: int, name: str) -> int:
    n = seconds * rate
    if abs(n - round(n)) > 1e-9:
        raise ValueError(f"{name} of {seconds} s is not a whole number of samples at {rate} Hz")
    return int(round(n))


def stft_power(clip: AudioClip, win_s: float = WIN_S, hop_s: float = HOP_S) -> np.ndarray:
    """Hann-windowed magnitude-squared spectra, shape (frames, win/2 + 1)."""
    win = _window_samples(win_s, clip.sample_rate, "window length")
    hop = _window_samples(hop_s, clip.sample_rate, "hop size")
    if clip.samples.size < win:
        raise ValueError(f"clip of {clip.samples.size} samples is shorter than one "
                         f"{win}-sample window")
    frames = sliding_window_view(clip.samples, win)[::hop]
    window = get_window("hann", win, fftbins=True)
    spectra = np.fft.rfft(frames * window, axis=1)
    return np.abs(spectra) ** 2


@dataclass(frozen=True)
class MelFilterbank:
    """Triangular mel filters on the rfft bin grid, peak-normalized to 1."""

    weights: np.ndarray  # (K, nfft/2 + 1), nonnegative
    rate: int
    nfft: int

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[1] != self.nfft // 2 + 1:
            raise ValueError(f"weights shape {w.shape} does not match nfft {self.nfft}")
        if np.any(w < 0):
            raise ValueError("filter weights must be nonnegative")
        object.__setattr__(self, "weights", w)

    @property
    def n_filters(self) -> int:
        return self.weights.shape[0]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_filters: int = N_MELS, nfft: int = 1024,
                   rate: int = SAMPLE_RATE) -> MelFilterbank:
    """Filters with centers equally spaced on the mel scale from 0 to rate/2."""
    if n_filters < 2:
        raise ValueError("need at least 2 filters")
    edges_hz = mel_to_hz(np.linspace(0.0, hz_to_mel(rate / 2.0), n_filters + 2))
    bin_hz = np.arange(nfft // 2 + 1) * (rate / nfft)
    low, center, high = edges_hz[:-2, None], edges_hz[1:-1, None], edges_hz[2:, None]
    rising = (bin_hz - low) / (center - low)
    falling = (high - bin_hz) / (high - center)
    weights = np.clip(np.minimum(rising, falling), 0.0, None)
    return MelFilterbank(weights, rate, nfft)


@dataclass(frozen=True)
class FeatureSegment:
    """One 128x128 normalized LMBE block (mel bands x frames)."""

    values: np.ndarray
    node_id: int | None = None
    segment_index: int = 0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (N_MELS, SEGMENT_FRAMES):
            raise ValueError(f"expected {N_MELS}x{SEGMENT_FRAMES} values, got {v.shape}")
        if v.min() < 0.0 or v.max() > 1.0:
            raise ValueError("segment values must lie in [0, 1]")
        object.__setattr__(self, "values", v)


def minmax_normalize(values: np.ndarray) -> np.ndarray:
    """Scale to [0,1]; a constant input maps to all 0.5."""
    lo = values.min()
    hi = values.max()
    if hi == lo:
        return np.full_like(values, 0.5)
    return (values - lo) / (hi - lo)


def lmbe_segments(clip: AudioClip, fb: MelFilterbank, node_id: int | None = None,
                  win_s: float = WIN_S, hop_s: float = HOP_S) -> list:
    """Split a clip into normalized log-mel segments, trailing frames dropped."""
    if fb.n_filters != N_MELS:
        raise ValueError(f"feature segments need {N_MELS} mel filters, got {fb.n_filters}")
    power = stft_power(clip, win_s, hop_s)
    n_frames = power.shape[0]
    if n_frames < SEGMENT_FRAMES:
        raise ValueError(f"clip yields {n_frames} frames; need at least {SEGMENT_FRAMES}")
    logmel = np.log(power @ fb.weights.T + LOG_FLOOR)  # (frames, K)
    segments = []
    for k in range(n_frames // SEGMENT_FRAMES):
        block = logmel[k * SEGMENT_FRAMES:(k + 1) * SEGMENT_FRAMES].T
        segments.append(FeatureSegment(minmax_normalize(block), node_id, k))
    return segments
