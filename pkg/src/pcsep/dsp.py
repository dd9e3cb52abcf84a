"""Waveform <-> time-frequency conversions.

Framing: periodic Hann window of 1022 samples, hop 256, centred analysis with
511 samples of reflection padding on each side.  A one-sided FFT of 1022
points has 512 bins (DC .. 511).  Clips of ``SNIPPET_LENGTH`` samples give
exactly 256 frames, and the log-frequency map is 256 (frequency) x 256 (time).
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import numpy as np
from scipy import signal

from .errors import DataError, DimensionError

SAMPLE_RATE = 11025
N_FFT = 1022
HOP = 256
PAD = N_FFT // 2
N_BINS = N_FFT // 2 + 1
N_LOG_BINS = 256
N_FRAMES = 256
SNIPPET_LENGTH = (N_FRAMES - 1) * HOP
WSUM_FLOOR = 1e-12
MAX_RATIO_TERM = 4096

WINDOW = signal.get_window("hann", N_FFT)
LOG_GRID = np.exp(np.linspace(np.log(1.0), np.log(N_BINS - 1.0), N_LOG_BINS))


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate <= 0:
            raise DataError(f"sample rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise DataError("audio samples contain NaN or Inf")

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


@dataclass
class Spectrogram:
    """Complex STFT ``[frames, 512]`` plus its log-frequency magnitude ``[256, frames]``."""

    complex: np.ndarray
    logfreq: np.ndarray

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.complex)

    @property
    def phase(self) -> np.ndarray:
        return np.angle(self.complex)


def to_mono(samples: np.ndarray) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 1:
        return x
    if x.ndim == 2:
        return x.mean(axis=1)
    raise DimensionError(f"audio must be [n] or [n, channels], got shape {x.shape}")


def resample_mono(clip: AudioClip, target_rate: int = SAMPLE_RATE) -> AudioClip:
    """Average channels to mono, then polyphase-resample to ``target_rate``."""
    if clip.sample_rate < 8000:
        raise DataError(f"sample rate {clip.sample_rate} Hz is below the 8000 Hz minimum")
    x = to_mono(clip.samples)
    if clip.sample_rate == target_rate:
        return clip if x is clip.samples else AudioClip(x, target_rate)
    ratio = Fraction(int(target_rate), int(clip.sample_rate))
    if ratio.numerator > MAX_RATIO_TERM or ratio.denominator > MAX_RATIO_TERM:
        raise DataError(
            f"unsupported resampling ratio {clip.sample_rate} Hz -> {target_rate} Hz "
            f"({ratio.numerator}/{ratio.denominator})"
        )
    y = signal.resample_poly(x, ratio.numerator, ratio.denominator)
    return AudioClip(y, target_rate)


def _samples(x) -> np.ndarray:
    return x.samples if isinstance(x, AudioClip) else np.asarray(x, dtype=np.float64)


def stft_frames(x) -> np.ndarray:
    """Complex STFT ``[frames, 512]`` of a 1-D signal of any length > 511."""
    x = _samples(x)
    if x.ndim != 1:
        raise DimensionError(f"stft expects a mono signal, got shape {x.shape}")
    if len(x) <= PAD:
        raise DataError(f"signal of {len(x)} samples is too short for reflection padding ({PAD})")
    padded = np.pad(x, PAD, mode="reflect")
    frames = np.lib.stride_tricks.sliding_window_view(padded, N_FFT)[::HOP]
    return np.fft.rfft(frames * WINDOW, axis=1)


def istft(frames: np.ndarray, length: Optional[int] = None) -> np.ndarray:
    """Weighted overlap-add inverse, normalised by the summed squared window."""
    frames = np.asarray(frames)
    if frames.ndim != 2 or frames.shape[1] != N_BINS:
        raise DimensionError(f"istft expects [frames, {N_BINS}], got {frames.shape}")
    n = frames.shape[0]
    total = (n - 1) * HOP + N_FFT
    out = np.zeros(total)
    wsum = np.zeros(total)
    chunks = np.fft.irfft(frames, n=N_FFT, axis=1) * WINDOW
    w2 = WINDOW ** 2
    for t in range(n):
        s = t * HOP
        out[s:s + N_FFT] += chunks[t]
        wsum[s:s + N_FFT] += w2
    out /= np.maximum(wsum, WSUM_FLOOR)
    out = out[PAD:total - PAD]
    if length is None:
        length = (n - 1) * HOP
    if length <= len(out):
        return out[:length]
    return np.concatenate([out, np.zeros(length - len(out))])


def check_snippet(x) -> np.ndarray:
    x = _samples(x)
    if x.ndim != 1 or len(x) != SNIPPET_LENGTH:
        raise DataError(f"expected a mono snippet of {SNIPPET_LENGTH} samples, got shape {x.shape}")
    return x


def logfreq_warp(linmag: np.ndarray) -> np.ndarray:
    """``[frames, 512]`` linear magnitude -> ``[256, frames]`` on the log grid."""
    linmag = np.asarray(linmag, dtype=np.float64)
    if linmag.ndim != 2 or linmag.shape[1] != N_BINS:
        raise DimensionError(f"logfreq_warp expects [frames, {N_BINS}], got {linmag.shape}")
    lo = np.floor(LOG_GRID).astype(np.int64)
    hi = np.minimum(lo + 1, N_BINS - 1)
    frac = LOG_GRID - lo
    warped = linmag[:, lo] * (1.0 - frac) + linmag[:, hi] * frac
    return warped.T.copy()


def logfreq_unwarp(mask: np.ndarray) -> np.ndarray:
    """``[256, frames]`` log-grid mask -> ``[frames, 512]`` linear bins, clamped to [0, 1]."""
    mask = np.asarray(mask, dtype=np.float64)
    if mask.ndim != 2 or mask.shape[0] != N_LOG_BINS:
        raise DimensionError(f"logfreq_unwarp expects [{N_LOG_BINS}, frames], got {mask.shape}")
    bins = np.arange(N_BINS, dtype=np.float64)
    idx = np.clip(np.searchsorted(LOG_GRID, bins, side="right") - 1, 0, N_LOG_BINS - 2)
    frac = np.clip((bins - LOG_GRID[idx]) / (LOG_GRID[idx + 1] - LOG_GRID[idx]), 0.0, 1.0)
    lin = mask[idx] * (1.0 - frac)[:, None] + mask[idx + 1] * frac[:, None]
    return np.clip(lin.T, 0.0, 1.0)


def stft(clip) -> Spectrogram:
    """Spectrogram of a canonical-length snippet (256 frames)."""
    frames = stft_frames(check_snippet(clip))
    return Spectrogram(frames, logfreq_warp(np.abs(frames)))


def network_input(spec: Spectrogram) -> np.ndarray:
    """Compressed log-frequency magnitude fed to the U-Net."""
    return np.log1p(spec.logfreq)


def apply_linear_mask(frames: np.ndarray, linmask: np.ndarray, length: Optional[int] = None) -> np.ndarray:
    if linmask.shape != frames.shape:
        raise DimensionError(f"mask {linmask.shape} does not match spectrogram {frames.shape}")
    return istft(frames * linmask, length)


def separate(mixture, mask: np.ndarray) -> np.ndarray:
    """Apply a 256x256 log-grid mask to the mixture magnitude, keep mixture phase, invert."""
    x = check_snippet(mixture)
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != (N_LOG_BINS, N_FRAMES):
        raise DimensionError(f"mask must be {N_LOG_BINS}x{N_FRAMES}, got {mask.shape}")
    frames = stft_frames(x)
    return apply_linear_mask(frames, logfreq_unwarp(mask), len(x))


def crop_snippet(x: np.ndarray, start: int = 0) -> np.ndarray:
    """Cut (or zero-pad) a canonical-length snippet starting at ``start``."""
    x = np.asarray(x, dtype=np.float64)
    seg = x[start:start + SNIPPET_LENGTH]
    if len(seg) < SNIPPET_LENGTH:
        seg = np.concatenate([seg, np.zeros(SNIPPET_LENGTH - len(seg))])
    return seg
