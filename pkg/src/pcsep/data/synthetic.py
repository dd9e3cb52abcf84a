"""A small two-instrument synthetic corpus for smoke tests and micro training.

"cello" recordings are harmonic tones plus low-pass noise below ~950 Hz and
come with thin upright rod point clouds; "violin" recordings are band-pass noise
above ~1.1 kHz and come with flat disc point clouds.  Almost every
time-frequency bin therefore has a clear owner, while the mixture itself
still varies in level, pitch and envelope.
"""

from __future__ import annotations

from pathlib import Path
from typing import List

import numpy as np

from .. import dsp
from ..sparse import PointCloudFrame, write_ply
from ..wavio import write_wav
from .augment import rotation_matrix
from .manifest import ManifestRow, split_identities, write_manifest

SYNTH_INSTRUMENTS = ("cello", "violin")
RMS = 0.1


def _band_noise(rng, n, lo_hz, hi_hz, sr=dsp.SAMPLE_RATE):
    spec = np.fft.rfft(rng.normal(size=n))
    f = np.fft.rfftfreq(n, 1.0 / sr)
    spec[(f < lo_hz) | (f > hi_hz)] = 0.0
    return np.fft.irfft(spec, n)


def _envelope(rng, n, sr=dsp.SAMPLE_RATE):
    t = np.arange(n) / sr
    rate = rng.uniform(0.3, 1.0)
    return 0.6 + 0.4 * np.abs(np.sin(2 * np.pi * rate * t + rng.uniform(0, np.pi)))


def cello_audio(rng, n, sr=dsp.SAMPLE_RATE):
    f0 = rng.uniform(65, 130)
    steps = np.array([1.0, 9 / 8, 5 / 4, 4 / 3, 3 / 2])
    x = np.zeros(n)
    pos = 0
    phase = 0.0
    while pos < n:
        dur = int(rng.uniform(0.4, 0.8) * sr)
        f = f0 * steps[rng.integers(len(steps))]
        seg = np.arange(min(dur, n - pos))
        tone = np.zeros(len(seg))
        k = 1
        while k * f < 900:
            tone += np.sin(2 * np.pi * k * f * seg / sr + k * phase) / k
            k += 1
        x[pos:pos + len(seg)] = tone
        phase += 2 * np.pi * f * len(seg) / sr
        pos += len(seg)
    x = _unit(x) + 0.4 * _unit(_band_noise(rng, n, 0.0, 950.0))
    x = x * _envelope(rng, n)
    return RMS * x / np.sqrt(np.mean(x ** 2))


def _unit(x):
    return x / np.sqrt(np.mean(x ** 2))


def violin_audio(rng, n, sr=dsp.SAMPLE_RATE):
    lo = rng.uniform(1100, 1400)
    x = _unit(_band_noise(rng, n, lo, sr / 2)) * _envelope(rng, n)
    return RMS * x / np.sqrt(np.mean(x ** 2))


def _rod(rng, n, dims):
    """Thin upright cylinder: points crowd along a line, so neighbours are dense."""
    theta = rng.uniform(0, 2 * np.pi, size=n)
    r = 0.08 * dims[0] * np.sqrt(rng.uniform(size=n))
    y = rng.uniform(-1, 1, size=n) * dims[1]
    return np.stack([r * np.cos(theta), y, r * np.sin(theta)], axis=1)


def _disc(rng, n, dims):
    """Flat horizontal ellipse: points spread thinly over a plane."""
    theta = rng.uniform(0, 2 * np.pi, size=n)
    r = np.sqrt(rng.uniform(size=n))
    return np.stack([r * np.cos(theta) * dims[0], rng.normal(0, 0.01, size=n),
                     r * np.sin(theta) * dims[2]], axis=1)


def _colors(rng, n, base):
    return np.clip(np.asarray(base) + rng.normal(0, 0.04, size=(n, 3)), 0, 1)


def video_frames(rng, instrument: str, n_frames: int, n_points: int) -> List[PointCloudFrame]:
    if instrument == "cello":
        shape = rng.uniform(0.8, 1.2, size=3)
        base = (0.55, 0.3, 0.12)
    else:
        shape = rng.uniform(0.8, 1.2, size=3)
        base = (0.15, 0.25, 0.7)
    scale = rng.uniform(0.3, 0.6)
    offset = rng.normal(0, 1.0, size=3)
    frames = []
    for _ in range(n_frames):
        if instrument == "cello":
            pts = _rod(rng, n_points, shape)
        else:
            pts = _disc(rng, n_points, shape)
        wobble = rotation_matrix(rng.normal(size=3), rng.uniform(-0.1, 0.1))
        pts = pts @ wobble.T * scale + offset + rng.normal(0, 0.005, size=pts.shape)
        frames.append(PointCloudFrame(pts, _colors(rng, n_points, base)))
    return frames


def make_synthetic(out_dir, seed: int = 0, identities: int = 20, seconds: float = 13.0,
                   n_frames: int = 6, n_points: int = 520, fps: float = 2.0) -> Path:
    """Write WAVs, PLY frame directories and ``manifest.csv``; return the manifest path."""
    out = Path(out_dir)
    rng = np.random.default_rng(seed)
    n = int(seconds * dsp.SAMPLE_RATE)
    rows = []
    for inst in SYNTH_INSTRUMENTS:
        performers = [f"{inst}{i:02d}" for i in range(identities)]
        splits = split_identities(performers, rng)
        for perf in performers:
            sub = np.random.default_rng([seed, SYNTH_INSTRUMENTS.index(inst), int(perf[-2:])])
            split = splits[perf]
            audio = cello_audio(sub, n) if inst == "cello" else violin_audio(sub, n)
            wav = out / "audio" / f"{perf}.wav"
            wav.parent.mkdir(parents=True, exist_ok=True)
            write_wav(wav, audio, dsp.SAMPLE_RATE)
            rows.append(ManifestRow(inst, split, "audio", str(wav), perf, 0.0))
            vdir = out / "video" / perf
            vdir.mkdir(parents=True, exist_ok=True)
            for k, frame in enumerate(video_frames(sub, inst, n_frames, n_points)):
                write_ply(vdir / f"{k:04d}.ply", frame)
            rows.append(ManifestRow(inst, split, "video", str(vdir), perf, fps))
    manifest = out / "manifest.csv"
    write_manifest(manifest, rows)
    return manifest
