"""In-memory dataset and mix-and-separate item sampling."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .. import dsp
from ..errors import DataError
from ..fusion import ideal_binary_masks
from ..sparse import PointCloudFrame, read_ply
from ..wavio import read_wav
from .augment import AugmentParams, augment_frame, preprocess_frame
from .manifest import ManifestRow, check_disjoint, read_manifest


@dataclass
class Recording:
    instrument: str
    performer: str
    samples: np.ndarray


@dataclass
class Video:
    instrument: str
    performer: str
    fps: float
    frames: List[PointCloudFrame]


@dataclass
class TrainingItem:
    instruments: List[str]
    mixture: np.ndarray
    snippets: List[np.ndarray]
    frames: List[List[PointCloudFrame]]
    ibm: np.ndarray
    mixture_spec: dsp.Spectrogram


class Dataset:
    """Audio recordings (mono, pipeline rate) and preprocessed videos, grouped by split."""

    def __init__(self, recordings: Dict[str, List[Recording]], videos: Dict[str, List[Video]]):
        self.recordings = recordings
        self.videos = videos

    @classmethod
    def from_manifest(cls, path, axes=(0, 1, 2), signs=(1.0, 1.0, 1.0)) -> "Dataset":
        rows = read_manifest(path)
        check_disjoint(rows)
        recs: Dict[str, List[Recording]] = {s: [] for s in ("train", "val", "test")}
        vids: Dict[str, List[Video]] = {s: [] for s in ("train", "val", "test")}
        for r in rows:
            if r.kind == "audio":
                clip = dsp.resample_mono(read_wav(r.path))
                recs[r.split].append(Recording(r.instrument, r.performer, clip.samples))
            else:
                vids[r.split].append(_load_video(r, axes, signs))
        return cls(recs, vids)

    def instruments(self, split: str) -> List[str]:
        """Instruments with both audio and video in ``split`` (sorted)."""
        a = {r.instrument for r in self.recordings.get(split, [])}
        v = {x.instrument for x in self.videos.get(split, [])}
        return sorted(a & v)

    def _pick(self, pool, instrument, rng):
        cands = [x for x in pool if x.instrument == instrument]
        return cands[int(rng.integers(len(cands)))]


def _load_video(row: ManifestRow, axes, signs) -> Video:
    d = Path(row.path)
    if not d.is_dir():
        raise DataError(f"video directory not found: {d}")
    files = sorted(d.glob("*.ply"))
    if not files:
        raise DataError(f"no .ply frames in {d}")
    frames = [preprocess_frame(read_ply(f), axes, signs) for f in files]
    return Video(row.instrument, row.performer, row.fps, frames)


def frame_indices(n_frames: int, F: int, fps: float, rng: np.random.Generator) -> List[int]:
    """F frames one second apart (stride round(fps)), shrinking the stride if the video is short."""
    if n_frames < F:
        raise DataError(f"video has {n_frames} frames but {F} were requested")
    if F == 1:
        return [int(rng.integers(n_frames))]
    stride = max(1, int(round(fps)))
    stride = min(stride, (n_frames - 1) // (F - 1))
    start = int(rng.integers(n_frames - (F - 1) * stride))
    return [start + k * stride for k in range(F)]


def random_snippet(samples: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    extra = len(samples) - dsp.SNIPPET_LENGTH
    start = int(rng.integers(extra + 1)) if extra > 0 else 0
    return dsp.crop_snippet(samples, start)


def sample_training_item(dataset: Dataset, rng: np.random.Generator, N: int, F: int,
                         split: str = "train", augment: bool = True,
                         instruments: Optional[Sequence[str]] = None) -> TrainingItem:
    """Draw N distinct instruments, a snippet and F frames for each, and mix.

    The mixture is the plain sum of the (gain-scaled) snippets; IBM targets
    are computed on the warped magnitudes of the individual snippets.
    """
    avail = dataset.instruments(split)
    if instruments is None:
        if len(avail) < N:
            raise DataError(
                f"split {split!r} has {len(avail)} instruments with audio and video ({avail}); need N={N}"
            )
        instruments = [avail[i] for i in rng.choice(len(avail), size=N, replace=False)]
    snippets, frames = [], []
    for inst in instruments:
        rec = dataset._pick(dataset.recordings[split], inst, rng)
        vid = dataset._pick(dataset.videos[split], inst, rng)
        snip = random_snippet(rec.samples, rng)
        idx = frame_indices(len(vid.frames), F, vid.fps, rng)
        chosen = [vid.frames[i] for i in idx]
        if augment:
            snip = snip * AugmentParams.sample(rng).gain
            chosen = [augment_frame(f, AugmentParams.sample(rng)) for f in chosen]
        snippets.append(snip)
        frames.append(chosen)
    mixture = np.zeros(dsp.SNIPPET_LENGTH)
    for s in snippets:
        mixture = mixture + s
    ibm = ideal_binary_masks([dsp.stft(s).logfreq for s in snippets])
    return TrainingItem(list(instruments), mixture, snippets, frames, ibm, dsp.stft(mixture))
