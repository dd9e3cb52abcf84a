"""Dataset manifest: one CSV row per audio recording or 3D video.

Columns: ``instrument, split, kind, path, performer, fps``.  ``kind`` is
``audio`` (a WAV file) or ``video`` (a directory of PLY frames sorted by
name).  ``path`` is relative to the manifest's directory unless absolute.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Sequence

import numpy as np

from ..errors import DataError

COLUMNS = ("instrument", "split", "kind", "path", "performer", "fps")
SPLITS = ("train", "val", "test")
SPLIT_FRACTIONS = (0.75, 0.15, 0.10)


@dataclass(frozen=True)
class ManifestRow:
    instrument: str
    split: str
    kind: str
    path: str
    performer: str
    fps: float = 0.0

    @property
    def identity(self) -> str:
        """Performer/recording identity used for leakage-free splitting."""
        return f"{self.instrument}/{self.performer}"


def read_manifest(path) -> List[ManifestRow]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise DataError(f"{path}: manifest missing columns {sorted(missing)}")
        for line, rec in enumerate(reader, start=2):
            if rec["split"] not in SPLITS:
                raise DataError(f"{path}:{line}: split must be one of {SPLITS}, got {rec['split']!r}")
            if rec["kind"] not in ("audio", "video"):
                raise DataError(f"{path}:{line}: kind must be audio or video, got {rec['kind']!r}")
            try:
                fps = float(rec["fps"] or 0.0)
            except ValueError:
                raise DataError(f"{path}:{line}: fps is not a number: {rec['fps']!r}") from None
            p = Path(rec["path"])
            if not p.is_absolute():
                p = path.parent / p
            rows.append(ManifestRow(rec["instrument"], rec["split"], rec["kind"], str(p), rec["performer"], fps))
    if not rows:
        raise DataError(f"{path}: manifest has no rows")
    return rows


def write_manifest(path, rows: Iterable[ManifestRow]) -> None:
    path = Path(path)
    base = path.parent.resolve()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in rows:
            p = Path(r.path)
            try:
                p = p.resolve().relative_to(base)
            except ValueError:
                pass
            w.writerow([r.instrument, r.split, r.kind, p.as_posix(), r.performer, r.fps])


def split_counts(n: int) -> tuple:
    """Train/val/test counts for ``n`` identities at 75/15/10 (train takes the remainder)."""
    n_val = int(round(n * SPLIT_FRACTIONS[1]))
    n_test = int(round(n * SPLIT_FRACTIONS[2]))
    if n >= 3:
        n_val, n_test = max(n_val, 1), max(n_test, 1)
    return n - n_val - n_test, n_val, n_test


def split_identities(identities: Sequence[str], rng: np.random.Generator) -> Dict[str, str]:
    """Randomly assign whole identities to train/val/test."""
    ids = sorted(set(identities))
    order = rng.permutation(len(ids))
    n_train, n_val, _ = split_counts(len(ids))
    out = {}
    for rank, i in enumerate(order):
        out[ids[i]] = "train" if rank < n_train else ("val" if rank < n_train + n_val else "test")
    return out


def check_disjoint(rows: Sequence[ManifestRow]) -> None:
    """Raise if any identity appears in more than one split."""
    seen: Dict[str, str] = {}
    for r in rows:
        prev = seen.setdefault(r.identity, r.split)
        if prev != r.split:
            raise DataError(f"identity {r.identity} appears in both {prev} and {r.split}")
