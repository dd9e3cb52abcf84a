"""Test-set evaluation: separate every source of held-out mixtures and score it."""

from __future__ import annotations

import logging
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import dsp
from .data.dataset import Dataset, TrainingItem, sample_training_item
from .errors import ConfigError
from .metrics import evaluate as score
from .metrics import report_row
from .train import TEST_STREAM, SeparationModel, item_rng

log = logging.getLogger(__name__)

MODEL_METHODS = ("depth", "rgb-depth", "label")
ORACLE_METHODS = ("ibm", "ones")


def heldout_items(dataset: Dataset, N: int, F: int, count: int, seed: int = 0) -> List[TrainingItem]:
    """Fixed, unaugmented mixtures from the test split."""
    return [sample_training_item(dataset, item_rng(seed + TEST_STREAM, 0, i), N, F, split="test",
                                 augment=False) for i in range(count)]


def predicted_masks(model: SeparationModel, item: TrainingItem) -> np.ndarray:
    model.eval()
    return model.predict([item]).data[0]


def evaluate_items(items: Sequence[TrainingItem], models: Optional[Dict[str, SeparationModel]] = None,
                   methods: Sequence[str] = ("ibm", "ones")) -> List[Dict]:
    """One row per (item, source, method)."""
    models = models or {}
    rows = []
    for n, item in enumerate(items):
        N = len(item.instruments)
        for method in methods:
            if method == "ibm":
                masks = item.ibm
            elif method == "ones":
                masks = np.ones_like(item.ibm)
            elif method in models:
                masks = predicted_masks(models[method], item)
            else:
                raise ConfigError(f"no checkpoint supplied for method {method!r}")
            for k in range(N):
                est = dsp.separate(item.mixture, masks[k])
                rep = score(est, item.snippets, k)
                rows.append(report_row(f"item{n:04d}/src{k}", item.instruments[k], N, method, rep))
    return rows


def method_means(rows: Sequence[Dict], key: str = "si_sdr") -> Dict[str, float]:
    out: Dict[str, List[float]] = {}
    for r in rows:
        out.setdefault(r["method"], []).append(r[key])
    return {m: float(np.mean(v)) for m, v in out.items()}
