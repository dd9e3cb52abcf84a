"""Separation quality metrics: projection-based decomposition, SDR/SIR/SAR and SI-SDR.

The decomposition uses time-invariant subspace projections: ``s_target`` is
the projection of the estimate onto its own reference, ``e_interf`` the extra
part explained by the other references, and ``e_artif`` the remainder.
``e_noise`` is identically zero.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence

import numpy as np

from .errors import DataError, DimensionError

REPORT_COLUMNS = ("item_id", "instrument", "N", "method", "sdr", "sir", "sar", "si_sdr")


@dataclass
class DecompositionResult:
    s_target: np.ndarray
    e_interf: np.ndarray
    e_noise: np.ndarray
    e_artif: np.ndarray


@dataclass
class MetricReport:
    sdr: float
    sir: float
    sar: float
    si_sdr: float
    alpha_si: float
    flags: List[str] = field(default_factory=list)


def energy_ratio_db(num: np.ndarray, den: np.ndarray) -> float:
    """``10 log10(|num|^2 / |den|^2)``; +inf when the denominator is exactly zero."""
    n = float(np.dot(num, num))
    d = float(np.dot(den, den))
    if d == 0.0:
        return math.inf
    if n == 0.0:
        return -math.inf
    return 10.0 * math.log10(n / d)


def _check(estimate, references) -> tuple:
    est = np.asarray(estimate, dtype=np.float64)
    refs = np.atleast_2d(np.asarray(references, dtype=np.float64))
    if est.ndim != 1:
        raise DimensionError(f"estimate must be 1-D, got {est.shape}")
    if refs.shape[1] != est.shape[0]:
        raise DimensionError(f"reference length {refs.shape[1]} != estimate length {est.shape[0]}")
    for j, r in enumerate(refs):
        if not np.any(r):
            raise DataError(f"reference {j} has zero energy")
    return est, refs


def decompose(estimate, references: Sequence[np.ndarray], target_index: int) -> DecompositionResult:
    est, refs = _check(estimate, references)
    s = refs[target_index]
    s_target = (np.dot(est, s) / np.dot(s, s)) * s
    coef, *_ = np.linalg.lstsq(refs.T, est, rcond=None)
    p_all = refs.T @ coef
    return DecompositionResult(
        s_target=s_target,
        e_interf=p_all - s_target,
        e_noise=np.zeros_like(est),
        e_artif=est - p_all,
    )


def sdr(d: DecompositionResult) -> float:
    return energy_ratio_db(d.s_target, d.e_interf + d.e_noise + d.e_artif)


def sir(d: DecompositionResult) -> float:
    return energy_ratio_db(d.s_target, d.e_interf)


def sar(d: DecompositionResult) -> float:
    return energy_ratio_db(d.s_target + d.e_interf + d.e_noise, d.e_artif)


def si_sdr_alpha(reference, estimate) -> float:
    est, refs = _check(estimate, [reference])
    s = refs[0]
    return float(np.dot(est, s) / np.dot(s, s))


def si_sdr(reference, estimate) -> float:
    alpha = si_sdr_alpha(reference, estimate)
    s = np.asarray(reference, dtype=np.float64)
    target = alpha * s
    return energy_ratio_db(target, target - np.asarray(estimate, dtype=np.float64))


def evaluate(estimate, references: Sequence[np.ndarray], target_index: int) -> MetricReport:
    d = decompose(estimate, references, target_index)
    values = dict(
        sdr=sdr(d),
        sir=sir(d),
        sar=sar(d),
        si_sdr=si_sdr(references[target_index], estimate),
    )
    flags = [f"{k}=inf" for k, v in values.items() if math.isinf(v) and v > 0]
    return MetricReport(alpha_si=si_sdr_alpha(references[target_index], estimate), flags=flags, **values)


def aggregate(rows: Sequence[Dict]) -> List[Dict]:
    """Per-(N, method) unweighted mean over items; infinite values are skipped and counted."""
    groups: Dict[tuple, List[Dict]] = {}
    for r in rows:
        groups.setdefault((r["N"], r["method"]), []).append(r)
    out = []
    for (n, method), items in sorted(groups.items()):
        agg = {"item_id": "mean", "instrument": "all", "N": n, "method": method, "count": len(items)}
        for k in ("sdr", "sir", "sar", "si_sdr"):
            vals = np.array([r[k] for r in items], dtype=np.float64)
            finite = vals[np.isfinite(vals)]
            agg[k] = float(finite.mean()) if len(finite) else float("nan")
            if len(finite) < len(vals):
                agg[f"{k}_nonfinite"] = int(len(vals) - len(finite))
        out.append(agg)
    return out


def write_report(rows: Sequence[Dict], out_dir, stem: str = "metrics") -> Dict[str, Path]:
    """Write ``<stem>.tsv`` (per-item then aggregate rows) and ``<stem>.json``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    agg = aggregate(rows)
    tsv = out_dir / f"{stem}.tsv"
    with open(tsv, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in list(rows) + agg:
            w.writerow([_fmt(r[c]) for c in REPORT_COLUMNS])
    js = out_dir / f"{stem}.json"
    with open(js, "w") as fh:
        json.dump({"items": [_jsonable(r) for r in rows], "aggregate": [_jsonable(r) for r in agg]},
                  fh, indent=2)
    return {"tsv": tsv, "json": js}


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def _jsonable(r: Dict) -> Dict:
    out = {}
    for k, v in r.items():
        if isinstance(v, float) and not math.isfinite(v):
            out[k] = str(v)
        elif isinstance(v, (np.floating, np.integer)):
            out[k] = v.item()
        else:
            out[k] = v
    return out


def report_row(item_id: str, instrument: str, n_sources: int, method: str, rep: MetricReport) -> Dict:
    return {"item_id": item_id, "instrument": instrument, "N": n_sources, "method": method,
            **{k: v for k, v in asdict(rep).items() if k in ("sdr", "sir", "sar", "si_sdr")}}
