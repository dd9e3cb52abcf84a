"""Command-line entry point: ``pcsep <command> ...``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical abort.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import dsp
from .data import Dataset, make_synthetic, preprocess_frame
from .errors import ConfigError, DataError, DimensionError, NumericalError
from .metrics import si_sdr, write_report
from .sparse import read_ply, voxelize
from .train import (
    TrainConfig,
    Trainer,
    load_config,
    load_model,
    load_vision_init,
    warmup_vision,
    write_loss_file,
)
from .wavio import read_wav, write_wav

log = logging.getLogger("pcsep")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4

_BOOL = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}


def _bool(s: str) -> bool:
    try:
        return _BOOL[s.lower()]
    except KeyError:
        raise argparse.ArgumentTypeError(f"expected true/false, got {s!r}") from None


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with TrainConfig fields")
    for f in fields(TrainConfig):
        kind = {int: int, float: float, bool: _bool, str: str}[type(f.default)]
        p.add_argument(f"--{f.name.replace('_', '-')}", dest=f"cfg_{f.name}", type=kind, default=None,
                       help=f"override {f.name} (default {f.default})")


def _config_from(args) -> TrainConfig:
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_")}
    return load_config(args.config, overrides)


def _load_frames(directory, F: Optional[int] = None) -> List:
    d = Path(directory)
    if not d.is_dir():
        raise DataError(f"frames directory not found: {d}")
    files = sorted(d.glob("*.ply"))
    if not files:
        raise DataError(f"no .ply frames in {d}")
    if F is not None:
        if len(files) < F:
            raise DataError(f"{d} has {len(files)} frames but the model uses F={F}")
        files = [files[i] for i in np.linspace(0, len(files) - 1, F).round().astype(int)]
    return [preprocess_frame(read_ply(f)) for f in files]


def _snippets(x: np.ndarray) -> List[np.ndarray]:
    n = max(1, -(-len(x) // dsp.SNIPPET_LENGTH))
    return [dsp.crop_snippet(x, k * dsp.SNIPPET_LENGTH) for k in range(n)]


def _read_mono(path) -> np.ndarray:
    return dsp.resample_mono(read_wav(path)).samples


# ---------------------------------------------------------------- commands


def cmd_train(args) -> int:
    from .plotting import loss_curve

    out = Path(args.out)
    dataset = Dataset.from_manifest(args.manifest)
    if args.resume:
        trainer = Trainer.resume(args.resume, dataset, out)
        overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None}
        if "iterations" in overrides:
            trainer.config.iterations = overrides["iterations"]
    else:
        trainer = Trainer(_config_from(args), dataset, out)
        if args.vision_init:
            load_vision_init(trainer.model, args.vision_init)
    out.mkdir(parents=True, exist_ok=True)
    try:
        trainer.run(log_every=args.log_every)
    finally:
        if trainer.losses:
            write_loss_file(out / "loss.txt", trainer.losses)
            loss_curve(out / "loss.png", trainer.losses, trainer.val_history)
    if not (out / "last.ckpt").exists():
        trainer.save(out / "last.ckpt")
    print(f"trained {trainer.state.iteration} iterations; final loss {trainer.losses[-1]:.5f}; "
          f"checkpoints in {out}")
    return EXIT_OK


def cmd_warmup(args) -> int:
    config = _config_from(args)
    trainer = Trainer(config, Dataset.from_manifest(args.manifest))
    losses = warmup_vision(trainer.model, trainer.dataset, args.steps, args.lr, log_every=args.log_every)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    trainer.save(out)
    print(f"warmup {len(losses)} steps; final loss {losses[-1]:.5f}; saved {out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .evaluate import ORACLE_METHODS, evaluate_items, heldout_items, method_means
    from .plotting import metric_bars

    models = {}
    for path in args.checkpoint or []:
        if not Path(path).exists():
            raise ConfigError(f"checkpoint not found: {path}")
        m = load_model(path)
        models[m.config.conditioning] = m
    methods = args.methods.split(",") if args.methods else list(models) + ["ibm", "ones"]
    for m in methods:
        if m not in models and m not in ORACLE_METHODS:
            raise ConfigError(f"method {m!r} needs a checkpoint trained with that conditioning")
    dataset = Dataset.from_manifest(args.manifest)
    items = heldout_items(dataset, args.N, args.F, args.count, args.seed)
    rows = evaluate_items(items, models, methods)
    paths = write_report(rows, args.out)
    means: Dict[str, Dict[str, float]] = {m: {} for m in methods}
    for key in ("sdr", "sir", "sar", "si_sdr"):
        for m, v in method_means([r for r in rows if np.isfinite(r[key])], key).items():
            means[m][key] = v
    metric_bars(Path(args.out) / "metrics.png", means)
    sys.stdout.write(paths["tsv"].read_text())
    return EXIT_OK


def cmd_separate(args) -> int:
    from .plotting import mask_image, write_pgm

    x = _read_mono(args.mixture)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.ones:
        model = None
    else:
        if not args.checkpoint:
            raise ConfigError("--checkpoint is required unless --ones is given")
        model = load_model(args.checkpoint)
        if model.vision is None and not args.label:
            raise ConfigError("label-conditioned checkpoint needs --label <instrument>")
        if model.vision is not None and not args.frames:
            raise ConfigError("visually conditioned checkpoint needs --frames <dir>")
    frames = _load_frames(args.frames, model.config.F) if model is not None and model.vision else None
    pieces, masks = [], []
    for snip in _snippets(x):
        spec = dsp.stft(snip)
        if model is None:
            mask = np.ones((dsp.N_LOG_BINS, dsp.N_FRAMES))
        else:
            mask = model.mask_for(spec.logfreq, frames, args.label)
        masks.append(mask)
        pieces.append(dsp.separate(snip, mask))
    y = np.concatenate(pieces)[:len(x)]
    write_wav(out / "separated.wav", y, dsp.SAMPLE_RATE)
    full = np.concatenate(masks, axis=1)
    write_pgm(out / "mask.pgm", full)
    mask_image(out / "mask.png", full)
    print(f"wrote {out / 'separated.wav'} ({len(y)} samples, {len(masks)} snippet(s))")
    return EXIT_OK


def cmd_oracle_ibm(args) -> int:
    from .fusion import ideal_binary_masks

    refs = [_read_mono(p) for p in args.sources]
    n = min(len(r) for r in refs)
    refs = [dsp.crop_snippet(r[:n]) for r in refs]
    mix = np.sum(refs, axis=0)
    masks = ideal_binary_masks([dsp.stft(r).logfreq for r in refs])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    print("source\tsi_sdr_ibm\tsi_sdr_ones")
    for k, (ref, mask) in enumerate(zip(refs, masks)):
        est = dsp.separate(mix, mask)
        write_wav(out / f"source{k}.wav", est, dsp.SAMPLE_RATE)
        print(f"{args.sources[k]}\t{si_sdr(ref, est):.3f}\t{si_sdr(ref, mix):.3f}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradsuite import run_suite

    results = run_suite(seed=args.seed, include_nets=not args.ops_only)
    print("check\tmax_rel_err\tbound\tstatus")
    for r in results:
        print(f"{r.name}\t{r.error:.3e}\t{r.tol:.0e}\t{'PASS' if r.ok else 'FAIL'}")
    failed = [r.name for r in results if not r.ok]
    if failed:
        log.error("gradient check failed: %s", ", ".join(failed))
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_voxel_stats(args) -> int:
    files: List[Path] = []
    for p in map(Path, args.paths):
        files.extend(sorted(p.glob("*.ply")) if p.is_dir() else [p])
    if not files:
        raise DataError("no .ply files given")
    print("file\tpoints\tvoxels\tpoints_per_voxel\textent_x\textent_y\textent_z")
    for f in files:
        frame = read_ply(f)
        if not args.raw:
            frame = preprocess_frame(frame)
        vox = voxelize(frame, args.voxel_size)
        c = vox.coords
        ext = c.max(axis=0) - c.min(axis=0) + 1
        print(f"{f}\t{len(frame)}\t{len(vox)}\t{len(frame) / len(vox):.3f}\t{ext[0]}\t{ext[1]}\t{ext[2]}")
    return EXIT_OK


def cmd_make_synthetic(args) -> int:
    path = make_synthetic(args.out, seed=args.seed, identities=args.identities, seconds=args.seconds)
    print(path)
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pcsep", description="Point-cloud conditioned source separation")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a separation model")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output directory for checkpoints and loss curves")
    p.add_argument("--resume", help="checkpoint to continue from (its config is reused)")
    p.add_argument("--vision-init", help="checkpoint whose vision weights initialise the model")
    p.add_argument("--log-every", type=int, default=10)
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("warmup", help="pretrain the vision network on instrument classification")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="checkpoint to write")
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--log-every", type=int, default=10)
    _add_config_flags(p)
    p.set_defaults(func=cmd_warmup)

    p = sub.add_parser("evaluate", help="score checkpoints and oracle baselines on the test split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", action="append", help="repeatable; method is the checkpoint's conditioning")
    p.add_argument("--methods", help="comma list (default: every checkpoint plus ibm,ones)")
    p.add_argument("--N", type=int, default=2)
    p.add_argument("--F", type=int, default=1)
    p.add_argument("--count", type=int, default=8, help="number of test mixtures")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("separate", help="separate one source from a mixture WAV")
    p.add_argument("--mixture", required=True)
    p.add_argument("--checkpoint")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--frames", help="directory of PLY frames showing the source")
    g.add_argument("--label", help="instrument name for a label-conditioned checkpoint")
    g.add_argument("--ones", action="store_true", help="all-ones mask (returns the mixture)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_separate)

    p = sub.add_parser("oracle-ibm", help="ideal-binary-mask separation of a sum of reference WAVs")
    p.add_argument("sources", nargs="+")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_oracle_ibm)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ops-only", action="store_true")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("voxel-stats", help="occupancy statistics of PLY frames")
    p.add_argument("paths", nargs="+", help="PLY files or directories")
    p.add_argument("--voxel-size", type=float, default=0.02)
    p.add_argument("--raw", action="store_true", help="skip centring and scaling")
    p.set_defaults(func=cmd_voxel_stats)

    p = sub.add_parser("make-synthetic", help="write the two-instrument synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--identities", type=int, default=20)
    p.add_argument("--seconds", type=float, default=13.0)
    p.set_defaults(func=cmd_make_synthetic)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        log.error("config error: %s", e)
        return EXIT_CONFIG
    except (DataError, DimensionError) as e:
        log.error("data error: %s", e)
        return EXIT_DATA
    except NumericalError as e:
        log.error("numerical abort: %s", e)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
