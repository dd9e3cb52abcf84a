"""Separation model, SGD with momentum, and the mix-and-separate training loop."""

from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import dsp
from .audio_net import UNet, UNetConfig
from .autodiff import GradTape, Tensor, ops
from .autodiff import checkpoint as ckpt
from .autodiff.nn import Module
from .data.dataset import Dataset, TrainingItem, sample_training_item
from .errors import ConfigError, DataError, NumericalError
from .fusion import INSTRUMENTS, FusionParams, bce_loss, fuse, one_hot
from .sparse import voxelize
from .vision import SparseResNet18, VisionConfig

log = logging.getLogger(__name__)

CONDITIONINGS = ("depth", "rgb-depth", "label")
VAL_STREAM = 1_000_003
TEST_STREAM = 2_000_003


@dataclass
class TrainConfig:
    iterations: int = 2000
    batch_size: int = 4
    momentum: float = 0.9
    lr_vision: float = 1e-4
    lr_rest: float = 1e-3
    K: int = 16
    N: int = 2
    F: int = 1
    conditioning: str = "depth"
    seed: int = 0
    vision_channels: int = 16
    unet_channels: int = 8
    unet_levels: int = 7
    voxel_size: float = 0.02
    augment: bool = True
    val_every: int = 100
    val_items: int = 4

    def __post_init__(self):
        if self.conditioning not in CONDITIONINGS:
            raise ConfigError(f"conditioning must be one of {CONDITIONINGS}, got {self.conditioning!r}")
        for name in ("iterations", "batch_size", "K", "N", "F", "vision_channels",
                     "unet_channels", "unet_levels", "val_every", "val_items"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("lr_vision", "lr_rest", "voxel_size"):
            if not float(getattr(self, name)) > 0:
                raise ConfigError(f"{name} must be > 0, got {getattr(self, name)}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.conditioning == "label" and self.K != len(INSTRUMENTS):
            log.info("label conditioning: setting K=%d (was %d)", len(INSTRUMENTS), self.K)
            self.K = len(INSTRUMENTS)

    @property
    def feature_source(self) -> str:
        return "rgb" if self.conditioning == "rgb-depth" else "depth"

    @classmethod
    def from_dict(cls, d: Dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def load_config(path: Optional[str] = None, overrides: Optional[Dict] = None) -> TrainConfig:
    """JSON config file, then ``PCSEP_SEED``, then explicit overrides (flags win)."""
    d: Dict = {}
    if path:
        try:
            with open(path) as fh:
                d = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from None
        if not isinstance(d, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
    env = os.environ.get("PCSEP_SEED")
    if env is not None:
        try:
            d["seed"] = int(env)
        except ValueError:
            raise ConfigError(f"PCSEP_SEED must be an integer, got {env!r}") from None
    d.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return TrainConfig.from_dict(d)


class SeparationModel(Module):
    """Vision branch (or one-hot labels), U-Net and fusion head."""

    def __init__(self, config: TrainConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        if config.conditioning == "label":
            self.vision = None
        else:
            self.vision = SparseResNet18(
                VisionConfig(base_channels=config.vision_channels, K=config.K,
                             feature_source=config.feature_source), rng)
        self.unet = UNet(UNetConfig(levels=config.unet_levels, K=config.K,
                                    base_channels=config.unet_channels), rng)
        self.fusion = FusionParams(config.K)

    def is_vision_param(self, name: str) -> bool:
        return name.startswith("vision.")

    def conditioning(self, frames: Sequence[Sequence], instruments: Sequence[str]) -> Tensor:
        """Conditioning vectors ``[V, K]`` for V sources (frames or instrument labels)."""
        if self.vision is None:
            return Tensor(np.stack([one_hot(i) for i in instruments]))
        vids = [[voxelize(f, self.config.voxel_size, self.config.feature_source) for f in video]
                for video in frames]
        return self.vision.encode_videos(vids).v

    def spectral(self, mixture_logfreq: np.ndarray) -> Tensor:
        x = np.log1p(np.asarray(mixture_logfreq))
        if x.ndim == 2:
            x = x[None]
        return self.unet(Tensor(x[:, None]))

    def predict(self, items: Sequence[TrainingItem]) -> Tensor:
        """Masks ``[B, N, 256, 256]`` for a batch of items."""
        B, N = len(items), len(items[0].instruments)
        S = self.spectral(np.stack([it.mixture_spec.logfreq for it in items]))
        v = self.conditioning([f for it in items for f in it.frames],
                              [i for it in items for i in it.instruments])
        v = ops.reshape(v, (B, N, self.config.K))
        return fuse(v, S, self.fusion)

    def mask_for(self, mixture_logfreq: np.ndarray, frames: Optional[Sequence] = None,
                 instrument: Optional[str] = None) -> np.ndarray:
        """One ``[256, 256]`` mask for a single source given its frames or its label."""
        if self.vision is None:
            if instrument is None:
                raise ConfigError("label-conditioned model needs an instrument label")
            v = self.conditioning([], [instrument])
        else:
            if not frames:
                raise ConfigError("visually conditioned model needs point-cloud frames")
            v = self.conditioning([list(frames)], [])
        S = self.spectral(mixture_logfreq)
        return fuse(ops.reshape(v, (1, 1, self.config.K)), S, self.fusion).data[0, 0]

    def loss(self, items: Sequence[TrainingItem]) -> Tensor:
        target = np.stack([it.ibm for it in items])
        return bce_loss(self.predict(items), target)


def sgd_step(params: Dict[str, Tensor], buffers: Dict[str, np.ndarray], lr_map: Dict[str, float],
             momentum: float = 0.9) -> None:
    """``buf = momentum * buf + grad; param -= lr * buf`` for every parameter.

    Parameters without a gradient are treated as having a zero gradient.
    """
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for parameter {name}")
        buf = buffers.get(name)
        buf = g.copy() if buf is None else momentum * buf + g
        buffers[name] = buf
        p.data = p.data - lr_map[name] * buf


def item_rng(seed: int, iteration: int, item: int) -> np.random.Generator:
    return np.random.default_rng([seed, iteration, item])


def sample_batch(dataset: Dataset, config: TrainConfig, iteration: int, split: str = "train",
                 stream: int = 0, augment: Optional[bool] = None) -> List[TrainingItem]:
    aug = config.augment if augment is None else augment
    return [sample_training_item(dataset, item_rng(config.seed + stream, iteration, b), config.N,
                                 config.F, split=split, augment=aug)
            for b in range(config.batch_size)]


@dataclass
class TrainState:
    iteration: int = 0
    best_val: float = float("inf")


class Trainer:
    def __init__(self, config: TrainConfig, dataset: Dataset, out_dir=None):
        self.config = config
        self.dataset = dataset
        self.out_dir = Path(out_dir) if out_dir else None
        self.model = SeparationModel(config)
        self.params = self.model.named_parameters()
        self.lr_map = {n: (config.lr_vision if self.model.is_vision_param(n) else config.lr_rest)
                       for n in self.params}
        self.buffers: Dict[str, np.ndarray] = {}
        self.state = TrainState()
        self.losses: List[float] = []
        self.val_history: List[tuple] = []
        self._val_batches = None

    # ---------------------------------------------------------------- checkpointing

    def state_arrays(self) -> Dict[str, np.ndarray]:
        arrays = {f"model:{k}": v for k, v in self.model.state_dict().items()}
        arrays.update({f"momentum:{k}": v for k, v in self.buffers.items()})
        arrays["losses"] = np.asarray(self.losses, dtype=np.float64)
        arrays.update(ckpt.encode_meta("config", asdict(self.config)))
        arrays.update(ckpt.encode_meta("state", {"iteration": self.state.iteration,
                                                 "best_val": _finite_or_str(self.state.best_val)}))
        arrays.update(ckpt.encode_meta("val_history", self.val_history))
        return arrays

    def save(self, path) -> None:
        ckpt.save(path, self.state_arrays())

    @classmethod
    def resume(cls, path, dataset: Dataset, out_dir=None) -> "Trainer":
        arrays = ckpt.load(path)
        config = TrainConfig.from_dict(ckpt.decode_meta(arrays, "config"))
        t = cls(config, dataset, out_dir)
        t.model.load_state_dict({k[6:]: v for k, v in arrays.items() if k.startswith("model:")})
        t.buffers = {k[9:]: v.copy() for k, v in arrays.items() if k.startswith("momentum:")}
        st = ckpt.decode_meta(arrays, "state")
        t.state = TrainState(int(st["iteration"]), float(st["best_val"]))
        t.losses = [float(x) for x in arrays["losses"]]
        t.val_history = [tuple(x) for x in ckpt.decode_meta(arrays, "val_history")]
        return t

    # ---------------------------------------------------------------- loop

    def step(self) -> float:
        it = self.state.iteration
        batch = sample_batch(self.dataset, self.config, it)
        self.model.train()
        self.model.zero_grad()
        with GradTape() as tape:
            loss = self.model.loss(batch)
        tape.backward(loss)
        sgd_step(self.params, self.buffers, self.lr_map, self.config.momentum)
        value = float(loss.data)
        self.losses.append(value)
        self.state.iteration = it + 1
        return value

    def validation_loss(self) -> float:
        if self._val_batches is None:
            self._val_batches = [
                sample_training_item(self.dataset, item_rng(self.config.seed + VAL_STREAM, 0, i),
                                     self.config.N, self.config.F, split="val", augment=False)
                for i in range(self.config.val_items)
            ]
        self.model.eval()
        try:
            return float(self.model.loss(self._val_batches).data)
        finally:
            self.model.train()

    def run(self, iterations: Optional[int] = None, log_every: int = 10) -> List[float]:
        end = self.config.iterations if iterations is None else self.state.iteration + iterations
        while self.state.iteration < end:
            snapshot = self.state_arrays() if self.out_dir else None
            try:
                loss = self.step()
            except NumericalError:
                if self.out_dir:
                    ckpt.save(self.out_dir / "last.ckpt", snapshot)
                raise
            if log_every and self.state.iteration % log_every == 0:
                log.info("iter %d loss %.5f", self.state.iteration, loss)
            if self.state.iteration % self.config.val_every == 0 or self.state.iteration == end:
                self._validate_and_save()
        return self.losses

    def _validate_and_save(self) -> None:
        if not self.out_dir or not self.dataset.instruments("val"):
            return
        self.out_dir.mkdir(parents=True, exist_ok=True)
        val = self.validation_loss()
        self.val_history.append((self.state.iteration, val))
        log.info("iter %d validation loss %.5f", self.state.iteration, val)
        if val < self.state.best_val:
            self.state.best_val = val
            self.save(self.out_dir / "best.ckpt")
        self.save(self.out_dir / "last.ckpt")
        write_loss_file(self.out_dir / "loss.txt", self.losses)
        write_loss_file(self.out_dir / "val_loss.txt", [v for _, v in self.val_history],
                        [i for i, _ in self.val_history])


def _finite_or_str(x: float):
    return x if np.isfinite(x) else str(x)


def write_loss_file(path, losses: Sequence[float], iterations: Optional[Sequence[int]] = None) -> None:
    iterations = iterations if iterations is not None else range(1, len(losses) + 1)
    with open(path, "w") as fh:
        for i, v in zip(iterations, losses):
            fh.write(f"{i}\t{v:.17g}\n")


def warmup_vision(model: SeparationModel, dataset: Dataset, iterations: int, lr: float = 0.01,
                  batch_size: int = 4, log_every: int = 10) -> List[float]:
    """Pretrain the vision branch to tell the training instruments apart from their frames.

    Channel ``c`` of the visual feature is fit (BCE) to "this video shows
    instrument c" for the sorted training instruments; the remaining channels
    are left free.
    """
    if model.vision is None:
        raise ConfigError("label conditioning has no vision network to warm up")
    classes = dataset.instruments("train")
    if len(classes) > model.config.K:
        raise ConfigError(f"{len(classes)} instruments do not fit into K={model.config.K} channels")
    cfg = model.config
    params = {k: v for k, v in model.named_parameters().items() if model.is_vision_param(k)}
    buffers: Dict[str, np.ndarray] = {}
    losses = []
    model.train()
    for it in range(iterations):
        items = [sample_training_item(dataset, item_rng(cfg.seed + 7, it, b), 1, cfg.F, augment=cfg.augment)
                 for b in range(batch_size)]
        target = np.zeros((batch_size, len(classes)))
        for b, item in enumerate(items):
            target[b, classes.index(item.instruments[0])] = 1.0
        model.zero_grad()
        with GradTape() as tape:
            v = model.conditioning([it.frames[0] for it in items], [])
            pick = ops.take_rows(ops.reshape(v, (batch_size * cfg.K, 1)),
                                 np.add.outer(np.arange(batch_size) * cfg.K, np.arange(len(classes))).ravel())
            loss = bce_loss(ops.reshape(pick, (batch_size, len(classes))), target)
        tape.backward(loss)
        sgd_step(params, buffers, {k: lr for k in params}, cfg.momentum)
        losses.append(float(loss.data))
        if log_every and (it + 1) % log_every == 0:
            log.info("warmup %d loss %.5f", it + 1, losses[-1])
    return losses


def load_vision_init(model: SeparationModel, path) -> None:
    """Copy ``vision.*`` weights (and BN statistics) from a checkpoint into ``model``."""
    if model.vision is None:
        raise ConfigError("label conditioning has no vision network to initialise")
    arrays = ckpt.load(path)
    state = model.state_dict()
    found = {k[6:]: v for k, v in arrays.items()
             if k.startswith("model:vision.") or k.startswith("model:buffer:vision.")}
    if not found:
        raise DataError(f"{path}: no vision weights in checkpoint")
    for k, v in found.items():
        if k not in state or state[k].shape != v.shape:
            raise DataError(f"{path}: vision weight {k} does not match the configured network")
    state.update(found)
    model.load_state_dict(state)


def load_model(path) -> SeparationModel:
    arrays = ckpt.load(path)
    try:
        config = TrainConfig.from_dict(ckpt.decode_meta(arrays, "config"))
    except KeyError:
        raise DataError(f"{path}: checkpoint has no embedded config") from None
    model = SeparationModel(config)
    model.load_state_dict({k[6:]: v for k, v in arrays.items() if k.startswith("model:")})
    model.eval()
    return model
