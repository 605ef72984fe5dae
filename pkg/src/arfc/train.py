"""Adam + multi-step schedule training loop and directory checkpoints."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .config import parse_config
from .data import DataError
from .network import ARFCNet, NetConfig, build_network, infer, soft_iou_loss
from .tensor import ConfigError, NonFiniteError, Tensor
from .tensorio import load_tensor, save_tensor

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 400
    batch_size: int = 8
    learning_rate: float = 5e-4
    lr_milestones: tuple = (200, 300)
    lr_decay: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    delta: float = 1.0
    seed: int = 0
    flip_augment: bool = False

    def __post_init__(self):
        self.lr_milestones = tuple(int(m) for m in self.lr_milestones)
        for name in ("epochs", "batch_size", "learning_rate", "lr_decay", "adam_eps", "delta"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("Adam betas must lie in [0, 1)")
        if list(self.lr_milestones) != sorted(set(self.lr_milestones)) or any(m <= 0 for m in self.lr_milestones):
            raise ConfigError(f"lr_milestones must be increasing positive epochs, got {self.lr_milestones}")
        final = self.lr_at(self.epochs)
        if not final > 0:
            raise ConfigError(f"learning rate decays to {final} by epoch {self.epochs}")

    def lr_at(self, epoch: int) -> float:
        """Learning rate for a 0-based epoch: multiplied by ``lr_decay`` at each milestone reached."""
        passed = sum(1 for m in self.lr_milestones if epoch >= m)
        return self.learning_rate * self.lr_decay ** passed


class Adam:
    def __init__(self, params, cfg: TrainConfig):
        self.params = list(params)
        self.b1, self.b2, self.eps = cfg.beta1, cfg.beta2, cfg.adam_eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, lr: float):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)


@dataclass
class EpochLog:
    epoch: int
    lr: float
    loss: float
    seconds: float
    metrics: dict = field(default_factory=dict)


def batches(n: int, batch_size: int, rng) -> list:
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def _flip(images, masks, rng):
    images, masks = images.copy(), masks.copy()
    for i in range(len(images)):
        if rng.random() < 0.5:
            images[i], masks[i] = images[i][..., ::-1], masks[i][..., ::-1]
        if rng.random() < 0.5:
            images[i], masks[i] = images[i][..., ::-1, :], masks[i][..., ::-1, :]
    return images, masks


def train(network: ARFCNet, images: np.ndarray, masks: np.ndarray, cfg: TrainConfig,
          on_epoch=None) -> list:
    """Train in place on (N, 1, H, W) arrays; returns one :class:`EpochLog` per epoch.

    Shuffling for epoch ``e`` uses ``default_rng([seed, e])`` so runs with the
    same seed, data and initial weights are bitwise reproducible.
    ``on_epoch(log_entry)`` may attach metrics to the entry.
    """
    images = np.asarray(images)
    masks = np.asarray(masks)
    if len(images) == 0:
        raise TrainingError("empty training set")
    if images.shape != masks.shape:
        raise TrainingError(f"images {images.shape} and masks {masks.shape} differ")
    dtype = network.head.weight.dtype
    opt = Adam(network.parameters(), cfg)
    history = []
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        rng = np.random.default_rng([cfg.seed, epoch])
        network.train()
        start, total = time.perf_counter(), 0.0
        for b, idx in enumerate(batches(len(images), cfg.batch_size, rng)):
            xb, yb = images[idx], masks[idx]
            if cfg.flip_augment:
                xb, yb = _flip(xb, yb, rng)
            network.zero_grad()
            try:
                loss = soft_iou_loss(network(Tensor(xb.astype(dtype))), yb, cfg.delta)
                loss.backward()
            except NonFiniteError as exc:
                raise TrainingError(f"non-finite value at epoch {epoch}, batch {b}: {exc}") from exc
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingError(f"loss is {value} at epoch {epoch}, batch {b}")
            opt.step(lr)
            total += value * len(idx)
        entry = EpochLog(epoch, lr, total / len(images), time.perf_counter() - start)
        if on_epoch is not None:
            on_epoch(entry)
        log.info("epoch %d lr %.3g loss %.6f (%.1fs) %s", epoch, lr, entry.loss, entry.seconds, entry.metrics)
        history.append(entry)
    return history


def predict(network: ARFCNet, images: np.ndarray, batch_size: int = 8) -> np.ndarray:
    """Saliency maps (N, 1, H, W) in eval mode."""
    out = [infer(network, images[i:i + batch_size])[1] for i in range(0, len(images), batch_size)]
    return np.concatenate(out, axis=0)


def loss_log_text(history) -> str:
    return "epoch,lr,loss\n" + "".join(f"{e.epoch},{e.lr!r},{e.loss!r}\n" for e in history)


# -- checkpoints ------------------------------------------------------------
MANIFEST = "manifest.txt"
NET_CONFIG = "network.cfg"


def format_config(cfg) -> str:
    lines = []
    for key, value in asdict(cfg).items():
        if isinstance(value, (tuple, list)):
            value = ", ".join(str(v) for v in value)
        elif isinstance(value, bool):
            value = str(value).lower()
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def save_checkpoint(network: ARFCNet, directory) -> Path:
    """One raw tensor file per parameter and buffer plus a plain-text manifest."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, (name, value) in enumerate(network.state_dict().items()):
        fname = f"t{i:04d}.arfc"
        save_tensor(d / fname, value)
        shape = "x".join(str(s) for s in value.shape) or "scalar"
        rows.append(f"{name} {shape} {value.dtype} {fname}")
    (d / MANIFEST).write_text("\n".join(rows) + "\n")
    (d / NET_CONFIG).write_text(format_config(network.cfg))
    return d


def read_manifest(directory) -> list:
    rows = []
    for ln, line in enumerate((Path(directory) / MANIFEST).read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 4:
            raise DataError(f"{MANIFEST} line {ln}: expected 'name shape dtype file'")
        name, shape, dtype, fname = parts
        dims = () if shape == "scalar" else tuple(int(s) for s in shape.split("x"))
        rows.append((name, dims, np.dtype(dtype), fname))
    return rows


def load_checkpoint(directory) -> ARFCNet:
    d = Path(directory)
    cfg = parse_config((d / NET_CONFIG).read_text(), NetConfig)
    network = build_network(cfg)
    rows = read_manifest(d)
    if rows:
        network.to(rows[0][2])
    state = {}
    for name, dims, dtype, fname in rows:
        arr = load_tensor(d / fname)
        if arr.dtype != dtype:
            raise DataError(f"{fname}: dtype {arr.dtype} but manifest says {dtype}")
        state[name] = arr.reshape(dims)
    network.load_state_dict(state)
    return network
