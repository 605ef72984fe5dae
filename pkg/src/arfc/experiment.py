"""Desk-scale synthetic training run with ablation variants."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

from .data import SynthConfig, generate_synthetic, load_dataset, stack
from .metrics import EvalReport, evaluate_split
from .network import NetConfig, build_network
from .train import TrainConfig, loss_log_text, predict, save_checkpoint, train

log = logging.getLogger(__name__)

SWITCHES_OFF = dict(use_mrffi=False, use_wfed=False, use_hlff=False, use_gmea=False)
VARIANTS = {
    "full": {},
    "backbone": SWITCHES_OFF,  # plain convs + max pooling + concat skips
    "wfed_only": {**SWITCHES_OFF, "use_wfed": True},
    "mrffi_only": {**SWITCHES_OFF, "use_mrffi": True},
    "hlff_only": {**SWITCHES_OFF, "use_hlff": True},
    "gmea_only": {**SWITCHES_OFF, "use_gmea": True},
}


@dataclass
class DeskConfig:
    train_count: int = 200
    test_count: int = 50
    image_size: int = 64
    background: str = "cloud"
    epochs: int = 50
    seed: int = 42
    variants: tuple = ("full", "backbone")
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=50, seed=42))


@dataclass
class VariantResult:
    name: str
    report: EvalReport
    losses: list
    seconds: float
    parameters: int


def make_dataset(cfg: DeskConfig, root) -> Path:
    synth = SynthConfig(count=cfg.train_count + cfg.test_count, test_count=cfg.test_count,
                        image_size=cfg.image_size, background=cfg.background, seed=cfg.seed)
    return generate_synthetic(synth, root)


def run_variant(name: str, cfg: DeskConfig, train_set, test_set, out_dir=None) -> VariantResult:
    net = build_network(NetConfig(seed=cfg.seed, **VARIANTS[name]))
    tcfg = replace(cfg.train, epochs=cfg.epochs, seed=cfg.seed)
    start = time.perf_counter()
    history = train(net, *train_set, tcfg)
    report = evaluate_split(list(predict(net, test_set[0])), list(test_set[1]))
    seconds = time.perf_counter() - start
    log.info("%s: iou %.4f pd %.4f fa_e6 %.1f (%.0fs)", name, report.iou, report.pd, report.fa_e6, seconds)
    if out_dir is not None:
        d = Path(out_dir) / name
        save_checkpoint(net, d / "checkpoint")
        (d / "loss.csv").write_text(loss_log_text(history))
        (d / "report.csv").write_text(report.csv())
    return VariantResult(name, report, [e.loss for e in history], seconds, net.num_parameters())


def run(cfg: DeskConfig, workdir) -> dict:
    """Generate the dataset under ``workdir/data`` and train every variant."""
    workdir = Path(workdir)
    root = make_dataset(cfg, workdir / "data")
    train_set = stack(load_dataset(root, "train"))
    test_set = stack(load_dataset(root, "test"))
    return {name: run_variant(name, cfg, train_set, test_set, workdir / "runs") for name in cfg.variants}
