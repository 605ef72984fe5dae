"""Desk-scale synthetic run: train each variant for 50 epochs and compare test metrics.

    python scripts/desk_experiment.py --workdir runs/desk --variants full backbone
"""

import argparse
import logging
from dataclasses import replace
from pathlib import Path

from arfc.experiment import VARIANTS, DeskConfig, run


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--workdir", default="runs/desk")
    p.add_argument("--variants", nargs="+", choices=sorted(VARIANTS), default=list(DeskConfig.variants))
    p.add_argument("--epochs", type=int, default=DeskConfig.epochs)
    p.add_argument("--seed", type=int, default=DeskConfig.seed)
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s: %(message)s")

    cfg = DeskConfig(epochs=args.epochs, seed=args.seed, variants=tuple(args.variants))
    cfg = replace(cfg, train=replace(cfg.train, epochs=args.epochs, seed=args.seed))
    results = run(cfg, args.workdir)

    lines = ["variant,parameters,seconds,final_loss,iou,f1,pd,fa_e6"]
    for r in results.values():
        lines.append(f"{r.name},{r.parameters},{r.seconds:.0f},{r.losses[-1]:.4f},"
                     f"{r.report.iou:.4f},{r.report.f1:.4f},{r.report.pd:.4f},{r.report.fa_e6:.1f}")
    summary = "\n".join(lines) + "\n"
    (Path(args.workdir) / "summary.csv").write_text(summary)
    print(summary, end="")


if __name__ == "__main__":
    main()
