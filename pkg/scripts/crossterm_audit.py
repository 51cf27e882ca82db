"""How often does one small regularizer step increase the residual ||phi(x)-x||^2?

    python3 scripts/crossterm_audit.py runs/desk/checkpoint.nett --config configs/desk.cfg
"""

import argparse

import numpy as np

from nettdsr import pipeline
from nettdsr.config import ExperimentConfig
from nettdsr.nett import crossterm_audit
from nettdsr.regnet import load_checkpoint


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("checkpoint")
    ap.add_argument("--config", default="configs/desk.cfg")
    ap.add_argument("--s-alpha", type=float, nargs="+", default=[0.0001, 0.001, 0.01])
    args = ap.parse_args()

    cfg = ExperimentConfig.load(args.config)
    weights = load_checkpoint(args.checkpoint)
    recs = [r for r in pipeline.build_records(cfg) if r.split == "val" and r.subset == "X1"]
    approx = np.stack([r.input for r in recs])
    print("s_alpha  samples  holds  cross>=0  mean_before  mean_after  mean_cross")
    for sa in args.s_alpha:
        a = crossterm_audit(weights, approx, s_alpha=sa)
        print(f"{sa:<8g} {a.samples:7d}  {a.holds_fraction:.3f}  {a.cross_nonneg_fraction:.3f}     "
              f"{a.mean_before:.4e}   {a.mean_after:.4e}  {a.mean_cross:.3e}")


if __name__ == "__main__":
    main()
