"""Grid over NETT step sizes (s, alpha) on held-out scenes; prints mean final RMSE_d.

    python3 scripts/grid_search.py runs/row2/checkpoint.nett --config configs/table1/row2.cfg
"""

import argparse

from nettdsr import pipeline
from nettdsr.config import ExperimentConfig
from nettdsr.nett import grid_search
from nettdsr.regnet import load_checkpoint
from nettdsr.sampling import box_downsample


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("checkpoint")
    ap.add_argument("--config", default="configs/desk.cfg")
    ap.add_argument("--s", type=float, nargs="+", default=[0.5, 1.0, 4.0, 16.0])
    ap.add_argument("--alpha", type=float, nargs="+", default=[0.001, 0.01, 0.1])
    ap.add_argument("--scenes", type=int, default=3)
    args = ap.parse_args()

    cfg = ExperimentConfig.load(args.config).override(**{"dataset.test_scenes": args.scenes})
    ncfg = cfg.nett_config()
    truths = pipeline.test_scenes(cfg)
    obs = [box_downsample(gt, ncfg.factor) for gt in truths]
    results = grid_search(obs, truths, load_checkpoint(args.checkpoint), ncfg, args.s, args.alpha)
    print("s        alpha    mean_rmse_d")
    for s, alpha, err in results:
        print(f"{s:<8g} {alpha:<8g} {err:.5f}")


if __name__ == "__main__":
    main()
