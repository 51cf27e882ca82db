"""Train one row config (or reuse its checkpoint) and report per-scene NETT results.

    python3 scripts/run_row.py configs/table1/row2.cfg --out runs/row2
"""

import argparse
import time
from pathlib import Path

from nettdsr import pipeline
from nettdsr.cli import evaluate_rows
from nettdsr.config import ExperimentConfig
from nettdsr.nett import correlate_trace
from nettdsr.regnet import load_checkpoint, save_checkpoint


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("config")
    ap.add_argument("--out", default=None)
    ap.add_argument("--retrain", action="store_true")
    args = ap.parse_args()

    cfg = ExperimentConfig.load(args.config)
    out = Path(args.out or f"runs/{cfg['name']}")
    out.mkdir(parents=True, exist_ok=True)
    ck = out / "checkpoint.nett"
    if ck.exists() and not args.retrain:
        weights = load_checkpoint(ck)
    else:
        t0 = time.perf_counter()
        weights, report = pipeline.run_training(
            cfg, pipeline.build_records(cfg),
            progress=lambda e, r: print(f"epoch {e:2d} train {r.train_loss[-1]:.3e} val {r.val_loss[-1]:.3e}", flush=True),
        )
        print(f"trained in {time.perf_counter() - t0:.0f}s, best epoch {report.best_epoch}")
        save_checkpoint(weights, ck)
        (out / "train_report.csv").write_text(report.to_csv())

    rows, traces, _ = evaluate_rows(cfg, weights, pipeline.test_scenes(cfg))
    better = 0
    print("scene  init_d    nett_d    cnn_d     bil_d     pearson_d")
    for row, trace in zip(rows, traces):
        pd, _ = correlate_trace(trace) if len(trace) >= 3 else (None, None)
        better += row[5] <= row[7]
        print(f"{row[0]:5d}  {row[7]:.5f}  {row[5]:.5f}  {row[3]:.5f}  {row[1]:.5f}  {pd}")
    print(f"NETT improved RMSE_d on {better}/{len(rows)} scenes")


if __name__ == "__main__":
    main()
