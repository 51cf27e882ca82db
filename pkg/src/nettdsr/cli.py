"""Command-line workflow: generate | train | optimize | evaluate | probe | table1.

Exit codes: 0 success, 2 config error, 3 missing artifact, 4 numerical divergence.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import shutil
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import depth_io, metrics, pipeline, raster
from .config import ConfigError, ExperimentConfig
from .nett import NettDivergence, RegularizerKind, coercivity_probe, correlate_trace, nett_optimize
from .regnet import CheckpointError, load_checkpoint, save_checkpoint
from .sampling import box_downsample
from .trainer import TrainingDiverged

logger = logging.getLogger("nettdsr")

EXIT_OK, EXIT_CONFIG, EXIT_MISSING, EXIT_DIVERGED = 0, 2, 3, 4
CHECKPOINT = "checkpoint.nett"


class MissingArtifact(Exception):
    pass


def _fmt(v) -> str:
    if v is None:
        return "undefined"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _csv(rows, header) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.override(seed=args.seed)
    return cfg


def _prepare_out(out: Path, force: bool) -> Path:
    if out.exists() and any(out.iterdir()):
        if not force:
            raise ConfigError(f"output directory {out} exists; pass --force to overwrite")
        shutil.rmtree(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_weights(path: Optional[str]):
    if not path:
        raise MissingArtifact("no --checkpoint given")
    p = Path(path)
    if not p.exists():
        raise MissingArtifact(f"checkpoint {p} not found")
    try:
        return load_checkpoint(p)
    except CheckpointError as exc:
        raise MissingArtifact(f"unusable checkpoint: {exc} [{exc.code}]") from exc


def _finish(out: Path, cfg: ExperimentConfig, files: list[str], name: str) -> None:
    (out / "config.txt").write_text(cfg.snapshot())
    m = depth_io.RunManifest(name, cfg.snapshot())
    for rel in files + ["config.txt"]:
        m.add(out, rel)
    m.write(out)


# ---------------------------------------------------------------------------
# commands


def cmd_generate(cfg: ExperimentConfig, out: Path, force: bool) -> Path:
    _prepare_out(out, force)
    records = pipeline.build_records(cfg)
    tests = pipeline.test_scenes(cfg)
    files = pipeline.save_dataset(out, records, tests)
    _finish(out, cfg, files, f"{cfg['name']}-dataset")
    n_train = sum(r.split == "train" for r in records)
    logger.info("wrote %d train + %d val records to %s", n_train, len(records) - n_train, out)
    return out


def _records_for(cfg: ExperimentConfig, data: Optional[str]):
    if data:
        if not Path(data).exists():
            raise MissingArtifact(f"dataset {data} not found")
        return pipeline.load_dataset(data)
    return pipeline.build_records(cfg), pipeline.test_scenes(cfg)


def cmd_train(cfg: ExperimentConfig, out: Path, force: bool, data: Optional[str] = None):
    _prepare_out(out, force)
    records, _ = _records_for(cfg, data)
    weights, report = pipeline.run_training(cfg, records)
    save_checkpoint(weights, out / CHECKPOINT)
    report.checkpoint = str(out / CHECKPOINT)
    (out / "train_report.csv").write_text(report.to_csv())
    epochs = list(range(1, len(report.train_loss) + 1))
    raster.line_chart(out / "train_loss.png", epochs, {"train": report.train_loss}, "train loss")
    raster.line_chart(out / "val_loss.png", epochs, {"val": report.val_loss}, "validation loss", log_y=True)
    _finish(out, cfg, [CHECKPOINT, "train_report.csv", "train_loss.png", "val_loss.png"], f"{cfg['name']}-train")
    return weights, report


def _write_optimize_outputs(out: Path, stem: str, cfg, x, x0, gt, trace, fmt: str) -> list[str]:
    rs = cfg.render_spec()
    ext = {"png16": "png", "pfm": "pfm", "raw": "raw"}[fmt]
    files = [f"{stem}_result.{ext}", f"{stem}_trace.csv"]
    depth_io.write_depth(x, out / files[0], fmt)
    (out / files[1]).write_text(trace.to_csv())
    panels = [metrics.render(x0, rs), metrics.render(x, rs)]
    if gt is not None:
        panels.append(metrics.render(gt, rs))
    depth_io.write_gray8(raster.side_by_side(panels), out / f"{stem}_renders.png")
    files.append(f"{stem}_renders.png")
    if gt is not None:
        raster.line_chart(out / f"{stem}_rmse.png", trace.iteration,
                          {"rmse_d": trace.rmse_d, "rmse_v": trace.rmse_v}, "RMSE dynamics")
        raster.scatter(out / f"{stem}_functional_vs_rmse_d.png", trace.functional, trace.rmse_d, "functional vs RMSE_d")
        raster.scatter(out / f"{stem}_functional_vs_rmse_v.png", trace.functional, trace.rmse_v, "functional vs RMSE_v")
        files += [f"{stem}_rmse.png", f"{stem}_functional_vs_rmse_d.png", f"{stem}_functional_vs_rmse_v.png"]
    return files


def cmd_optimize(cfg: ExperimentConfig, out: Path, force: bool, checkpoint: str, source: str,
                 fmt: str = "pfm", lowres: bool = False, data: Optional[str] = None):
    weights = _load_weights(checkpoint)
    try:
        img = pipeline.load_scene_input(cfg, source, Path(data) if data else None)
    except FileNotFoundError as exc:
        raise MissingArtifact(str(exc)) from exc
    _prepare_out(out, force)
    ncfg = cfg.nett_config()
    if lowres:
        gt, y = None, img
    else:
        gt, y = img, box_downsample(img, ncfg.factor)
    x0 = pipeline.initial_guess(y, ncfg)
    x, trace = nett_optimize(y, weights, ncfg, gt, cfg.render_spec())
    files = _write_optimize_outputs(out, "optimize", cfg, x, x0, gt, trace, fmt)
    summary = [("iterations", ncfg.iterations)]
    if gt is not None and len(trace) >= 3:
        cd, cv = correlate_trace(trace)
        summary += [("pearson_functional_rmse_d", cd), ("pearson_functional_rmse_v", cv)]
    (out / "summary.csv").write_text(_csv(summary, ["key", "value"]))
    files.append("summary.csv")
    _finish(out, cfg, files, f"{cfg['name']}-optimize")
    return x, trace


def evaluate_rows(cfg: ExperimentConfig, weights, tests, out: Optional[Path] = None):
    """Per-scene comparison rows; optionally writes renders into ``out``."""
    rows, traces, files = [], [], []
    rs = cfg.render_spec()
    for k, gt in enumerate(tests):
        res, imgs, trace = pipeline.compare_methods(cfg, weights, gt)
        traces.append(trace)
        rows.append([k, *res["bilinear"], *res["cnn"], *res["nett"], trace.rmse_d[0], trace.rmse_v[0]])
        if out is not None:
            rel = f"renders/scene_{k:03d}.png"
            panel = raster.side_by_side([metrics.render(imgs[m], rs) for m in ("bilinear", "cnn", "nett")] + [metrics.render(gt, rs)])
            depth_io.write_gray8(panel, out / rel)
            files.append(rel)
    return rows, traces, files


COMPARISON_HEADER = ["scene", "bilinear_rmse_d", "bilinear_rmse_v", "cnn_rmse_d", "cnn_rmse_v",
                     "nett_rmse_d", "nett_rmse_v", "init_rmse_d", "init_rmse_v"]


def cmd_evaluate(cfg: ExperimentConfig, out: Path, force: bool, checkpoint: str, data: Optional[str] = None):
    weights = _load_weights(checkpoint)
    _, tests = _records_for(cfg, data) if data else (None, pipeline.test_scenes(cfg))
    _prepare_out(out, force)
    (out / "renders").mkdir()
    rows, _, files = evaluate_rows(cfg, weights, tests, out)
    (out / "comparison.csv").write_text(_csv(rows, COMPARISON_HEADER))
    _finish(out, cfg, files + ["comparison.csv"], f"{cfg['name']}-evaluate")
    return rows


def cmd_probe(cfg: ExperimentConfig, out: Path, force: bool, checkpoint: str, kind: str, source: Optional[str] = None):
    kind = RegularizerKind.parse(kind)
    weights = _load_weights(checkpoint)
    if source:
        try:
            x0 = pipeline.load_scene_input(cfg, source)
        except FileNotFoundError as exc:
            raise MissingArtifact(str(exc)) from exc
    else:
        x0 = pipeline.test_scenes(cfg.override(**{"dataset.test_scenes": 1}))[0]
    _prepare_out(out, force)
    rows = coercivity_probe(kind, weights, x0, cfg["probe.scales"])
    norm2 = float(np.sum(x0 ** 2))
    table = [(t, r, ratio, r >= t * t * norm2) for t, r, ratio in rows]
    (out / "probe.csv").write_text(_csv(table, ["t", "R", "R_over_t2", "R_ge_t2_norm2"]))
    _finish(out, cfg, ["probe.csv"], f"{cfg['name']}-probe")
    return table


# ---------------------------------------------------------------------------
# experiment matrix


SUMMARY_HEADER = ["row", "scheme", "augmentation", "init_rmse_d", "final_rmse_d", "init_rmse_v", "final_rmse_v",
                  "pearson_rmse_d", "pearson_rmse_v", "improved_rmse_d", "improved_rmse_v", "status"]


def _augmentation_label(cfg: ExperimentConfig) -> str:
    parts = []
    if cfg["noise.sigma"] > 0:
        s = f"sigma={cfg['noise.sigma']:g}"
        if cfg["noise.period"] > 0:
            s += f" x{cfg['noise.ratio']:g}/{cfg['noise.period']}ep"
        if cfg["noise.target_rule"] != "none":
            s += " target/10"
        parts.append(s)
    parts += sorted(str(e) for e in cfg["train.extras"])
    return "+".join(parts) if parts else "none"


def _mean_defined(values) -> Optional[float]:
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def run_table_row(cfg: ExperimentConfig, row_dir: Path) -> list:
    """generate -> train -> optimize/evaluate for one row; returns the summary row."""
    name = cfg["name"]
    row_dir.mkdir(parents=True, exist_ok=True)
    done = row_dir / "row_summary.csv"
    manifest = row_dir / "manifest.txt"
    if done.exists() and manifest.exists() and depth_io.RunManifest.read(row_dir).verify(row_dir):
        line = done.read_text().splitlines()[1]
        return next(csv.reader([line]))
    for stale in row_dir.iterdir():
        if stale.is_dir():
            shutil.rmtree(stale)
        else:
            stale.unlink()
    records = pipeline.build_records(cfg)
    tests = pipeline.test_scenes(cfg)
    weights, report = pipeline.run_training(cfg, records)
    save_checkpoint(weights, row_dir / CHECKPOINT)
    (row_dir / "train_report.csv").write_text(report.to_csv())
    (row_dir / "renders").mkdir()
    rows, traces, files = evaluate_rows(cfg, weights, tests, row_dir)
    (row_dir / "comparison.csv").write_text(_csv(rows, COMPARISON_HEADER))
    for k, trace in enumerate(traces):
        (row_dir / f"trace_{k:03d}.csv").write_text(trace.to_csv())
        files.append(f"trace_{k:03d}.csv")
    corr = [correlate_trace(t) if len(t) >= 3 else (None, None) for t in traces]
    arr = np.asarray([r[1:] for r in rows], dtype=np.float64)
    init_d, final_d = float(arr[:, 6].mean()), float(arr[:, 4].mean())
    init_v, final_v = float(arr[:, 7].mean()), float(arr[:, 5].mean())
    summary = [name, cfg["train.scheme"], _augmentation_label(cfg), init_d, final_d, init_v, final_v,
               _mean_defined(c[0] for c in corr), _mean_defined(c[1] for c in corr),
               final_d <= init_d, final_v <= init_v, "ok"]
    (row_dir / "row_summary.csv").write_text(_csv([summary], SUMMARY_HEADER))
    _finish(row_dir, cfg, files + [CHECKPOINT, "train_report.csv", "comparison.csv", "row_summary.csv"], name)
    return [_fmt(v) for v in summary]


def cmd_table1(config_dir: Path, out: Path, seed: Optional[int] = None) -> Path:
    configs = sorted(Path(config_dir).glob("*.cfg"))
    if not configs:
        raise MissingArtifact(f"no *.cfg row configs in {config_dir}")
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for path in configs:
        try:
            cfg = ExperimentConfig.load(path)
            if seed is not None:
                cfg = cfg.override(seed=seed)
            rows.append(run_table_row(cfg, out / path.stem))
        except (ConfigError, NettDivergence, TrainingDiverged, FloatingPointError, ValueError) as exc:
            logger.error("row %s failed: %s", path.stem, exc)
            rows.append([path.stem] + [""] * (len(SUMMARY_HEADER) - 2) + [f"failed: {type(exc).__name__}"])
    (out / "table1_summary.csv").write_text(_csv(rows, SUMMARY_HEADER))
    return out / "table1_summary.csv"


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nettdsr", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_default):
        sp.add_argument("--config", help="flat key = value config file")
        sp.add_argument("--seed", type=int, help="override the master seed")
        sp.add_argument("--out", default=out_default, help="output directory")
        sp.add_argument("--force", action="store_true", help="overwrite an existing output directory")

    g = sub.add_parser("generate", help="build the synthetic dataset")
    common(g, "runs/dataset")
    t = sub.add_parser("train", help="pre-train the regularizer network")
    common(t, "runs/train")
    t.add_argument("--data", help="dataset directory from 'generate' (default: build in memory)")
    o = sub.add_parser("optimize", help="run NETT on one depth map")
    common(o, "runs/optimize")
    o.add_argument("--checkpoint")
    o.add_argument("--input", default="scene:0", help="scene:N for a held-out scene, or a depth file")
    o.add_argument("--lowres", action="store_true", help="treat --input as the low-resolution observation")
    o.add_argument("--format", choices=("png16", "pfm", "raw"), default="pfm")
    o.add_argument("--data", help="dataset directory providing held-out scenes")
    e = sub.add_parser("evaluate", help="compare bilinear, CNN and NETT on held-out scenes")
    common(e, "runs/evaluate")
    e.add_argument("--checkpoint")
    e.add_argument("--data", help="dataset directory providing held-out scenes")
    pr = sub.add_parser("probe", help="coercivity probe along a ray")
    common(pr, "runs/probe")
    pr.add_argument("--checkpoint")
    pr.add_argument("--kind", required=True, help="scheme1_norm | scheme2_residual | coercive_skip")
    pr.add_argument("--input", help="scene:N or a depth file (default: first held-out scene)")
    tb = sub.add_parser("table1", help="run every row config in a directory")
    tb.add_argument("--config", required=True, help="directory of *.cfg row configs")
    tb.add_argument("--seed", type=int)
    tb.add_argument("--out", default="runs/table1")
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.command == "table1":
            cmd_table1(Path(args.config), Path(args.out), args.seed)
            return EXIT_OK
        cfg = _load_config(args)
        out = Path(args.out)
        if args.command == "generate":
            cmd_generate(cfg, out, args.force)
        elif args.command == "train":
            cmd_train(cfg, out, args.force, args.data)
        elif args.command == "optimize":
            cmd_optimize(cfg, out, args.force, args.checkpoint, args.input, args.format, args.lowres, args.data)
        elif args.command == "evaluate":
            cmd_evaluate(cfg, out, args.force, args.checkpoint, args.data)
        elif args.command == "probe":
            try:
                RegularizerKind.parse(args.kind)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
            cmd_probe(cfg, out, args.force, args.checkpoint, args.kind, args.input)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifact as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (NettDivergence, TrainingDiverged) as exc:
        print(f"numerical divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
