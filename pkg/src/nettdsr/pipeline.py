"""Config-driven building blocks shared by the CLI and the experiment scripts."""

from __future__ import annotations

import math
from dataclasses import replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import depth_io, metrics
from .config import ExperimentConfig
from .nett import nett_optimize, initial_guess
from .regnet import WeightStore, apply
from .sampling import bilinear_upsample, box_downsample
from .scenes import SampleRecord, build_dataset, extract_patches, generate_scenes, scene_seed, generate_scene
from .trainer import train

RECORD_INDEX = "records.txt"


def _workers() -> int:
    import os

    try:
        return max(1, int(os.environ.get("NETT_THREADS", "1")))
    except ValueError:
        return 1


def patches_per_scene(cfg: ExperimentConfig) -> int:
    h, w, p, s = cfg["dataset.height"], cfg["dataset.width"], cfg["dataset.patch"], cfg["dataset.stride"]
    return ((h - p) // s + 1) * ((w - p) // s + 1)


def scene_counts(cfg: ExperimentConfig) -> tuple[int, int]:
    per = patches_per_scene(cfg)
    return math.ceil(cfg["dataset.train_patches"] / per), math.ceil(cfg["dataset.val_patches"] / per)


def build_records(cfg: ExperimentConfig) -> list[SampleRecord]:
    """Train and val records from disjoint scenes, truncated to the configured counts."""
    n_train, n_val = scene_counts(cfg)
    scenes = generate_scenes(cfg.scene_spec(), n_train + n_val, cfg["seed"], _workers())
    records = build_dataset(
        scenes, cfg["train.scheme"], cfg.sampler(), cfg["dataset.patch"], cfg["dataset.stride"],
        cfg["dataset.split_fraction"], cfg["seed"],
    )
    train_recs, val_recs = [], []
    for r in records:
        if r.scene < n_train:
            r.split = "train"
            train_recs.append(r)
        else:
            r.split = "val"
            val_recs.append(r)
    return train_recs[: cfg["dataset.train_patches"]] + val_recs[: cfg["dataset.val_patches"]]


def test_scenes(cfg: ExperimentConfig) -> list[np.ndarray]:
    """Held-out full scenes, seeded outside the train/val index range."""
    n_train, n_val = scene_counts(cfg)
    base = cfg.scene_spec()
    first = n_train + n_val
    return [generate_scene(replace(base, seed=scene_seed(cfg["seed"], first + i))) for i in range(cfg["dataset.test_scenes"])]


def save_dataset(root, records: list[SampleRecord], tests: list[np.ndarray]) -> list[str]:
    root = Path(root)
    (root / "records").mkdir(parents=True, exist_ok=True)
    (root / "test").mkdir(exist_ok=True)
    lines, files = [], []
    for i, r in enumerate(records):
        inp, tgt = f"records/{i:06d}_in.raw", f"records/{i:06d}_tgt.raw"
        depth_io.write_depth(r.input, root / inp, "raw")
        depth_io.write_depth(r.target, root / tgt, "raw")
        lines.append(f"{inp} {tgt} {r.subset} {r.scheme} aug={r.aug};scene={r.scene};split={r.split}")
        files += [inp, tgt]
    for k, img in enumerate(tests):
        rel = f"test/scene_{k:03d}.raw"
        depth_io.write_depth(img, root / rel, "raw")
        files.append(rel)
    (root / RECORD_INDEX).write_text("\n".join(lines) + "\n")
    files.append(RECORD_INDEX)
    return files


def load_dataset(root) -> tuple[list[SampleRecord], list[np.ndarray]]:
    root = Path(root)
    index = root / RECORD_INDEX
    if not index.exists():
        raise FileNotFoundError(f"no dataset at {root} (missing {RECORD_INDEX})")
    records = []
    for line in index.read_text().splitlines():
        if not line.strip():
            continue
        inp, tgt, subset, scheme, tags = line.split(" ")
        t = dict(kv.split("=", 1) for kv in tags.split(";"))
        records.append(SampleRecord(
            depth_io.read_depth(root / inp, "raw"), depth_io.read_depth(root / tgt, "raw"),
            subset, int(scheme), t.get("aug", "none"), int(t.get("scene", -1)), t.get("split", "train"),
        ))
    tests = [depth_io.read_depth(p, "raw") for p in sorted((root / "test").glob("scene_*.raw"))]
    return records, tests


def run_training(cfg: ExperimentConfig, records, progress=None):
    return train(records, cfg.net_spec(), cfg.train_config(), progress=progress)


def cnn_output(weights: WeightStore, x0: np.ndarray, scheme: int) -> np.ndarray:
    """Direct network reconstruction: x0 + residual (scheme 1) or the output itself."""
    out = apply(weights, x0)
    return x0 + out if scheme == 1 else out


def compare_methods(cfg: ExperimentConfig, weights: WeightStore, gt: np.ndarray):
    """RMSE_d / RMSE_v for bilinear, direct CNN and NETT on one scene, plus the NETT trace."""
    rs = cfg.render_spec()
    ncfg = cfg.nett_config()
    y = box_downsample(gt, ncfg.factor)
    bil = bilinear_upsample(y, ncfg.factor)
    cnn = cnn_output(weights, initial_guess(y, ncfg), cfg["train.scheme"])
    x, trace = nett_optimize(y, weights, ncfg, gt, rs)
    results = {}
    for name, img in (("bilinear", bil), ("cnn", cnn), ("nett", x)):
        results[name] = (metrics.rmse_d(img, gt), metrics.rmse_v(img, gt, rs))
    return results, {"bilinear": bil, "cnn": cnn, "nett": x, "init": initial_guess(y, ncfg)}, trace


def load_scene_input(cfg: ExperimentConfig, spec: str, data: Optional[Path] = None):
    """Resolve ``scene:N`` (held-out scene N) or a depth file path into a ground truth."""
    if spec.startswith("scene:"):
        k = int(spec.split(":", 1)[1])
        if data is not None:
            _, tests = load_dataset(data)
        else:
            tests = test_scenes(cfg.override(**{"dataset.test_scenes": max(k + 1, cfg["dataset.test_scenes"])}))
        if not 0 <= k < len(tests):
            raise FileNotFoundError(f"test scene {k} not available")
        return tests[k]
    path = Path(spec)
    if not path.exists():
        raise FileNotFoundError(f"input depth file {path} not found")
    return depth_io.read_depth(path)
