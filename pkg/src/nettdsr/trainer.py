"""Pre-training of the regularizer network with MSE + Adam."""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .nett import RegularizerKind, regularizer_value_and_grad
from .regnet import NetworkSpec, WeightStore, build_network, forward
from .scenes import (
    NoiseSpec,
    SampleRecord,
    augment,
    gt_noise_record,
    interpolation_augment,
    make_scheme_targets,  # noqa: F401  (re-exported: targets are built per scheme here too)
    rotate90,
    split_by_scene,
)
from .tensor import AdamState, NonFiniteError, Tensor, adam_update, backward, mse_loss

logger = logging.getLogger(__name__)

EXTRAS = frozenset({"rotate90", "interpolation", "one-step", "gt-noise"})


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    scheme: int = 2
    epochs: int = 15
    batch_size: int = 16
    lr: float = 1e-3
    noise: NoiseSpec = NoiseSpec()
    extras: frozenset = frozenset()
    seed: int = 0
    val_fraction: float = 0.2
    s_alpha: float = 0.001  # one-step augmentation step
    one_step_kind: str = "scheme2_residual"
    gt_noise_rule: str = "root"  # sigma = sqrt(MSE) ("root") or MSE itself ("mse")

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.scheme not in (1, 2):
            raise ValueError(f"scheme must be 1 or 2, got {self.scheme}")
        object.__setattr__(self, "extras", frozenset(self.extras))
        unknown = self.extras - EXTRAS
        if unknown:
            raise ValueError(f"unknown extra augmentations {sorted(unknown)}")
        if "one-step" in self.extras:
            RegularizerKind.parse(self.one_step_kind)
            if self.s_alpha < 0:
                raise ValueError("one-step augmentation needs s_alpha >= 0")
        if self.gt_noise_rule not in ("root", "mse"):
            raise ValueError(f"unknown gt-noise sigma rule {self.gt_noise_rule!r}")


@dataclass
class TrainReport:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    sigma: list[float] = field(default_factory=list)
    best_epoch: int = -1
    wall_time: float = 0.0
    checkpoint: Optional[str] = None

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss", "sigma_effective"])
        for e, (tl, vl, s) in enumerate(zip(self.train_loss, self.val_loss, self.sigma), start=1):
            w.writerow([e, repr(tl), repr(vl), repr(s)])
        return buf.getvalue()


def baseline_mse(records: Sequence[SampleRecord]) -> float:
    """MSE of using the approximation itself as the reconstruction."""
    errs = [np.mean((r.approximation() - r.ground_truth()) ** 2) for r in records]
    return float(np.mean(errs))


def _stack(recs: Sequence[SampleRecord]) -> tuple[np.ndarray, np.ndarray]:
    return np.stack([r.input for r in recs])[:, None], np.stack([r.target for r in recs])[:, None]


def evaluate_loss(weights: WeightStore, records: Sequence[SampleRecord], batch_size: int = 64) -> float:
    total, count = 0.0, 0
    for lo in range(0, len(records), batch_size):
        x, t = _stack(records[lo:lo + batch_size])
        out = forward(weights, Tensor(x)).data
        total += float(np.sum((out - t) ** 2))
        count += t.size
    return total / count


def one_step_augment(record: SampleRecord, weights: WeightStore, s_alpha: float = 0.001, kind="scheme2_residual") -> SampleRecord:
    """Replace the input x~ by x~ - s_alpha * dR/dx at x~."""
    if record.scheme != 2 or record.subset != "X1":
        raise ValueError("one-step augmentation needs a scheme-2 X1 record")
    if s_alpha == 0:
        return record
    _, g = regularizer_value_and_grad(kind, weights, record.input)
    return replace(record, input=record.input - s_alpha * g, aug="one-step")


def _one_step_batch(records, weights, s_alpha, kind, batch=32) -> list[SampleRecord]:
    out = []
    for lo in range(0, len(records), batch):
        chunk = records[lo:lo + batch]
        xs = np.stack([r.input for r in chunk])
        _, g = regularizer_value_and_grad(kind, weights, xs)
        x1 = xs - s_alpha * g
        out.extend(replace(r, input=x, aug="one-step") for r, x in zip(chunk, x1))
    return out


def _epoch_samples(train, cfg: TrainConfig, epoch: int, rng, step_weights) -> list[SampleRecord]:
    x1 = [r for r in train if r.subset == "X1"]
    samples = list(train)
    if "gt-noise" in cfg.extras:
        samples += [gt_noise_record(r, rng, cfg.gt_noise_rule) for r in x1]
    if cfg.scheme == 2 and "interpolation" in cfg.extras:
        samples += [interpolation_augment(r, rng.uniform()) for r in x1]
    if cfg.scheme == 2 and "one-step" in cfg.extras and step_weights is not None:
        samples += _one_step_batch(x1, step_weights, cfg.s_alpha, cfg.one_step_kind)
    samples = [augment(r, cfg.noise, epoch, rng) for r in samples]
    if "rotate90" in cfg.extras:
        ks = rng.integers(0, 4, size=len(samples))
        samples = [rotate90(r, int(k)) for r, k in zip(samples, ks)]
    return samples


def split_records(records: Sequence[SampleRecord], cfg: TrainConfig) -> tuple[list, list]:
    recs = list(records)
    if not any(r.split == "val" for r in recs):
        recs = [replace(r) for r in recs]
        split_by_scene(recs, cfg.val_fraction, cfg.seed)
    train = [r for r in recs if r.split == "train"]
    val = [r for r in recs if r.split == "val"]
    return train, val


def train(
    records: Sequence[SampleRecord],
    net: NetworkSpec,
    cfg: TrainConfig,
    init: Optional[WeightStore] = None,
    progress=None,
) -> tuple[WeightStore, TrainReport]:
    """Train on the "train" records, validate on the "val" ones.

    Returns the weights from the epoch with the lowest validation loss.
    If no record carries a "val" tag, a by-scene split is made first.
    """
    if not records:
        raise ValueError("empty dataset")
    if any(r.scheme != cfg.scheme for r in records):
        raise ValueError(f"dataset scheme does not match config scheme {cfg.scheme}")
    train_recs, val_recs = split_records(records, cfg)
    if not train_recs:
        raise ValueError("no training records after the validation split")
    if not val_recs:
        val_recs = train_recs

    weights = init.copy() if init is not None else build_network(net, cfg.seed)
    state = AdamState()
    report = TrainReport()
    best = None
    best_val = np.inf
    step_weights = None
    t0 = time.perf_counter()
    for epoch in range(cfg.epochs):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x7EA, epoch]))
        samples = _epoch_samples(train_recs, cfg, epoch, rng, step_weights)
        order = rng.permutation(len(samples))
        losses = []
        for b, lo in enumerate(range(0, len(order), cfg.batch_size)):
            batch = [samples[i] for i in order[lo:lo + cfg.batch_size]]
            x, t = _stack(batch)
            params = weights.tensors(requires_grad=True)
            try:
                loss = mse_loss(forward(weights, Tensor(x), params), Tensor(t))
                backward(loss)
            except NonFiniteError as exc:
                raise TrainingDiverged(f"diverged at epoch {epoch + 1}, batch {b + 1}") from exc
            adam_update(weights.params, {k: p.grad for k, p in params.items()}, state, lr=cfg.lr)
            losses.append(loss.item())
        val = evaluate_loss(weights, val_recs)
        if not np.isfinite(val):
            raise TrainingDiverged(f"diverged at epoch {epoch + 1}, validation")
        report.train_loss.append(float(np.mean(losses)))
        report.val_loss.append(val)
        report.sigma.append(cfg.noise.effective_sigma(epoch))
        if val < best_val:
            best_val, best = val, weights.copy()
            report.best_epoch = epoch + 1
        if "one-step" in cfg.extras:
            step_weights = weights.copy()  # refreshed once per epoch
        logger.info("epoch %d train %.3e val %.3e", epoch + 1, report.train_loss[-1], val)
        if progress is not None:
            progress(epoch + 1, report)
    report.wall_time = time.perf_counter() - t0
    return best, report
