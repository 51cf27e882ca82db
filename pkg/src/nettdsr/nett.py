"""Variational super-resolution with a learned regularizer.

Minimises 1/2 ||F x - y||^2 + alpha * R(x) by incremental gradient descent:
a data step of size s followed by a regularizer step of size s * alpha.
"""

from __future__ import annotations

import csv
import enum
import io
import itertools
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import metrics
from .regnet import WeightStore, forward
from .sampling import SamplerSpec, adjoint_upsample, box_downsample, upsample
from .tensor import NonFiniteError, Tensor, backward, sub, sum_squares, add


class RegularizerKind(enum.Enum):
    SCHEME1_NORM = "scheme1_norm"  # ||phi(x)||^2
    SCHEME2_RESIDUAL = "scheme2_residual"  # ||phi(x) - x||^2
    COERCIVE_SKIP = "coercive_skip"  # ||phi(x) - x||^2 + ||x||^2

    @classmethod
    def parse(cls, value) -> "RegularizerKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            names = ", ".join(k.value for k in cls)
            raise ValueError(f"unknown regularizer kind {value!r} (expected one of {names})") from None


def default_kind(scheme: int) -> RegularizerKind:
    return RegularizerKind.SCHEME1_NORM if scheme == 1 else RegularizerKind.SCHEME2_RESIDUAL


@dataclass(frozen=True)
class NettConfig:
    s: float = 1.0
    alpha: float = 0.01
    iterations: int = 30
    regularizer: str = "scheme2_residual"
    init: str = "pinv"
    record_every: int = 1
    factor: int = 4
    divergence_ratio: float = 1e6

    def __post_init__(self):
        if self.s <= 0:
            raise ValueError("step size s must be > 0")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")
        if self.init not in ("pinv", "bilinear"):
            raise ValueError(f"unknown init {self.init!r}")
        RegularizerKind.parse(self.regularizer)

    @property
    def kind(self) -> RegularizerKind:
        return RegularizerKind.parse(self.regularizer)


class NettDivergence(RuntimeError):
    def __init__(self, message: str, trace: "MetricTrace"):
        super().__init__(message)
        self.trace = trace


# ---------------------------------------------------------------------------
# regularizer


def _reg_graph(kind: RegularizerKind, weights: WeightStore, xt: Tensor) -> Tensor:
    out = forward(weights, xt)
    if kind is RegularizerKind.SCHEME1_NORM:
        return sum_squares(out)
    resid = sum_squares(sub(out, xt))
    if kind is RegularizerKind.COERCIVE_SKIP:
        return add(resid, sum_squares(xt))
    return resid


def _as_batch(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        return x[None, None]
    if x.ndim == 3:
        return x[:, None]
    raise ValueError(f"expected H x W or N x H x W depth, got shape {x.shape}")


def regularizer_value(kind, weights: WeightStore, x: np.ndarray) -> float:
    kind = RegularizerKind.parse(kind)
    return _reg_graph(kind, weights, Tensor(_as_batch(x))).item()


def per_sample_values(kind, weights: WeightStore, x: np.ndarray) -> np.ndarray:
    """R evaluated separately for each image of an N x H x W stack."""
    kind = RegularizerKind.parse(kind)
    xb = _as_batch(x)
    out = forward(weights, Tensor(xb)).data
    if kind is RegularizerKind.SCHEME1_NORM:
        return np.sum(out ** 2, axis=(1, 2, 3))
    vals = np.sum((out - xb) ** 2, axis=(1, 2, 3))
    if kind is RegularizerKind.COERCIVE_SKIP:
        vals = vals + np.sum(xb ** 2, axis=(1, 2, 3))
    return vals


def regularizer_value_and_grad(kind, weights: WeightStore, x: np.ndarray) -> tuple[float, np.ndarray]:
    """R(x) and dR/dx by reverse mode through the network (weights frozen).

    For an N x H x W stack the value is the sum over images; since images do
    not interact, the gradient slices are the per-image gradients.
    """
    kind = RegularizerKind.parse(kind)
    x = np.asarray(x, dtype=np.float64)
    xt = Tensor(_as_batch(x), requires_grad=True)
    val = _reg_graph(kind, weights, xt)
    backward(val)
    return val.item(), xt.grad.reshape(x.shape)


# ---------------------------------------------------------------------------
# solver


@dataclass
class MetricTrace:
    iteration: list[int] = field(default_factory=list)
    data_term: list[float] = field(default_factory=list)
    reg_term: list[float] = field(default_factory=list)
    functional: list[float] = field(default_factory=list)
    rmse_d: list[float] = field(default_factory=list)
    rmse_v: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.iteration)

    def append(self, k, data, reg, func, rd=float("nan"), rv=float("nan")) -> None:
        if self.iteration and k <= self.iteration[-1]:
            raise ValueError("trace iterations must increase")
        self.iteration.append(k)
        self.data_term.append(data)
        self.reg_term.append(reg)
        self.functional.append(func)
        self.rmse_d.append(rd)
        self.rmse_v.append(rv)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iter", "data_term", "reg_term", "functional", "rmse_d", "rmse_v"])
        for row in zip(self.iteration, self.data_term, self.reg_term, self.functional, self.rmse_d, self.rmse_v):
            w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
        return buf.getvalue()


def data_term(x: np.ndarray, y: np.ndarray, factor: int) -> float:
    r = box_downsample(x, factor) - y
    return 0.5 * float(np.sum(r * r))


def nett_step(x: np.ndarray, y: np.ndarray, weights: WeightStore, cfg: NettConfig) -> np.ndarray:
    """Data step x_a = x - s F^T(F x - y), then x' = x_a - s alpha grad R(x_a)."""
    x = np.asarray(x, dtype=np.float64)
    fx = box_downsample(x, cfg.factor)
    if fx.shape != np.shape(y):
        raise ValueError(f"F(x) has shape {fx.shape} but y has {np.shape(y)}")
    xa = x - cfg.s * adjoint_upsample(fx - y, cfg.factor)
    if cfg.alpha == 0:
        return xa
    _, g = regularizer_value_and_grad(cfg.kind, weights, xa)
    out = xa - (cfg.s * cfg.alpha) * g
    if not np.isfinite(out).all():
        raise NonFiniteError("regularizer step produced non-finite values")
    return out


def initial_guess(y: np.ndarray, cfg: NettConfig) -> np.ndarray:
    return upsample(y, SamplerSpec(cfg.factor, upsample=cfg.init))


def nett_optimize(
    y: np.ndarray,
    weights: WeightStore,
    cfg: NettConfig,
    gt: Optional[np.ndarray] = None,
    render_spec: metrics.RenderSpec = metrics.RenderSpec(),
) -> tuple[np.ndarray, MetricTrace]:
    """Run ``cfg.iterations`` NETT steps from the upsampled observation.

    Rows are recorded at iteration 0, every ``record_every`` steps and at the
    final iteration. Iterates are never clamped.
    """
    kind = cfg.kind
    trace = MetricTrace()

    def record(k: int, x: np.ndarray) -> float:
        d = data_term(x, y, cfg.factor)
        r = regularizer_value(kind, weights, x)
        f = d + cfg.alpha * r
        if gt is not None:
            trace.append(k, d, r, f, metrics.rmse_d(x, gt), metrics.rmse_v(x, gt, render_spec))
        else:
            trace.append(k, d, r, f)
        return f

    x = initial_guess(y, cfg)
    f0 = record(0, x)
    limit = cfg.divergence_ratio * max(f0, 1e-12)
    for k in range(1, cfg.iterations + 1):
        try:
            x = nett_step(x, y, weights, cfg)
        except NonFiniteError as exc:
            raise NettDivergence(f"non-finite iterate at iteration {k}: {exc}", trace) from exc
        if k % cfg.record_every == 0 or k == cfg.iterations:
            f = record(k, x)
            if not np.isfinite(f) or f > limit:
                raise NettDivergence(f"functional {f:.3g} exceeded {limit:.3g} at iteration {k}", trace)
    return x, trace


def coercivity_probe(kind, weights: WeightStore, x0: np.ndarray, scales: Sequence[float]) -> list[tuple[float, float, float]]:
    """Rows (t, R(t x0), R(t x0) / t^2) along the ray through x0."""
    scales = [float(t) for t in scales]
    if any(t <= 0 for t in scales) or any(b <= a for a, b in zip(scales, scales[1:])):
        raise ValueError("scales must be positive and strictly ascending")
    rows = []
    for t in scales:
        r = regularizer_value(kind, weights, t * np.asarray(x0, dtype=np.float64))
        rows.append((t, r, r / (t * t)))
    return rows


def correlate_trace(trace: MetricTrace) -> tuple[Optional[float], Optional[float]]:
    """Pearson(functional, RMSE_d) and Pearson(functional, RMSE_v); None if undefined."""
    rows = [i for i, v in enumerate(trace.rmse_d) if np.isfinite(v)]
    if len(rows) < 3:
        raise ValueError("need at least 3 trace rows with ground-truth metrics")
    func = [trace.functional[i] for i in rows]
    return (
        metrics.pearson(func, [trace.rmse_d[i] for i in rows]),
        metrics.pearson(func, [trace.rmse_v[i] for i in rows]),
    )


# ---------------------------------------------------------------------------
# diagnostics


@dataclass
class CrossTermReport:
    samples: int
    holds_fraction: float  # ||phi(x1)-x1||^2 >= ||phi(x~)-x~||^2
    cross_nonneg_fraction: float  # <phi(x~)-x~, s*alpha*grad R(x~)> >= 0
    mean_before: float
    mean_after: float
    mean_cross: float


def crossterm_audit(weights: WeightStore, approximations: np.ndarray, s_alpha: float = 0.001, batch: int = 32) -> CrossTermReport:
    """Measure how often one small regularizer step increases the residual.

    ``approximations`` is an N x H x W stack of upsampled inputs x~.
    """
    xs = np.asarray(approximations, dtype=np.float64)
    before, after, cross = [], [], []
    for lo in range(0, len(xs), batch):
        xt = xs[lo:lo + batch]
        _, g = regularizer_value_and_grad(RegularizerKind.SCHEME2_RESIDUAL, weights, xt)
        x1 = xt - s_alpha * g
        r0 = forward(weights, Tensor(xt[:, None])).data[:, 0] - xt
        before.extend(np.sum(r0 ** 2, axis=(1, 2)))
        after.extend(per_sample_values(RegularizerKind.SCHEME2_RESIDUAL, weights, x1))
        cross.extend(np.sum(r0 * (s_alpha * g), axis=(1, 2)))
    before, after, cross = map(np.asarray, (before, after, cross))
    return CrossTermReport(
        samples=len(xs),
        holds_fraction=float(np.mean(after >= before)),
        cross_nonneg_fraction=float(np.mean(cross >= 0)),
        mean_before=float(before.mean()),
        mean_after=float(after.mean()),
        mean_cross=float(cross.mean()),
    )


def grid_search(
    observations: Sequence[np.ndarray],
    truths: Sequence[np.ndarray],
    weights: WeightStore,
    cfg: NettConfig,
    s_values: Sequence[float],
    alpha_values: Sequence[float],
) -> list[tuple[float, float, float]]:
    """Mean final RMSE_d for each (s, alpha); sorted best first. Diverged runs score inf."""
    results = []
    for s, alpha in itertools.product(s_values, alpha_values):
        c = replace(cfg, s=s, alpha=alpha)
        errs = []
        for y, gt in zip(observations, truths):
            try:
                x, _ = nett_optimize(y, weights, c, gt)
                errs.append(metrics.rmse_d(x, gt))
            except NettDivergence:
                errs.append(float("inf"))
        results.append((s, alpha, float(np.mean(errs))))
    return sorted(results, key=lambda r: r[2])
