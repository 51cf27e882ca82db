"""Per-pixel depth error and the shading-based visual error."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RenderSpec:
    light: tuple[float, float, float] = (0.0, 0.0, 1.0)
    aspect: float = 1.0  # multiplies per-pixel depth differences

    def __post_init__(self):
        n = float(np.linalg.norm(self.light))
        if n == 0:
            raise ValueError("light direction must be non-zero")
        if abs(n - 1.0) > 1e-12:
            object.__setattr__(self, "light", tuple(float(c) / n for c in self.light))


def _check_same(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"depth maps differ in shape: {a.shape} vs {b.shape}")


def rmse_d(x: np.ndarray, gt: np.ndarray) -> float:
    x, gt = np.asarray(x, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    _check_same(x, gt)
    return float(np.sqrt(np.mean((x - gt) ** 2)))


def render(x: np.ndarray, spec: RenderSpec = RenderSpec()) -> np.ndarray:
    """Lambertian shading of the depth surface; values in [0, 1].

    Normals come from central differences on an edge-replicated copy of the
    depth map: n = normalize(-dz/du, -dz/dv, 1).
    """
    z = np.asarray(x, dtype=np.float64)
    if z.ndim != 2 or min(z.shape) < 2:
        raise ValueError(f"render needs an H x W map with H, W >= 2, got {z.shape}")
    zp = np.pad(z, 1, mode="edge")
    dzdu = spec.aspect * (zp[1:-1, 2:] - zp[1:-1, :-2]) / 2.0
    dzdv = spec.aspect * (zp[2:, 1:-1] - zp[:-2, 1:-1]) / 2.0
    norm = np.sqrt(dzdu ** 2 + dzdv ** 2 + 1.0)
    lx, ly, lz = spec.light
    shade = (-dzdu * lx - dzdv * ly + lz) / norm
    return np.clip(shade, 0.0, 1.0)


def rmse_v(x: np.ndarray, gt: np.ndarray, spec: RenderSpec = RenderSpec()) -> float:
    _check_same(np.asarray(x), np.asarray(gt))
    return rmse_d(render(x, spec), render(gt, spec))


def pearson(a, b) -> float | None:
    """Pearson correlation, or None when either series is constant."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    da, db = a - a.mean(), b - b.mean()
    na, nb = np.sqrt(np.sum(da * da)), np.sqrt(np.sum(db * db))
    for series, spread in ((a, na), (b, nb)):
        if spread <= 1e-12 * max(np.abs(series).max(), 1e-300) * np.sqrt(series.size):
            return None
    r = float(np.sum(da * db) / (na * nb))
    return max(-1.0, min(1.0, r))
