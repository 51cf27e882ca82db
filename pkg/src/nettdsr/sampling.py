"""Box downsampling F, its right inverse F+, its adjoint F^T and a bilinear upsampler.

Depth images are plain 2-D float64 arrays (H x W). All functions also accept
leading batch axes; the last two axes are the spatial ones.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SamplerSpec:
    factor: int = 4
    downsample: str = "box"
    upsample: str = "pinv"  # "pinv" (replication) or "bilinear"

    def __post_init__(self):
        if self.factor < 2:
            raise ValueError(f"sampling factor must be >= 2, got {self.factor}")
        if self.downsample != "box":
            raise ValueError(f"unknown downsample kind {self.downsample!r}")
        if self.upsample not in ("pinv", "bilinear"):
            raise ValueError(f"unknown upsample kind {self.upsample!r}")


def box_downsample(x: np.ndarray, factor: int = 4) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    h, w = x.shape[-2:]
    if h % factor or w % factor:
        raise ValueError(f"image dims {h}x{w} not divisible by factor {factor}")
    lead = x.shape[:-2]
    blocks = x.reshape(*lead, h // factor, factor, w // factor, factor)
    return blocks.mean(axis=(-3, -1))


def pseudo_inverse_upsample(y: np.ndarray, factor: int = 4) -> np.ndarray:
    """Nearest replication; F(F+(y)) == y exactly."""
    y = np.asarray(y, dtype=np.float64)
    return y.repeat(factor, axis=-2).repeat(factor, axis=-1)


def adjoint_upsample(r: np.ndarray, factor: int = 4) -> np.ndarray:
    """F^T: replication scaled by 1/factor^2, so <F x, y> == <x, F^T y>."""
    return pseudo_inverse_upsample(r, factor) / float(factor * factor)


def _bilinear_axis(n: int, factor: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # half-pixel centres: output i samples input coordinate (i + 0.5) / factor - 0.5
    src = (np.arange(n * factor) + 0.5) / factor - 0.5
    src = np.clip(src, 0.0, n - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n - 1)
    return lo, hi, src - lo


def bilinear_upsample(y: np.ndarray, factor: int = 4) -> np.ndarray:
    """Bilinear interpolation with half-pixel centres and edge replication."""
    y = np.asarray(y, dtype=np.float64)
    h, w = y.shape[-2:]
    r0, r1, rt = _bilinear_axis(h, factor)
    c0, c1, ct = _bilinear_axis(w, factor)
    rows = y[..., r0, :] * (1.0 - rt)[:, None] + y[..., r1, :] * rt[:, None]
    return rows[..., c0] * (1.0 - ct) + rows[..., c1] * ct


def upsample(y: np.ndarray, spec: SamplerSpec) -> np.ndarray:
    if spec.upsample == "bilinear":
        return bilinear_upsample(y, spec.factor)
    return pseudo_inverse_upsample(y, spec.factor)


def approximation(x: np.ndarray, spec: SamplerSpec) -> np.ndarray:
    """Low-resolution round trip: upsample(F(x))."""
    return upsample(box_downsample(x, spec.factor), spec)
