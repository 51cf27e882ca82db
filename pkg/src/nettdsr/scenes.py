"""Synthetic depth scenes (cubes, spheres, planar patches) and training records.

Scenes are rendered orthographically: pixel (i, j) looks along +z from image
coordinates u = (j + 0.5) / W, v = (i + 0.5) / H, and the depth map keeps the
nearest hit over all primitives and a tilted background plane.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .sampling import SamplerSpec, approximation


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    height: int = 64
    width: int = 64
    cubes: tuple[int, int] = (0, 2)
    spheres: tuple[int, int] = (0, 2)
    planes: tuple[int, int] = (0, 2)
    size: tuple[float, float] = (0.12, 0.3)  # half-extent / radius, image units
    depth: tuple[float, float] = (0.3, 0.7)  # primitive centre depth
    background: tuple[float, float] = (0.8, 0.95)
    background_tilt: float = 0.1
    max_tilt_deg: float = 60.0

    def __post_init__(self):
        for name in ("cubes", "spheres", "planes", "size", "depth", "background"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"SceneSpec.{name}: empty range {lo}..{hi}")
        for name in ("cubes", "spheres", "planes"):
            if getattr(self, name)[0] < 0:
                raise ValueError(f"SceneSpec.{name}: negative count")


def _grid(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    u = (np.arange(w) + 0.5) / w
    v = (np.arange(h) + 0.5) / h
    return np.meshgrid(u, v)  # (H, W) each


def _rotation(rng: np.random.Generator, max_tilt: float) -> np.ndarray:
    # random spin about z, then a tilt of the local z-axis bounded by max_tilt
    spin = rng.uniform(0, 2 * np.pi)
    tilt = rng.uniform(0, max_tilt)
    azim = rng.uniform(0, 2 * np.pi)
    cz, sz = np.cos(spin), np.sin(spin)
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1.0]])
    ax = np.array([np.cos(azim), np.sin(azim), 0.0])
    k = np.array([[0, -ax[2], ax[1]], [ax[2], 0, -ax[0]], [-ax[1], ax[0], 0]])
    rt = np.eye(3) + np.sin(tilt) * k + (1 - np.cos(tilt)) * (k @ k)
    return rt @ rz


def sphere_depth(u, v, centre, radius) -> np.ndarray:
    cu, cv, cz = centre
    rho2 = (u - cu) ** 2 + (v - cv) ** 2
    inside = rho2 < radius * radius
    out = np.full(u.shape, np.inf)
    out[inside] = cz - np.sqrt(radius * radius - rho2[inside])
    return out


def box_depth(u, v, centre, half, rot) -> np.ndarray:
    """Entry depth of the ray (u, v, t) into an oriented box (slab test)."""
    cu, cv, cz = centre
    du, dv = u - cu, v - cv
    t_near = np.full(u.shape, -np.inf)
    t_far = np.full(u.shape, np.inf)
    for k in range(3):
        axis = rot[:, k]
        o = du * axis[0] + dv * axis[1]
        d = axis[2]
        if abs(d) < 1e-12:
            miss = np.abs(o) > half[k]
            t_near[miss] = np.inf
            continue
        t1 = (-half[k] - o) / d
        t2 = (half[k] - o) / d
        t_near = np.maximum(t_near, np.minimum(t1, t2))
        t_far = np.minimum(t_far, np.maximum(t1, t2))
    hit = t_near <= t_far
    out = np.full(u.shape, np.inf)
    out[hit] = cz + t_near[hit]
    return out


def plane_depth(u, v, centre, half, rot) -> np.ndarray:
    cu, cv, cz = centre
    e1, e2, n = rot[:, 0], rot[:, 1], rot[:, 2]
    du, dv = u - cu, v - cv
    s = -(du * n[0] + dv * n[1]) / n[2]
    q1 = du * e1[0] + dv * e1[1] + s * e1[2]
    q2 = du * e2[0] + dv * e2[1] + s * e2[2]
    inside = (np.abs(q1) <= half[0]) & (np.abs(q2) <= half[1])
    out = np.full(u.shape, np.inf)
    out[inside] = cz + s[inside]
    return out


def generate_scene(spec: SceneSpec) -> np.ndarray:
    """Z-buffered depth map in [0, 1]; a pure function of ``spec``."""
    rng = np.random.default_rng(spec.seed)
    u, v = _grid(spec.height, spec.width)
    b0 = rng.uniform(*spec.background)
    bu, bv = rng.uniform(-spec.background_tilt, spec.background_tilt, size=2)
    depth = b0 + bu * (u - 0.5) + bv * (v - 0.5)

    max_tilt = np.deg2rad(spec.max_tilt_deg)
    n_cubes = rng.integers(spec.cubes[0], spec.cubes[1] + 1)
    n_spheres = rng.integers(spec.spheres[0], spec.spheres[1] + 1)
    n_planes = rng.integers(spec.planes[0], spec.planes[1] + 1)

    def centre():
        return rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(*spec.depth)

    for _ in range(n_cubes):
        c = centre()
        half = np.full(3, rng.uniform(*spec.size))
        depth = np.minimum(depth, box_depth(u, v, c, half, _rotation(rng, np.pi)))
    for _ in range(n_spheres):
        c = centre()
        depth = np.minimum(depth, sphere_depth(u, v, c, rng.uniform(*spec.size)))
    for _ in range(n_planes):
        c = centre()
        half = rng.uniform(*spec.size, size=2)
        depth = np.minimum(depth, plane_depth(u, v, c, half, _rotation(rng, max_tilt)))
    return np.clip(depth, 0.0, 1.0)


def scene_seed(master: int, index: int) -> int:
    return int(np.random.SeedSequence([master, index]).generate_state(1)[0])


def generate_scenes(base: SceneSpec, count: int, master_seed: int, workers: int = 1) -> list[np.ndarray]:
    specs = [replace(base, seed=scene_seed(master_seed, i)) for i in range(count)]
    if workers <= 1:
        return [generate_scene(s) for s in specs]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(generate_scene, specs))  # map keeps index order


def extract_patches(image: np.ndarray, patch: int, stride: int) -> list[np.ndarray]:
    h, w = image.shape
    if patch > h or patch > w:
        raise ValueError(f"patch {patch} larger than image {h}x{w}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    out = []
    for i in range(0, h - patch + 1, stride):
        for j in range(0, w - patch + 1, stride):
            out.append(image[i:i + patch, j:j + patch].copy())
    return out


# ---------------------------------------------------------------------------
# records


@dataclass
class SampleRecord:
    input: np.ndarray
    target: np.ndarray
    subset: str  # "X0" or "X1"
    scheme: int
    aug: str = "none"
    scene: int = -1
    split: str = "train"

    def ground_truth(self) -> np.ndarray:
        if self.scheme == 1:
            return self.input + self.target
        return self.target

    def approximation(self) -> np.ndarray:
        """The clean upsampled input for X1, or the ground truth itself for X0."""
        if self.subset == "X0":
            return self.ground_truth()
        return self.input


def make_scheme_targets(triples: Iterable[tuple[np.ndarray, np.ndarray, str]], scheme: int) -> list[SampleRecord]:
    """Turn (ground truth, approximation, subset) triples into training records.

    Scheme 1 learns the residual gt - approximation (exactly zero on X0);
    scheme 2 learns to map any input to the ground truth (identity on X0).
    """
    if scheme not in (1, 2):
        raise ValueError(f"scheme must be 1 or 2, got {scheme}")
    records = []
    for gt, approx, subset in triples:
        if subset == "X0":
            inp = gt.copy()
            tgt = np.zeros_like(gt) if scheme == 1 else gt.copy()
        elif subset == "X1":
            inp = approx.copy()
            tgt = gt - approx if scheme == 1 else gt.copy()
        else:
            raise ValueError(f"unknown subset {subset!r}")
        records.append(SampleRecord(inp, tgt, subset, scheme))
    return records


def assign_subsets(n: int, fraction: float, seed: int) -> list[str]:
    """Exactly round(fraction * n) patches go to X1, chosen by a seeded permutation."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5E7]))
    chosen = rng.permutation(n)[: int(round(fraction * n))]
    tags = ["X0"] * n
    for i in chosen:
        tags[i] = "X1"
    return tags


def build_dataset(
    scenes: Sequence[np.ndarray],
    scheme: int,
    sampler: SamplerSpec,
    patch: int = 32,
    stride: int = 32,
    split_fraction: float = 0.5,
    seed: int = 0,
) -> list[SampleRecord]:
    if patch % sampler.factor:
        raise ValueError(f"patch {patch} not divisible by factor {sampler.factor}")
    gts, owners = [], []
    for k, img in enumerate(scenes):
        for p in extract_patches(img, patch, stride):
            gts.append(p)
            owners.append(k)
    subsets = assign_subsets(len(gts), split_fraction, seed)
    triples = [(gt, approximation(gt, sampler) if s == "X1" else gt, s) for gt, s in zip(gts, subsets)]
    records = make_scheme_targets(triples, scheme)
    for rec, k in zip(records, owners):
        rec.scene = k
    return records


def split_by_scene(records: list[SampleRecord], val_fraction: float, seed: int) -> None:
    """Tag records train/val so that no scene contributes to both."""
    scenes = sorted({r.scene for r in records})
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x7A1]))
    n_val = int(round(val_fraction * len(scenes)))
    val = set(np.asarray(scenes)[rng.permutation(len(scenes))[:n_val]].tolist())
    for r in records:
        r.split = "val" if r.scene in val else "train"


# ---------------------------------------------------------------------------
# augmentation


@dataclass(frozen=True)
class NoiseSpec:
    sigma: float = 0.0
    ratio: float = 1.0
    period: int = 0  # epochs between sigma decays; 0 disables the schedule
    target_rule: str = "none"  # "none" or "tenth"
    kind: str = "gaussian"

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("noise sigma must be >= 0")
        if not 0 < self.ratio <= 1:
            raise ValueError("noise ratio must lie in (0, 1]")
        if self.target_rule not in ("none", "tenth"):
            raise ValueError(f"unknown target noise rule {self.target_rule!r}")
        if self.kind != "gaussian":
            raise ValueError(f"unknown noise kind {self.kind!r}")

    def effective_sigma(self, epoch: int) -> float:
        if self.period <= 0:
            return self.sigma
        return self.sigma * self.ratio ** (epoch // self.period)


def augment(record: SampleRecord, noise: NoiseSpec, epoch: int, rng: np.random.Generator) -> SampleRecord:
    sigma = noise.effective_sigma(epoch)
    if sigma == 0:
        return record
    inp = record.input + rng.normal(0.0, sigma, size=record.input.shape)
    tgt = record.target
    if noise.target_rule == "tenth":
        tgt = tgt + rng.normal(0.0, sigma / 10.0, size=tgt.shape)
    return replace(record, input=inp, target=tgt)


def interpolation_augment(record: SampleRecord, lam: float) -> SampleRecord:
    if record.scheme != 2 or record.subset != "X1":
        raise ValueError("interpolation augmentation needs a scheme-2 X1 record")
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    inp = lam * record.target + (1.0 - lam) * record.input
    return replace(record, input=inp, aug="interp")


def gt_noise_record(record: SampleRecord, rng: np.random.Generator, sigma_rule: str = "root") -> SampleRecord:
    """Extra X0-style pair: gt plus noise whose sigma comes from the patch's approximation error."""
    if record.subset != "X1":
        raise ValueError("gt-noise pairs are derived from X1 records")
    gt = record.ground_truth()
    mse = float(np.mean((gt - record.approximation()) ** 2))
    sigma = np.sqrt(mse) if sigma_rule == "root" else mse
    inp = gt + rng.normal(0.0, sigma, size=gt.shape)
    tgt = np.zeros_like(gt) if record.scheme == 1 else gt.copy()
    return SampleRecord(inp, tgt, "X0", record.scheme, "gt-noise", record.scene, record.split)


def rotate90(record: SampleRecord, k: int) -> SampleRecord:
    if k % 4 == 0:
        return record
    return replace(record, input=np.rot90(record.input, k).copy(), target=np.rot90(record.target, k).copy())
