"""Declarative U-Net-style regularizer networks, their weights and checkpoints."""

from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import binfmt
from .tensor import (
    Tensor,
    add,
    concat_channels,
    conv2d,
    leaky_relu,
    maxpool2d,
    upsample_nearest2x,
)

LAYER_KINDS = ("conv", "leaky_relu", "maxpool", "upsample", "concat")
MAGIC = b"NETTCKPT"
VERSION = 1


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    name: str
    out_channels: int = 0  # conv only
    kernel: int = 3  # conv only
    source: str = ""  # concat only: name of an earlier layer


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple[LayerSpec, ...]
    in_channels: int = 1
    out_channels: int = 1
    final_skip: bool = False
    slope: float = 0.1

    def to_json(self) -> str:
        d = asdict(self)
        d["layers"] = [asdict(layer) for layer in self.layers]
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "NetworkSpec":
        d = json.loads(text)
        d["layers"] = tuple(LayerSpec(**layer) for layer in d["layers"])
        return cls(**d)

    @property
    def pool_count(self) -> int:
        return sum(1 for layer in self.layers if layer.kind == "maxpool")


def tiny_unet(final_skip: bool = False, slope: float = 0.1, widths: tuple[int, int, int] = (8, 16, 32)) -> NetworkSpec:
    """Two-level encoder/decoder with 3x3 convs, concat skips and a 1x1 head."""
    w1, w2, w3 = widths
    L = LayerSpec

    def block(prefix: str, ch: int) -> list[LayerSpec]:
        return [
            L("conv", f"{prefix}a", ch), L("leaky_relu", f"{prefix}a_act"),
            L("conv", f"{prefix}b", ch), L("leaky_relu", f"{prefix}b_act"),
        ]

    layers = (
        block("enc1", w1) + [L("maxpool", "pool1")]
        + block("enc2", w2) + [L("maxpool", "pool2")]
        + block("mid", w3)
        + [L("upsample", "up2"), L("concat", "cat2", source="enc2b_act")] + block("dec2", w2)
        + [L("upsample", "up1"), L("concat", "cat1", source="enc1b_act")] + block("dec1", w1)
        + [L("conv", "head", 1, kernel=1)]
    )
    return NetworkSpec(tuple(layers), 1, 1, final_skip, slope)


PRESETS = {"tiny-unet": tiny_unet}


def param_shapes(spec: NetworkSpec) -> dict[str, tuple[int, ...]]:
    """Validate the channel/scale chain and return parameter shapes in layer order."""
    if not spec.layers:
        raise SpecError("network spec has no layers")
    if not 0 < spec.slope < 1:
        raise SpecError(f"leaky ReLU slope must lie in (0, 1), got {spec.slope}")
    ch, level = spec.in_channels, 0
    seen: dict[str, tuple[int, int]] = {}
    shapes: dict[str, tuple[int, ...]] = {}
    for layer in spec.layers:
        if layer.kind not in LAYER_KINDS:
            raise SpecError(f"layer {layer.name!r}: unknown kind {layer.kind!r}")
        if layer.name in seen:
            raise SpecError(f"layer {layer.name!r}: duplicate name")
        if layer.kind == "conv":
            if layer.out_channels < 1 or layer.kernel < 1 or layer.kernel % 2 == 0:
                raise SpecError(f"layer {layer.name!r}: need out_channels >= 1 and an odd kernel")
            shapes[f"{layer.name}.weight"] = (layer.out_channels, ch, layer.kernel, layer.kernel)
            shapes[f"{layer.name}.bias"] = (layer.out_channels,)
            ch = layer.out_channels
        elif layer.kind == "maxpool":
            level += 1
        elif layer.kind == "upsample":
            level -= 1
            if level < 0:
                raise SpecError(f"layer {layer.name!r}: upsample without a matching pool")
        elif layer.kind == "concat":
            if layer.source not in seen:
                raise SpecError(f"layer {layer.name!r}: skip source {layer.source!r} is not an earlier layer")
            src_ch, src_level = seen[layer.source]
            if src_level != level:
                raise SpecError(f"layer {layer.name!r}: skip source {layer.source!r} is at a different scale")
            ch += src_ch
        seen[layer.name] = (ch, level)
    if level != 0:
        raise SpecError(f"network ends at scale level {level}; pools and upsamples must balance")
    if ch != spec.out_channels:
        raise SpecError(f"final layer {spec.layers[-1].name!r} yields {ch} channels, spec says {spec.out_channels}")
    if spec.final_skip and spec.in_channels != spec.out_channels:
        raise SpecError("final skip needs equal input and output channels")
    return shapes


@dataclass
class WeightStore:
    spec: NetworkSpec
    params: dict[str, np.ndarray]
    seed: int = 0

    def copy(self) -> "WeightStore":
        return WeightStore(self.spec, {k: v.copy() for k, v in self.params.items()}, self.seed)

    def tensors(self, requires_grad: bool = False) -> dict[str, Tensor]:
        return {k: Tensor(v, requires_grad=requires_grad, name=k) for k, v in self.params.items()}

    @property
    def num_params(self) -> int:
        return sum(v.size for v in self.params.values())

    def zeros_like(self) -> "WeightStore":
        return WeightStore(self.spec, {k: np.zeros_like(v) for k, v in self.params.items()}, self.seed)


def build_network(spec: NetworkSpec, seed: int = 0) -> WeightStore:
    """He fan-in initialisation adjusted for the leaky-ReLU slope; zero biases.

    With a final skip the last conv starts at zero, so the untrained network
    is exactly the identity map.
    """
    shapes = param_shapes(spec)
    rng = np.random.default_rng(seed)
    gain = np.sqrt(2.0 / (1.0 + spec.slope ** 2))
    params = {}
    for name, shape in shapes.items():
        if name.endswith(".bias"):
            params[name] = np.zeros(shape)
        else:
            fan_in = shape[1] * shape[2] * shape[3]
            params[name] = rng.normal(0.0, gain / np.sqrt(fan_in), size=shape)
    if spec.final_skip:
        head = [layer.name for layer in spec.layers if layer.kind == "conv"][-1]
        params[f"{head}.weight"][:] = 0.0
    return WeightStore(spec, params, seed)


def forward(weights: WeightStore, x: Tensor, params: Optional[dict[str, Tensor]] = None) -> Tensor:
    """Run the network on an N x C x H x W tensor.

    ``params`` lets the caller pass weight tensors that require grad; without
    it the weights are treated as constants and only ``x`` can receive grads.
    """
    spec = weights.spec
    if x.data.ndim != 4 or x.shape[1] != spec.in_channels:
        raise SpecError(f"network expects N x {spec.in_channels} x H x W input, got {x.shape}")
    div = 2 ** spec.pool_count
    if x.shape[2] % div or x.shape[3] % div:
        raise SpecError(f"input spatial dims {x.shape[2:]} must be divisible by {div}")
    if params is None:
        params = weights.tensors(requires_grad=False)
    outputs: dict[str, Tensor] = {}
    h = x
    for layer in spec.layers:
        if layer.kind == "conv":
            h = conv2d(h, params[f"{layer.name}.weight"], params[f"{layer.name}.bias"], 1, layer.kernel // 2)
        elif layer.kind == "leaky_relu":
            h = leaky_relu(h, spec.slope)
        elif layer.kind == "maxpool":
            h = maxpool2d(h)
        elif layer.kind == "upsample":
            h = upsample_nearest2x(h)
        else:
            h = concat_channels(h, outputs[layer.source])
        outputs[layer.name] = h
    if spec.final_skip:
        h = add(h, x)
    return h


def apply(weights: WeightStore, images: np.ndarray) -> np.ndarray:
    """Convenience: network output for a stack of H x W images (or a single one)."""
    arr = np.asarray(images, dtype=np.float64)
    single = arr.ndim == 2
    batch = arr[None, None] if single else arr[:, None]
    out = forward(weights, Tensor(batch)).data[:, 0]
    return out[0] if single else out


# ---------------------------------------------------------------------------
# checkpoints


class CheckpointError(Exception):
    code = "checkpoint-error"


class BadMagicError(CheckpointError):
    code = "bad-magic"


class VersionMismatchError(CheckpointError):
    code = "version-mismatch"


class CorruptCheckpointError(CheckpointError):
    code = "corrupt"


class ShapeMismatchError(CheckpointError):
    code = "shape-mismatch"


def save_checkpoint(weights: WeightStore, path) -> None:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(weights.params)))
    for name, arr in weights.params.items():
        binfmt.write_entry(buf, name, arr)
    meta = json.dumps({"seed": weights.seed, "spec": json.loads(weights.spec.to_json())}, sort_keys=True).encode()
    buf.write(struct.pack("<I", len(meta)))
    buf.write(meta)
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path, expected: Optional[NetworkSpec] = None) -> WeightStore:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise BadMagicError(f"{path}: not a checkpoint (bad magic)")
    fh = io.BytesIO(data[8:])
    try:
        version, count = struct.unpack("<II", binfmt._read_exact(fh, 8))
        if version != VERSION:
            raise VersionMismatchError(f"{path}: checkpoint version {version}, expected {VERSION}")
        params = {}
        for _ in range(count):
            name, arr = binfmt.read_entry(fh)
            params[name] = arr
        (meta_len,) = struct.unpack("<I", binfmt._read_exact(fh, 4))
        meta = json.loads(binfmt._read_exact(fh, meta_len).decode("utf-8"))
        if fh.read(1):
            raise CorruptCheckpointError(f"{path}: corrupt checkpoint (trailing bytes)")
        spec = NetworkSpec.from_json(json.dumps(meta["spec"]))
    except (binfmt.TruncatedError, ValueError, KeyError, TypeError, struct.error) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CorruptCheckpointError(f"{path}: corrupt checkpoint ({exc})") from exc

    target = expected if expected is not None else spec
    shapes = param_shapes(target)
    for name, shape in shapes.items():
        got = params.get(name)
        if got is None or got.shape != shape:
            layer = name.split(".")[0]
            raise ShapeMismatchError(
                f"{path}: shape mismatch at layer {layer!r}: "
                f"expected {shape}, checkpoint has {None if got is None else got.shape}"
            )
    if set(params) != set(shapes):
        extra = sorted(set(params) - set(shapes))
        raise ShapeMismatchError(f"{path}: shape mismatch, unexpected entries {extra}")
    return WeightStore(target, {k: params[k] for k in shapes}, int(meta.get("seed", 0)))
