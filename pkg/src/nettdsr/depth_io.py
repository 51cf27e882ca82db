"""Reading and writing depth maps (16-bit PNG, PFM, raw tensors) and run manifests."""

from __future__ import annotations

import hashlib
import io
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import binfmt

logger = logging.getLogger(__name__)

FORMATS = ("png16", "pfm", "raw")


class DepthFormatError(ValueError):
    code = "malformed"


class ChannelError(DepthFormatError):
    code = "channels"


class NonFiniteDepthError(DepthFormatError):
    code = "non-finite"


@dataclass
class WriteStats:
    clamped: int = 0


_stats = WriteStats()


def clamp_count() -> int:
    """Number of png16 pixels clamped into [0, 1] since import."""
    return _stats.clamped


def guess_format(path) -> str:
    suffix = Path(path).suffix.lower()
    return {".png": "png16", ".pfm": "pfm"}.get(suffix, "raw")


# ---------------------------------------------------------------------------
# png16


def _write_png16(img: np.ndarray, path: Path) -> None:
    bad = (img < 0) | (img > 1)
    n_bad = int(bad.sum())
    if n_bad:
        _stats.clamped += n_bad
        logger.warning("png16: clamped %d out-of-range values writing %s", n_bad, path)
    q = np.round(np.clip(img, 0.0, 1.0) * 65535.0).astype(np.uint16)
    Image.fromarray(q).save(path, format="PNG")


def _read_png16(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode not in ("I;16", "I;16B", "I;16L", "I", "L"):
            raise ChannelError(f"{path}: expected single channel depth PNG, got mode {im.mode}")
        arr = np.array(im)
        mode = im.mode
    if arr.ndim != 2:
        raise ChannelError(f"{path}: expected single channel depth PNG")
    scale = 255.0 if mode == "L" else 65535.0
    return arr.astype(np.float64) / scale


# ---------------------------------------------------------------------------
# pfm


def _write_pfm(img: np.ndarray, path: Path) -> None:
    h, w = img.shape
    header = f"Pf\n{w} {h}\n-1.0\n".encode("ascii")
    body = np.flipud(img).astype("<f4").tobytes()
    path.write_bytes(header + body)


def _read_pfm(path: Path) -> np.ndarray:
    data = path.read_bytes()
    fh = io.BytesIO(data)
    tag = fh.readline().strip()
    if tag == b"PF":
        raise ChannelError(f"{path}: expected single channel PFM (Pf), got colour PF")
    if tag != b"Pf":
        raise DepthFormatError(f"{path}: malformed PFM header {tag[:16]!r}")
    dims = re.match(rb"^\s*(\d+)\s+(\d+)\s*$", fh.readline())
    if not dims:
        raise DepthFormatError(f"{path}: malformed PFM dimensions")
    w, h = int(dims.group(1)), int(dims.group(2))
    try:
        scale = float(fh.readline().strip())
    except ValueError:
        raise DepthFormatError(f"{path}: malformed PFM scale line") from None
    if scale == 0:
        raise DepthFormatError(f"{path}: PFM scale must be non-zero")
    dtype = "<f4" if scale < 0 else ">f4"
    raw = fh.read()
    if len(raw) != 4 * w * h:
        raise DepthFormatError(f"{path}: PFM body has {len(raw)} bytes, expected {4 * w * h}")
    arr = np.flipud(np.frombuffer(raw, dtype=dtype).reshape(h, w)).astype(np.float64)
    if not np.isfinite(arr).all():
        raise NonFiniteDepthError(f"{path}: PFM contains non-finite values")
    return arr


# ---------------------------------------------------------------------------
# raw tensor


def _write_raw(img: np.ndarray, path: Path, name: str = "depth") -> None:
    buf = io.BytesIO()
    binfmt.write_entry(buf, name, img)
    path.write_bytes(buf.getvalue())


def _read_raw(path: Path) -> np.ndarray:
    try:
        with open(path, "rb") as fh:
            _, arr = binfmt.read_entry(fh)
            if fh.read(1):
                raise DepthFormatError(f"{path}: trailing bytes after tensor entry")
    except (binfmt.TruncatedError, UnicodeDecodeError) as exc:
        raise DepthFormatError(f"{path}: malformed raw tensor ({exc})") from exc
    if arr.ndim != 2:
        raise ChannelError(f"{path}: expected a 2-D depth tensor, got shape {arr.shape}")
    return arr


def read_depth(path, fmt: str | None = None) -> np.ndarray:
    path = Path(path)
    fmt = fmt or guess_format(path)
    if fmt == "png16":
        return _read_png16(path)
    if fmt == "pfm":
        return _read_pfm(path)
    if fmt == "raw":
        return _read_raw(path)
    raise ValueError(f"unknown depth format {fmt!r}")


def write_depth(img: np.ndarray, path, fmt: str | None = None) -> None:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"depth image must be 2-D, got shape {img.shape}")
    if not np.isfinite(img).all():
        raise NonFiniteDepthError("refusing to write non-finite depth values")
    path = Path(path)
    fmt = fmt or guess_format(path)
    if fmt == "png16":
        _write_png16(img, path)
    elif fmt == "pfm":
        _write_pfm(img, path)
    elif fmt == "raw":
        _write_raw(img, path)
    else:
        raise ValueError(f"unknown depth format {fmt!r}")


def write_gray8(img: np.ndarray, path) -> None:
    q = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(q).save(Path(path), format="PNG")


# ---------------------------------------------------------------------------
# manifests


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class RunManifest:
    name: str
    config: str = ""  # resolved config snapshot text
    files: dict[str, str] = field(default_factory=dict)  # relative path -> sha256

    def add(self, root, rel: str) -> None:
        self.files[rel] = sha256(Path(root) / rel)

    def write(self, root) -> Path:
        lines = [f"run {self.name}"]
        lines += [f"file {rel} {digest}" for rel, digest in sorted(self.files.items())]
        out = Path(root) / "manifest.txt"
        out.write_text("\n".join(lines) + "\n")
        return out

    @classmethod
    def read(cls, root) -> "RunManifest":
        text = (Path(root) / "manifest.txt").read_text().splitlines()
        if not text or not text[0].startswith("run "):
            raise DepthFormatError(f"{root}: malformed manifest")
        m = cls(text[0][4:])
        for line in text[1:]:
            kind, rel, digest = line.split(" ")
            if kind == "file":
                m.files[rel] = digest
        return m

    def verify(self, root) -> bool:
        return all((Path(root) / rel).exists() and sha256(Path(root) / rel) == d for rel, d in self.files.items())
