"""Bare-bones line and scatter charts drawn with PIL; the CSVs stay the source of truth."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image, ImageDraw

COLORS = [(31, 119, 180), (214, 39, 40), (44, 160, 44), (148, 103, 189)]


def _frame(values_x, values_y, size, margin):
    xs = np.asarray(values_x, dtype=np.float64)
    ys = np.asarray(values_y, dtype=np.float64)
    finite = np.isfinite(xs) & np.isfinite(ys)
    xs, ys = xs[finite], ys[finite]
    w, h = size
    x0, x1 = (xs.min(), xs.max()) if xs.size else (0.0, 1.0)
    y0, y1 = (ys.min(), ys.max()) if ys.size else (0.0, 1.0)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0

    def to_px(x, y):
        px = margin + (x - x0) / (x1 - x0) * (w - 2 * margin)
        py = h - margin - (y - y0) / (y1 - y0) * (h - 2 * margin)
        return float(px), float(py)

    return to_px, (x0, x1, y0, y1)


def _canvas(size, margin, bounds, title):
    img = Image.new("RGB", size, "white")
    draw = ImageDraw.Draw(img)
    w, h = size
    draw.rectangle([margin, margin, w - margin, h - margin], outline="black")
    x0, x1, y0, y1 = bounds
    draw.text((margin, 4), title, fill="black")
    draw.text((margin, h - margin + 4), f"{x0:.3g}", fill="black")
    draw.text((w - margin - 40, h - margin + 4), f"{x1:.3g}", fill="black")
    draw.text((2, h - margin - 10), f"{y0:.3g}", fill="black")
    draw.text((2, margin), f"{y1:.3g}", fill="black")
    return img, draw


def line_chart(path, x: Sequence[float], series: dict[str, Sequence[float]], title: str = "",
               size=(480, 320), margin=40, log_y: bool = False) -> None:
    ys = {k: np.log10(np.maximum(np.asarray(v, dtype=np.float64), 1e-300)) if log_y else np.asarray(v, dtype=np.float64)
          for k, v in series.items()}
    all_x = np.concatenate([np.asarray(x, dtype=np.float64)] * len(ys)) if ys else np.asarray(x)
    all_y = np.concatenate(list(ys.values())) if ys else np.zeros(0)
    to_px, bounds = _frame(all_x, all_y, size, margin)
    img, draw = _canvas(size, margin, bounds, title + (" (log10)" if log_y else ""))
    for i, (label, vals) in enumerate(ys.items()):
        color = COLORS[i % len(COLORS)]
        pts = [to_px(a, b) for a, b in zip(x, vals) if np.isfinite(b)]
        if len(pts) > 1:
            draw.line(pts, fill=color, width=2)
        draw.text((size[0] - margin - 100, margin + 4 + 12 * i), label, fill=color)
    img.save(Path(path), format="PNG")


def scatter(path, x: Sequence[float], y: Sequence[float], title: str = "", size=(320, 320), margin=40) -> None:
    to_px, bounds = _frame(x, y, size, margin)
    img, draw = _canvas(size, margin, bounds, title)
    for a, b in zip(x, y):
        if np.isfinite(a) and np.isfinite(b):
            px, py = to_px(a, b)
            draw.ellipse([px - 2, py - 2, px + 2, py + 2], fill=COLORS[0])
    img.save(Path(path), format="PNG")


def side_by_side(images: Sequence[np.ndarray]) -> np.ndarray:
    """Concatenate equally sized grayscale images horizontally with a 2px gap."""
    h = images[0].shape[0]
    gap = np.ones((h, 2))
    parts = []
    for im in images:
        parts += [im, gap]
    return np.concatenate(parts[:-1], axis=1)
