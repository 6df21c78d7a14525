"""Speed-coloured raster (binary PPM) and vector (SVG) diagrams.

Time runs left to right and space bottom to top, one square block per cell.
"""
from __future__ import annotations

from dataclasses import dataclass
from xml.sax.saxutils import escape

import numpy as np

from .grid import SpeedField

RGB = tuple[int, int, int]


@dataclass(frozen=True)
class ColorMap:
    stops: tuple[tuple[float, RGB], ...]
    absent: RGB = (128, 128, 128)

    def colors(self, speeds: np.ndarray) -> np.ndarray:
        """``uint8`` RGB for each speed; NaN maps to ``absent``."""
        v = np.asarray(speeds, dtype=float)
        xs = np.array([s for s, _ in self.stops])
        cols = np.array([c for _, c in self.stops], dtype=float)
        filled = np.where(np.isnan(v), xs[0], v)
        out = np.empty(v.shape + (3,), dtype=np.uint8)
        for ch in range(3):
            # np.interp holds the end colours outside the stop range
            out[..., ch] = np.floor(np.interp(filled, xs, cols[:, ch]) + 0.5).astype(np.uint8)
        out[np.isnan(v)] = self.absent
        return out

    def color(self, speed: float | None) -> RGB:
        c = self.colors(np.array([np.nan if speed is None else speed]))[0]
        return (int(c[0]), int(c[1]), int(c[2]))


SPEED_COLORS = ColorMap((
    (0.0, (178, 24, 43)),
    (30.0, (239, 138, 98)),
    (50.0, (253, 219, 199)),
    (70.0, (161, 217, 155)),
    (90.0, (35, 139, 69)),
))


def _image(field: SpeedField, style: ColorMap, block: int) -> np.ndarray:
    if block < 1:
        raise ValueError("block size must be >= 1")
    rgb = style.colors(field.cells)  # (nt, nx, 3)
    img = np.transpose(rgb[:, ::-1], (1, 0, 2))  # rows = space, top row = highest
    return np.repeat(np.repeat(img, block, axis=0), block, axis=1)


def render_heatmap(field: SpeedField, style: ColorMap = SPEED_COLORS, block: int = 8) -> bytes:
    """Binary PPM (P6) image bytes."""
    img = _image(field, style, block)
    h, w, _ = img.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(img).tobytes()


def read_ppm(data: bytes) -> np.ndarray:
    """Decode a P6 image produced by :func:`render_heatmap` into ``(h, w, 3)``."""
    parts = data.split(b"\n", 3)
    if parts[0] != b"P6":
        raise ValueError("not a binary PPM")
    w, h = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w, 3)


def render_svg(field: SpeedField, style: ColorMap = SPEED_COLORS, block: int = 8,
               legend: bool = True, title: str | None = None) -> str:
    """SVG 1.1 document with the same cell colours as the PPM plus a speed legend."""
    nt, nx = field.spec.shape
    rgb = style.colors(field.cells)
    w, h = nt * block, nx * block
    legend_w = 90 if legend else 0
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w + legend_w}" '
        f'height="{max(h, 130 if legend else 0)}" shape-rendering="crispEdges">',
    ]
    if title:
        out.append(f"<title>{escape(title)}</title>")
    for a in range(nt):
        for b in range(nx):
            r, g, bl = rgb[a, b]
            y = (nx - 1 - b) * block
            out.append(f'<rect x="{a * block}" y="{y}" width="{block}" height="{block}" '
                       f'fill="#{r:02x}{g:02x}{bl:02x}"/>')
    if legend:
        x0 = w + 10
        out.append('<g font-family="sans-serif" font-size="10">')
        out.append(f'<text x="{x0}" y="12">speed (km/h)</text>')
        entries = [(f"{s:g}" + ("+" if i == len(style.stops) - 1 else ""), c)
                   for i, (s, c) in enumerate(style.stops)]
        entries.append(("no data", style.absent))
        for i, (label, (r, g, bl)) in enumerate(entries):
            y = 20 + 16 * i
            out.append(f'<rect x="{x0}" y="{y}" width="12" height="12" fill="#{r:02x}{g:02x}{bl:02x}"/>')
            out.append(f'<text x="{x0 + 16}" y="{y + 10}">{escape(label)}</text>')
        out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"
