"""Raster (plain PGM) and vector (SVG) maps of an atlas.

Pixel values encode a membership class:

=====  =========================================================
255    inside the selected region (for ``workspace``: some aspect)
160    boundary band, the point has an IK solution
96     boundary band, the point has none
0      background
=====  =========================================================

Band pixels are only produced by the ``workspace`` selector; they are
resolved pointwise so that coverage tracks the true workspace rather than
the cell-level band.  The ``singular`` selector shows, per finest cell, the
strongest label across working modes.

The SVG draws the maximal uniform quadtree blocks of the same per-cell class
grid that feeds the raster, so each rectangle covers raster pixels of its
own class.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .celltree import CellLabel
from .config import RenderConfig
from .kinematics import WORKING_MODES, branch_arrays
from .regions import RegionAtlas, RegionKind, WorkspaceRegion

FREE, BAND_IN, BAND_OUT, BACKGROUND = 255, 160, 96, 0

# per-cell classes; the raster value of each, except BAND which is resolved per pixel
_CELL_OUTSIDE, _CELL_INSIDE, _CELL_BAND = 0, 1, 2
_CELL_GRAY = {_CELL_OUTSIDE: BACKGROUND, _CELL_INSIDE: FREE, _CELL_BAND: BAND_IN}
_SINGULAR_GRAY = {
    CellLabel.OUTSIDE: 0,
    CellLabel.FREE: 64,
    CellLabel.SERIAL_BOUNDARY: 128,
    CellLabel.PARALLEL_BOUNDARY: 192,
    CellLabel.MIXED_BOUNDARY: 255,
}
_COLORS = {
    "workspace": {_CELL_OUTSIDE: "#ffffff", _CELL_INSIDE: "#4c78a8", _CELL_BAND: "#f2cf5b"},
    "region": {_CELL_OUTSIDE: "#ffffff", _CELL_INSIDE: "#4c78a8"},
    "singular": {
        int(CellLabel.OUTSIDE): "#ffffff",
        int(CellLabel.FREE): "#c6dbef",
        int(CellLabel.SERIAL_BOUNDARY): "#e45756",
        int(CellLabel.PARALLEL_BOUNDARY): "#54a24b",
        int(CellLabel.MIXED_BOUNDARY): "#000000",
    },
}


class UnknownRegionId(KeyError):
    pass


@dataclass(frozen=True)
class RenderedMap:
    pgm: str
    svg: str
    pixels: np.ndarray  # (height, width), row 0 at the top

    def __iter__(self):
        return iter((self.pgm, self.svg))


def parse_selector(text: str):
    """``workspace``, ``singular``, ``T<j>``/``WT<j>`` or ``N<j>``/``WN<j>``."""
    text = text.strip()
    if text in ("workspace", "singular"):
        return text, None
    m = re.fullmatch(r"W?([TN])(\d+)", text)
    if not m:
        raise ValueError(f"unknown selector {text!r}")
    kind = RegionKind.T_CONNECTED if m.group(1) == "T" else RegionKind.N_CONNECTED
    return kind, int(m.group(2))


def _pixel_centers(atlas: RegionAtlas, cfg: RenderConfig):
    lo, hi = np.asarray(atlas.root.lo), np.asarray(atlas.root.hi)
    xs = lo[0] + (np.arange(cfg.width) + 0.5) * (hi[0] - lo[0]) / cfg.width
    ys = hi[1] - (np.arange(cfg.height) + 0.5) * (hi[1] - lo[1]) / cfg.height
    return np.meshgrid(xs, ys)


def _pixel_cells(atlas: RegionAtlas, px, py):
    tree = atlas.trees[0]
    n = np.asarray(tree.finest_shape)
    size = tree.finest_cell_size
    ix = np.clip(np.floor((px - atlas.root.lo[0]) / size[0]).astype(int), 0, n[0] - 1)
    iy = np.clip(np.floor((py - atlas.root.lo[1]) / size[1]).astype(int), 0, n[1] - 1)
    return ix, iy


def _has_ik(atlas: RegionAtlas, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    out = np.zeros(x.shape, dtype=bool)
    for mode in WORKING_MODES:
        out |= branch_arrays(atlas.geometry, mode, x, y).ok
    return out


def _cell_grid(atlas: RegionAtlas, selector) -> tuple[np.ndarray, str]:
    if isinstance(selector, WorkspaceRegion):
        return atlas.mask(selector).astype(np.int64), "region"
    kind, rid = selector
    if kind == "workspace":
        free = atlas.free_mask()
        boundary = np.zeros_like(free)
        for mi in range(len(atlas.trees)):
            boundary |= atlas.label_grid(mi) >= CellLabel.SERIAL_BOUNDARY
        grid = np.where(free, _CELL_INSIDE, np.where(boundary, _CELL_BAND, _CELL_OUTSIDE))
        return grid, "workspace"
    if kind == "singular":
        return np.max([atlas.label_grid(mi) for mi in range(len(atlas.trees))], axis=0).astype(np.int64), "singular"
    try:
        region = atlas.get_region(kind, rid)
    except KeyError:
        prefix = "T" if kind is RegionKind.T_CONNECTED else "N"
        raise UnknownRegionId(f"no region {prefix}{rid}") from None
    return atlas.mask(region).astype(np.int64), "region"


def _quad_blocks(grid: np.ndarray):
    """Maximal uniform dyadic blocks ``(x0, y0, size, value)`` of a square grid."""
    out = []

    def visit(x0, y0, size):
        block = grid[x0:x0 + size, y0:y0 + size]
        first = block.flat[0]
        if size == 1 or np.all(block == first):
            out.append((x0, y0, size, int(first)))
            return
        half = size // 2
        for dx, dy in ((0, 0), (half, 0), (0, half), (half, half)):
            visit(x0 + dx, y0 + dy, half)

    visit(0, 0, grid.shape[0])
    return out


def _pgm(pixels: np.ndarray, comment: str) -> str:
    h, w = pixels.shape
    lines = ["P2", f"# {comment}", f"{w} {h}", "255"]
    for row in pixels:
        line = ""
        for v in row:
            token = str(int(v))
            if line and len(line) + 1 + len(token) > 70:
                lines.append(line)
                line = token
            else:
                line = f"{line} {token}" if line else token
        lines.append(line)
    return "\n".join(lines) + "\n"


def _svg(atlas: RegionAtlas, grid: np.ndarray, style: str, cfg: RenderConfig, title: str) -> str:
    nx, ny = grid.shape
    cw, ch = cfg.width / nx, cfg.height / ny
    colors = _COLORS[style]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{cfg.width}" height="{cfg.height}" '
        f'viewBox="0 0 {cfg.width} {cfg.height}">',
        f"<title>{title}</title>",
    ]
    for x0, y0, size, v in _quad_blocks(grid):
        if cfg.palette == "color":
            fill = colors[v]
        else:
            g = _SINGULAR_GRAY[CellLabel(v)] if style == "singular" else _CELL_GRAY[v]
            fill = f"#{g:02x}{g:02x}{g:02x}"
        top = cfg.height - (y0 + size) * ch
        parts.append(
            f'<rect x="{x0 * cw:.4f}" y="{top:.4f}" width="{size * cw:.4f}" height="{size * ch:.4f}" '
            f'fill="{fill}" data-class="{v}"/>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def render_region_map(atlas: RegionAtlas, selector, cfg: RenderConfig | None = None) -> RenderedMap:
    """Render ``selector`` (a selector string or a ``WorkspaceRegion``)."""
    cfg = cfg or RenderConfig()
    if isinstance(selector, str):
        title = selector.strip()
        selector = parse_selector(selector)
    elif isinstance(selector, WorkspaceRegion):
        title = f"{'T' if selector.kind is RegionKind.T_CONNECTED else 'N'}{selector.id}"
    else:
        raise TypeError("selector must be a string or a WorkspaceRegion")
    grid, style = _cell_grid(atlas, selector)
    px, py = _pixel_centers(atlas, cfg)
    ix, iy = _pixel_cells(atlas, px, py)
    cls = grid[ix, iy]
    if style == "singular":
        lut = np.array([_SINGULAR_GRAY[label] for label in CellLabel])
        pixels = lut[cls]
    else:
        pixels = np.where(cls == _CELL_INSIDE, FREE, BACKGROUND)
        band = cls == _CELL_BAND
        if band.any():
            pixels[band] = np.where(_has_ik(atlas, px[band], py[band]), BAND_IN, BAND_OUT)
    pixels = pixels.astype(np.int64)
    return RenderedMap(_pgm(pixels, f"parakin {title}"), _svg(atlas, grid, style, cfg, title), pixels)


def covered_fraction(pixels: np.ndarray) -> float:
    """Share of pixels that lie in the workspace (inside or band-with-IK)."""
    return float(np.mean(pixels >= BAND_IN))
