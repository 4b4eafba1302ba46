"""Pixel masks, their PBM form, and plan-view coupling area.

Plan-view frame: origin at the coupler centre, ``x`` along the lines, ``y``
across them, both boards seen from above.  The strip covers
``|x| <= Lc/2, |y| <= W/2``.  Each side has two pixel areas of
``rows x cols`` cells of pitch ``D``, one above and one below the strip,
centred along ``x``.

A side mask is either ``rows x cols`` (one area pattern, mirrored onto both
flanks) or ``2*rows x cols`` (the full side, top to bottom: upper flank,
then lower flank).  Within an area, row 0 is always the row farthest from
the strip.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from os import PathLike

import numpy as np
import shapely
from shapely import affinity
from shapely.geometry import box

from .coupled_line import CouplerGeometry
from .errors import DomainError, FormatError

RASTER_SAMPLES = 16


@dataclass(frozen=True, eq=False)
class PixelMask:
    """Binary metal (1) / no-metal (0) pattern stored as a ``(rows, cols)`` array."""

    bits: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.bits)
        if arr.ndim != 2 or arr.size == 0:
            raise DomainError(f"mask must be a non-empty 2-D array, got shape {arr.shape}")
        if not np.all((arr == 0) | (arr == 1)):
            raise DomainError("mask entries must be 0 or 1")
        arr = arr.astype(np.uint8)
        arr.setflags(write=False)
        object.__setattr__(self, "bits", arr)

    @classmethod
    def zeros(cls, rows, cols):
        return cls(np.zeros((rows, cols), dtype=np.uint8))

    @classmethod
    def ones(cls, rows, cols):
        return cls(np.ones((rows, cols), dtype=np.uint8))

    @classmethod
    def from_flat(cls, flat, rows, cols):
        flat = np.asarray(flat)
        if flat.size != rows * cols:
            raise DomainError(f"{flat.size} bits cannot fill a {rows}x{cols} mask")
        return cls(flat.reshape(rows, cols))

    @property
    def rows(self) -> int:
        return self.bits.shape[0]

    @property
    def cols(self) -> int:
        return self.bits.shape[1]

    @property
    def flat(self) -> np.ndarray:
        return self.bits.ravel()

    @property
    def fill_ratio(self) -> float:
        return float(self.bits.mean())

    def __eq__(self, other):
        return isinstance(other, PixelMask) and np.array_equal(self.bits, other.bits)

    def __hash__(self):
        return hash((self.bits.shape, self.bits.tobytes()))

    # --- PBM (plain, P1) -------------------------------------------------

    def to_pbm(self) -> str:
        lines = ["P1", f"{self.cols} {self.rows}"]
        lines += [" ".join(str(int(b)) for b in row) for row in self.bits]
        return "\n".join(lines) + "\n"

    def write_pbm(self, path: str | PathLike):
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.write(self.to_pbm())

    @classmethod
    def from_pbm(cls, text: str, path=None) -> "PixelMask":
        """Parse plain PBM.  Comments (``#``) and packed bit runs are accepted."""
        tokens = []  # (token, line number)
        for lineno, line in enumerate(io.StringIO(text), start=1):
            line = line.split("#", 1)[0]
            for tok in line.split():
                tokens.append((tok, lineno))
        if not tokens:
            raise FormatError("empty PBM file", line=1, path=path)
        magic, lineno = tokens[0]
        if magic != "P1":
            raise FormatError(f"expected magic 'P1', got {magic!r}", line=lineno, path=path)
        if len(tokens) < 3:
            raise FormatError("missing width/height header", line=tokens[-1][1], path=path)
        dims = []
        for tok, lineno in tokens[1:3]:
            if not tok.isdigit() or int(tok) < 1:
                raise FormatError(f"bad dimension {tok!r}", line=lineno, path=path)
            dims.append(int(tok))
        cols, rows = dims
        bits = []
        for tok, lineno in tokens[3:]:
            for ch in tok:
                if ch not in "01":
                    raise FormatError(f"bad pixel value {ch!r}", line=lineno, path=path)
                bits.append(int(ch))
        if len(bits) != rows * cols:
            last = tokens[-1][1]
            raise FormatError(f"expected {rows * cols} pixels, found {len(bits)}", line=last, path=path)
        return cls(np.array(bits, dtype=np.uint8).reshape(rows, cols))

    @classmethod
    def read_pbm(cls, path: str | PathLike) -> "PixelMask":
        with open(path, encoding="ascii", errors="replace") as fh:
            return cls.from_pbm(fh.read(), path=str(path))


def side_layout(mask: PixelMask, geometry: CouplerGeometry) -> np.ndarray:
    """``(2*rows, cols)`` array of the full side, top row first."""
    R, C = geometry.pixel_rows, geometry.pixel_cols
    if mask.bits.shape == (R, C):
        return np.vstack([mask.bits, mask.bits[::-1]])
    if mask.bits.shape == (2 * R, C):
        return mask.bits
    raise DomainError(f"mask shape {mask.bits.shape} matches neither {(R, C)} nor {(2 * R, C)}")


def _cell_edges(geometry):
    """x edges of the pixel columns and y edges of the full-side rows (top first)."""
    R, C, D = geometry.pixel_rows, geometry.pixel_cols, geometry.pixel_pitch
    half_w = geometry.strip_width / 2
    x = -C * D / 2 + D * np.arange(C + 1)
    upper = half_w + D * np.arange(R, -1, -1)        # R+1 edges, descending
    lower = -half_w - D * np.arange(0, R + 1)         # R+1 edges, descending
    return x, upper, lower


def metal_area(mask: PixelMask, geometry: CouplerGeometry) -> float:
    """Strip plus metal-pixel area of one side (m^2)."""
    layout = side_layout(mask, geometry)
    return geometry.strip_area + geometry.pixel_pitch ** 2 * int(layout.sum())


def footprint(mask: PixelMask, geometry: CouplerGeometry):
    """Shapely geometry of one side's metal (strip union metal pixels)."""
    layout = side_layout(mask, geometry)
    R = geometry.pixel_rows
    x, upper, lower = _cell_edges(geometry)
    hl, hw = geometry.coupler_length / 2, geometry.strip_width / 2
    rects = [box(-hl, -hw, hl, hw)]
    rr, cc = np.nonzero(layout)
    for r, c in zip(rr.tolist(), cc.tolist()):
        if r < R:
            y0, y1 = upper[r + 1], upper[r]
        else:
            k = r - R
            y0, y1 = lower[k + 1], lower[k]
        rects.append(box(x[c], y0, x[c + 1], y1))
    return shapely.union_all(rects)


def _contains(layout, geometry, px, py):
    """Vectorised membership of plan points in a side's metal footprint."""
    R, C, D = geometry.pixel_rows, geometry.pixel_cols, geometry.pixel_pitch
    hl, hw = geometry.coupler_length / 2, geometry.strip_width / 2
    inside = (np.abs(px) <= hl) & (np.abs(py) <= hw)
    col = np.floor((px + C * D / 2) / D).astype(np.int64)
    in_cols = (col >= 0) & (col < C)
    # upper flank: row index from the top edge downwards
    top = hw + R * D
    ru = np.floor((top - py) / D).astype(np.int64)
    up_ok = in_cols & (py > hw) & (ru >= 0) & (ru < R)
    # lower flank: full-side rows R..2R-1 from the strip edge outwards
    rl = np.floor((-hw - py) / D).astype(np.int64)
    lo_ok = in_cols & (py < -hw) & (rl >= 0) & (rl < R)
    hit = np.zeros(px.shape, dtype=bool)
    cu = np.clip(col, 0, C - 1)
    hit[up_ok] = layout[np.clip(ru, 0, R - 1)[up_ok], cu[up_ok]] == 1
    hit[lo_ok] = layout[R + np.clip(rl, 0, R - 1)[lo_ok], cu[lo_ok]] == 1
    return inside | hit


def effective_coupling_area(mask_up: PixelMask, mask_down: PixelMask,
                            geometry: CouplerGeometry, rotation_deg: float = 0.0,
                            offset=(0.0, 0.0), method: str = "exact",
                            samples: int = RASTER_SAMPLES) -> float:
    """Overlap area (m^2) of the up-side metal with the moved down-side metal.

    The down footprint is rotated by ``rotation_deg`` about the coupler centre,
    then translated by ``offset``.  ``method="exact"`` clips polygons;
    ``method="raster"`` counts ``samples`` x ``samples`` midpoints per pixel.
    With no rotation and no offset the pixels line up and the overlap is
    counted directly on the grid.
    """
    if method not in ("exact", "raster"):
        raise DomainError(f"unknown area method {method!r}")
    if method == "raster" and samples < RASTER_SAMPLES:
        raise DomainError(f"raster needs >= {RASTER_SAMPLES} samples per pixel edge")
    up = side_layout(mask_up, geometry)
    down = side_layout(mask_down, geometry)
    alpha = float(rotation_deg) % 360.0
    dx, dy = (float(v) for v in offset)
    D = geometry.pixel_pitch
    if alpha == 0.0 and dx == 0.0 and dy == 0.0:
        return geometry.strip_area + D * D * int(np.count_nonzero(up & down))
    if method == "exact":
        moved = affinity.rotate(footprint(mask_down, geometry), alpha, origin=(0.0, 0.0))
        moved = affinity.translate(moved, dx, dy)
        return float(footprint(mask_up, geometry).intersection(moved).area)
    return _raster_overlap(up, down, geometry, alpha, dx, dy, samples)


def _raster_overlap(up, down, geometry, alpha, dx, dy, samples):
    D = geometry.pixel_pitch
    step = D / samples
    R, C = geometry.pixel_rows, geometry.pixel_cols
    half_x = max(geometry.coupler_length / 2, C * D / 2)
    half_y = geometry.strip_width / 2 + R * D
    nx = int(math.ceil(2 * half_x / step))
    ny = int(math.ceil(2 * half_y / step))
    xs = -half_x + step * (np.arange(nx) + 0.5)
    total = 0
    ca, sa = math.cos(math.radians(alpha)), math.sin(math.radians(alpha))
    chunk = max(1, 2_000_000 // nx)
    for j0 in range(0, ny, chunk):
        ys = -half_y + step * (np.arange(j0, min(ny, j0 + chunk)) + 0.5)
        px, py = np.meshgrid(xs, ys)
        a = _contains(up, geometry, px, py)
        # pull sample back into the down board's own frame
        qx, qy = px[a] - dx, py[a] - dy
        bx = ca * qx + sa * qy
        by = -sa * qx + ca * qy
        total += int(np.count_nonzero(_contains(down, geometry, bx, by)))
    return total * step * step
