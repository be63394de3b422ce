"""Census-block datasets: loading, validation, synthesis and planar geometry.

Coordinates are planar Euclidean in whatever units the dataset declares
(degrees for TIGER-derived data). Polygon rings are stored *open*: the
closing vertex is implicit and a repeated first vertex is dropped on input.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np

CSV_FIELDS = ("block_id", "population", "centroid_x", "centroid_y", "wkt_polygon")
CENTROID_TOL = 1e-9
URBAN_LOG_MEDIAN = math.log(4.0)


class DatasetError(ValueError):
    """Raised when block data violates the dataset contract."""


class Point(NamedTuple):
    x: float
    y: float


@dataclass(frozen=True)
class Polygon:
    """Simple polygon; ``rings[0]`` is the exterior, the rest are holes."""

    rings: tuple[tuple[Point, ...], ...]

    def __post_init__(self):
        rings = tuple(_open_ring(r) for r in self.rings)
        if not rings or len(rings[0]) < 3:
            raise DatasetError("polygon exterior ring needs at least 3 distinct vertices")
        for ring in rings:
            for p in ring:
                if not (math.isfinite(p.x) and math.isfinite(p.y)):
                    raise DatasetError("polygon has a non-finite vertex")
        object.__setattr__(self, "rings", rings)

    @property
    def exterior(self) -> tuple[Point, ...]:
        return self.rings[0]

    @classmethod
    def from_coords(cls, exterior, *holes) -> "Polygon":
        return cls(tuple(tuple(Point(float(x), float(y)) for x, y in ring) for ring in (exterior, *holes)))

    def to_wkt(self) -> str:
        parts = []
        for ring in self.rings:
            closed = ring + (ring[0],)
            parts.append("(" + ", ".join(f"{p.x!r} {p.y!r}" for p in closed) + ")")
        return "POLYGON(" + ", ".join(parts) + ")"


def _open_ring(ring) -> tuple[Point, ...]:
    pts = [Point(float(x), float(y)) for x, y in ring]
    out: list[Point] = []
    for p in pts:
        if not out or p != out[-1]:
            out.append(p)
    if len(out) > 1 and out[0] == out[-1]:
        out.pop()
    return tuple(out)


@dataclass(frozen=True)
class Block:
    id: str
    population: int
    centroid: Point
    polygon: Optional[Polygon] = None

    def __post_init__(self):
        if not isinstance(self.population, (int, np.integer)) or isinstance(self.population, bool):
            raise DatasetError(f"block {self.id!r}: population must be an integer")
        if self.population < 0:
            raise DatasetError(f"block {self.id!r}: negative population {self.population}")
        c = self.centroid
        if not (math.isfinite(c.x) and math.isfinite(c.y)):
            raise DatasetError(f"block {self.id!r}: non-finite centroid")
        if self.polygon is not None:
            pc = centroid(self.polygon)
            if abs(pc.x - c.x) > CENTROID_TOL or abs(pc.y - c.y) > CENTROID_TOL:
                raise DatasetError(
                    f"block {self.id!r}: centroid ({c.x}, {c.y}) does not match "
                    f"polygon vertex average ({pc.x}, {pc.y})"
                )


@dataclass(frozen=True)
class CountyDataset:
    name: str
    blocks: tuple[Block, ...]
    coordinate_note: str = "planar units"
    _by_id: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        blocks = tuple(self.blocks)
        object.__setattr__(self, "blocks", blocks)
        by_id = {}
        for b in blocks:
            if b.id in by_id:
                raise DatasetError(f"duplicate block id {b.id!r}")
            by_id[b.id] = b
        if not any(b.population > 0 for b in blocks):
            raise DatasetError(f"dataset {self.name!r} has no populated block")
        object.__setattr__(self, "_by_id", by_id)

    def __len__(self) -> int:
        return len(self.blocks)

    def __getitem__(self, block_id: str) -> Block:
        return self._by_id[block_id]

    @property
    def total_population(self) -> int:
        return sum(b.population for b in self.blocks)

    def populated(self) -> list[Block]:
        return [b for b in self.blocks if b.population > 0]


# --------------------------------------------------------------------------
# geometry


def centroid(polygon: Polygon) -> Point:
    """Vertex average of the exterior ring (not the area centroid)."""
    ring = polygon.exterior
    if len(set(ring)) < 3:
        raise DatasetError("centroid needs at least 3 distinct vertices")
    n = len(ring)
    return Point(math.fsum(p.x for p in ring) / n, math.fsum(p.y for p in ring) / n)


def _ring_arrays(ring: Sequence[Point]) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    a = np.asarray(ring, dtype=float)
    b = np.roll(a, -1, axis=0)
    return a[:, 0], a[:, 1], b[:, 0], b[:, 1]


def _inside_ring(px: np.ndarray, py: np.ndarray, ring) -> np.ndarray:
    # even-odd ray casting; boundary points may land either way, callers
    # only use this where the boundary distance is also zero
    ax, ay, bx, by = _ring_arrays(ring)
    inside = np.zeros(px.shape, dtype=bool)
    for x1, y1, x2, y2 in zip(ax, ay, bx, by):
        crosses = (y1 > py) != (y2 > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (px < xint)
    return inside


def _dist_to_ring(px: np.ndarray, py: np.ndarray, ring) -> np.ndarray:
    ax, ay, bx, by = _ring_arrays(ring)
    best = np.full(px.shape, np.inf)
    for x1, y1, x2, y2 in zip(ax, ay, bx, by):
        dx, dy = x2 - x1, y2 - y1
        seg2 = dx * dx + dy * dy
        if seg2 == 0.0:
            t = np.zeros(px.shape)
        else:
            t = np.clip(((px - x1) * dx + (py - y1) * dy) / seg2, 0.0, 1.0)
        d = np.hypot(px - (x1 + t * dx), py - (y1 + t * dy))
        np.minimum(best, d, out=best)
    return best


def distances_to_block(xs: np.ndarray, ys: np.ndarray, block: Block) -> np.ndarray:
    """Vectorized :func:`distance_point_to_block` over many points."""
    px = np.asarray(xs, dtype=float)
    py = np.asarray(ys, dtype=float)
    if block.polygon is None:
        return np.hypot(px - block.centroid.x, py - block.centroid.y)
    rings = block.polygon.rings
    inside = _inside_ring(px, py, rings[0])
    for hole in rings[1:]:
        inside &= ~_inside_ring(px, py, hole)
    dist = np.min([_dist_to_ring(px, py, r) for r in rings], axis=0)
    return np.where(inside, 0.0, dist)


def distance_point_to_block(p: Point, b: Block) -> float:
    """Shortest distance from ``p`` to block ``b``.

    Uses the filled polygon (0 inside) when ``b`` carries one, otherwise the
    distance to ``b.centroid``.
    """
    return float(distances_to_block(np.array([p[0]]), np.array([p[1]]), b)[0])


# --------------------------------------------------------------------------
# CSV I/O

_WKT_RE = re.compile(r"^\s*POLYGON\s*\(\s*\((?P<ring>[^()]*)\)\s*\)\s*$", re.IGNORECASE)


def parse_wkt_polygon(text: str) -> Polygon:
    m = _WKT_RE.match(text)
    if not m:
        raise DatasetError(f"unparsable polygon WKT: {text[:60]!r}")
    coords = []
    for pair in m.group("ring").split(","):
        xy = pair.split()
        if len(xy) != 2:
            raise DatasetError(f"bad WKT coordinate {pair.strip()!r}")
        coords.append((_finite(xy[0]), _finite(xy[1])))
    return Polygon.from_coords(coords)


def _finite(text: str) -> float:
    v = float(text)
    if not math.isfinite(v):
        raise ValueError(f"non-finite value {text!r}")
    return v


def _data_lines(fh):
    for line in fh:
        if not line.startswith("#"):
            yield line


def load_blocks(path, name: Optional[str] = None) -> CountyDataset:
    """Read a block CSV. Malformed rows raise :class:`DatasetError`."""
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"block file not found: {path}")
    blocks: list[Block] = []
    seen: set[str] = set()
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(_data_lines(fh))
        missing = [c for c in CSV_FIELDS[:4] if c not in (reader.fieldnames or ())]
        if missing:
            raise DatasetError(f"{path}: missing column(s) {', '.join(missing)}")
        for row_no, row in enumerate(reader, start=1):
            bid = (row["block_id"] or "").strip()
            where = f"{path.name} row {row_no} (block {bid!r})"
            if not bid:
                raise DatasetError(f"{where}: empty block_id")
            if bid in seen:
                raise DatasetError(f"{where}: duplicate block id {bid!r}")
            seen.add(bid)
            try:
                pop = int(row["population"])
            except (TypeError, ValueError):
                raise DatasetError(f"{where}: population {row['population']!r} is not an integer") from None
            if pop < 0:
                raise DatasetError(f"{where}: negative population {pop}")
            try:
                c = Point(_finite(row["centroid_x"]), _finite(row["centroid_y"]))
            except (TypeError, ValueError):
                raise DatasetError(f"{where}: unparsable centroid coordinate") from None
            wkt = (row.get("wkt_polygon") or "").strip()
            try:
                poly = parse_wkt_polygon(wkt) if wkt else None
                blocks.append(Block(bid, pop, c, poly))
            except (DatasetError, ValueError) as exc:
                raise DatasetError(f"{where}: {exc}") from None
    if not blocks:
        raise DatasetError(f"{path}: no block rows")
    try:
        return CountyDataset(name or path.stem, tuple(blocks))
    except DatasetError as exc:
        raise DatasetError(f"{path}: {exc}") from None


def write_blocks(dataset: CountyDataset, fh) -> None:
    """Write ``dataset`` in block CSV format to an open text stream."""
    with_poly = any(b.polygon is not None for b in dataset.blocks)
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(CSV_FIELDS if with_poly else CSV_FIELDS[:4])
    for b in dataset.blocks:
        row = [b.id, b.population, repr(b.centroid.x), repr(b.centroid.y)]
        if with_poly:
            row.append(b.polygon.to_wkt() if b.polygon is not None else "")
        writer.writerow(row)


# --------------------------------------------------------------------------
# synthetic counties


def _square(cx: float, cy: float, half: float) -> Polygon:
    return Polygon.from_coords(
        [(cx - half, cy - half), (cx + half, cy - half), (cx + half, cy + half), (cx - half, cy + half)]
    )


def synth_county(
    n_blocks: int,
    total_population: int,
    urban_fraction: float = 0.5,
    seed: int = 0,
    extent: float = 0.4,
) -> CountyDataset:
    """Generate a deterministic two-regime county.

    The county is an ``extent``-sized square split into a coarse grid of
    large rural blocks; the central coarse cell is subdivided into a fine
    grid of small urban blocks. ``urban_fraction`` is the share of blocks
    placed in the urban core. Urban blocks draw much larger populations than
    rural ones (lognormal, urban median four times the rural one),
    populations sum exactly to ``total_population``, and one
    rural (or, failing that, urban) block is always left unpopulated.
    """
    if n_blocks < 2:
        raise ValueError("n_blocks must be >= 2")
    if total_population < 1:
        raise ValueError("total_population must be positive")
    if not 0.0 <= urban_fraction <= 1.0:
        raise ValueError("urban_fraction must lie in [0, 1]")
    rng = np.random.default_rng(seed)

    n_urban = int(round(urban_fraction * n_blocks))
    n_urban = min(max(n_urban, 0), n_blocks)
    n_rural = n_blocks - n_urban

    g = 1
    while g * g - 1 < n_rural:
        g += 1
    if g % 2 == 0:
        g += 1
    cell = extent / g
    mid = g // 2
    coarse = [(i, j) for i in range(g) for j in range(g) if (i, j) != (mid, mid)]
    picks = rng.permutation(len(coarse))[:n_rural]
    rural_cells = sorted(coarse[k] for k in picks)

    u = max(1, math.ceil(math.sqrt(n_urban)))
    fine = cell / u
    fine_cells = [(i, j) for i in range(u) for j in range(u)]
    upicks = np.sort(rng.permutation(len(fine_cells))[:n_urban])
    urban_cells = [fine_cells[k] for k in upicks]

    shapes: list[tuple[bool, Polygon]] = []
    for i, j in urban_cells:
        cx = mid * cell + (i + 0.5) * fine
        cy = mid * cell + (j + 0.5) * fine
        shapes.append((True, _square(cx, cy, fine / 2)))
    for i, j in rural_cells:
        shapes.append((False, _square((i + 0.5) * cell, (j + 0.5) * cell, cell / 2)))

    # heavy-tailed like real block populations; urban median 4x rural
    weights = np.array([rng.lognormal(URBAN_LOG_MEDIAN if urban else 0.0, 0.8) for urban, _ in shapes])
    empty = n_urban if n_rural > 0 else 0
    weights[empty] = 0.0
    if weights.sum() <= 0:
        weights[:] = 1.0
        weights[empty] = 0.0
    pops = rng.multinomial(total_population, weights / weights.sum())

    width = len(str(n_blocks - 1))
    blocks = []
    for k, ((_, poly), pop) in enumerate(zip(shapes, pops)):
        blocks.append(Block(f"b{k:0{width}d}", int(pop), centroid(poly), poly))
    return CountyDataset(f"synth-{n_blocks}-{seed}", tuple(blocks), "synthetic planar degrees")
