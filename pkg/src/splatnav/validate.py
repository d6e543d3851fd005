"""Score a viewpoint graph against a 2D occupancy map.

A node is valid when the cell under it is free. An edge is valid when both
ends are valid and every cell its straight segment touches (the supercover,
corner contacts included) is free. Unknown and out-of-map cells count as
blocked.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from splatnav.graph import TopoGraph

FREE, OCCUPIED, UNKNOWN = 0, 1, -1

# pixel values written by save_occupancy (ROS map_saver convention)
PGM_FREE, PGM_OCCUPIED, PGM_UNKNOWN = 254, 0, 205


class OccupancyParseError(ValueError):
    pass


@dataclass
class OccupancyGrid:
    resolution: float
    origin: np.ndarray  # world (x, y) of the lower-left corner of cell (0, 0)
    cells: np.ndarray  # (rows, cols) int8; row 0 is the lowest y
    free_thresh: float = 0.196
    occ_thresh: float = 0.65

    def __post_init__(self):
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(2)
        self.cells = np.asarray(self.cells, dtype=np.int8)
        if self.cells.ndim != 2 or self.cells.size == 0:
            raise ValueError("occupancy grid must be a non-empty 2D array")

    @property
    def shape(self) -> tuple[int, int]:
        return self.cells.shape

    def world_to_cell(self, xy) -> tuple[np.ndarray, np.ndarray]:
        """(row, col) of the cell containing each point (may be out of range)."""
        xy = np.asarray(xy, dtype=np.float64)
        g = (xy - self.origin) / self.resolution
        return np.floor(g[..., 1]).astype(np.int64), np.floor(g[..., 0]).astype(np.int64)

    def cell_center(self, row, col) -> np.ndarray:
        return self.origin + (np.stack([np.asarray(col), np.asarray(row)], -1) + 0.5) * self.resolution

    def state(self, row, col) -> np.ndarray:
        row, col = np.asarray(row), np.asarray(col)
        inside = (row >= 0) & (row < self.cells.shape[0]) & (col >= 0) & (col < self.cells.shape[1])
        out = np.full(np.broadcast(row, col).shape, UNKNOWN, dtype=np.int8)
        out[inside] = self.cells[row[inside], col[inside]]
        return out

    def is_free_at(self, xy) -> np.ndarray:
        return self.state(*self.world_to_cell(xy)) == FREE


def _pgm_tokens(data: bytes, path):
    """Header tokens of a PGM with their line numbers, plus the raster offset."""
    tokens, pos, line = [], 0, 1
    while len(tokens) < 4:
        if pos >= len(data):
            raise OccupancyParseError(f"{path}:{line}: truncated PGM header")
        ch = data[pos:pos + 1]
        if ch == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
        elif ch.isspace():
            if ch == b"\n":
                line += 1
            pos += 1
        else:
            start = pos
            while pos < len(data) and not data[pos:pos + 1].isspace():
                pos += 1
            tokens.append((data[start:pos].decode("ascii", "replace"), line))
    # exactly one whitespace byte separates maxval from the raster
    return tokens, pos + 1, line


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens, offset, line = _pgm_tokens(data, path)
    magic = tokens[0][0]
    if magic not in ("P5", "P2"):
        raise OccupancyParseError(f"{path}:{tokens[0][1]}: expected P5 or P2 magic, got {magic!r}")
    try:
        w, h, maxval = (int(t) for t, _ in tokens[1:4])
    except ValueError as e:
        bad = next(ln for t, ln in tokens[1:4] if not t.isdigit())
        raise OccupancyParseError(f"{path}:{bad}: non-integer PGM header field") from e
    if w <= 0 or h <= 0 or not 0 < maxval < 65536:
        raise OccupancyParseError(f"{path}:{line}: invalid PGM dimensions or maxval")
    if magic == "P5":
        dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
        n = w * h * np.dtype(dtype).itemsize
        raw = data[offset:offset + n]
        if len(raw) != n:
            raise OccupancyParseError(f"{path}:{line}: raster has {len(raw)} bytes, expected {n}")
        img = np.frombuffer(raw, dtype=dtype).reshape(h, w).astype(np.float64)
    else:
        vals = data[offset - 1:].split()
        if len(vals) < w * h:
            raise OccupancyParseError(f"{path}:{line}: raster has {len(vals)} values, expected {w * h}")
        img = np.array([int(v) for v in vals[:w * h]], dtype=np.float64).reshape(h, w)
    return img / maxval * 255.0


def write_pgm(path, img: np.ndarray) -> None:
    img = np.asarray(img, dtype=np.uint8)
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + img.tobytes())


def load_occupancy(pgm_path, yaml_path) -> OccupancyGrid:
    """Load a map_server style map (PGM raster + YAML metadata).

    Occupancy probability of a pixel is (255 - v) / 255, or v / 255 with
    ``negate: 1``. Free when <= free_thresh, occupied when >= occupied_thresh,
    unknown otherwise. The raster's top row is the largest y.
    """
    try:
        text = Path(yaml_path).read_text()
        meta = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        where = f"{yaml_path}:{mark.line + 1}" if mark else str(yaml_path)
        raise OccupancyParseError(f"{where}: {e}") from e
    if not isinstance(meta, dict):
        raise OccupancyParseError(f"{yaml_path}:1: expected a mapping")

    def field_line(key):
        for i, ln in enumerate(text.splitlines(), 1):
            if ln.strip().startswith(f"{key}:"):
                return i
        return 1

    for key in ("resolution", "origin"):
        if key not in meta:
            raise OccupancyParseError(f"{yaml_path}:{field_line(key)}: missing required field {key!r}")
    try:
        resolution = float(meta["resolution"])
        origin = [float(v) for v in meta["origin"]][:2]
        free_thresh = float(meta.get("free_thresh", 0.196))
        occ_thresh = float(meta.get("occupied_thresh", 0.65))
        negate = int(meta.get("negate", 0))
    except (TypeError, ValueError) as e:
        raise OccupancyParseError(f"{yaml_path}: malformed numeric field ({e})") from e
    if len(origin) != 2 or resolution <= 0:
        raise OccupancyParseError(f"{yaml_path}:{field_line('origin')}: bad origin/resolution")

    img = read_pgm(pgm_path)
    p = img / 255.0 if negate else (255.0 - img) / 255.0
    cells = np.full(img.shape, UNKNOWN, dtype=np.int8)
    cells[p <= free_thresh] = FREE
    cells[p >= occ_thresh] = OCCUPIED
    return OccupancyGrid(resolution, origin, cells[::-1].copy(), free_thresh, occ_thresh)


def save_occupancy(grid: OccupancyGrid, pgm_path, yaml_path) -> None:
    img = np.full(grid.cells.shape, PGM_UNKNOWN, dtype=np.uint8)
    img[grid.cells == FREE] = PGM_FREE
    img[grid.cells == OCCUPIED] = PGM_OCCUPIED
    write_pgm(pgm_path, img[::-1])
    meta = {
        "image": Path(pgm_path).name,
        "resolution": float(grid.resolution),
        "origin": [float(grid.origin[0]), float(grid.origin[1]), 0.0],
        "negate": 0,
        "occupied_thresh": float(grid.occ_thresh),
        "free_thresh": float(grid.free_thresh),
    }
    Path(yaml_path).write_text(yaml.safe_dump(meta, sort_keys=False))


def supercover_cells(grid: OccupancyGrid, a, b) -> tuple[np.ndarray, np.ndarray]:
    """All (row, col) cells the closed segment a-b touches, corners included.

    Candidate cells around the segment's bounding box are clipped against the
    segment (Liang-Barsky on closed squares); out-of-map cells are returned too.
    """
    a = (np.asarray(a, dtype=np.float64)[:2] - grid.origin) / grid.resolution
    b = (np.asarray(b, dtype=np.float64)[:2] - grid.origin) / grid.resolution
    c0 = math.floor(min(a[0], b[0])) - 1
    c1 = math.floor(max(a[0], b[0])) + 1
    r0 = math.floor(min(a[1], b[1])) - 1
    r1 = math.floor(max(a[1], b[1])) + 1
    cols, rows = np.meshgrid(np.arange(c0, c1 + 1), np.arange(r0, r1 + 1))
    cols, rows = cols.ravel(), rows.ravel()
    lo = np.zeros(cols.shape)
    hi = np.ones(cols.shape)
    ok = np.ones(cols.shape, dtype=bool)
    for axis, cmin in ((0, cols), (1, rows)):
        d = b[axis] - a[axis]
        if d == 0.0:
            ok &= (a[axis] >= cmin) & (a[axis] <= cmin + 1)
        else:
            t1 = (cmin - a[axis]) / d
            t2 = (cmin + 1 - a[axis]) / d
            lo = np.maximum(lo, np.minimum(t1, t2))
            hi = np.minimum(hi, np.maximum(t1, t2))
    ok &= lo <= hi
    return rows[ok], cols[ok]


def node_valid(node, grid: OccupancyGrid) -> bool:
    pos = node.position if hasattr(node, "position") else np.asarray(node, dtype=np.float64)
    return bool(grid.is_free_at(pos[:2]))


def edge_valid(a, b, grid: OccupancyGrid) -> bool:
    pa = a.position if hasattr(a, "position") else np.asarray(a, dtype=np.float64)
    pb = b.position if hasattr(b, "position") else np.asarray(b, dtype=np.float64)
    if not (node_valid(pa, grid) and node_valid(pb, grid)):
        return False
    rows, cols = supercover_cells(grid, pa, pb)
    return bool(np.all(grid.state(rows, cols) == FREE))


@dataclass
class ValidityReport:
    node_valid_count: int
    node_total: int
    edge_valid_count: int
    edge_total: int
    invalid_node_ids: list[int] = field(default_factory=list)
    invalid_edges: list[tuple[int, int]] = field(default_factory=list)

    @property
    def node_ratio(self) -> float:
        return self.node_valid_count / self.node_total if self.node_total else 1.0

    @property
    def edge_ratio(self) -> float:
        return self.edge_valid_count / self.edge_total if self.edge_total else 1.0

    def to_dict(self) -> dict:
        return {
            "node_valid_count": self.node_valid_count, "node_total": self.node_total,
            "edge_valid_count": self.edge_valid_count, "edge_total": self.edge_total,
            "node_ratio": self.node_ratio, "edge_ratio": self.edge_ratio,
            "invalid_node_ids": list(self.invalid_node_ids),
            "invalid_edges": [list(e) for e in self.invalid_edges],
        }

    def overlay(self, graph: TopoGraph) -> dict:
        """Offending nodes and edges as a GeoJSON FeatureCollection for plotting."""
        feats = []
        for nid in self.invalid_node_ids:
            p = graph.position(nid)
            feats.append({"type": "Feature", "properties": {"kind": "node", "id": nid},
                          "geometry": {"type": "Point", "coordinates": [float(p[0]), float(p[1])]}})
        for a, b in self.invalid_edges:
            pa, pb = graph.position(a), graph.position(b)
            feats.append({"type": "Feature", "properties": {"kind": "edge", "ids": [a, b]},
                          "geometry": {"type": "LineString",
                                       "coordinates": [[float(pa[0]), float(pa[1])], [float(pb[0]), float(pb[1])]]}})
        return {"type": "FeatureCollection", "features": feats}


def validity_report(graph: TopoGraph, grid: OccupancyGrid) -> ValidityReport:
    bad_nodes = [n.node_id for n in graph.nodes if not node_valid(n, grid)]
    bad_edges = [(a, b) for a, b in graph.edges if not edge_valid(graph.node(a), graph.node(b), grid)]
    return ValidityReport(len(graph.nodes) - len(bad_nodes), len(graph.nodes),
                          len(graph.edges) - len(bad_edges), len(graph.edges), bad_nodes, bad_edges)
