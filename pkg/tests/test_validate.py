import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import march_edge_free, touched_cells_exact
from splatnav.graph import TopoGraph, ViewpointNode
from splatnav.validate import (FREE, OCCUPIED, UNKNOWN, OccupancyGrid, OccupancyParseError, edge_valid,
                               load_occupancy, node_valid, read_pgm, save_occupancy, supercover_cells,
                               validity_report, write_pgm)

YAML = "image: m.pgm\nresolution: 0.5\norigin: [1.0, 2.0, 0.0]\nnegate: 0\noccupied_thresh: 0.65\nfree_thresh: 0.196\n"


def write_map(tmp_path, img, text=YAML):
    write_pgm(tmp_path / "m.pgm", np.asarray(img, np.uint8))
    (tmp_path / "m.yaml").write_text(text)
    return load_occupancy(tmp_path / "m.pgm", tmp_path / "m.yaml")


def graph_of(points, edges):
    return TopoGraph([ViewpointNode(i, [x, y, 0.0]) for i, (x, y) in enumerate(points)], edges)


# ---------------------------------------------------------------- parsing

def test_white_is_free_black_is_occupied(tmp_path):
    assert np.all(write_map(tmp_path, np.full((3, 5), 255)).cells == FREE)
    assert np.all(write_map(tmp_path, np.zeros((3, 5))).cells == OCCUPIED)
    assert np.all(write_map(tmp_path, np.full((3, 5), 205)).cells == UNKNOWN)


def test_black_pixel_lands_at_expected_world_point(tmp_path):
    img = np.full((4, 4), 255)
    img[0, 3] = 0  # top row of the raster is the largest y
    grid = write_map(tmp_path, img)
    assert grid.cells[3, 3] == OCCUPIED and (grid.cells == OCCUPIED).sum() == 1
    # cell (row 3, col 3) spans x in [2.5, 3.0], y in [3.5, 4.0]
    assert not grid.is_free_at([2.75, 3.75])
    assert grid.is_free_at([2.45, 3.75]) and grid.is_free_at([2.75, 3.45])
    assert np.allclose(grid.cell_center(3, 3), [2.75, 3.75])


def test_negate_flag(tmp_path):
    grid = write_map(tmp_path, np.zeros((2, 2)), YAML.replace("negate: 0", "negate: 1"))
    assert np.all(grid.cells == FREE)


def test_ascii_pgm(tmp_path):
    (tmp_path / "a.pgm").write_bytes(b"P2\n# comment\n3 2\n255\n0 255 255\n255 255 0\n")
    img = read_pgm(tmp_path / "a.pgm")
    assert img.tolist() == [[0, 255, 255], [255, 255, 0]]


@pytest.mark.parametrize("data,where", [(b"P6\n2 2\n255\n" + bytes(12), ":1:"), (b"P5\n2 x\n255\n", ":2:"),
                                        (b"P5\n2 2\n255\n\x00", ":3:"), (b"P5\n2", ":2:")])
def test_malformed_pgm_reports_line(tmp_path, data, where):
    p = tmp_path / "bad.pgm"
    p.write_bytes(data)
    with pytest.raises(OccupancyParseError, match=where):
        read_pgm(p)


def test_malformed_yaml(tmp_path):
    write_pgm(tmp_path / "m.pgm", np.zeros((2, 2), np.uint8))
    (tmp_path / "m.yaml").write_text("image: m.pgm\norigin: [0, 0, 0]\n")
    with pytest.raises(OccupancyParseError, match="resolution"):
        load_occupancy(tmp_path / "m.pgm", tmp_path / "m.yaml")
    (tmp_path / "m.yaml").write_text("resolution: [\n")
    with pytest.raises(OccupancyParseError):
        load_occupancy(tmp_path / "m.pgm", tmp_path / "m.yaml")


def test_save_load_round_trip(tmp_path):
    cells = np.random.default_rng(0).choice([FREE, OCCUPIED, UNKNOWN], size=(7, 9)).astype(np.int8)
    grid = OccupancyGrid(0.05, [-1.25, 3.5], cells)
    save_occupancy(grid, tmp_path / "g.pgm", tmp_path / "g.yaml")
    back = load_occupancy(tmp_path / "g.pgm", tmp_path / "g.yaml")
    assert np.array_equal(back.cells, cells)
    assert back.resolution == 0.05 and np.array_equal(back.origin, grid.origin)


# ---------------------------------------------------------------- nodes

def test_out_of_map_node_invalid():
    grid = OccupancyGrid(1.0, [0, 0], np.zeros((3, 3)))
    assert node_valid([1.5, 1.5, 0], grid)
    assert not node_valid([-0.1, 1.5, 0], grid) and not node_valid([1.5, 3.0, 0], grid)


def test_nodes_match_direct_indexing():
    rng = np.random.default_rng(1)
    cells = rng.choice([FREE, OCCUPIED, UNKNOWN], size=(20, 30)).astype(np.int8)
    grid = OccupancyGrid(0.1, [2.0, -1.0], cells)
    for _ in range(100):
        x, y = rng.uniform([2.0, -1.0], [5.0, 1.0])
        r, c = int((y + 1.0) // 0.1), int((x - 2.0) // 0.1)
        assert node_valid([x, y, 0], grid) == (cells[r, c] == FREE)


# ---------------------------------------------------------------- edges

@given(st.lists(st.floats(-0.3, 2.3), min_size=4, max_size=4))
def test_supercover_equals_exact_touched_set(v):
    grid = OccupancyGrid(0.25, [0.1, -0.2], np.zeros((8, 8)))
    a, b = np.array(v[:2]), np.array(v[2:])
    rows, cols = supercover_cells(grid, a, b)
    assert set(zip(rows.tolist(), cols.tolist())) == touched_cells_exact(grid.origin, 0.25, a, b)


def test_supercover_includes_corner_contacts():
    grid = OccupancyGrid(1.0, [0, 0], np.zeros((3, 3)))
    rows, cols = supercover_cells(grid, [0.5, 0.5], [1.5, 1.5])
    assert set(zip(rows.tolist(), cols.tolist())) == {(0, 0), (0, 1), (1, 0), (1, 1)}


def test_edge_between_adjacent_free_cells():
    grid = OccupancyGrid(1.0, [0, 0], np.zeros((1, 2)))
    assert edge_valid([0.5, 0.5, 0], [1.5, 0.5, 0], grid)


def test_edge_through_occupied_cell():
    cells = np.zeros((1, 3))
    cells[0, 1] = OCCUPIED
    grid = OccupancyGrid(1.0, [0, 0], cells)
    assert not edge_valid([0.5, 0.5, 0], [2.5, 0.5, 0], grid)


def test_edge_grazing_occupied_corner_is_blocked():
    cells = np.zeros((2, 2))
    cells[1, 0] = OCCUPIED
    grid = OccupancyGrid(1.0, [0, 0], cells)
    # passes exactly through the shared corner (1, 1)
    assert not edge_valid([0.5, 0.5, 0], [1.5, 1.5, 0], grid)


@given(st.integers(0, 10 ** 6))
def test_supercover_never_looser_than_marching(seed):
    rng = np.random.default_rng(seed)
    cells = (rng.uniform(size=(16, 16)) < 0.05).astype(np.int8)
    grid = OccupancyGrid(0.1, [0, 0], cells)
    a, b = rng.uniform(0, 1.6, size=(2, 2))
    if edge_valid(np.r_[a, 0], np.r_[b, 0], grid):
        assert march_edge_free(cells, grid.origin, 0.1, a, b)


# ---------------------------------------------------------------- reports

def test_report_symmetric_in_edge_direction():
    rng = np.random.default_rng(2)
    grid = OccupancyGrid(0.2, [0, 0], (rng.uniform(size=(20, 20)) < 0.1).astype(np.int8))
    pts = rng.uniform(0, 4, size=(12, 2))
    edges = [(i, j) for i in range(12) for j in range(i + 1, 12) if rng.uniform() < 0.3]
    g = graph_of(pts, edges)
    for a, b in edges:
        assert edge_valid(g.node(a), g.node(b), grid) == edge_valid(g.node(b), g.node(a), grid)


def test_one_node_in_wall():
    cells = np.zeros((10, 10))
    cells[8:, 8:] = OCCUPIED
    grid = OccupancyGrid(1.0, [0, 0], cells)
    g = graph_of([(1, 1), (5, 1), (1, 5), (9, 9)], [(0, 1), (0, 2), (1, 2), (0, 3), (1, 3)])
    rep = validity_report(g, grid)
    assert rep.node_ratio == 0.75 and rep.invalid_node_ids == [3]
    assert set(rep.invalid_edges) == {(0, 3), (1, 3)}
    assert rep.edge_valid_count == 3


def test_removing_invalid_node_keeps_valid_counts():
    rng = np.random.default_rng(3)
    grid = OccupancyGrid(0.5, [0, 0], (rng.uniform(size=(12, 12)) < 0.15).astype(np.int8))
    pts = rng.uniform(0, 6, size=(10, 2))
    g = graph_of(pts, [(i, j) for i in range(10) for j in range(i + 1, 10) if rng.uniform() < 0.4])
    rep = validity_report(g, grid)
    for nid in rep.invalid_node_ids:
        smaller = validity_report(g.without_node(nid), grid)
        assert smaller.node_valid_count == rep.node_valid_count
        assert smaller.edge_valid_count == rep.edge_valid_count


def test_empty_graph_ratios():
    rep = validity_report(TopoGraph(), OccupancyGrid(1.0, [0, 0], np.zeros((2, 2))))
    assert rep.node_ratio == 1.0 and rep.edge_ratio == 1.0


def test_overlay_lists_offenders():
    cells = np.zeros((4, 4))
    cells[3, 3] = OCCUPIED
    g = graph_of([(0.5, 0.5), (3.5, 3.5)], [(0, 1)])
    rep = validity_report(g, OccupancyGrid(1.0, [0, 0], cells))
    kinds = [f["properties"]["kind"] for f in rep.overlay(g)["features"]]
    assert kinds == ["node", "edge"]


def test_synthetic_ground_truth_grid(worlds):
    grid = worlds["corridor"].grid
    geo = worlds["corridor"].scene.geometry
    # a cell is free exactly when its centre is on the floor and clear of every wall footprint
    rows, cols = np.indices(grid.shape)
    centres = grid.cell_center(rows.ravel(), cols.ravel())
    free = (grid.cells.ravel() == FREE)
    assert np.all(geo.on_floor(centres)[free])
