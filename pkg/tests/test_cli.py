import json
import subprocess
import sys

import numpy as np
import pytest

from splatnav.cli import main
from splatnav.synth import builtin_world, synthesize
from splatnav.validate import load_occupancy


@pytest.fixture(scope="module")
def corridor_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--world", "corridor", "--out", str(root / "scene")]) == 0
    assert main(["topomap", "--scene", str(root / "scene" / "scene.splat"), "--out", str(root / "topo")]) == 0
    return root


def test_synth_writes_ground_truth_map(corridor_run):
    grid = load_occupancy(corridor_run / "scene" / "occupancy.pgm", corridor_run / "scene" / "occupancy.yaml")
    ref = synthesize(builtin_world("corridor")).grid
    assert np.array_equal(grid.cells, ref.cells)
    assert np.allclose(grid.origin, ref.origin) and grid.resolution == ref.resolution
    manifest = json.loads((corridor_run / "scene" / "manifest.json").read_text())
    assert manifest["command"] == "synth" and "occupancy.pgm" in manifest["outputs"]


def test_topomap_then_validate(corridor_run, capsys):
    out = corridor_run / "val"
    code = main(["validate", "--graph", str(corridor_run / "topo" / "graph.json"),
                 "--pgm", str(corridor_run / "scene" / "occupancy.pgm"), "--out", str(out)])
    assert code == 0
    rep = json.loads((out / "validity.json").read_text())
    assert rep["node_ratio"] == 1.0 and rep["edge_ratio"] == 1.0 and rep["node_total"] >= 2
    assert "100.0%" in capsys.readouterr().out


def test_eval_shortest(corridor_run, capsys):
    out = corridor_run / "eval"
    code = main(["eval", "--graph", str(corridor_run / "topo" / "graph.json"), "--agent", "shortest",
                 "--set", "nav.episodes.min_distance=2.5", "--out", str(out)])
    assert code == 0
    mean = json.loads((out / "eval.json").read_text())["mean"]
    assert mean["SR"] == 100.0 and mean["NE"] == 0.0 and mean["SPL"] == 100.0
    assert "shortest" in capsys.readouterr().out


def test_info_and_cluster(corridor_run, capsys):
    scene = str(corridor_run / "scene" / "scene.splat")
    assert main(["info", "--scene", scene]) == 0
    assert "submap" in capsys.readouterr().out
    assert main(["cluster", "--scene", scene, "--set", "clustering.num_clusters=3",
                 "--out", str(corridor_run / "cl")]) == 0
    data = json.loads((corridor_run / "cl" / "clustering.json").read_text())
    assert len(data["submaps"]) == 3


def test_render_and_mask(corridor_run):
    scene = str(corridor_run / "scene" / "scene.splat")
    assert main(["render", "--scene", scene, "--mode", "equirect", "--pano-height", "32",
                 "--out", str(corridor_run / "pano")]) == 0
    assert (corridor_run / "pano" / "alpha.pfm").exists()
    assert main(["mask", "--scene", scene, "--frame", "3", "--width", "64", "--out", str(corridor_run / "mask")]) == 0
    assert (corridor_run / "mask" / "m_final.png").exists()


def test_usage_errors_exit_1(corridor_run, capsys):
    assert main([]) == 1
    assert main(["topomap"]) == 1
    assert main(["synth", "--world", "corridor", "--set", "topomap.tau_alfa=1", "--out",
                 str(corridor_run / "x")]) == 1
    assert main(["synth", "--world", "nowhere", "--out", str(corridor_run / "x")]) == 1
    assert main(["eval", "--graph", str(corridor_run / "topo" / "graph.json"), "--out", str(corridor_run / "e2")]) == 1
    capsys.readouterr()


def test_io_errors_exit_2(corridor_run, tmp_path):
    assert main(["info", "--scene", str(tmp_path / "missing.splat")]) == 2
    bad = tmp_path / "bad.pgm"
    bad.write_bytes(b"P5\n2 x\n255\n")
    (tmp_path / "bad.yaml").write_text("resolution: 0.1\norigin: [0, 0, 0]\n")
    code = main(["validate", "--graph", str(corridor_run / "topo" / "graph.json"), "--pgm", str(bad),
                 "--out", str(tmp_path / "o")])
    assert code == 2


def test_console_entry_point_exit_code(tmp_path):
    r = subprocess.run([sys.executable, "-m", "splatnav.cli", "info", "--scene", str(tmp_path / "none")],
                       capture_output=True, text=True)
    assert r.returncode == 2 and "I/O error" in r.stderr
