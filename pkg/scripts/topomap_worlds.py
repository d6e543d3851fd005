"""Grow a topological map on each built-in world and score it against the ground-truth occupancy grid.

    python scripts/topomap_worlds.py [--worlds corridor l_room two_room] [--out results/topomap]
"""

import argparse
import time
from pathlib import Path

from splatnav import formats
from splatnav.synth import builtin_world, synthesize
from splatnav.topomap import TopomapConfig, build_topomap
from splatnav.validate import validity_report


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--worlds", nargs="+", default=["corridor", "l_room", "two_room"])
    ap.add_argument("--pano-height", type=int, default=256)
    ap.add_argument("--out", default="results/topomap")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = TopomapConfig(pano_height_px=args.pano_height)
    rows = []
    print(f"{'world':<10}{'nodes':>7}{'edges':>7}{'node %':>9}{'edge %':>9}{'sec':>7}")
    for name in args.worlds:
        res = synthesize(builtin_world(name))
        t = time.perf_counter()
        graph = build_topomap(res.scene, res.spec.start_position(), cfg)
        dt = time.perf_counter() - t
        rep = validity_report(graph, res.grid)
        (out / f"{name}_graph.json").write_text(graph.to_json())
        rows.append({"world": name, "seconds": dt, **rep.to_dict()})
        print(f"{name:<10}{len(graph.nodes):>7}{len(graph.edges):>7}{100 * rep.node_ratio:>9.1f}"
              f"{100 * rep.edge_ratio:>9.1f}{dt:>7.1f}")
    formats.write_json(out / "summary.json", rows)


if __name__ == "__main__":
    main()
