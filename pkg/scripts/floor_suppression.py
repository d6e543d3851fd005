"""Why the floor must be free of splats: grow the map once from a scene whose floor was suppressed
and once from the same scene with floor splats kept, and compare.

    python scripts/floor_suppression.py [--world l_room]
"""

import argparse
from dataclasses import replace

from splatnav.synth import builtin_world, synthesize
from splatnav.topomap import build_topomap
from splatnav.validate import validity_report


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--world", default="l_room")
    args = ap.parse_args()

    spec = builtin_world(args.world)
    for suppressed in (True, False):
        res = synthesize(replace(spec, floor_suppression=suppressed))
        g = build_topomap(res.scene, res.spec.start_position())
        rep = validity_report(g, res.grid)
        label = "floor suppressed" if suppressed else "floor splats kept"
        print(f"{label:<18} {len(g.nodes):4d} nodes {len(g.edges):4d} edges  "
              f"validity {100 * rep.node_ratio:.1f}% / {100 * rep.edge_ratio:.1f}%")


if __name__ == "__main__":
    main()
