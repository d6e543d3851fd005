"""How the traversability thresholds shape the map: node/edge counts and validity over a grid of
tau_alpha and tau_normal values on one world.

    python scripts/threshold_sweep.py [--world l_room] [--pano-height 128]
"""

import argparse
from dataclasses import replace

from splatnav.synth import builtin_world, synthesize
from splatnav.topomap import TopomapConfig, build_topomap
from splatnav.validate import validity_report


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--world", default="l_room")
    ap.add_argument("--pano-height", type=int, default=128)
    ap.add_argument("--alphas", type=float, nargs="+", default=[0.5, 0.8, 0.95, 0.99])
    ap.add_argument("--normals", type=float, nargs="+", default=[0.5, 0.85, 0.95])
    args = ap.parse_args()

    res = synthesize(builtin_world(args.world))
    base = TopomapConfig(pano_height_px=args.pano_height)
    print(f"{'tau_alpha':>10}{'tau_normal':>11}{'nodes':>7}{'edges':>7}{'node %':>9}{'edge %':>9}")
    for ta in args.alphas:
        for tn in args.normals:
            g = build_topomap(res.scene, res.spec.start_position(), replace(base, tau_alpha=ta, tau_normal=tn))
            rep = validity_report(g, res.grid)
            print(f"{ta:>10.2f}{tn:>11.2f}{len(g.nodes):>7}{len(g.edges):>7}{100 * rep.node_ratio:>9.1f}"
                  f"{100 * rep.edge_ratio:>9.1f}")


if __name__ == "__main__":
    main()
