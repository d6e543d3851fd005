"""SHORTEST and RANDOM baselines on a world's generated topological map.

    python scripts/nav_baselines.py [--world two_room] [--episodes 50] [--min-distance 15]
"""

import argparse

from splatnav.config import load_config
from splatnav.nav import evaluate, generate_episodes, random_agent
from splatnav.synth import builtin_world, synthesize
from splatnav.topomap import build_topomap


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--world", default="two_room")
    ap.add_argument("--episodes", type=int, default=50)
    ap.add_argument("--min-distance", type=float, default=15.0)
    ap.add_argument("--seeds", type=int, default=5, help="RANDOM is repeated over this many seeds")
    args = ap.parse_args()

    cfg = load_config()
    res = synthesize(builtin_world(args.world))
    graph = build_topomap(res.scene, res.spec.start_position(), cfg.topomap)
    eps = generate_episodes(graph, args.episodes, cfg.nav.episodes.seed, args.min_distance)
    print(f"{args.world}: {len(graph.nodes)} nodes, {len(graph.edges)} edges, {len(eps)} episodes\n")
    print(evaluate(graph, eps, "shortest").table(), end="")
    for seed in range(args.seeds):
        rep = evaluate(graph, eps, random_agent, seed=seed)
        rep.agent = f"random/{seed}"
        print(rep.table().splitlines()[1])


if __name__ == "__main__":
    main()
