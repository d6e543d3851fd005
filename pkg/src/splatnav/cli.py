"""Command-line entry point: ``splatnav <command> [options]``.

Exit codes: 0 success, 1 invalid input or usage, 2 I/O failure.
Every command that writes files also writes ``manifest.json`` into its
output directory.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from splatnav import formats
from splatnav.config import ConfigError, load_config

log = logging.getLogger("splatnav")

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _vec3(text: str) -> np.ndarray:
    try:
        v = [float(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected x,y,z, got {text!r}")
    if len(v) != 3:
        raise argparse.ArgumentTypeError(f"expected x,y,z, got {text!r}")
    return np.array(v)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _finish(args, cfg, out: Path, inputs, outputs):
    # runtime settings (thread count) never change results, so they stay out of the hashed config
    tree = {k: v for k, v in cfg.tree.items() if k != "runtime"}
    formats.write_manifest(out, args.command, inputs, tree, [str(Path(p).name) for p in outputs])


# ---------------------------------------------------------------- commands

def cmd_synth(args, cfg):
    from splatnav.synth import SynthSceneSpec, builtin_world, synthesize
    from splatnav.validate import save_occupancy

    if bool(args.spec) == bool(args.world):
        raise ValueError("give exactly one of --spec or --world")
    spec = SynthSceneSpec.load(args.spec) if args.spec else builtin_world(args.world)
    if args.seed is not None:
        spec.seed = args.seed
    res = synthesize(spec)
    out = _out_dir(args)
    scene_path = out / "scene.splat"
    formats.save_scene(res.scene, scene_path)
    save_occupancy(res.grid, out / "occupancy.pgm", out / "occupancy.yaml")
    formats.write_json(out / "geometry.json", res.scene.geometry.to_dict())
    formats.write_json(out / "spec.json", spec.to_dict())
    inputs = [args.spec] if args.spec else []
    _finish(args, cfg, out, inputs, [scene_path, str(scene_path) + ".json", "occupancy.pgm", "occupancy.yaml",
                                     "geometry.json", "spec.json"])
    print(f"scene: {len(res.scene.submaps)} submaps, {len(res.scene.trajectory)} frames -> {scene_path}")


def cmd_cluster(args, cfg):
    from splatnav.cluster import augment_overlap, cluster_trajectory

    scene = formats.load_scene(args.scene)
    ccfg = cfg.clustering
    P = scene.frame_positions()
    labels = cluster_trajectory(P, ccfg)
    sets = augment_overlap(P, labels, ccfg.overlap_delta)
    ids = [f.frame_id for f in scene.trajectory]
    result = {"config": {"num_clusters": ccfg.num_clusters, "overlap_delta": ccfg.overlap_delta,
                         "linkage": ccfg.linkage},
              "labels": {str(i): int(l) for i, l in zip(ids, labels)},
              "submaps": [{"submap_id": c, "core": [ids[i] for i in np.flatnonzero(labels == c)],
                           "augmented": [ids[i] for i in s]} for c, s in enumerate(sets)]}
    out = _out_dir(args)
    formats.write_json(out / "clustering.json", result)
    _finish(args, cfg, out, [args.scene], ["clustering.json"])
    print(f"{ccfg.num_clusters} clusters over {len(ids)} frames -> {out / 'clustering.json'}")


def _frame(scene, index):
    if not 0 <= index < len(scene.trajectory):
        raise ValueError(f"frame index {index} out of range 0..{len(scene.trajectory) - 1}")
    return scene.trajectory[index]


def _view(scene, args):
    from splatnav.scene import Intrinsics
    from splatnav.synth import view_pose

    K = scene.intrinsics
    if args.width:
        K = Intrinsics.from_fov(args.width, args.height or (3 * args.width) // 4, args.hfov)
    return view_pose(_frame(scene, args.frame), args.pitch), K


def cmd_mask(args, cfg):
    from splatnav.floor_mask import ExternalProvider, SegmentationProviders, floor_mask_pipeline, geometry_providers
    from splatnav.synth import photo_render

    scene = formats.load_scene(args.scene)
    pose, K = _view(scene, args)
    mcfg = cfg.floor_mask
    if args.provider_cmd:
        ext = ExternalProvider(args.provider_cmd.split())
        providers = SegmentationProviders(ext.semantic, ext.normals, ext.promptable)
    else:
        if scene.geometry is None:
            raise ValueError("scene has no analytic geometry; pass --provider-cmd")
        providers = geometry_providers(scene.geometry, pose, K, mcfg.region_grow_deg)
    image = photo_render(scene, pose, K).rgb
    res = floor_mask_pipeline(image, providers, mcfg.K, mcfg.up_thresh, mcfg.min_area_frac, mcfg.seed,
                              mcfg.text_prompt)
    out = _out_dir(args)
    formats.write_png(out / "image.png", image)
    for name in ("m_sem", "m_norm", "m_cand", "m_filtered", "m_final"):
        formats.write_png(out / f"{name}.png", getattr(res, name))
    formats.write_pfm(out / "normals.pfm", providers.normals(image))
    formats.write_json(out / "prompts.json", {"points_row_col": [list(map(int, p)) for p in res.prompts]})
    _finish(args, cfg, out, [args.scene], ["image.png", "m_sem.png", "m_norm.png", "m_cand.png",
                                           "m_filtered.png", "m_final.png", "normals.pfm", "prompts.json"])
    print(f"floor mask: {int(res.m_final.sum())} of {res.m_final.size} pixels -> {out}")


def cmd_render(args, cfg):
    from splatnav.render import render_equirect, render_perspective
    from splatnav.scene import nearest_submap

    scene = formats.load_scene(args.scene)
    out = _out_dir(args)
    if args.mode == "perspective":
        pose, K = _view(scene, args)
        sm = scene.submap(nearest_submap(scene, pose.translation))
        r = render_perspective(sm, pose, K)
        alpha, depth, rgb = r.alpha, r.depth, r.rgb
    else:
        center = args.position if args.position is not None else _frame(scene, args.frame).pose.translation
        sm = scene.submap(nearest_submap(scene, center))
        p = render_equirect(sm, center, args.pano_height or cfg.topomap.pano_height_px)
        alpha, depth, rgb = p.alpha, p.depth, p.rgb
    formats.write_png(out / "rgb.png", rgb)
    formats.write_pfm(out / "alpha.pfm", alpha)
    formats.write_pfm(out / "depth.pfm", depth)
    _finish(args, cfg, out, [args.scene], ["rgb.png", "alpha.pfm", "depth.pfm"])
    print(f"{args.mode} render {rgb.shape[1]}x{rgb.shape[0]} from submap {sm.submap_id} -> {out}")


def cmd_loss(args, cfg):
    from splatnav.background import eval_background
    from splatnav.floor_mask import floor_mask_pipeline, geometry_providers
    from splatnav.losses import total_loss
    from splatnav.render import pixel_ray_directions, render_perspective
    from splatnav.scene import nearest_submap
    from splatnav.synth import photo_render

    scene = formats.load_scene(args.scene)
    pose, K = _view(scene, args)
    sm = scene.submap(nearest_submap(scene, pose.translation))
    gt = formats.read_png(args.gt)[..., :3] if args.gt else photo_render(scene, pose, K).rgb
    if args.mask:
        m = formats.read_png(args.mask)
        m = (m.max(axis=2) if m.ndim == 3 else m) > 0
    else:
        mcfg = cfg.floor_mask
        m = floor_mask_pipeline(gt, geometry_providers(scene.geometry, pose, K, mcfg.region_grow_deg), mcfg.K,
                                mcfg.up_thresh, mcfg.min_area_frac, mcfg.seed).m_final
    if gt.shape[:2] != (K.height, K.width) or m.shape != gt.shape[:2]:
        raise ValueError("ground-truth image and mask must match the view size")
    render = render_perspective(sm, pose, K)
    dirs = pixel_ray_directions(pose, K).reshape(-1, 3)
    bg = eval_background(sm.background, sm.appearance, dirs, pose.translation).reshape(gt.shape)
    total, parts = total_loss(render, bg, gt, m, cfg.losses)
    out = _out_dir(args)
    formats.write_json(out / "loss.json", {"total": total, "terms": parts, "submap": sm.submap_id})
    inputs = [args.scene] + [p for p in (args.gt, args.mask) if p]
    _finish(args, cfg, out, inputs, ["loss.json"])
    print(f"total {total:.6f}  recon {parts['recon']:.6f}  supp {parts['supp_weighted']:.6f}  "
          f"bg {parts['bg_weighted']:.6f}")


def cmd_fit_bg(args, cfg):
    from splatnav.background import train_background
    from splatnav.synth import floor_samples

    scene = formats.load_scene(args.scene)
    bcfg = cfg.background
    ids = [args.submap] if args.submap is not None else [sm.submap_id for sm in scene.submaps]
    histories = {}
    for sid in ids:
        sm = scene.submap(sid)
        samples = floor_samples(scene, sid)
        bg, app, hist = train_background(sm.background, sm.appearance, samples, bcfg.steps, bcfg.learning_rate,
                                         bcfg.seed)
        sm.background, sm.appearance = bg, app
        histories[str(sid)] = {"samples": len(samples), "initial": float(hist[0]), "final": float(hist[-1]),
                               "history": hist[:: max(1, len(hist) // 200)].tolist()}
        log.info("submap %d: %d samples, L1 %.4f -> %.4f", sid, len(samples), hist[0], hist[-1])
    out = _out_dir(args)
    formats.save_scene(scene, out / "scene.splat")
    formats.write_json(out / "fit_bg.json", histories)
    _finish(args, cfg, out, [args.scene], ["scene.splat", "scene.splat.json", "fit_bg.json"])
    for sid, h in histories.items():
        print(f"submap {sid}: L1 {h['initial']:.4f} -> {h['final']:.4f}")


def cmd_topomap(args, cfg):
    from splatnav.topomap import build_topomap, encode_normal_channel

    scene = formats.load_scene(args.scene)
    if args.start is not None:
        v0 = args.start
    else:
        spec = scene.config.get("synth_spec") or {}
        start = spec.get("start")
        v0 = (np.array([start[0], start[1], spec.get("camera_height", 0.0)]) if start
              else scene.trajectory[0].pose.translation)
    out = _out_dir(args)
    outputs = ["graph.json"]
    on_node = None
    if args.dump_panos:
        pdir = out / "panos"
        pdir.mkdir(exist_ok=True)

        def on_node(vid, pano, normals):
            formats.write_png(pdir / f"node{vid:05d}_alpha.png", pano.alpha)
            formats.write_png(pdir / f"node{vid:05d}_normal.png", encode_normal_channel(normals))
            formats.write_pfm(pdir / f"node{vid:05d}_normal.pfm", normals)

    graph = build_topomap(scene, v0, cfg.topomap, on_node=on_node)
    (out / "graph.json").write_text(graph.to_json())
    _finish(args, cfg, out, [args.scene], outputs)
    flag = " (truncated at max_nodes)" if graph.truncated else ""
    print(f"graph: {len(graph.nodes)} nodes, {len(graph.edges)} edges{flag} -> {out / 'graph.json'}")


def cmd_validate(args, cfg):
    from splatnav.graph import TopoGraph
    from splatnav.validate import load_occupancy, validity_report

    graph = TopoGraph.from_json(Path(args.graph).read_text())
    pgm = args.pgm
    ymap = args.map_yaml or str(Path(pgm).with_suffix(".yaml"))
    grid = load_occupancy(pgm, ymap)
    rep = validity_report(graph, grid)
    out = _out_dir(args)
    formats.write_json(out / "validity.json", rep.to_dict())
    formats.write_json(out / "offenders.geojson", rep.overlay(graph))
    _finish(args, cfg, out, [args.graph, pgm, ymap], ["validity.json", "offenders.geojson"])
    print(f"nodes {rep.node_valid_count}/{rep.node_total} ({100 * rep.node_ratio:.1f}%), "
          f"edges {rep.edge_valid_count}/{rep.edge_total} ({100 * rep.edge_ratio:.1f}%)")


def cmd_eval(args, cfg):
    from functools import partial

    from splatnav import nav
    from splatnav.graph import TopoGraph

    graph = TopoGraph.from_json(Path(args.graph).read_text())
    ncfg = cfg.nav
    out = _out_dir(args)
    inputs = [args.graph]
    if args.episodes:
        episodes = nav.episodes_from_json(Path(args.episodes).read_text())
        inputs.append(args.episodes)
    else:
        e = ncfg.episodes
        episodes = nav.generate_episodes(graph, e.count, e.seed, e.min_distance)
        (out / "episodes.json").write_text(nav.episodes_to_json(episodes))
    agent = args.agent
    if agent == "random":
        agent = partial(nav.random_agent, num_actions=ncfg.random_actions)
        agent.__name__ = "random"
    workers = int(cfg.runtime.get("threads") or 1)
    rep = nav.evaluate(graph, episodes, agent, ncfg.success_radius, ncfg.seed, ncfg.max_steps, workers)
    (out / "eval.json").write_text(rep.to_json())
    (out / "eval.txt").write_text(rep.table())
    outputs = ["eval.json", "eval.txt"] + ([] if args.episodes else ["episodes.json"])
    _finish(args, cfg, out, inputs, outputs)
    print(rep.table(), end="")


def cmd_info(args, cfg):
    scene = formats.load_scene(args.scene)
    K = scene.intrinsics
    print(f"scene {args.scene}")
    print(f"  frames      {len(scene.trajectory)}")
    print(f"  intrinsics  {K.width}x{K.height} fx={K.fx:.2f} fy={K.fy:.2f}")
    print(f"  geometry    {'analytic' if scene.geometry is not None else 'none'}")
    for sm in scene.submaps:
        c = sm.centroid
        print(f"  submap {sm.submap_id:3d}  {len(sm.gaussians):6d} gaussians  {len(sm.member_frames):4d} frames  "
              f"centroid ({c[0]:.2f}, {c[1]:.2f}, {c[2]:.2f})")


COMMANDS = {
    "synth": cmd_synth, "cluster": cmd_cluster, "mask": cmd_mask, "render": cmd_render, "loss": cmd_loss,
    "fit-bg": cmd_fit_bg, "topomap": cmd_topomap, "validate": cmd_validate, "eval": cmd_eval, "info": cmd_info,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="YAML config file (merged over the shipped defaults)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config value, e.g. topomap.tau_alpha=0.9 (repeatable)")
    common.add_argument("--threads", type=int, help="worker threads for rendering and evaluation")
    common.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    view = _Parser(add_help=False)
    view.add_argument("--frame", type=int, default=0, help="trajectory frame index")
    view.add_argument("--pitch", type=float, default=-30.0, help="camera tilt in degrees (negative looks down)")
    view.add_argument("--width", type=int, help="override image width (square pixels, --hfov)")
    view.add_argument("--height", type=int)
    view.add_argument("--hfov", type=float, default=90.0)

    p = _Parser(prog="splatnav", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", parents=[common], help="build a synthetic scene and its occupancy map")
    s.add_argument("--spec", help="scene description JSON")
    s.add_argument("--world", help="built-in world name (corridor, l_room, two_room)")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)

    s = sub.add_parser("cluster", parents=[common], help="cluster the trajectory into submaps")
    s.add_argument("--scene", required=True)
    s.add_argument("--out", required=True)

    s = sub.add_parser("mask", parents=[common, view], help="run the floor mask pipeline on one view")
    s.add_argument("--scene", required=True)
    s.add_argument("--provider-cmd", help="external provider command (see ExternalProvider)")
    s.add_argument("--out", required=True)

    s = sub.add_parser("render", parents=[common, view], help="render a perspective view or a panorama")
    s.add_argument("--scene", required=True)
    s.add_argument("--mode", choices=["perspective", "equirect"], default="perspective")
    s.add_argument("--position", type=_vec3, help="panorama centre x,y,z (equirect mode)")
    s.add_argument("--pano-height", type=int)
    s.add_argument("--out", required=True)

    s = sub.add_parser("loss", parents=[common, view], help="evaluate the training objective on one view")
    s.add_argument("--scene", required=True)
    s.add_argument("--gt", help="ground-truth PNG (default: synthetic photograph)")
    s.add_argument("--mask", help="floor mask PNG (default: mask pipeline)")
    s.add_argument("--out", required=True)

    s = sub.add_parser("fit-bg", parents=[common], help="fit submap background models to floor pixels")
    s.add_argument("--scene", required=True)
    s.add_argument("--submap", type=int)
    s.add_argument("--out", required=True)

    s = sub.add_parser("topomap", parents=[common], help="grow the topological map")
    s.add_argument("--scene", required=True)
    s.add_argument("--start", type=_vec3, help="start viewpoint x,y,z")
    s.add_argument("--dump-panos", action="store_true", help="write per-node alpha/normal panoramas")
    s.add_argument("--out", required=True)

    s = sub.add_parser("validate", parents=[common], help="score a graph against an occupancy map")
    s.add_argument("--graph", required=True)
    s.add_argument("--pgm", required=True)
    s.add_argument("--map-yaml", help="map YAML (default: next to the PGM)")
    s.add_argument("--out", required=True)

    s = sub.add_parser("eval", parents=[common], help="run navigation episodes and report metrics")
    s.add_argument("--graph", required=True)
    s.add_argument("--episodes", help="episode JSON (default: generate from the graph)")
    s.add_argument("--agent", choices=["shortest", "random"], default="shortest")
    s.add_argument("--out", required=True)

    s = sub.add_parser("info", parents=[common], help="summarise a scene file")
    s.add_argument("--scene", required=True)
    return p


def main(argv=None) -> int:
    from splatnav.formats import SceneFormatError
    from splatnav.validate import OccupancyParseError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as e:  # --help
        return int(e.code or 0)
    logging.basicConfig(level=getattr(logging, args.log_level), format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = list(args.set)
        if args.threads is not None:
            overrides.append(f"runtime.threads={args.threads}")
        cfg = load_config(args.config, overrides)
        threads = cfg.runtime.get("threads")
        if threads:
            from splatnav.render import set_threads

            set_threads(int(threads))
        COMMANDS[args.command](args, cfg)
    except (OSError, SceneFormatError, OccupancyParseError, yaml.YAMLError) as e:
        print(f"splatnav {args.command}: I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError, ConfigError, json.JSONDecodeError) as e:
        print(f"splatnav {args.command}: {e}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
