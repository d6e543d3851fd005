"""End-to-end acceptance checks. Each test prints one PASS/FAIL line, run with ``pytest -s`` to see them
interleaved, or read them from the captured output block of a failure."""

import json
import os
import subprocess
import sys
import time

import numpy as np
import pytest

from oracles import march_edge_free, ray_scene, reference_bfs, roi_directions, ssim_direct
from splatnav.background import (AppearanceMLP, BackgroundModel, BackgroundSamples, eval_background,
                                 loss_and_grads, rgb_to_sh0, train_background)
from splatnav.cluster import ClusteringConfig, augment_overlap, cluster_trajectory
from splatnav.config import load_config
from splatnav.floor_mask import SegmentationProviders, floor_mask_pipeline, geometry_providers
from splatnav.graph import TopoGraph, ViewpointNode
from splatnav.losses import LossConfig, l1_loss, ssim, total_loss
from splatnav.nav import Episode, compute_metrics, evaluate, generate_episodes
from splatnav.render import RenderOutput, render_equirect, render_perspective
from splatnav.scene import CameraPose, Gaussian, GaussianSet, Intrinsics, SubmapModel, yaw_rotation
from splatnav.synth import SynthSceneSpec, photo_render, synthesize
from splatnav.topomap import TopomapConfig
from splatnav.validate import OccupancyGrid, edge_valid, validity_report

pytestmark = pytest.mark.acceptance


def report(capsys, number, title, ok, detail=""):
    with capsys.disabled():
        print(f"\n{'PASS' if ok else 'FAIL'}  criterion {number:2d}  {title}" + (f"  [{detail}]" if detail else ""))
    assert ok, detail


def bare_submap(gs):
    return SubmapModel(0, gs, BackgroundModel.zeros(), AppearanceMLP.init(), np.zeros(3))


def single_gaussian(opacity=0.7):
    g = Gaussian([0, 0, 5], [0.25] * 3, [1, 0, 0, 0], opacity, rgb_to_sh0((0.6, 0.3, 0.2)))
    return bare_submap(GaussianSet.from_list([g]))


K100 = Intrinsics(100.0, 100.0, 50.0, 50.0, 101, 101)


def test_1_single_gaussian_oracle(capsys):
    sm = single_gaussian()
    render_perspective(sm, CameraPose.identity(), K100)  # load the compiled kernels before timing
    t = time.perf_counter()
    out = render_perspective(sm, CameraPose.identity(), K100, background_color=(0, 0, 0))
    dt = time.perf_counter() - t
    sigma2 = (100 * 0.25 / 5) ** 2 + 0.3
    errs = [abs(out.alpha[50, 50] - 0.7)]
    for k in (1, 2):
        d = round(k * np.sqrt(sigma2))
        expect = 0.7 * np.exp(-0.5 * d * d / sigma2)
        errs += [abs(out.alpha[50, 50 + d] - expect), abs(out.alpha[50 - d, 50] - expect)]
    ok = max(errs) < 1e-3 and dt < 1.0
    report(capsys, 1, "single Gaussian alpha profile", ok, f"max err {max(errs):.2e}, {dt:.3f}s")


def wall_submap():
    xs = np.arange(-4.0, 4.01, 0.1)
    pos = np.array([[x, y, 3.0] for x in xs for y in xs])
    n = len(pos)
    gs = GaussianSet(pos, np.full((n, 3), 0.12), np.tile([1.0, 0, 0, 0], (n, 1)), np.full(n, 0.98),
                     rgb_to_sh0(np.tile([0.5, 0.4, 0.3], (n, 1))))
    return bare_submap(gs)


def test_2_compositing_identities(capsys):
    K = Intrinsics.from_fov(40, 30, 90)
    t = time.perf_counter()
    empty = bare_submap(GaussianSet.empty())
    bg = render_perspective(empty, CameraPose.identity(), K, background_color=(0.2, 0.4, 0.6))
    empty_ok = np.all(bg.alpha == 0) and np.array_equal(bg.rgb, np.broadcast_to([0.2, 0.4, 0.6], bg.rgb.shape))
    wall = wall_submap()
    a = render_perspective(wall, CameraPose.identity(), K, background_color=(0, 0, 0))
    b = render_perspective(wall, CameraPose.identity(), K, background_color=(1, 1, 1))
    dt = time.perf_counter() - t
    diff = np.abs(a.rgb - b.rgb).max()
    ok = empty_ok and a.alpha.min() > 0.99 and diff < 1 / 255 and dt < 1.0
    report(capsys, 2, "compositing identities", ok, f"alpha=0 exact: {empty_ok}, swap diff {diff * 255:.3f}/255, {dt:.3f}s")


def test_3_equirect_rotation_equivariance(capsys, worlds):
    sm = worlds["l_room"].scene.submaps[3]
    c = sm.centroid.copy()
    R = yaw_rotation(np.pi / 2)
    rotated = SubmapModel(sm.submap_id, sm.gaussians.transformed(R, c - R @ c), sm.background, sm.appearance,
                          sm.centroid, sm.member_frames)
    t = time.perf_counter()
    a = render_equirect(sm, c, 256, background_color=(0.2, 0.3, 0.4))
    b = render_equirect(rotated, c, 256, background_color=(0.2, 0.3, 0.4))
    dt = time.perf_counter() - t
    # a quarter turn towards +Y moves content a quarter of the width towards larger columns
    diff = np.abs(np.roll(a.rgb, 512 // 4, axis=1) - b.rgb).max()
    ok = a.rgb.shape == (256, 512, 3) and diff < 2 / 255 and dt < 10.0
    report(capsys, 3, "equirect 90 degree equivariance", ok, f"max diff {diff * 255:.2e}/255, {dt:.2f}s")


def test_4_loss_suite(capsys):
    rng = np.random.default_rng(0)
    x = rng.uniform(size=(24, 32, 3))
    exact_one = ssim(x, x) == 1.0
    c1 = LossConfig().ssim_c1
    const_err = abs(ssim(np.zeros((16, 16, 3)), np.ones((16, 16, 3))) - c1 / (1 + c1))
    gt = rng.uniform(size=(20, 22, 3))
    rgb = np.clip(gt + rng.normal(0, 0.1, gt.shape), 0, 1)
    m = rng.uniform(size=(20, 22)) > 0.7
    render = RenderOutput(rgb, rng.uniform(size=(20, 22)), np.zeros((20, 22)))
    total, _ = total_loss(render, rng.uniform(size=gt.shape), gt, m, LossConfig(lambda_supp=0.0, lambda_bg=0.0))
    keep = ~m
    expect = 0.8 * l1_loss(rgb, gt, keep) + 0.2 * (1 - ssim_direct(rgb, gt)[keep].mean())
    recon_err = abs(total - expect)
    cfg = load_config().losses
    defaults = (cfg.lambda_ssim, cfg.lambda_supp, cfg.lambda_bg) == (0.2, 1.0, 1.0)
    ok = exact_one and const_err < 1e-9 and recon_err < 1e-12 and defaults
    report(capsys, 4, "loss suite", ok,
           f"ssim(x,x)==1: {exact_one}, const err {const_err:.1e}, recon err {recon_err:.1e}, defaults {defaults}")


def _unit(v):
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def test_5_background_training(capsys):
    rng = np.random.default_rng(7)
    bg, app = BackgroundModel.init(seed=8), AppearanceMLP.init(seed=9, position_scale=5.0)
    n = 40
    s = BackgroundSamples(_unit(rng.normal(size=(n, 3))), rng.normal(size=(n, 3)) * 3, rng.uniform(size=(n, 3)),
                          rng.uniform(0.2, 1.0, size=n))
    eps = 1e-12
    _, g = loss_and_grads(bg, app, s, smooth_eps=eps)
    params = bg.mlp.weights + app.mlp.weights
    grads = g.bg_W + g.app_W
    worst = 0.0
    for P, G in zip(params, grads):
        for _ in range(10):
            idx = tuple(rng.integers(k) for k in P.shape)
            old = P[idx]
            P[idx] = old + 1e-5
            lp, _ = loss_and_grads(bg, app, s, smooth_eps=eps)
            P[idx] = old - 1e-5
            lm, _ = loss_and_grads(bg, app, s, smooth_eps=eps)
            P[idx] = old
            fd = (lp - lm) / 2e-5
            worst = max(worst, abs(fd - G[idx]) / max(abs(fd), abs(G[idx]), 1e-8))
    # constant floor colour seen from cameras spread over a room
    m = 400
    d = _unit(rng.normal(size=(m, 3)))
    d[:, 2] = -np.abs(d[:, 2]) - 0.2
    floor = BackgroundSamples(_unit(d), np.column_stack([rng.uniform(0, 8, m), rng.uniform(0, 3, m), np.full(m, 1.6)]),
                              np.tile([0.45, 0.38, 0.30], (m, 1)), np.ones(m))
    t = time.perf_counter()
    _, _, hist = train_background(BackgroundModel.init(seed=1), AppearanceMLP.init(seed=2, position_scale=10.0),
                                  floor, steps=2000)
    dt = time.perf_counter() - t
    reached = np.flatnonzero(hist < 0.02)
    first = int(reached[0]) if len(reached) else None
    ok = worst < 1e-4 and first is not None and first <= 2000 and dt < 30.0
    report(capsys, 5, "background MLP gradients and fit", ok,
           f"worst rel grad err {worst:.1e}, L1<0.02 at step {first}, final {hist[-1]:.4f}, {dt:.1f}s")


def _box(x1, y1):
    return [{"p0": [0, 0], "p1": [x1, 0]}, {"p0": [x1, 0], "p1": [x1, y1]},
            {"p0": [x1, y1], "p1": [0, y1]}, {"p0": [0, y1], "p1": [0, 0]}]


ROOMS = [
    (dict(floors=[[0, 0, 6, 5]], walls=_box(6, 5)), ([1.0, 2.5], 0.2, -35)),
    (dict(floors=[[0, 0, 4, 4]], walls=_box(4, 4), floor_color=(0.30, 0.32, 0.40)), ([0.8, 0.8], 0.8, -30)),
    (dict(floors=[[0, 0, 9, 3]], walls=_box(9, 3), wall_color=(0.55, 0.6, 0.5)), ([1.0, 1.5], 0.0, -25)),
    (dict(floors=[[0, 0, 5, 5], [5, 1.5, 8, 3.5]],
          walls=[{"p0": [0, 0], "p1": [5, 0]}, {"p0": [5, 0], "p1": [5, 1.5]}, {"p0": [5, 3.5], "p1": [5, 5]},
                 {"p0": [5, 5], "p1": [0, 5]}, {"p0": [0, 5], "p1": [0, 0]}, {"p0": [5, 1.5], "p1": [8, 1.5]},
                 {"p0": [8, 1.5], "p1": [8, 3.5]}, {"p0": [8, 3.5], "p1": [5, 3.5]}]), ([1.0, 2.5], 0.0, -30)),
    (dict(floors=[[0, 0, 7, 6]], walls=_box(7, 6) + [{"p0": [3.5, 0], "p1": [3.5, 3.5]}],
          floor_color=(0.55, 0.50, 0.42), wall_color=(0.85, 0.85, 0.9)), ([1.2, 4.5], -0.6, -40)),
]


def test_6_floor_mask_pipeline(capsys):
    K = Intrinsics.from_fov(96, 72, 90)
    ious, contained, deterministic = [], True, True
    for kw, (xy, yaw, pitch) in ROOMS:
        spec = SynthSceneSpec(trajectory=[xy], num_clusters=1, **kw)
        scene = synthesize(spec).scene
        pose = CameraPose.looking([xy[0], xy[1], 1.6], yaw, np.radians(pitch))
        image = photo_render(scene, pose, K).rgb
        geo = geometry_providers(scene.geometry, pose, K)
        colour = np.array(spec.floor_color)

        # the semantic mask is a colour classifier on the photograph, independent of the geometry
        def semantic(img, prompt, colour=colour):
            return np.abs(img - colour).max(axis=2) < 0.1

        prov = SegmentationProviders(semantic, geo.normals, geo.promptable)
        res = floor_mask_pipeline(image, prov, K=3, seed=0)
        contained &= np.array_equal(res.m_cand, res.m_sem & res.m_norm)
        deterministic &= res.prompts == floor_mask_pipeline(image, prov, K=3, seed=0).prompts
        deterministic &= len(res.prompts) == 3
        truth = geo.semantic(None, "floor")
        ious.append((res.m_final & truth).sum() / (res.m_final | truth).sum())
    ok = contained and deterministic and min(ious) >= 0.95
    report(capsys, 6, "floor mask pipeline on 5 rooms", ok,
           f"containment {contained}, K=3 deterministic {deterministic}, min IoU {min(ious):.4f}")


def test_7_clustering(capsys):
    rng = np.random.default_rng(0)
    P = np.concatenate([rng.uniform(-0.1, 0.1, (10, 3)), rng.uniform(-0.1, 0.1, (10, 3)) + [100, 0, 0]])
    labels = cluster_trajectory(P, ClusteringConfig(2))
    blobs = labels.tolist() == [0] * 10 + [1] * 10
    Q = np.random.default_rng(1).uniform(0, 30, size=(60, 3))
    lab = cluster_trajectory(Q, ClusteringConfig(6))
    sets = [[set(s.tolist()) for s in augment_overlap(Q, lab, d)] for d in (0, 1, 2, 5)]
    monotone = all(all(a <= b for a, b in zip(s0, s1)) for s0, s1 in zip(sets, sets[1:]))
    c15 = ClusteringConfig().num_clusters == 15 and load_config().clustering.num_clusters == 15
    report(capsys, 7, "trajectory clustering", blobs and monotone and c15,
           f"two blobs {blobs}, delta-monotone {monotone}, C=15 {c15}")


def test_8_topomap_matches_reference(capsys, worlds, world_graphs):
    cfg = TopomapConfig()
    lines, ok, total = [], True, 0.0
    for name in ("corridor", "l_room", "two_room"):
        res = worlds[name]
        graph, seconds = world_graphs[name]
        total += seconds
        geo = res.scene.geometry
        walls = [(w.p0, w.p1, w.height, w.thickness) for w in geo.walls]
        dirs = {d: roi_directions(cfg.pano_height_px, d) for d in range(8)}

        def passable(p, d):
            is_wall, nz = ray_scene(geo.floors, walls, np.asarray(p), dirs[d])
            return is_wall.mean() < cfg.tau_alpha and nz.mean() > cfg.tau_normal

        nodes, edges, _ = reference_bfs(res.spec.start_position(), passable, cfg.tau_dist,
                                        res.scene.frame_positions(), cfg.merge_radius)
        same_nodes = len(nodes) == len(graph.nodes) and np.allclose(graph.positions(), np.array(nodes), atol=1e-9)
        same_edges = set(graph.edges) == edges
        rep = validity_report(graph, res.grid)
        ok &= same_nodes and same_edges and rep.node_ratio == 1.0 and rep.edge_ratio == 1.0
        lines.append(f"{name}: {len(nodes)}n/{len(edges)}e match={same_nodes and same_edges} "
                     f"valid={100 * rep.node_ratio:.0f}/{100 * rep.edge_ratio:.0f}%")
    ok &= total < 120.0 and (cfg.tau_alpha, cfg.tau_normal, cfg.tau_dist) == (0.95, 0.85, 2.5)
    report(capsys, 8, "topological map vs analytic reference", ok, "; ".join(lines) + f"; {total:.1f}s")


def test_9_supercover_vs_supersampling(capsys):
    # pre-registered segment distribution: 64x64 map at 5 cm, 2% i.i.d. occupied cells,
    # uniform start, uniform heading, length uniform in [0.5, 3.6] m, clipped to the map
    rng = np.random.default_rng(0)
    cells = (rng.uniform(size=(64, 64)) < 0.02).astype(np.int8)
    grid = OccupancyGrid(0.05, [0.0, 0.0], cells)
    side = 64 * 0.05
    t = time.perf_counter()
    disagree = stricter = 0
    for _ in range(1000):
        a = rng.uniform(0, side, 2)
        th = rng.uniform(0, 2 * np.pi)
        b = np.clip(a + rng.uniform(0.5, 3.6) * np.array([np.cos(th), np.sin(th)]), 1e-9, side - 1e-9)
        ours = edge_valid(np.r_[a, 0.0], np.r_[b, 0.0], grid)
        ref = march_edge_free(cells, grid.origin, 0.05, a, b, step_frac=0.1)
        disagree += ours != ref
        stricter += (not ours) and ref
    dt = time.perf_counter() - t
    ok = disagree == 0 and dt < 5.0
    report(capsys, 9, "supercover vs resolution/10 sampling", ok,
           f"{disagree}/1000 disagree ({stricter} where supercover blocks a corner clip the samples miss), {dt:.2f}s")


def test_10_navigation_metrics(capsys, world_graphs):
    two_room, _ = world_graphs["two_room"]
    cfg = load_config().nav
    eps = generate_episodes(two_room, cfg.episodes.count, cfg.episodes.seed, cfg.episodes.min_distance)
    short = evaluate(two_room, eps, "shortest").means()
    shortest_ok = short["NE"] == 0.0 and short["SR"] == short["OSR"] == short["SPL"] == 100.0
    # forced SPL: a 2 m out-and-back detour before the 4 m shortest path
    g = TopoGraph([ViewpointNode(0, [0, 0, 0]), ViewpointNode(1, [4, 0, 0]), ViewpointNode(2, [-2, 0, 0])],
                  [(0, 1), (0, 2)])
    spl = compute_metrics(g, Episode("spl", 0, [4, 0, 0], [0, 1]), [0, 2, 0, 1]).spl
    a = evaluate(two_room, eps, "random", seed=cfg.seed).to_json()
    b = evaluate(two_room, eps, "random", seed=cfg.seed).to_json()
    rand = json.loads(a)["mean"]
    ten = cfg.random_actions == 10
    ok = shortest_ok and spl == 0.5 and a == b and rand["SR"] < 5.0 and ten
    report(capsys, 10, "navigation metrics", ok,
           f"{len(eps)} episodes; SHORTEST NE {short['NE']:.1f} SR {short['SR']:.0f} OSR {short['OSR']:.0f} "
           f"SPL {short['SPL']:.0f}; SPL case {spl}; RANDOM SR {rand['SR']:.1f}% deterministic {a == b}")


def _cli(args, threads=None):
    env = dict(os.environ)
    cmd = [sys.executable, "-m", "splatnav.cli"] + args
    if threads:
        env["NUMBA_NUM_THREADS"] = str(threads)
        cmd += ["--threads", str(threads)]
    r = subprocess.run(cmd, capture_output=True, text=True, env=env)
    assert r.returncode == 0, r.stderr
    return r


def test_11_determinism(capsys, tmp_path):
    _cli(["synth", "--world", "l_room", "--out", str(tmp_path / "scene")])
    scene = str(tmp_path / "scene" / "scene.splat")
    runs = {}
    for tag, threads in (("a", None), ("b", None), ("t4", 4)):
        topo, ev = tmp_path / f"topo_{tag}", tmp_path / f"eval_{tag}"
        _cli(["topomap", "--scene", scene, "--out", str(topo)], threads)
        _cli(["eval", "--graph", str(topo / "graph.json"), "--agent", "random", "--set",
              "nav.episodes.min_distance=5", "--out", str(ev)], threads)
        runs[tag] = [(topo / "graph.json").read_bytes()] + [(ev / f).read_bytes() for f in
                                                            ("episodes.json", "eval.json", "eval.txt")]
        runs[tag].append(json.loads((topo / "manifest.json").read_text())["run_hash"])
    repeat = runs["a"] == runs["b"]
    threads = runs["a"] == runs["t4"]
    report(capsys, 11, "byte-identical topomap/eval outputs", repeat and threads,
           f"two runs identical {repeat}, 1 vs 4 threads identical {threads}")
