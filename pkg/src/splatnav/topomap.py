"""Mesh-free topological map generation by breadth-first expansion over rendered panoramas.

From each viewpoint the nearest submap renders an equirectangular alpha
panorama and a normal provider supplies the upward normal component per
pixel. A direction d (0..7, 45-degree steps counterclockwise from +X) is
traversable when the ground band ahead is mostly empty of Gaussians and
mostly horizontal.

Normal channels are raw n_z values in [-1, 1] and the thresholds apply in
that space. When a channel is written to an 8-bit image it is stored as
(n_z + 1) / 2 (see :func:`encode_normal_channel`).
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from splatnav.geometry import RoomGeometry
from splatnav.graph import TopoGraph, ViewpointNode
from splatnav.render import Panorama, equirect_angles, equirect_directions, render_equirect
from splatnav.scene import SceneBundle, TrajectoryFrame, nearest_submap

log = logging.getLogger(__name__)

STATISTICS = ("mean", "max", "quantile")


@dataclass(frozen=True)
class RoiConfig:
    azimuth_halfwidth_deg: float = 15.0
    elevation_min_deg: float = -60.0
    elevation_max_deg: float = -20.0
    statistic: str = "mean"
    quantile: float = 0.5

    def __post_init__(self):
        if not 0 < self.azimuth_halfwidth_deg <= 180:
            raise ValueError("azimuth_halfwidth_deg must be in (0, 180]")
        if not -90 <= self.elevation_min_deg < self.elevation_max_deg <= 90:
            raise ValueError("need -90 <= elevation_min_deg < elevation_max_deg <= 90")
        if self.statistic not in STATISTICS:
            raise ValueError(f"statistic must be one of {STATISTICS}")
        if not 0 <= self.quantile <= 1:
            raise ValueError("quantile must be in [0, 1]")


@dataclass(frozen=True)
class TopomapConfig:
    tau_alpha: float = 0.95
    tau_normal: float = 0.85
    tau_dist: float = 2.5
    roi: RoiConfig = field(default_factory=RoiConfig)
    merge_radius: float | None = None  # None -> 0.25 * tau_dist
    pano_height_px: int = 256
    max_nodes: int = 100_000
    render_rgb: bool = False

    def __post_init__(self):
        if isinstance(self.roi, dict):
            object.__setattr__(self, "roi", RoiConfig(**self.roi))
        if self.merge_radius is None:
            object.__setattr__(self, "merge_radius", 0.25 * self.tau_dist)
        if not (0 < self.tau_alpha < 1 and 0 < self.tau_normal < 1):
            raise ValueError("tau_alpha and tau_normal must be in (0, 1)")
        if self.tau_dist <= 0:
            raise ValueError("tau_dist must be > 0")
        if not 0 <= self.merge_radius < self.tau_dist / 2:
            raise ValueError("merge_radius must be in [0, tau_dist / 2)")
        if self.max_nodes < 1:
            raise ValueError("max_nodes must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


def roi_mask(height: int, direction: int, roi: RoiConfig) -> np.ndarray:
    """Boolean (H, 2H) selection of the window for ``direction``, by pixel-centre angle."""
    if not 0 <= direction < 8:
        raise ValueError("direction index must be in 0..7")
    az, el = equirect_angles(height)
    centre = np.radians(45.0 * direction)
    daz = np.abs((az - centre + np.pi) % (2 * np.pi) - np.pi)
    cols = daz <= np.radians(roi.azimuth_halfwidth_deg) + 1e-12
    rows = (el >= np.radians(roi.elevation_min_deg) - 1e-12) & (el <= np.radians(roi.elevation_max_deg) + 1e-12)
    return rows[:, None] & cols[None, :]


def roi_mean(channel: np.ndarray, direction: int, roi: RoiConfig = RoiConfig()) -> float:
    """ROI statistic of a panorama channel (the mean unless ``roi.statistic`` says otherwise)."""
    channel = np.asarray(channel, dtype=np.float64)
    h, w = channel.shape
    if w != 2 * h:
        raise ValueError("panorama channel must be H x 2H")
    sel = roi_mask(h, direction, roi)
    if not sel.any():
        raise ValueError("empty ROI: no pixel centre falls inside the configured window")
    vals = channel[sel]
    if roi.statistic == "mean":
        return float(vals.mean())
    if roi.statistic == "max":
        return float(vals.max())
    return float(np.quantile(vals, roi.quantile))


def traversable(pano: Panorama, normal_pano: np.ndarray, d: int, cfg: TopomapConfig = TopomapConfig()) -> bool:
    alpha = pano.alpha if isinstance(pano, Panorama) else np.asarray(pano)
    normal_pano = np.asarray(normal_pano)
    if alpha.shape != normal_pano.shape:
        raise ValueError(f"alpha {alpha.shape} and normal {normal_pano.shape} panoramas differ in size")
    return (roi_mean(alpha, d, cfg.roi) < cfg.tau_alpha
            and roi_mean(normal_pano, d, cfg.roi) > cfg.tau_normal)


def next_viewpoint(v, d: int, tau_dist: float, trajectory) -> np.ndarray:
    """Step ``tau_dist`` along direction d in the ground plane, then take the height
    of the trajectory frame nearest in xy (ties: earliest frame)."""
    pos = v.position if isinstance(v, ViewpointNode) else np.asarray(v, dtype=np.float64)
    ang = np.radians(45.0 * d)
    xy = pos[:2] + tau_dist * np.array([np.cos(ang), np.sin(ang)])
    traj = _trajectory_positions(trajectory)
    if len(traj) == 0:
        raise ValueError("trajectory is empty")
    k = int(np.argmin(np.sum((traj[:, :2] - xy) ** 2, axis=1)))
    return np.array([xy[0], xy[1], traj[k, 2]])


def _trajectory_positions(trajectory) -> np.ndarray:
    if isinstance(trajectory, np.ndarray):
        return trajectory.reshape(-1, 3)
    return np.array([f.pose.translation if isinstance(f, TrajectoryFrame) else f for f in trajectory],
                    dtype=np.float64).reshape(-1, 3)


def encode_normal_channel(nz: np.ndarray) -> np.ndarray:
    return (np.asarray(nz) + 1.0) / 2.0


def decode_normal_channel(stored: np.ndarray) -> np.ndarray:
    return 2.0 * np.asarray(stored) - 1.0


def analytic_up_normals(geometry: RoomGeometry, center, height_px: int) -> np.ndarray:
    """n_z of the first surface hit along every panorama ray; rays that escape give -1."""
    dirs = equirect_directions(height_px).reshape(-1, 3)
    origins = np.broadcast_to(np.asarray(center, dtype=np.float64), dirs.shape)
    _, normal, _ = geometry.raycast(origins, dirs)
    return normal[:, 2].reshape(height_px, 2 * height_px)


def splat_up_normals(pano: Panorama) -> np.ndarray:
    """n_z from the shortest-axis normals of the splats.

    A pixel more than half covered takes the alpha-normalised blend of its
    splat normals. Anything less takes the normal of what an empty render
    means there: floor (+1) below the horizon, open space (-1) above it.
    Deciding per pixel keeps surface edges sharp instead of averaging a wall
    with the floor in front of it.
    """
    _, el = equirect_angles(pano.height)
    fill = np.broadcast_to(np.where(el < 0, 1.0, -1.0)[:, None], pano.alpha.shape)
    up = pano.extras["up_normal_splat"]
    covered = pano.alpha > 0.5
    blended = up / np.where(covered, pano.alpha, 1.0)
    return np.where(covered, np.clip(blended, -1.0, 1.0), fill)


def upward_normal_provider_default(scene: SceneBundle, center, height_px: int,
                                   pano: Panorama | None = None) -> np.ndarray:
    """Raw n_z panorama from the scene's analytic geometry when it has any,
    otherwise from rendered per-Gaussian normals."""
    if scene.geometry is not None:
        return analytic_up_normals(scene.geometry, center, height_px)
    if pano is None or "up_normal_splat" not in pano.extras:
        sm = scene.submap(nearest_submap(scene, center))
        pano = render_equirect(sm, center, height_px, background_color=(0.0, 0.0, 0.0), with_normals=True)
    return splat_up_normals(pano)


def _find_merge(graph: TopoGraph, p: np.ndarray, radius: float) -> int | None:
    pos = graph.positions()
    d = np.linalg.norm(pos[:, :2] - p[:2], axis=1)
    ok = d <= radius
    if not ok.any():
        return None
    ids = np.array(graph.node_ids())
    best = d[ok].min()
    return int(ids[ok & (d == best)].min())


def build_topomap(scene: SceneBundle, v0, cfg: TopomapConfig = TopomapConfig(),
                  normal_provider: Callable | None = None,
                  on_node: Callable | None = None) -> TopoGraph:
    """Grow the viewpoint graph from ``v0``.

    Nodes are expanded first in, first out and directions in order 0..7.
    A step landing within ``cfg.merge_radius`` (in xy) of an existing node
    links to that node (the closest, then the lowest id) instead of creating
    one. When a new node is needed while the graph already holds
    ``cfg.max_nodes`` nodes, expansion stops and ``truncated`` is set.

    ``normal_provider(scene, center, height_px, pano)`` returns the raw n_z
    panorama; the default uses analytic geometry when the scene has it.
    ``on_node(node_id, pano, normals)`` is called after each render, e.g. to
    dump panoramas.
    """
    v0 = np.asarray(v0, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(v0)):
        raise ValueError("v0 must be finite")
    if not scene.submaps:
        raise ValueError("scene has no submaps")
    provider = normal_provider or upward_normal_provider_default
    need_splat_normals = normal_provider is None and scene.geometry is None
    traj = scene.frame_positions()
    meta = cfg.to_dict()
    meta["normal_provider"] = getattr(provider, "__name__", type(provider).__name__)
    if provider is upward_normal_provider_default:
        meta["normal_provider"] += ":analytic" if scene.geometry is not None else ":splat"
    graph = TopoGraph(config=meta)
    graph.add_node(ViewpointNode(0, v0, nearest_submap(scene, v0)))
    queue = deque([0])
    H = cfg.pano_height_px
    while queue:
        vid = queue.popleft()
        pos = graph.position(vid)
        sid = nearest_submap(scene, pos)
        sm = scene.submap(sid)
        try:
            pano = render_equirect(sm, pos, H, background_color=None if cfg.render_rgb else (0.0, 0.0, 0.0),
                                   with_normals=need_splat_normals)
            normals = np.asarray(provider(scene, pos, H, pano), dtype=np.float64)
        except Exception as e:
            raise RuntimeError(f"panorama/normals failed at node {vid} {pos.tolist()} (submap {sid}): {e}") from e
        if normals.shape != pano.alpha.shape:
            raise RuntimeError(f"normal provider returned {normals.shape}, expected {pano.alpha.shape}")
        if on_node is not None:
            on_node(vid, pano, normals)
        for d in range(8):
            if not traversable(pano, normals, d, cfg):
                continue
            p = next_viewpoint(pos, d, cfg.tau_dist, traj)
            hit = _find_merge(graph, p, cfg.merge_radius)
            if hit is not None:
                graph.add_edge(vid, hit)
                continue
            if len(graph.nodes) >= cfg.max_nodes:
                graph.truncated = True
                log.warning("max_nodes=%d reached; graph truncated", cfg.max_nodes)
                return graph
            nid = len(graph.nodes)
            graph.add_node(ViewpointNode(nid, p, nearest_submap(scene, p), d))
            graph.add_edge(vid, nid)
            queue.append(nid)
        log.debug("node %d expanded, %d nodes, %d edges", vid, len(graph.nodes), len(graph.edges))
    return graph
