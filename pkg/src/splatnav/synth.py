"""Synthetic floor-aware scenes built from a declarative room description.

Walls become flat Gaussians on both faces and on the end caps. Floors get
Gaussians only when floor suppression is off, so by default a scene looks
like what a floor-aware model would have learned: walls made of splats and
an empty floor left to the background model. The same description yields
analytic geometry and a ground-truth occupancy grid.

Spec JSON keys (all optional except ``floors``)::

    name, seed, floors [[xmin, ymin, xmax, ymax], ...],
    walls [{"p0": [x, y], "p1": [x, y], "height"?, "thickness"?, "color"?}],
    wall_height, wall_thickness, gaussian_spacing, wall_opacity,
    floor_suppression, wall_color, floor_color, color_jitter,
    trajectory [[x, y], ...] (polyline), frame_spacing, camera_height,
    intrinsics {width, height, hfov_deg}, num_clusters, overlap_delta,
    crop_radius, grid_resolution, start [x, y]
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from splatnav.background import AppearanceMLP, BackgroundModel, rgb_to_sh0
from splatnav.cluster import ClusteringConfig, augment_overlap, cluster_trajectory
from splatnav.geometry import RoomGeometry, Wall
from splatnav.scene import CameraPose, GaussianSet, Intrinsics, SceneBundle, SubmapModel, TrajectoryFrame, rotmat_to_quat
from splatnav.validate import FREE, OCCUPIED, UNKNOWN, OccupancyGrid

WORLDS_DIR = Path(__file__).parent / "worlds"
FLAT = 0.005  # thickness of surface splats, metres


@dataclass
class SynthSceneSpec:
    floors: list
    walls: list = field(default_factory=list)
    name: str = "scene"
    seed: int = 0
    wall_height: float = 2.5
    wall_thickness: float = 0.1
    gaussian_spacing: float = 0.15
    wall_opacity: float = 0.97
    floor_suppression: bool = True
    wall_color: tuple = (0.78, 0.74, 0.68)
    floor_color: tuple = (0.45, 0.38, 0.30)
    color_jitter: float = 0.04
    trajectory: list = field(default_factory=list)
    frame_spacing: float = 0.5
    camera_height: float = 1.6
    intrinsics: dict = field(default_factory=lambda: {"width": 64, "height": 48, "hfov_deg": 90.0})
    num_clusters: int = 15
    overlap_delta: float = 3.0
    crop_radius: float = 6.0
    grid_resolution: float = 0.05
    start: list | None = None

    def __post_init__(self):
        if not self.floors:
            raise ValueError("spec needs at least one floor rectangle")
        for f in self.floors:
            if len(f) != 4 or not (f[2] > f[0] and f[3] > f[1]):
                raise ValueError(f"degenerate floor rectangle {f}")
        for w in self.walls:
            if np.hypot(w["p1"][0] - w["p0"][0], w["p1"][1] - w["p0"][1]) <= 0:
                raise ValueError(f"zero-length wall {w}")
        if self.gaussian_spacing <= 0 or self.wall_height <= 0 or self.wall_thickness <= 0:
            raise ValueError("spacing, wall height and thickness must be positive")
        if self.grid_resolution <= 0:
            raise ValueError("grid_resolution must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSceneSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown spec keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "SynthSceneSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return asdict(self)

    def geometry(self) -> RoomGeometry:
        walls = [Wall(tuple(w["p0"]), tuple(w["p1"]), float(w.get("height", self.wall_height)),
                      float(w.get("thickness", self.wall_thickness)),
                      tuple(w["color"]) if w.get("color") is not None else None) for w in self.walls]
        return RoomGeometry([tuple(map(float, f)) for f in self.floors], walls)

    def start_position(self) -> np.ndarray:
        xy = self.start if self.start is not None else (self.trajectory[0] if self.trajectory
                                                         else self.geometry().floors[0][:2])
        return np.array([xy[0], xy[1], self.camera_height], dtype=np.float64)


def builtin_world(name: str) -> SynthSceneSpec:
    path = WORLDS_DIR / f"{name}.json"
    if not path.exists():
        raise ValueError(f"no built-in world {name!r}; have {sorted(p.stem for p in WORLDS_DIR.glob('*.json'))}")
    return SynthSceneSpec.load(path)


# A sheet of splats (in-plane sigma 0.6 x spacing, opacity ~0.97) reaches half coverage this many
# spacings beyond its outermost row, so edge rows are inset by it to put the visible edge on the boundary.
EDGE_INSET = 0.82


def _grid(length: float, spacing: float) -> np.ndarray:
    """Sample positions along [0, length], inset so the rendered half-coverage edge falls on 0 and length."""
    n = int(round(length / spacing - 2 * EDGE_INSET + 1))
    if n < 2:
        return np.array([0.5 * length])
    step = length / (n - 1 + 2 * EDGE_INSET)
    return (EDGE_INSET + np.arange(n)) * step


def _surface_gaussians(positions, rot, scales, opacity, colors) -> GaussianSet:
    n = len(positions)
    q = rotmat_to_quat(rot)
    return GaussianSet(np.asarray(positions, dtype=np.float64).reshape(-1, 3),
                       np.tile(scales, (n, 1)).astype(np.float64),
                       np.tile(q, (n, 1)),
                       np.full(n, float(opacity)),
                       rgb_to_sh0(colors).reshape(n, 1, 3))


def wall_gaussians(wall: Wall, spacing: float, opacity: float, color, rng, jitter: float) -> GaussianSet:
    c, u, n, half = wall.frame()
    u3, n3, z3 = np.array([u[0], u[1], 0.0]), np.array([n[0], n[1], 0.0]), np.array([0.0, 0.0, 1.0])
    R = np.column_stack([u3, n3, z3])
    s = 0.6 * spacing
    col = np.asarray(color, dtype=np.float64)
    along = _grid(2 * half[0], spacing) - half[0]
    up = _grid(wall.height, spacing)
    A, Z = np.meshgrid(along, up, indexing="ij")
    sets = []
    for side in (-1.0, 1.0):
        pos = (c[None, :] + A.reshape(-1, 1) * u[None, :] + side * half[1] * n[None, :])
        pos = np.column_stack([pos, Z.reshape(-1)])
        cols = np.clip(col + rng.uniform(-jitter, jitter, (len(pos), 3)), 0, 1)
        sets.append(_surface_gaussians(pos, R, (s, FLAT, s), opacity, cols))
    # end caps, facing along the wall axis
    across = _grid(2 * half[1], spacing) - half[1]
    C, Z = np.meshgrid(across, up, indexing="ij")
    for side in (-1.0, 1.0):
        pos = c[None, :] + side * half[0] * u[None, :] + C.reshape(-1, 1) * n[None, :]
        pos = np.column_stack([pos, Z.reshape(-1)])
        cols = np.clip(col + rng.uniform(-jitter, jitter, (len(pos), 3)), 0, 1)
        sets.append(_surface_gaussians(pos, R, (FLAT, min(s, half[1]), s), opacity, cols))
    return GaussianSet.concatenate(sets)


def floor_gaussians(rect, spacing: float, opacity: float, color, rng, jitter: float) -> GaussianSet:
    x0, y0, x1, y1 = rect
    X, Y = np.meshgrid(x0 + _grid(x1 - x0, spacing), y0 + _grid(y1 - y0, spacing), indexing="ij")
    pos = np.column_stack([X.reshape(-1), Y.reshape(-1), np.zeros(X.size)])
    cols = np.clip(np.asarray(color, float) + rng.uniform(-jitter, jitter, (len(pos), 3)), 0, 1)
    s = 0.6 * spacing
    return _surface_gaussians(pos, np.eye(3), (s, s, FLAT), opacity, cols)


def scene_gaussians(spec: SynthSceneSpec, floor_suppression: bool | None = None) -> GaussianSet:
    rng = np.random.default_rng(spec.seed)
    geo = spec.geometry()
    sets = [wall_gaussians(w, spec.gaussian_spacing, spec.wall_opacity, w.color or spec.wall_color,
                           rng, spec.color_jitter) for w in geo.walls]
    suppress = spec.floor_suppression if floor_suppression is None else floor_suppression
    if not suppress:
        sets += [floor_gaussians(f, spec.gaussian_spacing, spec.wall_opacity, spec.floor_color, rng,
                                 spec.color_jitter) for f in geo.floors]
    return GaussianSet.concatenate(sets) if sets else GaussianSet.empty()


def trajectory_from_polyline(points, spacing: float, height: float) -> list[TrajectoryFrame]:
    P = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(P) == 1:
        return [TrajectoryFrame(0, CameraPose.looking([P[0, 0], P[0, 1], height], 0.0))]
    frames = []
    fid = 0
    for i in range(len(P) - 1):
        a, b = P[i], P[i + 1]
        L = float(np.linalg.norm(b - a))
        yaw = float(np.arctan2(b[1] - a[1], b[0] - a[0]))
        n = max(1, int(round(L / spacing)))
        last = i == len(P) - 2
        for k in range(n + (1 if last else 0)):
            xy = a + (b - a) * (k / n)
            frames.append(TrajectoryFrame(fid, CameraPose.looking([xy[0], xy[1], height], yaw)))
            fid += 1
    return frames


def occupancy_from_geometry(geo: RoomGeometry, resolution: float, pad_cells: int = 4) -> OccupancyGrid:
    """Cells overlapping a wall footprint are occupied, cells whose centre is on a floor are free,
    everything else is unknown."""
    xmin, ymin, xmax, ymax = geo.bounds()
    ox = np.floor(xmin / resolution) * resolution - pad_cells * resolution
    oy = np.floor(ymin / resolution) * resolution - pad_cells * resolution
    W = int(np.ceil((xmax - ox) / resolution)) + pad_cells
    H = int(np.ceil((ymax - oy) / resolution)) + pad_cells
    cols, rows = np.meshgrid(np.arange(W), np.arange(H))
    x0 = ox + cols * resolution
    y0 = oy + rows * resolution
    occ = geo.footprint_overlaps(x0, y0, x0 + resolution, y0 + resolution)
    centers = np.stack([x0 + 0.5 * resolution, y0 + 0.5 * resolution], axis=-1)
    free = geo.on_floor(centers) & ~occ
    cells = np.full((H, W), UNKNOWN, dtype=np.int8)
    cells[free] = FREE
    cells[occ] = OCCUPIED
    return OccupancyGrid(resolution, np.array([ox, oy]), cells)


@dataclass
class SynthResult:
    scene: SceneBundle
    grid: OccupancyGrid
    spec: SynthSceneSpec


def synthesize(spec: SynthSceneSpec) -> SynthResult:
    """Deterministic scene bundle plus ground-truth occupancy for ``spec``."""
    geo = spec.geometry()
    allg = scene_gaussians(spec)
    traj_pts = spec.trajectory or [spec.start_position()[:2]]
    frames = trajectory_from_polyline(traj_pts, spec.frame_spacing, spec.camera_height)
    cam = np.array([f.pose.translation for f in frames])
    C = min(spec.num_clusters, len(frames))
    ccfg = ClusteringConfig(num_clusters=C, overlap_delta=spec.overlap_delta)
    labels = cluster_trajectory(cam, ccfg)
    members = augment_overlap(cam, labels, ccfg.overlap_delta)
    xmin, ymin, xmax, ymax = geo.bounds()
    diag = float(np.hypot(xmax - xmin, ymax - ymin))
    K = spec.intrinsics
    intr = Intrinsics.from_fov(int(K["width"]), int(K["height"]), float(K.get("hfov_deg", 90.0)))
    submaps = []
    for sid, idx in enumerate(members):
        core = cam[labels == sid]
        # each submap keeps the splats near the frames that observed its area
        d = np.min(np.linalg.norm(allg.positions[:, None, :2] - cam[idx][None, :, :2], axis=2), axis=1) \
            if len(allg) else np.zeros(0)
        gs = allg.subset(np.flatnonzero(d <= spec.crop_radius))
        bg = BackgroundModel.init(seed=spec.seed * 1000 + 2 * sid)
        app = AppearanceMLP.init(seed=spec.seed * 1000 + 2 * sid + 1, position_scale=diag)
        submaps.append(SubmapModel(sid, gs, bg, app, core.mean(axis=0), [frames[i].frame_id for i in idx]))
    config = {"synth_spec": spec.to_dict(), "clustering": asdict(ccfg)}
    scene = SceneBundle(submaps, frames, intr, config, geo,
                        {"labels": labels.tolist(), "num_clusters": C, "overlap_delta": spec.overlap_delta,
                         "linkage": ccfg.linkage})
    scene.validate()
    return SynthResult(scene, occupancy_from_geometry(geo, spec.grid_resolution), spec)


def spec_of(scene: SceneBundle) -> SynthSceneSpec:
    d = scene.config.get("synth_spec")
    if d is None:
        raise ValueError("scene was not produced by the synthetic generator")
    return SynthSceneSpec.from_dict(d)


def photo_render(scene: SceneBundle, pose: CameraPose, K: Intrinsics, sky=(0.62, 0.70, 0.80),
                 full: GaussianSet | None = None):
    """What a camera would have recorded: every surface including the floor, over a constant sky.
    ``full`` may carry the precomputed unsuppressed splats."""
    from splatnav.render import render_perspective

    if full is None:
        full = scene_gaussians(spec_of(scene), floor_suppression=False)
    dummy = scene.submaps[0]
    view = SubmapModel(-1, full, dummy.background, dummy.appearance, dummy.centroid)
    return render_perspective(view, pose, K, background_color=sky)


def view_pose(frame: TrajectoryFrame, pitch_deg: float = -30.0) -> CameraPose:
    """The frame's camera tilted by ``pitch_deg`` about its own horizontal axis."""
    fwd = frame.pose.rotation[:, 2]
    yaw = float(np.arctan2(fwd[1], fwd[0]))
    return CameraPose.looking(frame.pose.translation, yaw, np.radians(pitch_deg))


def floor_samples(scene: SceneBundle, submap_id: int, K: Intrinsics | None = None, pitch_deg: float = -30.0,
                  max_frames: int = 8):
    """Background training samples for one submap: floor pixels of its member frames
    (tilted towards the floor) with the photographed colour as target."""
    from splatnav.background import BackgroundSamples
    from splatnav.floor_mask import view_geometry
    from splatnav.geometry import FLOOR
    from splatnav.render import pixel_ray_directions

    K = K or Intrinsics.from_fov(32, 24, 90.0)
    sm = scene.submap(submap_id)
    by_id = {f.frame_id: f for f in scene.trajectory}
    ids = sm.member_frames
    if len(ids) > max_frames:
        ids = [ids[i] for i in np.linspace(0, len(ids) - 1, max_frames).round().astype(int)]
    full = scene_gaussians(spec_of(scene), floor_suppression=False)
    dirs, pos, tgt = [], [], []
    for fid in ids:
        pose = view_pose(by_id[fid], pitch_deg)
        label, _ = view_geometry(scene.geometry, pose, K)
        img = photo_render(scene, pose, K, full=full).rgb
        m = label == FLOOR
        d = pixel_ray_directions(pose, K)
        dirs.append(d[m])
        tgt.append(img[m])
        pos.append(np.tile(pose.translation, (int(m.sum()), 1)))
    d = np.concatenate(dirs)
    return BackgroundSamples(d, np.concatenate(pos), np.concatenate(tgt), np.ones(len(d)))
