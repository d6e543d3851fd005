"""CPU forward renderer for Gaussian splats.

Perspective views are rasterised in 16x16 tiles. Each pixel blends the
Gaussians touching its tile front to back (sorted by camera depth, ties by
Gaussian index), so the output does not depend on tiling or thread count.
Panoramas are assembled from six 90-degree cube faces and resampled to an
equirectangular grid.

Pixel centres sit at integer coordinates: pixel (u, v) is the point
(u, v) in the image plane, so a Gaussian projecting to (50, 50) is centred
on pixel (50, 50).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

# TBB in this image is too old for numba; workqueue is always available and deterministic here
numba.config.THREADING_LAYER = "workqueue"

from splatnav.background import AppearanceMLP, BackgroundModel, eval_background, sh_to_rgb
from splatnav.scene import CameraPose, GaussianSet, Intrinsics, SubmapModel, quat_to_rotmat

TILE = 16
NEAR_PLANE = 0.01
COV2D_DILATION = 0.3
ALPHA_CAP = 0.99
T_MIN = 1e-4
MAX_CONDITION = 1e12


@dataclass
class RenderOutput:
    rgb: np.ndarray  # (H, W, 3) composited image
    alpha: np.ndarray  # (H, W)
    depth: np.ndarray  # (H, W), alpha-weighted expected depth, 0 where alpha = 0
    rgb_gs: np.ndarray | None = None  # premultiplied splat colour before compositing
    extras: dict[str, np.ndarray] = field(default_factory=dict)
    skipped: int = 0  # Gaussians dropped for ill-conditioned footprints


@dataclass
class Panorama:
    rgb: np.ndarray  # (H, 2H, 3)
    alpha: np.ndarray  # (H, 2H)
    depth: np.ndarray  # (H, 2H), distance along the ray
    center: np.ndarray
    extras: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def height(self) -> int:
        return self.alpha.shape[0]


@dataclass
class Projected:
    means: np.ndarray  # (N, 2)
    cov2d: np.ndarray  # (N, 2, 2)
    depths: np.ndarray  # (N,)
    visible: np.ndarray  # (N,) bool
    skipped: int


def project_gaussians(gs: GaussianSet, pose: CameraPose, K: Intrinsics) -> Projected:
    """EWA projection of every Gaussian: mean, 2D covariance (with 0.3 px^2 dilation) and depth."""
    n = len(gs)
    Wc = pose.rotation.T  # world -> camera
    pc = (gs.positions - pose.translation) @ pose.rotation
    z = pc[:, 2]
    visible = z > NEAR_PLANE
    zs = np.where(visible, z, 1.0)
    means = np.column_stack([K.fx * pc[:, 0] / zs + K.cx, K.fy * pc[:, 1] / zs + K.cy])

    # clamp the Jacobian evaluation point to 1.3x the frustum, as 3DGS does
    lim_x = 1.3 * max(K.cx + 0.5, K.width - 0.5 - K.cx) / K.fx
    lim_y = 1.3 * max(K.cy + 0.5, K.height - 0.5 - K.cy) / K.fy
    tx = np.clip(pc[:, 0] / zs, -lim_x, lim_x) * zs
    ty = np.clip(pc[:, 1] / zs, -lim_y, lim_y) * zs
    J = np.zeros((n, 2, 3))
    J[:, 0, 0] = K.fx / zs
    J[:, 0, 2] = -K.fx * tx / zs**2
    J[:, 1, 1] = K.fy / zs
    J[:, 1, 2] = -K.fy * ty / zs**2

    Rg = quat_to_rotmat(gs.rotations)
    M = Rg * gs.scales[:, None, :]
    cov3 = M @ np.swapaxes(M, 1, 2)
    T = J @ Wc
    cov2 = T @ cov3 @ np.swapaxes(T, 1, 2)
    cov2[:, 0, 0] += COV2D_DILATION
    cov2[:, 1, 1] += COV2D_DILATION

    a, b, c = cov2[:, 0, 0], cov2[:, 0, 1], cov2[:, 1, 1]
    mid = 0.5 * (a + c)
    disc = np.sqrt(np.maximum(mid * mid - (a * c - b * b), 0.0))
    lmax, lmin = mid + disc, mid - disc
    with np.errstate(divide="ignore", invalid="ignore"):
        cond = np.where(lmin > 0, lmax / lmin, np.inf)
    bad = visible & ~(cond <= MAX_CONDITION)
    visible &= ~bad
    return Projected(means, cov2, np.where(visible, z, np.inf), visible, int(bad.sum()))


def project_gaussian(g, pose: CameraPose, K: Intrinsics):
    """Single-Gaussian projection; None when the Gaussian is behind the near plane."""
    gs = GaussianSet.from_list([g])
    p = project_gaussians(gs, pose, K)
    if not p.visible[0]:
        return None
    return p.means[0].copy(), p.cov2d[0].copy(), float(p.depths[0])


@numba.njit(parallel=True, cache=True)
def _rasterize_tiles(width, height, ranges, ids, means, conics, radii, opac, feats, depths,
                     out_feat, out_alpha, out_depth):
    ntx = (width + 15) // 16
    nty = (height + 15) // 16
    nf = feats.shape[1]
    for t in numba.prange(ntx * nty):
        start = ranges[t, 0]
        end = ranges[t, 1]
        x0 = (t % ntx) * 16
        y0 = (t // ntx) * 16
        acc = np.zeros(nf)
        for py in range(y0, min(y0 + 16, height)):
            for px in range(x0, min(x0 + 16, width)):
                T = 1.0
                dsum = 0.0
                acc[:] = 0.0
                for k in range(start, end):
                    g = ids[k]
                    dx = px - means[g, 0]
                    dy = py - means[g, 1]
                    # footprint is the Gaussian's own 3-sigma box, never the tile
                    if abs(dx) > radii[g] or abs(dy) > radii[g]:
                        continue
                    power = -0.5 * (conics[g, 0] * dx * dx + 2.0 * conics[g, 1] * dx * dy + conics[g, 2] * dy * dy)
                    if power > 0.0:
                        continue
                    a = opac[g] * np.exp(power)
                    if a > 0.99:
                        a = 0.99
                    w = a * T
                    for f in range(nf):
                        acc[f] += w * feats[g, f]
                    dsum += w * depths[g]
                    T *= 1.0 - a
                    if T < 1e-4:
                        break
                for f in range(nf):
                    out_feat[py, px, f] = acc[f]
                alpha = 1.0 - T
                out_alpha[py, px] = alpha
                out_depth[py, px] = dsum / alpha if alpha > 0.0 else 0.0


def rasterize(proj: Projected, opacities: np.ndarray, feats: np.ndarray, width: int, height: int):
    """Blend per-Gaussian features into (H, W, F), plus accumulated alpha and expected depth."""
    feats = np.ascontiguousarray(feats, dtype=np.float64)
    nf = feats.shape[1]
    out_feat = np.zeros((height, width, nf))
    out_alpha = np.zeros((height, width))
    out_depth = np.zeros((height, width))
    ntx = (width + TILE - 1) // TILE
    nty = (height + TILE - 1) // TILE

    idx = np.flatnonzero(proj.visible & (opacities > 0))
    cov = proj.cov2d[idx]
    a, b, c = cov[:, 0, 0], cov[:, 0, 1], cov[:, 1, 1]
    det = a * c - b * b
    conics = np.column_stack([c / det, -b / det, a / det])
    mid = 0.5 * (a + c)
    lmax = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
    radius = np.ceil(3.0 * np.sqrt(lmax))
    m = proj.means[idx]
    x0 = np.floor((m[:, 0] - radius) / TILE)
    x1 = np.floor((m[:, 0] + radius) / TILE)
    y0 = np.floor((m[:, 1] - radius) / TILE)
    y1 = np.floor((m[:, 1] + radius) / TILE)
    x0 = np.clip(x0, 0, ntx - 1)
    y0 = np.clip(y0, 0, nty - 1)
    x1c = np.clip(x1, 0, ntx - 1)
    y1c = np.clip(y1, 0, nty - 1)
    keep = (m[:, 0] + radius >= 0) & (m[:, 0] - radius <= width - 1) & \
           (m[:, 1] + radius >= 0) & (m[:, 1] - radius <= height - 1)
    sel = np.flatnonzero(keep)
    x0, x1c, y0, y1c = (v[sel].astype(np.int64) for v in (x0, x1c, y0, y1c))
    nx = x1c - x0 + 1
    ny = y1c - y0 + 1
    counts = nx * ny
    total = int(counts.sum())
    local = np.repeat(sel, counts)  # index into idx
    offs = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
    nxr = np.repeat(nx, counts)
    tiles = (np.repeat(y0, counts) + offs // nxr) * ntx + np.repeat(x0, counts) + offs % nxr
    gid = idx[local]
    order = np.lexsort((gid, proj.depths[gid], tiles))
    tiles_sorted = tiles[order]
    ids_sorted = local[order].astype(np.int64)
    bounds = np.searchsorted(tiles_sorted, np.arange(ntx * nty + 1))
    ranges = np.column_stack([bounds[:-1], bounds[1:]]).astype(np.int64)

    _rasterize_tiles(width, height, ranges, ids_sorted,
                     np.ascontiguousarray(m), np.ascontiguousarray(conics), np.ascontiguousarray(radius),
                     np.ascontiguousarray(opacities[idx], dtype=np.float64),
                     np.ascontiguousarray(feats[idx]),
                     np.ascontiguousarray(proj.depths[idx]),
                     out_feat, out_alpha, out_depth)
    return out_feat, out_alpha, out_depth


def pixel_ray_directions(pose: CameraPose, K: Intrinsics) -> np.ndarray:
    """World-frame unit ray direction for every pixel centre, (H, W, 3)."""
    u, v = np.meshgrid(np.arange(K.width, dtype=np.float64), np.arange(K.height, dtype=np.float64))
    d = np.stack([(u - K.cx) / K.fx, (v - K.cy) / K.fy, np.ones_like(u)], axis=-1)
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    return d @ pose.rotation.T


def gaussian_colors(gs: GaussianSet, cam_center: np.ndarray) -> np.ndarray:
    if len(gs) == 0:
        return np.zeros((0, 3))
    dirs = gs.positions - cam_center
    n = np.linalg.norm(dirs, axis=1, keepdims=True)
    dirs = np.where(n > 0, dirs / np.where(n > 0, n, 1.0), np.array([1.0, 0.0, 0.0]))
    return sh_to_rgb(gs.sh_coeffs, dirs)


def gaussian_up_normals(gs: GaussianSet, cam_center: np.ndarray) -> np.ndarray:
    """Upward component of each Gaussian's shortest-axis normal, flipped to face the camera."""
    if len(gs) == 0:
        return np.zeros(0)
    R = quat_to_rotmat(gs.rotations)
    axis = np.argmin(gs.scales, axis=1)
    n = R[np.arange(len(gs)), :, axis]
    facing = np.einsum("ij,ij->i", n, cam_center - gs.positions)
    n = np.where(facing[:, None] < 0, -n, n)
    return n[:, 2]


def _render_raw(gs: GaussianSet, pose: CameraPose, K: Intrinsics, with_normals: bool = False):
    proj = project_gaussians(gs, pose, K)
    feats = gaussian_colors(gs, pose.translation)
    if with_normals:
        feats = np.column_stack([feats, gaussian_up_normals(gs, pose.translation)])
    if len(gs) == 0:
        feats = np.zeros((0, 4 if with_normals else 3))
    f, alpha, depth = rasterize(proj, gs.opacities, feats, K.width, K.height)
    return f, alpha, depth, proj.skipped


def render_perspective(submap: SubmapModel, pose: CameraPose, K: Intrinsics,
                       background: BackgroundModel | None = None, appearance: AppearanceMLP | None = None,
                       background_color=None, with_normals: bool = False) -> RenderOutput:
    """Render one view: splat colour, accumulated alpha, depth, composited with the background.

    The background is ``submap.background``/``submap.appearance`` unless
    overridden; ``background_color`` replaces the MLP with a constant colour.
    """
    f, alpha, depth, skipped = _render_raw(submap.gaussians, pose, K, with_normals)
    rgb_gs = f[..., :3]
    if background_color is not None:
        bg_img = np.broadcast_to(np.asarray(background_color, dtype=np.float64), rgb_gs.shape)
    else:
        bg = background or submap.background
        app = appearance or submap.appearance
        dirs = pixel_ray_directions(pose, K).reshape(-1, 3)
        bg_img = eval_background(bg, app, dirs, pose.translation).reshape(rgb_gs.shape)
    rgb = composite(rgb_gs, alpha, bg_img)
    extras = {"up_normal": f[..., 3]} if with_normals else {}
    return RenderOutput(rgb, alpha, depth, rgb_gs, extras, skipped)


def composite(rgb_gs: np.ndarray, alpha: np.ndarray, bg_img: np.ndarray) -> np.ndarray:
    """I = I_GS + (1 - alpha) * I_BG, clipped to [0, 1]."""
    return np.clip(rgb_gs + (1.0 - alpha)[..., None] * bg_img, 0.0, 1.0)


# face name -> (forward, right); down = forward x right
CUBE_FACES = {
    "+x": ((1.0, 0.0, 0.0), (0.0, -1.0, 0.0)),
    "+y": ((0.0, 1.0, 0.0), (1.0, 0.0, 0.0)),
    "-x": ((-1.0, 0.0, 0.0), (0.0, 1.0, 0.0)),
    "-y": ((0.0, -1.0, 0.0), (-1.0, 0.0, 0.0)),
    "+z": ((0.0, 0.0, 1.0), (0.0, -1.0, 0.0)),
    "-z": ((0.0, 0.0, -1.0), (0.0, -1.0, 0.0)),
}


def cube_face_pose(name: str, center) -> CameraPose:
    f, r = (np.array(v) for v in CUBE_FACES[name])
    d = np.cross(f, r)
    return CameraPose(np.column_stack([r, d, f]), center)


def cube_face_intrinsics(face_px: int) -> Intrinsics:
    """90-degree face of ``face_px`` pixels plus a one-pixel guard band on every side,
    so bilinear lookups never leave the face."""
    n = face_px + 2
    c = (n - 1) / 2.0
    return Intrinsics(face_px / 2.0, face_px / 2.0, c, c, n, n)


def equirect_directions(height: int) -> np.ndarray:
    """(H, 2H, 3) unit directions. Column 0 is azimuth 0 (+X), azimuth grows towards +Y;
    row 0 is nearest the zenith."""
    width = 2 * height
    az = 2.0 * np.pi * np.arange(width) / width
    el = 0.5 * np.pi - (np.arange(height) + 0.5) * np.pi / height
    ce = np.cos(el)[:, None]
    return np.stack([ce * np.cos(az)[None, :], ce * np.sin(az)[None, :],
                     np.broadcast_to(np.sin(el)[:, None], (height, width))], axis=-1)


def equirect_angles(height: int) -> tuple[np.ndarray, np.ndarray]:
    """Azimuth (per column) and elevation (per row) of pixel centres, radians."""
    width = 2 * height
    return 2.0 * np.pi * np.arange(width) / width, 0.5 * np.pi - (np.arange(height) + 0.5) * np.pi / height


def _bilinear(img: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    u0 = np.floor(u).astype(np.int64)
    v0 = np.floor(v).astype(np.int64)
    fu = (u - u0)[..., None] if img.ndim == 3 else u - u0
    fv = (v - v0)[..., None] if img.ndim == 3 else v - v0
    return ((1 - fu) * (1 - fv) * img[v0, u0] + fu * (1 - fv) * img[v0, u0 + 1]
            + (1 - fu) * fv * img[v0 + 1, u0] + fu * fv * img[v0 + 1, u0 + 1])


def render_cube_faces(gs: GaussianSet, center, face_px: int, with_normals: bool = False):
    K = cube_face_intrinsics(face_px)
    faces = {}
    for name in CUBE_FACES:
        pose = cube_face_pose(name, center)
        f, alpha, depth, _ = _render_raw(gs, pose, K, with_normals)
        # z-depth -> distance along the ray
        u, v = np.meshgrid(np.arange(K.width, dtype=np.float64), np.arange(K.height, dtype=np.float64))
        stretch = np.sqrt(((u - K.cx) / K.fx) ** 2 + ((v - K.cy) / K.fy) ** 2 + 1.0)
        faces[name] = (f, alpha, depth * stretch * alpha)
    return faces, K


def resample_faces(faces: dict, K: Intrinsics, directions: np.ndarray):
    """Look up face rasters along ``directions`` (..., 3); returns (features, alpha, depth)."""
    shape = directions.shape[:-1]
    d = directions.reshape(-1, 3)
    names = list(CUBE_FACES)
    fwd = np.array([CUBE_FACES[n][0] for n in names])
    which = np.argmax(d @ fwd.T, axis=1)
    nf = next(iter(faces.values()))[0].shape[-1]
    feat = np.zeros((d.shape[0], nf))
    alpha = np.zeros(d.shape[0])
    depth = np.zeros(d.shape[0])
    for i, name in enumerate(names):
        sel = np.flatnonzero(which == i)
        if sel.size == 0:
            continue
        pose = cube_face_pose(name, np.zeros(3))
        dc = d[sel] @ pose.rotation
        u = K.fx * dc[:, 0] / dc[:, 2] + K.cx
        v = K.fy * dc[:, 1] / dc[:, 2] + K.cy
        f, a, z = faces[name]
        feat[sel] = _bilinear(f, u, v)
        alpha[sel] = _bilinear(a, u, v)
        depth[sel] = _bilinear(z, u, v)
    return feat.reshape(shape + (nf,)), alpha.reshape(shape), depth.reshape(shape)


def render_equirect(submap: SubmapModel, center, height_px: int,
                    background: BackgroundModel | None = None, appearance: AppearanceMLP | None = None,
                    background_color=None, with_normals: bool = False) -> Panorama:
    """Spherical render around ``center``: six cube faces resampled to an H x 2H grid.

    Splat colour and alpha are resampled, then composited with the background
    evaluated along each panorama pixel's own direction.
    """
    if height_px < 16 or height_px % 2:
        raise ValueError("panorama height must be an even number >= 16")
    center = np.asarray(center, dtype=np.float64)
    # faces at H/2 pixels match the panorama's angular resolution at the face centre
    faces, K = render_cube_faces(submap.gaussians, center, height_px // 2, with_normals)
    dirs = equirect_directions(height_px)
    feat, alpha, depth = resample_faces(faces, K, dirs)
    alpha = np.clip(alpha, 0.0, 1.0)
    rgb_gs = feat[..., :3]
    if background_color is not None:
        bg_img = np.broadcast_to(np.asarray(background_color, dtype=np.float64), rgb_gs.shape)
    else:
        bg = background or submap.background
        app = appearance or submap.appearance
        bg_img = eval_background(bg, app, dirs.reshape(-1, 3), center).reshape(rgb_gs.shape)
    rgb = composite(rgb_gs, alpha, bg_img)
    # faces carry alpha-weighted depth so that blending across coverage edges stays unbiased
    depth = np.where(alpha > 0, depth / np.where(alpha > 0, alpha, 1.0), 0.0)
    extras = {}
    if with_normals:
        extras["up_normal_splat"] = feat[..., 3]
    return Panorama(rgb, alpha, depth, center, extras)


def set_threads(n: int) -> None:
    numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))
