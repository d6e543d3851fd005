"""Analytic room geometry: floor rectangles on z = 0 and wall boxes.

Synthetic scenes carry this alongside their Gaussians so that surface
normals, floor labels and occupancy can be computed exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

VOID, FLOOR, WALL = 0, 1, 2
# rays that hit nothing get a downward (ceiling-like) normal
VOID_NORMAL = np.array([0.0, 0.0, -1.0])


@dataclass(frozen=True)
class Wall:
    p0: tuple[float, float]
    p1: tuple[float, float]
    height: float = 2.5
    thickness: float = 0.1
    color: tuple[float, float, float] | None = None

    @property
    def length(self) -> float:
        return float(np.hypot(self.p1[0] - self.p0[0], self.p1[1] - self.p0[1]))

    def frame(self):
        """Centre (x, y), unit axis along the wall, unit normal, half extents (along, across, up).

        The box is extended by half the thickness past each endpoint so that
        walls meeting at a corner close it.
        """
        p0, p1 = np.asarray(self.p0, float), np.asarray(self.p1, float)
        L = np.linalg.norm(p1 - p0)
        u = (p1 - p0) / L
        n = np.array([-u[1], u[0]])
        half = np.array([0.5 * L + 0.5 * self.thickness, 0.5 * self.thickness, 0.5 * self.height])
        return 0.5 * (p0 + p1), u, n, half

    def footprint(self) -> np.ndarray:
        """Corners of the wall's floor footprint, (4, 2), counter-clockwise."""
        c, u, n, h = self.frame()
        return np.array([c - h[0] * u - h[1] * n, c + h[0] * u - h[1] * n,
                         c + h[0] * u + h[1] * n, c - h[0] * u + h[1] * n])


@dataclass
class RoomGeometry:
    floors: list[tuple[float, float, float, float]] = field(default_factory=list)  # xmin, ymin, xmax, ymax
    walls: list[Wall] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "floors": [list(map(float, f)) for f in self.floors],
            "walls": [{"p0": list(w.p0), "p1": list(w.p1), "height": w.height, "thickness": w.thickness,
                       **({"color": list(w.color)} if w.color is not None else {})} for w in self.walls],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RoomGeometry":
        walls = [Wall(tuple(w["p0"]), tuple(w["p1"]), float(w.get("height", 2.5)), float(w.get("thickness", 0.1)),
                      tuple(w["color"]) if w.get("color") is not None else None) for w in d.get("walls", [])]
        return cls([tuple(map(float, f)) for f in d.get("floors", [])], walls)

    def bounds(self) -> tuple[float, float, float, float]:
        pts = [np.array([[f[0], f[1]], [f[2], f[3]]]) for f in self.floors]
        pts += [w.footprint() for w in self.walls]
        allp = np.concatenate(pts)
        return float(allp[:, 0].min()), float(allp[:, 1].min()), float(allp[:, 0].max()), float(allp[:, 1].max())

    def on_floor(self, xy: np.ndarray) -> np.ndarray:
        xy = np.asarray(xy, dtype=np.float64)
        inside = np.zeros(xy.shape[:-1], dtype=bool)
        for x0, y0, x1, y1 in self.floors:
            inside |= (xy[..., 0] >= x0) & (xy[..., 0] <= x1) & (xy[..., 1] >= y0) & (xy[..., 1] <= y1)
        return inside

    def raycast(self, origins, directions):
        """First hit of each ray against the floors and walls.

        Returns (t, normal, label): distance along the (unit) direction (inf on
        a miss), world-frame unit normal facing the ray origin, and
        VOID/FLOOR/WALL labels.
        """
        d = np.asarray(directions, dtype=np.float64)
        shape = d.shape[:-1]
        d = d.reshape(-1, 3)
        o = np.broadcast_to(np.asarray(origins, dtype=np.float64), (d.shape[0], 3)) if np.ndim(origins) == 1 \
            else np.asarray(origins, dtype=np.float64).reshape(-1, 3)
        n_rays = d.shape[0]
        t_best = np.full(n_rays, np.inf)
        normal = np.tile(VOID_NORMAL, (n_rays, 1))
        label = np.zeros(n_rays, dtype=np.int8)

        with np.errstate(divide="ignore", invalid="ignore"):
            t_floor = np.where(d[:, 2] < 0, -o[:, 2] / d[:, 2], np.inf)
        hit = np.isfinite(t_floor) & (t_floor > 0)
        if hit.any():
            p = o[hit] + t_floor[hit, None] * d[hit]
            ok = self.on_floor(p[:, :2])
            idx = np.flatnonzero(hit)[ok]
            t_best[idx] = t_floor[idx]
            normal[idx] = (0.0, 0.0, 1.0)
            label[idx] = FLOOR

        for w in self.walls:
            c, u, nrm, half = w.frame()
            axes = np.array([[u[0], u[1], 0.0], [nrm[0], nrm[1], 0.0], [0.0, 0.0, 1.0]])
            center = np.array([c[0], c[1], half[2]])
            ol = (o - center) @ axes.T
            dl = d @ axes.T
            with np.errstate(divide="ignore", invalid="ignore"):
                inv = 1.0 / dl
                t1 = (-half - ol) * inv
                t2 = (half - ol) * inv
            # rays parallel to a slab: inside -> (-inf, inf), outside -> empty
            par = dl == 0
            inside_slab = np.abs(ol) <= half
            t1 = np.where(par, np.where(inside_slab, -np.inf, np.inf), t1)
            t2 = np.where(par, np.where(inside_slab, np.inf, -np.inf), t2)
            tmin = np.minimum(t1, t2)
            tmax = np.maximum(t1, t2)
            t_enter = tmin.max(axis=1)
            t_exit = tmax.min(axis=1)
            enter_axis = tmin.argmax(axis=1)
            hitw = (t_enter <= t_exit) & (t_enter > 0) & (t_enter < t_best)
            if not hitw.any():
                continue
            idx = np.flatnonzero(hitw)
            ax = enter_axis[idx]
            sign = -np.sign(dl[idx, ax])
            nl = np.zeros((idx.size, 3))
            nl[np.arange(idx.size), ax] = sign
            t_best[idx] = t_enter[idx]
            normal[idx] = nl @ axes
            label[idx] = WALL
        return t_best.reshape(shape), normal.reshape(shape + (3,)), label.reshape(shape)

    def footprint_overlaps(self, x0, y0, x1, y1) -> np.ndarray:
        """Which axis-aligned cells [x0,x1]x[y0,y1] (arrays) overlap a wall footprint's interior.

        Separating-axis test between each cell and each oriented footprint;
        touching along an edge does not count as overlap.
        """
        x0, y0, x1, y1 = (np.asarray(v, dtype=np.float64) for v in (x0, y0, x1, y1))
        out = np.zeros(np.broadcast(x0, y0).shape, dtype=bool)
        cells = np.stack([np.stack([x0, y0], -1), np.stack([x1, y0], -1),
                          np.stack([x1, y1], -1), np.stack([x0, y1], -1)], axis=-2)  # (..., 4, 2)
        for w in self.walls:
            poly = w.footprint()
            c, u, n, _ = w.frame()
            sep = np.zeros(out.shape, dtype=bool)
            for axis in (np.array([1.0, 0.0]), np.array([0.0, 1.0]), u, n):
                pc = cells @ axis
                pp = poly @ axis
                eps = 1e-12
                sep |= (pc.max(axis=-1) <= pp.min() + eps) | (pc.min(axis=-1) >= pp.max() - eps)
            out |= ~sep
        return out
