"""Hybrid floor segmentation.

candidates = semantic mask AND horizontal-normal mask, small 8-connected
blobs removed, K prompt points sampled from what survives, and the final
mask comes from a promptable segmenter run on the normal map. The three
models are injected through :class:`SegmentationProviders`; the shipped
fallbacks work from scene geometry and never look at RGB.
"""

from __future__ import annotations

import subprocess
from collections import deque
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import ndimage

from splatnav import formats

UP = np.array([0.0, 0.0, 1.0])
EIGHT = np.ones((3, 3), dtype=bool)


class ProviderError(RuntimeError):
    """A segmentation provider failed or returned something unusable."""


class InsufficientFloorError(ValueError):
    pass


def normal_to_floor_mask(normals: np.ndarray, up_thresh: float = 0.85) -> np.ndarray:
    if not 0 < up_thresh < 1:
        raise ValueError("up_thresh must be in (0, 1)")
    return np.asarray(normals, dtype=np.float64) @ UP >= up_thresh


def fuse_candidates(m_sem: np.ndarray, m_norm: np.ndarray) -> np.ndarray:
    m_sem, m_norm = np.asarray(m_sem, dtype=bool), np.asarray(m_norm, dtype=bool)
    if m_sem.shape != m_norm.shape:
        raise ValueError(f"mask shapes differ: {m_sem.shape} vs {m_norm.shape}")
    return m_sem & m_norm


def filter_components(mask: np.ndarray, min_area_px: int) -> np.ndarray:
    """Drop 8-connected components smaller than ``min_area_px`` pixels."""
    if min_area_px < 0:
        raise ValueError("min_area_px must be >= 0")
    mask = np.asarray(mask, dtype=bool)
    if min_area_px == 0:
        return mask.copy()
    lab, n = ndimage.label(mask, structure=EIGHT)
    if n == 0:
        return mask.copy()
    areas = np.bincount(lab.ravel())
    keep = areas >= min_area_px
    keep[0] = False
    return keep[lab]


def sample_prompts(mask: np.ndarray, K: int = 3, seed: int = 0) -> list[tuple[int, int]]:
    """K distinct (row, col) points inside ``mask``.

    Components are visited largest first (ties: the one whose first pixel in
    raster order comes first), one point per component per round, until K
    points are drawn. Within a component the pixel is uniform at random.
    """
    mask = np.asarray(mask, dtype=bool)
    if int(mask.sum()) < K:
        raise InsufficientFloorError("insufficient floor candidates")
    lab, n = ndimage.label(mask, structure=EIGHT)
    rng = np.random.default_rng(seed)
    flat = lab.ravel()
    members = [np.flatnonzero(flat == i + 1) for i in range(n)]
    order = sorted(range(n), key=lambda i: (-len(members[i]), members[i][0]))
    pools = [list(members[i]) for i in order]
    picked: list[int] = []
    while len(picked) < K:
        for pool in pools:
            if len(picked) == K:
                break
            if not pool:
                continue
            picked.append(int(pool.pop(int(rng.integers(len(pool))))))
    w = mask.shape[1]
    return [(p // w, p % w) for p in picked]


def region_grow_normals(normals: np.ndarray, points, max_angle_deg: float = 10.0) -> np.ndarray:
    """Fallback promptable segmenter: grow a 4-connected region from each prompt,
    accepting pixels whose normal is within ``max_angle_deg`` of the region's running mean."""
    N = np.asarray(normals, dtype=np.float64)
    h, w = N.shape[:2]
    cos_tol = np.cos(np.radians(max_angle_deg))
    out = np.zeros((h, w), dtype=bool)
    for r, c in points:
        if out[r, c]:
            continue
        total = N[r, c].copy()
        region = np.zeros((h, w), dtype=bool)
        region[r, c] = True
        q = deque([(r, c)])
        while q:
            y, x = q.popleft()
            for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                yy, xx = y + dy, x + dx
                if 0 <= yy < h and 0 <= xx < w and not region[yy, xx]:
                    nrm = N[yy, xx]
                    mean = total / np.linalg.norm(total)
                    if nrm @ mean > cos_tol * np.linalg.norm(nrm):
                        region[yy, xx] = True
                        total += nrm
                        q.append((yy, xx))
        out |= region
    return out


@dataclass
class SegmentationProviders:
    """semantic(image, prompt) -> mask; normals(image) -> (H, W, 3); promptable(normals, points) -> mask."""

    semantic: Callable
    normals: Callable
    promptable: Callable = region_grow_normals


def final_mask(providers: SegmentationProviders, normals: np.ndarray, points) -> np.ndarray:
    if not points:
        raise ValueError("need at least one prompt point")
    h, w = normals.shape[:2]
    for r, c in points:
        if not (0 <= r < h and 0 <= c < w):
            raise ValueError(f"prompt point {(r, c)} outside the {h}x{w} image")
    try:
        m = providers.promptable(normals, points)
    except ProviderError:
        raise
    except Exception as e:
        raise ProviderError(f"promptable segmenter failed: {e}") from e
    m = np.asarray(m)
    if m.shape != (h, w):
        raise ProviderError(f"promptable segmenter returned shape {m.shape}, expected {(h, w)}")
    return m.astype(bool)


@dataclass
class MaskResult:
    m_sem: np.ndarray
    m_norm: np.ndarray
    m_cand: np.ndarray
    m_filtered: np.ndarray
    prompts: list
    m_final: np.ndarray


def floor_mask_pipeline(image, providers: SegmentationProviders, K: int = 3, up_thresh: float = 0.85,
                        min_area_frac: float = 0.005, seed: int = 0, text_prompt: str = "floor") -> MaskResult:
    try:
        m_sem = np.asarray(providers.semantic(image, text_prompt), dtype=bool)
        normals = np.asarray(providers.normals(image), dtype=np.float64)
    except ProviderError:
        raise
    except Exception as e:
        raise ProviderError(f"provider failed: {e}") from e
    m_norm = normal_to_floor_mask(normals, up_thresh)
    m_cand = fuse_candidates(m_sem, m_norm)
    min_area = int(np.ceil(min_area_frac * m_cand.size))
    m_filt = filter_components(m_cand, min_area)
    pts = sample_prompts(m_filt, K, seed)
    return MaskResult(m_sem, m_norm, m_cand, m_filt, pts, final_mask(providers, normals, pts))


class ExternalProvider:
    """Adapter for segmentation models living in another process.

    The command is run as ``command + [kind, *args]`` with one image on stdin
    and one image expected on stdout:

    ============  ==============================  ===============================
    kind          stdin                           stdout
    ============  ==============================  ===============================
    semantic      8-bit RGB PNG; args: prompt     PNG mask (nonzero = floor)
    normals       8-bit RGB PNG                   3-channel little-endian PFM
    promptable    normal map as PNG, (n+1)/2      PNG mask (nonzero = selected)
                  per channel; args: "r,c" each
    ============  ==============================  ===============================

    A nonzero exit status, an unreadable reply or a size mismatch raises
    :class:`ProviderError`.
    """

    def __init__(self, command: list[str], timeout: float = 600.0):
        self.command = list(command)
        self.timeout = timeout

    def _call(self, kind: str, png: bytes, args: list[str]) -> bytes:
        try:
            proc = subprocess.run(self.command + [kind, *args], input=png, capture_output=True,
                                  timeout=self.timeout, check=True)
        except (OSError, subprocess.SubprocessError) as e:
            raise ProviderError(f"{self.command[0]} {kind}: {e}") from e
        return proc.stdout

    @staticmethod
    def _mask(reply: bytes, shape) -> np.ndarray:
        try:
            m = formats.read_png(reply)
        except Exception as e:
            raise ProviderError(f"malformed mask reply ({e})") from e
        if m.ndim == 3:
            m = m.max(axis=2)
        if m.shape != tuple(shape):
            raise ProviderError(f"provider returned shape {m.shape}, expected {tuple(shape)}")
        return m != 0

    def semantic(self, image, prompt):
        img = np.asarray(image, dtype=np.float64)
        return self._mask(self._call("semantic", formats.png_bytes(img), [prompt]), img.shape[:2])

    def normals(self, image):
        img = np.asarray(image, dtype=np.float64)
        try:
            n = formats.read_pfm(self._call("normals", formats.png_bytes(img), []))
        except ValueError as e:
            raise ProviderError(f"malformed normal map reply ({e})") from e
        if n.shape != img.shape[:2] + (3,):
            raise ProviderError(f"provider returned shape {n.shape}, expected {img.shape[:2] + (3,)}")
        return n

    def promptable(self, normals, points):
        N = np.asarray(normals, dtype=np.float64)
        args = [f"{int(r)},{int(c)}" for r, c in points]
        return self._mask(self._call("promptable", formats.png_bytes((N + 1.0) / 2.0), args), N.shape[:2])


def view_geometry(geometry, pose, K):
    """Per-pixel (label, normal) of the first surface seen through each pixel of a perspective view."""
    from splatnav.render import pixel_ray_directions

    dirs = pixel_ray_directions(pose, K)
    _, normal, label = geometry.raycast(pose.translation, dirs)
    return label, normal


def geometry_providers(geometry, pose, K, max_angle_deg: float = 10.0) -> SegmentationProviders:
    """Offline providers for a synthetic view: the semantic mask and the normal map are read off the
    analytic geometry seen from ``pose``, the promptable segmenter is region growing. The image
    argument is ignored."""
    from splatnav.geometry import FLOOR

    label, normal = view_geometry(geometry, pose, K)

    def semantic(image, prompt):
        return label == FLOOR

    def normals(image):
        return normal

    def promptable(N, points):
        return region_grow_normals(N, points, max_angle_deg)

    return SegmentationProviders(semantic, normals, promptable)
