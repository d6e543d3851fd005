"""Training objectives of the floor-aware model, as plain evaluable functions.

All L1 terms are means over their support (pixels x channels), not sums, so
the default weights do not depend on image resolution.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.ndimage import correlate1d


@dataclass(frozen=True)
class LossConfig:
    lambda_ssim: float = 0.2
    lambda_supp: float = 1.0
    lambda_bg: float = 1.0
    ssim_window: int = 11
    ssim_sigma: float = 1.5
    ssim_c1: float = 0.01 ** 2
    ssim_c2: float = 0.03 ** 2

    def __post_init__(self):
        if min(self.lambda_ssim, self.lambda_supp, self.lambda_bg) < 0:
            raise ValueError("loss weights must be >= 0")
        if self.ssim_window < 3 or self.ssim_window % 2 == 0:
            raise ValueError("ssim_window must be odd and >= 3")
        if self.ssim_sigma <= 0:
            raise ValueError("ssim_sigma must be > 0")


@dataclass
class MaskedMean:
    """A masked mean that remembers whether its support was empty."""

    value: float
    support: int

    @property
    def empty(self) -> bool:
        return self.support == 0

    def __float__(self):
        return self.value


def _check_shapes(a, b):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def _expand_mask(mask, shape) -> np.ndarray:
    m = np.asarray(mask, dtype=np.float64)
    if m.shape != shape[:2]:
        raise ValueError(f"mask shape {m.shape} does not match image {shape[:2]}")
    if len(shape) == 3:
        m = np.broadcast_to(m[..., None], shape)
    return m


def masked_l1(a, b, mask=None) -> MaskedMean:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_shapes(a, b)
    diff = np.abs(a - b)
    if mask is None:
        return MaskedMean(float(diff.mean()) if diff.size else 0.0, diff.size)
    m = _expand_mask(mask, a.shape)
    total = m.sum()
    if total == 0:
        return MaskedMean(0.0, 0)
    return MaskedMean(float((m * diff).sum() / total), int(np.count_nonzero(m)))


def l1_loss(a, b, mask=None) -> float:
    """Mean |a - b| over all pixels and channels, or over the mask support only.

    An empty mask gives 0; use :func:`masked_l1` to see the empty flag.
    """
    return masked_l1(a, b, mask).value


def gaussian_window(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-0.5 * (x / sigma) ** 2)
    return g / g.sum()


def _filter(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    # separable, same-size output, mirrored borders
    out = correlate1d(img, g, axis=0, mode="mirror")
    return correlate1d(out, g, axis=1, mode="mirror")


def ssim_map(a, b, cfg: LossConfig = LossConfig()) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_shapes(a, b)
    if min(a.shape[:2]) < cfg.ssim_window:
        raise ValueError(f"image {a.shape[:2]} smaller than the {cfg.ssim_window}px SSIM window")
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    g = gaussian_window(cfg.ssim_window, cfg.ssim_sigma)
    out = np.empty(a.shape)
    for c in range(a.shape[2]):
        x, y = a[..., c], b[..., c]
        mx, my = _filter(x, g), _filter(y, g)
        sxx = _filter(x * x, g) - mx * mx
        syy = _filter(y * y, g) - my * my
        sxy = _filter(x * y, g) - mx * my
        num = (2 * mx * my + cfg.ssim_c1) * (2 * sxy + cfg.ssim_c2)
        den = (mx * mx + my * my + cfg.ssim_c1) * (sxx + syy + cfg.ssim_c2)
        out[..., c] = num / den
    return out


def ssim(a, b, cfg: LossConfig = LossConfig(), mask=None) -> float:
    """Mean local SSIM (Gaussian window) over pixels and channels.

    Identical inputs return exactly 1.0. With ``mask`` the local SSIM values
    are averaged over the mask support only (0 when empty).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_shapes(a, b)
    if min(a.shape[:2]) < cfg.ssim_window:
        raise ValueError(f"image {a.shape[:2]} smaller than the {cfg.ssim_window}px SSIM window")
    if np.array_equal(a, b):
        # numerator and denominator agree only up to rounding otherwise
        return 1.0 if mask is None or np.any(mask) else 0.0
    smap = ssim_map(a, b, cfg)
    if a.ndim == 2:
        smap = smap[..., 0]
    if mask is None:
        return float(smap.mean())
    m = _expand_mask(mask, smap.shape)
    total = m.sum()
    return float((m * smap).sum() / total) if total > 0 else 0.0


def floor_supp_loss(alpha, m_final) -> float:
    """Mean rendered alpha over floor pixels; pushes Gaussians off the floor."""
    alpha = np.asarray(alpha, dtype=np.float64)
    m = np.asarray(m_final, dtype=np.float64)
    _check_shapes(alpha, m)
    total = m.sum()
    return float((m * alpha).sum() / total) if total > 0 else 0.0


def floor_bg_loss(bg_render, gt, m_final) -> float:
    """Masked L1 between the background-only render and the photo on floor pixels."""
    return l1_loss(bg_render, gt, m_final)


def recon_loss(render_rgb, gt, m_final, cfg: LossConfig = LossConfig()) -> dict:
    keep = ~np.asarray(m_final, dtype=bool)
    l1 = masked_l1(render_rgb, gt, keep)
    s = ssim(render_rgb, gt, cfg, keep)
    l_ssim = 1.0 - s if not l1.empty else 0.0
    return {"l1": l1.value, "ssim": s, "l_ssim": l_ssim,
            "recon": (1.0 - cfg.lambda_ssim) * l1.value + cfg.lambda_ssim * l_ssim,
            "recon_empty": l1.empty}


def total_loss(render, bg_render, gt, m_final, cfg: LossConfig = LossConfig()) -> tuple[float, dict]:
    """Full objective with its per-term breakdown.

    ``render`` is a RenderOutput (its composited ``rgb`` and ``alpha`` are
    used). The reconstruction term covers the non-floor pixels; the two
    floor terms cover ``m_final``. The returned total is exactly
    ``recon + supp_weighted + bg_weighted`` from the breakdown.
    """
    m = np.asarray(m_final, dtype=bool)
    rec = recon_loss(render.rgb, gt, m, cfg)
    supp = floor_supp_loss(render.alpha, m)
    bgl = floor_bg_loss(bg_render, gt, m)
    parts = {
        "recon": rec["recon"],
        "supp_weighted": cfg.lambda_supp * supp,
        "bg_weighted": cfg.lambda_bg * bgl,
    }
    total = parts["recon"] + parts["supp_weighted"] + parts["bg_weighted"]
    breakdown = {
        **parts,
        "l1": rec["l1"],
        "ssim": rec["ssim"],
        "l_ssim": rec["l_ssim"],
        "floor_supp": supp,
        "floor_bg": bgl,
        "total": total,
        "empty_recon_support": rec["recon_empty"],
        "empty_floor_support": not m.any(),
        "normalization": "mean over support",
        "config": asdict(cfg),
    }
    return total, breakdown
