"""DSM-to-intensity normalization, scalar VIS/DSM fusion and color spaces."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .raster_io import HeightRaster, RgbRaster

__all__ = [
    "FusionConfig",
    "fuse",
    "hsv_to_rgb",
    "normalize_dsm",
    "rgb_to_hsv",
    "rgb_to_lab",
]


@dataclass(frozen=True)
class FusionConfig:
    weight_vis: float = 0.7
    dsm_norm: str = "tile-minmax"

    def __post_init__(self):
        if not 0.0 <= self.weight_vis <= 1.0:
            raise ValueError(f"weight_vis must lie in [0, 1], got {self.weight_vis}")
        if self.dsm_norm != "tile-minmax":
            raise ValueError(f"unsupported dsm_norm {self.dsm_norm!r}")


def _round_half_up(x: np.ndarray) -> np.ndarray:
    return np.floor(x + 0.5)


def normalize_dsm(dsm: HeightRaster) -> np.ndarray:
    """Min-max scale valid heights to an 8-bit gray image ``(h, w)``.

    NoData cells and constant rasters map to 0.
    """
    valid = dsm.valid
    if not valid.any():
        raise ValueError("cannot normalize an all-nodata DSM")
    vals = dsm.values.astype(np.float64)
    lo = vals[valid].min()
    hi = vals[valid].max()
    out = np.zeros(vals.shape, dtype=np.uint8)
    if hi > lo:
        scaled = _round_half_up(255.0 * (vals - lo) / (hi - lo))
        out[valid] = np.clip(scaled[valid], 0, 255).astype(np.uint8)
    return out


def fuse(vis: RgbRaster, dsm_gray: np.ndarray, cfg: FusionConfig = FusionConfig()) -> RgbRaster:
    """Blend every VIS channel with the normalized DSM: ``w*vis + (1-w)*gray``."""
    gray = np.asarray(dsm_gray)
    if gray.shape != (vis.height, vis.width):
        raise ValueError(
            f"dimension mismatch: VIS is {vis.width}x{vis.height}, "
            f"DSM gray is {gray.shape[1] if gray.ndim == 2 else '?'}x{gray.shape[0]}"
        )
    w = cfg.weight_vis
    if w == 1.0:
        return RgbRaster(vis.pixels, gsd=vis.gsd)
    blended = w * vis.pixels.astype(np.float64) + (1.0 - w) * gray.astype(np.float64)[..., None]
    out = np.clip(_round_half_up(blended), 0, 255).astype(np.uint8)
    return RgbRaster(out, gsd=vis.gsd)


# ---------------------------------------------------------------------------
# Color conversions.  All accept arrays shaped (..., 3) with RGB in [0, 255].
# ---------------------------------------------------------------------------

# sRGB (D65) -> XYZ
_RGB2XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_WHITE_D65 = _RGB2XYZ.sum(axis=1)


def rgb_to_lab(rgb) -> np.ndarray:
    """sRGB -> CIELAB under D65."""
    c = np.asarray(rgb, dtype=np.float64) / 255.0
    lin = np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)
    xyz = lin @ _RGB2XYZ.T / _WHITE_D65
    eps = 216.0 / 24389.0
    kappa = 24389.0 / 27.0
    f = np.where(xyz > eps, np.cbrt(xyz), (kappa * xyz + 16.0) / 116.0)
    L = 116.0 * f[..., 1] - 16.0
    a = 500.0 * (f[..., 0] - f[..., 1])
    b = 200.0 * (f[..., 1] - f[..., 2])
    return np.stack([L, a, b], axis=-1)


def rgb_to_hsv(rgb) -> np.ndarray:
    """RGB -> HSV with H in degrees [0, 360) and S, V in [0, 1]."""
    c = np.asarray(rgb, dtype=np.float64) / 255.0
    r, g, b = c[..., 0], c[..., 1], c[..., 2]
    mx = c.max(axis=-1)
    mn = c.min(axis=-1)
    delta = mx - mn
    safe = np.where(delta > 0, delta, 1.0)
    h = np.select(
        [delta == 0, mx == r, mx == g],
        [0.0, ((g - b) / safe) % 6.0, (b - r) / safe + 2.0],
        default=(r - g) / safe + 4.0,
    )
    h = (h * 60.0) % 360.0
    s = np.where(mx > 0, delta / np.where(mx > 0, mx, 1.0), 0.0)
    return np.stack([h, s, mx], axis=-1)


def hsv_to_rgb(hsv) -> np.ndarray:
    """Inverse of :func:`rgb_to_hsv`; returns float RGB in [0, 255]."""
    hsv = np.asarray(hsv, dtype=np.float64)
    h = (hsv[..., 0] % 360.0) / 60.0
    s, v = hsv[..., 1], hsv[..., 2]
    c = v * s
    x = c * (1.0 - np.abs(h % 2.0 - 1.0))
    zero = np.zeros_like(h)
    sector = np.floor(h).astype(int) % 6
    choices_r = [c, x, zero, zero, x, c]
    choices_g = [x, c, c, x, zero, zero]
    choices_b = [zero, zero, x, c, c, x]
    conds = [sector == k for k in range(6)]
    m = v - c
    r = np.select(conds, choices_r) + m
    g = np.select(conds, choices_g) + m
    b = np.select(conds, choices_b) + m
    return np.stack([r, g, b], axis=-1) * 255.0
