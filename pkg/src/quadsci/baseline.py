"""Training-free reconstruction: GAP-style projection with anisotropic TV
denoising ("GAP-TV-like"), plus the raw -> sparse-RGB expansion and a
bilinear demosaicing baseline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import griddata

from .cube import VideoCube
from .errors import ConfigError, DataError, ShapeError
from .sensing import (
    CfaPattern,
    MaskSet,
    Measurement,
    apply_phi,
    apply_phi_transpose,
    cfa_masks,
    initialize,
)

GAP_EPS = 1e-6
TV_STEPS = 20
TV_STEP_SIZE = 0.05


@dataclass
class GapConfig:
    iterations: int = 30
    tv_weight: float = 0.1
    tv_inner_steps: int = TV_STEPS

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if self.tv_weight < 0:
            raise ConfigError("tv_weight must be >= 0")


def _tv_denoise(x: np.ndarray, weight: float, steps: int) -> np.ndarray:
    """Anisotropic TV denoising of each frame by fixed-step subgradient
    descent on 0.5||z - x||^2 + weight * TV(z)."""
    if weight == 0.0:
        return x
    z = x.copy()
    for _ in range(steps):
        grad = z - x
        dh = np.sign(np.diff(z, axis=0))
        grad[:-1] -= weight * dh
        grad[1:] += weight * dh
        dw = np.sign(np.diff(z, axis=1))
        grad[:, :-1] -= weight * dw
        grad[:, 1:] += weight * dw
        z -= TV_STEP_SIZE * grad
    return z


def gap_tv(meas: Measurement, masks: MaskSet, cfg: GapConfig) -> VideoCube:
    """Iterate x <- D_TV(x + Phi^T((y - Phi x) / (sum_t + eps))).

    With tv_weight = 0 the measurement residual is non-increasing (diagonal
    weighted projection onto the measurement-consistent affine set).
    """
    h, w, t = masks.shape
    if meas.y.dims != (h, w, 1, 1):
        raise ShapeError(f"measurement dims {meas.y.dims} do not match masks {(h, w)}")
    if not np.any(masks.sum_t > 0):
        raise DataError("degenerate sensing: sum_t is zero everywhere")
    y = meas.y.data.ravel()
    denom = (masks.sum_t + GAP_EPS).ravel()
    x = initialize(meas, masks).data[:, :, 0, :].transpose(2, 0, 1).ravel()  # frame-major
    for _ in range(cfg.iterations):
        residual = y - apply_phi(masks, x)
        x = x + apply_phi_transpose(masks, residual / denom)
        if cfg.tv_weight > 0:
            frames = x.reshape(t, h, w)
            frames = np.stack(
                [_tv_denoise(f, cfg.tv_weight, cfg.tv_inner_steps) for f in frames]
            )
            x = frames.ravel()
    out = x.reshape(t, h, w).transpose(1, 2, 0)[:, :, None, :]
    return VideoCube(out)


def measurement_residual(meas: Measurement, masks: MaskSet, raw: VideoCube) -> float:
    """||y - Phi x||^2 for a candidate raw video."""
    x = raw.data[:, :, 0, :].transpose(2, 0, 1).ravel()
    r = meas.y.data.ravel() - apply_phi(masks, x)
    return float(np.dot(r, r))


def expand_cfa(raw: VideoCube, pattern: CfaPattern) -> VideoCube:
    """Raw H x W x 1 x T -> sparse RGB H x W x 3 x T (zeros off-site)."""
    if raw.data.ndim != 4 or raw.dims[2] != 1:
        raise ShapeError(f"expected H x W x 1 x T raw, got {raw.dims}")
    h, w, _, t = raw.dims
    r, g, b = cfa_masks(pattern, h, w)
    sel = np.stack([r, g, b], axis=2)[:, :, :, None]  # H x W x 3 x 1
    return VideoCube(sel * raw.data)


def demosaic_bilinear(sparse: VideoCube, pattern: CfaPattern) -> VideoCube:
    """Fill each channel's missing sites by linear interpolation from its
    sampled sites (nearest fallback outside the convex hull); sampled sites
    are kept bit-identical."""
    if sparse.data.ndim != 4 or sparse.dims[2] != 3:
        raise ShapeError(f"expected H x W x 3 x T sparse RGB, got {sparse.dims}")
    h, w, _, t = sparse.dims
    channel_masks = cfa_masks(pattern, h, w)
    grid_r, grid_c = np.mgrid[0:h, 0:w]
    out = np.empty_like(sparse.data)
    for ch, mask in enumerate(channel_masks):
        sites = mask > 0
        pts = np.column_stack([grid_r[sites], grid_c[sites]])
        query = np.column_stack([grid_r.ravel(), grid_c.ravel()])
        for k in range(t):
            vals = sparse.data[:, :, ch, k][sites]
            filled = griddata(pts, vals, query, method="linear")
            nan = np.isnan(filled)
            if np.any(nan):
                filled[nan] = griddata(pts, vals, query[nan], method="nearest")
            plane = filled.reshape(h, w)
            plane[sites] = vals  # exact at sampled sites
            out[:, :, ch, k] = plane
    return VideoCube(out)
