"""Quad-Bayer / Bayer CFA modeling and the CACTI sensing model.

Covers CFA channel masks, RGB->raw mosaicing, sub-measurement splitting,
seeded binary mask generation, snapshot encoding Y = sum_t M_t * X_t + n,
the matrix-free sensing operator Phi, and measurement initialization.

Randomness uses numpy's Philox counter-based 64-bit generator so that masks
and noise are reproducible from a seed alone.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .cube import VideoCube
from .errors import ConfigError, ShapeError

INIT_EPS = 1e-6


class CfaPattern(Enum):
    """Color filter array layout: classic RGGB Bayer or quad-Bayer."""

    BAYER = "bayer"
    QUAD_BAYER = "quad"

    @property
    def period(self) -> int:
        return 2 if self is CfaPattern.BAYER else 4


@dataclass
class MaskSet:
    """T binary modulation masks plus their temporal sums.

    sum_t == sum_sq_t elementwise because the masks are binary.
    """

    masks: VideoCube  # H x W x 1 x T, values in {0, 1}
    sum_t: np.ndarray  # H x W
    sum_sq_t: np.ndarray  # H x W
    seed: int

    @property
    def shape(self) -> tuple[int, int, int]:
        h, w, _, t = self.masks.dims
        return h, w, t


@dataclass
class Measurement:
    """Single H x W snapshot with its compression ratio and noise level."""

    y: VideoCube  # H x W x 1 x 1
    compression_ratio: int
    noise_sigma: float


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def cfa_masks(pattern: CfaPattern, h: int, w: int):
    """Binary (R, G, B) channel maps partitioning the H x W plane."""
    p = pattern.period
    if h % p or w % p:
        raise ShapeError(f"dims {h}x{w} not divisible by CFA period {p}")
    r = np.zeros((h, w))
    g = np.zeros((h, w))
    b = np.zeros((h, w))
    if pattern is CfaPattern.BAYER:
        r[0::2, 0::2] = 1
        g[0::2, 1::2] = 1
        g[1::2, 0::2] = 1
        b[1::2, 1::2] = 1
    else:
        # 4x4 cell: R block rows/cols {0,1}, B block rows/cols {2,3},
        # G on the two off-diagonal 2x2 blocks.
        rows = np.arange(h) % 4 < 2
        cols = np.arange(w) % 4 < 2
        r[np.ix_(rows, cols)] = 1
        b[np.ix_(~rows, ~cols)] = 1
        g[np.ix_(rows, ~cols)] = 1
        g[np.ix_(~rows, cols)] = 1
    return r, g, b


def mosaic(rgb: VideoCube, pattern: CfaPattern) -> VideoCube:
    """Sample an H x W x 3 x T video through the CFA into H x W x 1 x T raw."""
    if rgb.data.ndim != 4 or rgb.dims[2] != 3:
        raise ShapeError(f"mosaic expects H x W x 3 x T, got {rgb.dims}")
    h, w, _, t = rgb.dims
    r, g, b = cfa_masks(pattern, h, w)
    sel = np.stack([r, g, b], axis=2)[:, :, :, None]  # H x W x 3 x 1
    raw = np.sum(rgb.data * sel, axis=2, keepdims=True)
    return VideoCube(raw)


def split_sub_measurements(plane: np.ndarray, pattern: CfaPattern):
    """Split an H x W plane into (r, g1, g2, b) color-site classes.

    Each output is (H/2) x (W/2). For quad-Bayer the classes are whole 2x2
    same-color blocks, kept as 2x2 sub-tiles in block raster order.
    """
    plane = np.asarray(plane, dtype=np.float64)
    if plane.ndim != 2:
        raise ShapeError(f"expected a 2-D plane, got {plane.shape}")
    h, w = plane.shape
    p = pattern.period
    if h % p or w % p:
        raise ShapeError(f"dims {h}x{w} not divisible by CFA period {p}")
    if pattern is CfaPattern.BAYER:
        return (
            plane[0::2, 0::2].copy(),
            plane[0::2, 1::2].copy(),
            plane[1::2, 0::2].copy(),
            plane[1::2, 1::2].copy(),
        )
    blocks = plane.reshape(h // 2, 2, w // 2, 2)

    def gather(row_par: int, col_par: int) -> np.ndarray:
        sub = blocks[row_par::2, :, col_par::2, :]
        return sub.reshape(h // 2, w // 2).copy()

    return gather(0, 0), gather(0, 1), gather(1, 0), gather(1, 1)


def assemble_sub_measurements(parts, pattern: CfaPattern) -> np.ndarray:
    """Inverse of split_sub_measurements."""
    r, g1, g2, b = (np.asarray(p, dtype=np.float64) for p in parts)
    hh, hw = r.shape
    h, w = 2 * hh, 2 * hw
    out = np.zeros((h, w))
    if pattern is CfaPattern.BAYER:
        out[0::2, 0::2] = r
        out[0::2, 1::2] = g1
        out[1::2, 0::2] = g2
        out[1::2, 1::2] = b
        return out
    blocks = out.reshape(hh, 2, hw, 2)
    for (rp, cp), part in zip(((0, 0), (0, 1), (1, 0), (1, 1)), (r, g1, g2, b)):
        blocks[rp::2, :, cp::2, :] = part.reshape(hh // 2, 2, hw // 2, 2)
    return out


def gen_masks(h: int, w: int, t: int, seed: int) -> MaskSet:
    """Seeded i.i.d. Bernoulli(0.5) binary modulation masks."""
    if h < 1 or w < 1 or t < 1:
        raise ShapeError(f"mask dims must be >= 1, got {h}x{w}x{t}")
    m = (_rng(seed).random((h, w, 1, t)) < 0.5).astype(np.float64)
    return MaskSet(
        masks=VideoCube(m),
        sum_t=m.sum(axis=(2, 3)),
        sum_sq_t=(m * m).sum(axis=(2, 3)),
        seed=seed,
    )


def encode(raw: VideoCube, masks: MaskSet, noise_sigma: float = 0.0, seed: int = 0) -> Measurement:
    """CACTI snapshot: Y = sum_t M_t * raw_t + Normal(0, sigma^2) noise."""
    if noise_sigma < 0:
        raise ConfigError(f"noise_sigma must be >= 0, got {noise_sigma}")
    h, w, t = masks.shape
    if raw.dims != (h, w, 1, t):
        raise ShapeError(f"raw dims {raw.dims} do not match masks {(h, w, 1, t)}")
    y = np.sum(masks.masks.data * raw.data, axis=3, keepdims=True)
    if noise_sigma > 0:
        y = y + noise_sigma * _rng(seed).standard_normal(y.shape)
    return Measurement(y=VideoCube(y), compression_ratio=t, noise_sigma=noise_sigma)


def apply_phi(masks: MaskSet, x: np.ndarray) -> np.ndarray:
    """Phi @ x for the block-diagonal sensing matrix, without forming Phi.

    x is the frame-major vectorization [vec(X_1); ...; vec(X_T)] of length HWT.
    """
    h, w, t = masks.shape
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size != h * w * t:
        raise ShapeError(f"expected vector of length {h * w * t}, got {x.size}")
    frames = x.reshape(t, h, w)
    m = masks.masks.data[:, :, 0, :].transpose(2, 0, 1)  # T x H x W
    return np.sum(m * frames, axis=0).ravel()


def apply_phi_transpose(masks: MaskSet, y: np.ndarray) -> np.ndarray:
    """Phi^T @ y, returning a frame-major vector of length HWT."""
    h, w, t = masks.shape
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.size != h * w:
        raise ShapeError(f"expected vector of length {h * w}, got {y.size}")
    m = masks.masks.data[:, :, 0, :].transpose(2, 0, 1)  # T x H x W
    return (m * y.reshape(h, w)[None]).ravel()


def initialize(meas: Measurement, masks: MaskSet) -> VideoCube:
    """Normalized-measurement initialization X_in = M * Y / max(sum_t, eps)."""
    h, w, t = masks.shape
    if meas.y.dims != (h, w, 1, 1):
        raise ShapeError(f"measurement dims {meas.y.dims} do not match masks {(h, w)}")
    denom = np.maximum(masks.sum_t, INIT_EPS)[:, :, None, None]
    x_in = masks.masks.data * (meas.y.data / denom)
    return VideoCube(x_in)
