"""Dense video/feature arrays, the VCUBE file format, PPM export and
full-reference quality metrics (PSNR / SSIM).

Canonical axis order for 4-D cubes is (H, W, C, T) with row-major storage,
last axis fastest. All arithmetic is 64-bit.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import convolve2d

from .errors import ConfigError, DataError, FormatError, ShapeError, TruncationError

VCUBE_MAGIC = b"VCUB"
VCUBE_VERSION = 1

#: PSNR reported for (near-)identical inputs instead of +inf.
PSNR_CAP_DB = 100.0
_PSNR_MSE_FLOOR = 1e-10

# SSIM constants: 11x11 Gaussian window, sigma 1.5, K1/K2 defaults, range 1.0.
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = (0.01 * 1.0) ** 2
SSIM_C2 = (0.03 * 1.0) ** 2


@dataclass
class VideoCube:
    """Dense float64 array with up to four axes (H, W, C, T)."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim < 1 or arr.ndim > 4:
            raise ShapeError(f"VideoCube supports 1-4 dims, got {arr.ndim}")
        if any(d < 1 for d in arr.shape):
            raise ShapeError(f"all extents must be >= 1, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise DataError("VideoCube payload contains non-finite values")
        self.data = np.ascontiguousarray(arr)

    @property
    def dims(self) -> tuple[int, ...]:
        return self.data.shape

    def __eq__(self, other) -> bool:
        if not isinstance(other, VideoCube):
            return NotImplemented
        return self.dims == other.dims and np.array_equal(self.data, other.data)


@dataclass
class QualityReport:
    """Per-frame and mean PSNR/SSIM for a reference/test pair."""

    psnr_db: float
    ssim: float
    per_frame_psnr: list[float] = field(default_factory=list)
    per_frame_ssim: list[float] = field(default_factory=list)


def save_cube(cube: VideoCube, path) -> None:
    """Write a cube as a VCUBE file (always 64-bit payload)."""
    arr = cube.data
    with open(path, "wb") as f:
        f.write(VCUBE_MAGIC)
        f.write(struct.pack("<BBBB", VCUBE_VERSION, 1, arr.ndim, 0))
        f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        f.write(arr.astype("<f8", copy=False).tobytes())


def load_cube(path) -> VideoCube:
    """Read a VCUBE file; save_cube(load_cube(p)) is byte-identical for f64 files."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 8 or blob[:4] != VCUBE_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}, expected {VCUBE_MAGIC!r}")
    version, dtype_code, ndim, reserved = struct.unpack("<BBBB", blob[4:8])
    if version != VCUBE_VERSION:
        raise FormatError(f"{path}: unsupported VCUBE version {version}")
    if dtype_code not in (0, 1):
        raise FormatError(f"{path}: unknown dtype code {dtype_code}")
    if not 1 <= ndim <= 4:
        raise FormatError(f"{path}: ndim must be 1-4, got {ndim}")
    header_end = 8 + 4 * ndim
    if len(blob) < header_end:
        raise TruncationError(f"{path}: header truncated")
    dims = struct.unpack(f"<{ndim}I", blob[8:header_end])
    itemsize = 4 if dtype_code == 0 else 8
    expected = int(np.prod(dims)) * itemsize
    payload = blob[header_end:]
    if len(payload) != expected:
        raise TruncationError(
            f"{path}: dims {dims} need {expected} payload bytes, found {len(payload)}"
        )
    arr = np.frombuffer(payload, dtype="<f4" if dtype_code == 0 else "<f8")
    arr = arr.astype(np.float64).reshape(dims)
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{path}: payload contains non-finite values")
    return VideoCube(arr)


def save_ppm(frame: np.ndarray, path) -> None:
    """Export one H x W x 3 frame as binary PPM (P6), clamping to [0, 1]."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise ShapeError(f"PPM export expects H x W x 3, got {frame.shape}")
    h, w, _ = frame.shape
    px = np.clip(frame, 0.0, 1.0)
    px = np.rint(px * 255.0).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(px.tobytes())


def _as_frames(cube: VideoCube) -> np.ndarray:
    """Return the cube as (T, H, W, C) frames; last axis of the cube is time."""
    arr = cube.data
    if arr.ndim == 2:
        return arr[None, :, :, None]
    if arr.ndim == 3:  # H x W x T
        return arr.transpose(2, 0, 1)[:, :, :, None]
    if arr.ndim == 4:  # H x W x C x T
        return arr.transpose(3, 0, 1, 2)
    raise ShapeError(f"metrics need 2-4 dims, got {arr.ndim}")


def psnr(reference: VideoCube, test: VideoCube) -> float:
    """Mean per-frame PSNR in dB (peak 1.0, capped at PSNR_CAP_DB)."""
    return evaluate(reference, test, with_ssim=False).psnr_db


def _psnr_frames(ref: np.ndarray, tst: np.ndarray) -> list[float]:
    out = []
    for r, t in zip(ref, tst):
        mse = float(np.mean((r - t) ** 2))
        if mse < _PSNR_MSE_FLOOR:
            out.append(PSNR_CAP_DB)
        else:
            out.append(min(PSNR_CAP_DB, -10.0 * np.log10(mse)))
    return out


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalized 2-D Gaussian window used by ssim()."""
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords**2) / (2.0 * sigma**2))
    k = np.outer(g, g)
    return k / k.sum()


def _ssim_plane(ref: np.ndarray, tst: np.ndarray, window: np.ndarray) -> float:
    # Windowed statistics on 'valid' positions only.
    mu1 = convolve2d(ref, window, mode="valid")
    mu2 = convolve2d(tst, window, mode="valid")
    s11 = convolve2d(ref * ref, window, mode="valid") - mu1 * mu1
    s22 = convolve2d(tst * tst, window, mode="valid") - mu2 * mu2
    s12 = convolve2d(ref * tst, window, mode="valid") - mu1 * mu2
    num = (2.0 * mu1 * mu2 + SSIM_C1) * (2.0 * s12 + SSIM_C2)
    den = (mu1 * mu1 + mu2 * mu2 + SSIM_C1) * (s11 + s22 + SSIM_C2)
    return float(np.mean(num / den))


def ssim(reference: VideoCube, test: VideoCube) -> float:
    """Mean per-frame SSIM (Gaussian 11x11 window, sigma 1.5, range 1.0)."""
    return evaluate(reference, test, with_psnr=False).ssim


def evaluate(
    reference: VideoCube,
    test: VideoCube,
    with_psnr: bool = True,
    with_ssim: bool = True,
) -> QualityReport:
    """Compute PSNR and/or SSIM between two cubes of identical dims."""
    if reference.dims != test.dims:
        raise ShapeError(f"dims mismatch: reference {reference.dims} vs test {test.dims}")
    ref = _as_frames(reference)
    tst = _as_frames(test)
    per_psnr: list[float] = []
    per_ssim: list[float] = []
    if with_psnr:
        per_psnr = _psnr_frames(ref, tst)
    if with_ssim:
        h, w = ref.shape[1], ref.shape[2]
        if h < SSIM_WINDOW or w < SSIM_WINDOW:
            raise ConfigError(
                f"SSIM needs frames of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
            )
        win = gaussian_window()
        for r, t in zip(ref, tst):
            if np.array_equal(r, t):
                per_ssim.append(1.0)
                continue
            vals = [_ssim_plane(r[:, :, c], t[:, :, c], win) for c in range(r.shape[2])]
            per_ssim.append(float(np.mean(vals)))
    return QualityReport(
        psnr_db=float(np.mean(per_psnr)) if per_psnr else float("nan"),
        ssim=float(np.mean(per_ssim)) if per_ssim else float("nan"),
        per_frame_psnr=per_psnr,
        per_frame_ssim=per_ssim,
    )
