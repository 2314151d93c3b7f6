"""Gradient validation, the Adam optimizer, and a toy end-to-end training
loop on synthetic moving-square clips.

The training protocol runs three stages with learning rates 5e-4 / 1e-4 /
1e-5 (default 200/50/50 iterations). Each training sample gets a fresh
seeded modulation mask; evaluation uses a fixed mask.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .cube import VideoCube, psnr
from .errors import ConfigError, NumericError, TrainingError
from .model import Model, NetworkConfig, build
from .sensing import CfaPattern, encode, gen_masks, initialize, mosaic

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

FD_STEP = 1e-5
FD_DENOM_FLOOR = 1e-8

SMOOTH_WINDOW = 20


@dataclass
class OptimState:
    """Adam moments keyed like the weight map."""

    lr: float
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS


def adam_step(
    weights: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: OptimState,
) -> tuple[dict[str, np.ndarray], OptimState]:
    """Standard bias-corrected Adam update, in place on `weights`."""
    if set(weights) != set(grads):
        raise ConfigError(
            f"weight/grad key mismatch: {sorted(set(weights) ^ set(grads))}"
        )
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**state.step
    bc2 = 1.0 - b2**state.step
    for key in sorted(weights):
        g = grads[key]
        if key not in state.m:
            state.m[key] = np.zeros_like(weights[key])
            state.v[key] = np.zeros_like(weights[key])
        state.m[key] = b1 * state.m[key] + (1.0 - b1) * g
        state.v[key] = b2 * state.v[key] + (1.0 - b2) * g * g
        m_hat = state.m[key] / bc1
        v_hat = state.v[key] / bc2
        weights[key] = weights[key] - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return weights, state


def grad_check(fn, point, analytic, step: float = FD_STEP, coords=None) -> float:
    """Central finite differences vs. analytic gradient at `point`.

    point/analytic: flat float64 arrays of the same shape (callers flatten
    structured weight sets). coords optionally restricts the checked
    coordinates. Returns the worst relative error, with the denominator
    floored at max(|analytic|, |numeric|, 1e-8).
    """
    point = np.asarray(point, dtype=np.float64).ravel().copy()
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    if point.shape != analytic.shape:
        raise ConfigError("point and analytic gradient must have the same size")
    if coords is None:
        coords = range(point.size)
    worst = 0.0
    for i in coords:
        orig = point[i]
        point[i] = orig + step
        f_plus = float(fn(point))
        point[i] = orig - step
        f_minus = float(fn(point))
        point[i] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NumericError(f"non-finite function value at coordinate {i}")
        numeric = (f_plus - f_minus) / (2.0 * step)
        denom = max(abs(analytic[i]), abs(numeric), FD_DENOM_FLOOR)
        worst = max(worst, abs(analytic[i] - numeric) / denom)
    return worst


# -- toy data ------------------------------------------------------------------


@dataclass
class ToyDataSpec:
    """Synthetic moving-square RGB clips."""

    height: int = 32
    width: int = 32
    frames: int = 4
    square: int = 10
    stage_iters: tuple[int, int, int] = (200, 50, 50)
    noise_sigma: float = 0.0

    def __post_init__(self):
        if not 1 <= self.square < min(self.height, self.width):
            raise ConfigError(
                f"square size {self.square} must fit inside {self.height}x{self.width}"
            )


def make_clip(spec: ToyDataSpec, rng: np.random.Generator) -> VideoCube:
    """One H x W x 3 x T clip: colored square drifting over a flat background."""
    h, w, t, s = spec.height, spec.width, spec.frames, spec.square
    bg = rng.uniform(0.1, 0.4, size=3)
    fg = rng.uniform(0.6, 1.0, size=3)
    x0, y0 = rng.integers(0, w - s), rng.integers(0, h - s)
    vx, vy = rng.integers(-3, 4), rng.integers(-3, 4)
    clip = np.empty((h, w, 3, t))
    for k in range(t):
        frame = np.tile(bg, (h, w, 1))
        yy = int(np.clip(y0 + k * vy, 0, h - s))
        xx = int(np.clip(x0 + k * vx, 0, w - s))
        frame[yy : yy + s, xx : xx + s] = fg
        clip[:, :, :, k] = frame
    return VideoCube(clip)


@dataclass
class TrainResult:
    model: Model
    losses: list[float]
    smoothed: list[float]
    curve: list[tuple[int, float, float]]  # (step, loss, psnr)


def _smooth(losses: list[float]) -> list[float]:
    """Trailing-window mean followed by a running minimum (monotone)."""
    out = []
    best = np.inf
    for i in range(len(losses)):
        window = losses[max(0, i - SMOOTH_WINDOW + 1) : i + 1]
        best = min(best, float(np.mean(window)))
        out.append(best)
    return out


def train_toy(
    config: NetworkConfig,
    data_spec: ToyDataSpec | None = None,
    seed: int = 0,
    model: Model | None = None,
) -> TrainResult:
    """Train on synthetic clips with MSE loss and the staged schedule.

    Deterministic per seed: data, masks, and initialization all derive from
    the Philox streams seeded below.
    """
    spec = data_spec or ToyDataSpec(
        height=config.height, width=config.width, frames=config.frames
    )
    if model is None:
        model = build(config, seed)
    data_rng = np.random.Generator(np.random.Philox([seed, 1]))
    mask_seed_rng = np.random.Generator(np.random.Philox([seed, 2]))
    state = OptimState(lr=5e-4)
    losses: list[float] = []
    curve: list[tuple[int, float, float]] = []
    step_idx = 0
    params = model.named_parameters()
    for lr, iters in zip((5e-4, 1e-4, 1e-5), spec.stage_iters):
        state.lr = lr
        for _ in range(iters):
            clip = make_clip(spec, data_rng)
            masks = gen_masks(
                spec.height, spec.width, spec.frames, int(mask_seed_rng.integers(2**32))
            )
            raw = mosaic(clip, CfaPattern.QUAD_BAYER)
            meas = encode(raw, masks, spec.noise_sigma, seed=step_idx)
            x_in = initialize(meas, masks).data.transpose(3, 0, 1, 2)
            target = Tensor(clip.data.transpose(3, 0, 1, 2))
            model.zero_grads()
            out = model.forward_tensor(Tensor(x_in))
            loss = ad.mse(out, target)
            loss_val = float(loss.data)
            if not np.isfinite(loss_val):
                raise TrainingError(f"loss diverged (non-finite) at step {step_idx}")
            loss.backward()
            weights = {k: p.data for k, p in params.items()}
            grads = {
                k: (p.grad if p.grad is not None else np.zeros_like(p.data))
                for k, p in params.items()
            }
            weights, state = adam_step(weights, grads, state)
            for k, p in params.items():
                p.data = weights[k]
            losses.append(loss_val)
            rec = np.clip(out.data, 0.0, 1.0).transpose(1, 2, 3, 0)
            curve.append((step_idx, loss_val, psnr(clip, VideoCube(rec))))
            step_idx += 1
    return TrainResult(model=model, losses=losses, smoothed=_smooth(losses), curve=curve)


def write_curve_csv(curve, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["step", "loss", "psnr"])
        for step, loss, p in curve:
            writer.writerow([step, f"{loss:.8f}", f"{p:.2f}"])
