"""Short end-to-end training run of the reconstruction network.

Uses a scaled-down schedule so the demo finishes in about a minute;
the full protocol (32x32, 4 frames, 200/50/50 iterations) is what the
acceptance suite runs.
"""

import numpy as np

from quadsci.cube import VideoCube, psnr
from quadsci.model import NetworkConfig, forward
from quadsci.sensing import CfaPattern, encode, gen_masks, initialize, mosaic
from quadsci.train import ToyDataSpec, make_clip, train_toy

config = NetworkConfig(variant="T", frames=2, height=16, width=16)
spec = ToyDataSpec(height=16, width=16, frames=2, square=5, stage_iters=(60, 10, 10))

result = train_toy(config, spec, seed=0)
print(f"ran {len(result.losses)} steps")
print(f"first loss {result.losses[0]:.4f}, last smoothed {result.smoothed[-1]:.4f}")

# evaluate on a held-out clip with a fixed mask
clip = make_clip(spec, np.random.default_rng(123))
masks = gen_masks(16, 16, 2, seed=999)
meas = encode(mosaic(clip, CfaPattern.QUAD_BAYER), masks)
x_in = initialize(meas, masks)

rec = forward(result.model, x_in)
rec = VideoCube(np.clip(rec.data, 0.0, 1.0))
init_rgb = VideoCube(np.clip(np.repeat(x_in.data, 3, axis=2), 0.0, 1.0))
print(f"initialization PSNR {psnr(clip, init_rgb):.2f} dB")
print(f"trained PSNR        {psnr(clip, rec):.2f} dB")
