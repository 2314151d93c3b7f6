"""Parameter counts and analytic FLOP accounting for the three model widths.

The scan recurrence costs O(L*C*N) per branch, so the whole network is
linear in the frame count; the closed-form attention_complexity expression
(8HWTCN + 2HWTCN^2) is what an attention-style module would cost instead.
"""

from quadsci.model import (
    NetworkConfig,
    attention_complexity,
    build,
    count_params,
    flop_breakdown,
)

for variant in "TSB":
    cfg = NetworkConfig(variant=variant)
    model = build(cfg, seed=0)
    bd = flop_breakdown(cfg, 64, 64, 8)
    print(
        f"variant {variant}: params {count_params(model):>9,d}  "
        f"flops {bd.total / 1e9:7.2f} G  scan share {bd.scan / bd.total:.1%}"
    )

cfg = NetworkConfig(variant="T")
for t in (2, 4, 8, 16):
    bd = flop_breakdown(cfg, 64, 64, t)
    print(f"T={t:2d}: total {bd.total / 1e9:7.2f} G (linear in frames)")

print()
print("scan-module complexity vs frame count (H=W=64, C=8, N=16):")
for t in (2, 4, 8):
    print(f"  T={t}: {attention_complexity(64, 64, t, 8, 16):,}")
