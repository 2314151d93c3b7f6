"""The full reconstruction network: shallow stem, 3-stage encoder,
bottleneck, 3-stage decoder with additive skips, and the RGB reconstruction
head. Also parameter/FLOP accounting and the VWTS weight container.

Feature layout everywhere is (T, H, W, C); VideoCube boundaries are
(H, W, C, T).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .blocks import CA, EDR, STMamba, LayerNorm, Linear, Module, ResidualMambaBlock, trunc_normal
from .cube import VideoCube
from .errors import ConfigError, FormatError, NumericError, ShapeError

VWTS_MAGIC = b"VWTS"
VWTS_VERSION = 1

VARIANT_CHANNELS = {"T": 8, "S": 10, "B": 16}
DEFAULT_BLOCKS = (2, 4, 4, 6)


@dataclass
class NetworkConfig:
    """Variant descriptor; fully determines every weight shape."""

    variant: str = "T"
    frames: int = 8
    height: int = 64
    width: int = 64
    base_channels: int = 0  # 0 = derive from variant
    blocks: tuple[int, int, int, int] = DEFAULT_BLOCKS
    d_state: int = 16
    expand: int = 2
    d_conv: int = 4
    mlp_ratio: int = 4

    def __post_init__(self):
        self.variant = self.variant.upper()
        if self.variant not in VARIANT_CHANNELS:
            raise ConfigError(f"unknown variant {self.variant!r}, expected one of T/S/B")
        if self.base_channels == 0:
            self.base_channels = VARIANT_CHANNELS[self.variant]
        if len(self.blocks) != 4 or any(b < 1 for b in self.blocks):
            raise ConfigError(f"blocks must be 4 counts >= 1, got {self.blocks}")
        if self.height % 8 or self.width % 8:
            raise ConfigError(
                f"spatial dims must be divisible by 8, got {self.height}x{self.width}"
            )
        if self.frames < 1:
            raise ConfigError("frames must be >= 1")


class DepthwiseSeparableConv3d(Module):
    """3x3x3 depthwise conv followed by a pointwise channel mix."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator):
        self.dw_weight = Tensor(trunc_normal(rng, (c_in, 3, 3, 3)), requires_grad=True)
        self.dw_bias = Tensor(np.zeros(c_in), requires_grad=True)
        self.pw = Linear(c_in, c_out, rng)

    def __call__(self, x):
        return self.pw(ad.conv3d_depthwise(x, self.dw_weight, self.dw_bias))


class Stem(Module):
    def __init__(self, channels: int, rng: np.random.Generator):
        self.dwconv = DepthwiseSeparableConv3d(1, channels, rng)

    def __call__(self, x):
        return self.dwconv(x)


class EncoderStage(Module):
    """n residual blocks (the last one doubling channels) then 2x2 max-pool."""

    def __init__(self, c_in: int, n_blocks: int, cfg: NetworkConfig, rng):
        self.n_blocks = n_blocks
        for k in range(1, n_blocks + 1):
            out = 2 * c_in if k == n_blocks else c_in
            setattr(
                self,
                f"block{k}",
                ResidualMambaBlock(
                    c_in, out, rng, cfg.d_state, cfg.d_conv, cfg.expand, cfg.mlp_ratio
                ),
            )

    def __call__(self, x):
        for k in range(1, self.n_blocks + 1):
            x = getattr(self, f"block{k}")(x)
        return ad.maxpool2x2(x)


class Bottleneck(Module):
    def __init__(self, channels: int, n_blocks: int, cfg: NetworkConfig, rng):
        self.n_blocks = n_blocks
        for k in range(1, n_blocks + 1):
            setattr(
                self,
                f"block{k}",
                ResidualMambaBlock(
                    channels, channels, rng, cfg.d_state, cfg.d_conv, cfg.expand, cfg.mlp_ratio
                ),
            )

    def __call__(self, x):
        for k in range(1, self.n_blocks + 1):
            x = getattr(self, f"block{k}")(x)
        return x


class DecoderStage(Module):
    """Skip add (done by caller), residual dw-sep conv, GELU, nearest 2x
    upsample, then a Linear halving the channel count."""

    def __init__(self, channels: int, rng):
        self.conv = DepthwiseSeparableConv3d(channels, channels, rng)
        self.reduce = Linear(channels, channels // 2, rng)

    def __call__(self, x):
        x = ad.gelu(ad.add(x, self.conv(x)))
        return self.reduce(ad.upsample_nearest2x(x))


class Head(Module):
    """Three 3-D convolutions: 3x3x3, 3x3x3, 1x1x1, mapping C -> C -> C -> 3."""

    def __init__(self, channels: int, rng):
        self.conv1_weight = Tensor(trunc_normal(rng, (channels, channels, 3, 3, 3)), requires_grad=True)
        self.conv1_bias = Tensor(np.zeros(channels), requires_grad=True)
        self.conv2_weight = Tensor(trunc_normal(rng, (channels, channels, 3, 3, 3)), requires_grad=True)
        self.conv2_bias = Tensor(np.zeros(channels), requires_grad=True)
        self.conv3_weight = Tensor(trunc_normal(rng, (3, channels, 1, 1, 1)), requires_grad=True)
        self.conv3_bias = Tensor(np.zeros(3), requires_grad=True)

    def __call__(self, x):
        x = ad.gelu(ad.conv3d(x, self.conv1_weight, self.conv1_bias))
        x = ad.gelu(ad.conv3d(x, self.conv2_weight, self.conv2_bias))
        return ad.conv3d(x, self.conv3_weight, self.conv3_bias)


class Model(Module):
    """Assembled network with the canonical dotted weight-name map."""

    def __init__(self, config: NetworkConfig, seed: int = 0):
        self.config = config
        rng = np.random.Generator(np.random.Philox(seed))
        c = config.base_channels
        self.stem = Stem(c, rng)
        self.enc1 = EncoderStage(c, config.blocks[0], config, rng)
        self.enc2 = EncoderStage(2 * c, config.blocks[1], config, rng)
        self.enc3 = EncoderStage(4 * c, config.blocks[2], config, rng)
        self.bottleneck = Bottleneck(8 * c, config.blocks[3], config, rng)
        self.dec1 = DecoderStage(8 * c, rng)
        self.dec2 = DecoderStage(4 * c, rng)
        self.dec3 = DecoderStage(2 * c, rng)
        self.head = Head(c, rng)

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, val in vars(self).items():
            if isinstance(val, Module):
                out.update(val.named_parameters(prefix + name + "."))
        return out

    def weight_map(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.named_parameters().items()}

    def zero_grads(self) -> None:
        for p in self.named_parameters().values():
            p.grad = None

    def forward_tensor(self, x) -> Tensor:
        """x: (T, H, W, 1) Tensor or array -> (T, H, W, 3) Tensor."""
        x = ad.astensor(x)
        t, h, w, cin = x.shape
        if cin != 1:
            raise ShapeError(f"network input must have 1 channel, got {cin}")
        if h % 8 or w % 8:
            raise ShapeError(f"spatial dims must be divisible by 8, got {h}x{w}")

        def check(name, tensor):
            if not np.all(np.isfinite(tensor.data)):
                raise NumericError(f"non-finite activations after {name}")
            return tensor

        f = check("stem", self.stem(x))
        e1 = check("enc1", self.enc1(f))
        e2 = check("enc2", self.enc2(e1))
        e3 = check("enc3", self.enc3(e2))
        b = check("bottleneck", self.bottleneck(e3))
        d1 = check("dec1", self.dec1(ad.add(b, e3)))
        d2 = check("dec2", self.dec2(ad.add(d1, e2)))
        d3 = check("dec3", self.dec3(ad.add(d2, e1)))
        return check("head", self.head(d3))


def build(config: NetworkConfig, seed: int = 0) -> Model:
    """Construct a model with seeded, reproducible initialization."""
    return Model(config, seed)


def forward(model: Model, x_in: VideoCube) -> VideoCube:
    """Reconstruct an H x W x 1 x T cube into H x W x 3 x T RGB."""
    if x_in.data.ndim != 4 or x_in.dims[2] != 1:
        raise ShapeError(f"expected H x W x 1 x T input, got {x_in.dims}")
    if x_in.dims[3] != model.config.frames:
        raise ShapeError(
            f"input has {x_in.dims[3]} frames, model configured for {model.config.frames}"
        )
    x = x_in.data.transpose(3, 0, 1, 2)  # (T, H, W, 1)
    with ad.no_grad():
        out = model.forward_tensor(Tensor(x))
    return VideoCube(out.data.transpose(1, 2, 3, 0))


def count_params(model: Model) -> int:
    return sum(v.data.size for v in model.named_parameters().values())


def attention_complexity(h: int, w: int, t: int, c: int, n: int) -> int:
    """Scan-module complexity: 8*H*W*T*C*N + 2*H*W*T*C*N^2."""
    return 8 * h * w * t * c * n + 2 * h * w * t * c * n * n


@dataclass
class FlopBreakdown:
    total: int = 0
    scan: int = 0
    detail: dict[str, int] = field(default_factory=dict)

    def _add(self, name: str, flops: int, scan: bool = False) -> None:
        flops = int(flops)
        self.total += flops
        if scan:
            self.scan += flops
        self.detail[name] = self.detail.get(name, 0) + flops


# Per-element cost constants (FLOPs); 1 MAC = 2 FLOPs.
_LN_FLOPS = 8
_ACT_FLOPS = 10


def _block_flops(bd: FlopBreakdown, name: str, tokens: int, c_in: int, c_out: int, cfg: NetworkConfig):
    inner = cfg.expand * c_in
    n = cfg.d_state
    hidden = cfg.mlp_ratio * c_in
    bd._add(f"{name}.norms", 3 * tokens * c_in * _LN_FLOPS)
    # STMamba projections and branches
    bd._add(f"{name}.stmamba.proj", 2 * (2 * tokens * c_in * inner) + 2 * tokens * inner * c_in)
    per_branch = (
        2 * tokens * inner * cfg.d_conv  # causal depthwise conv
        + tokens * inner * _ACT_FLOPS
        + tokens * inner * _LN_FLOPS  # post-scan norm
    )
    bd._add(f"{name}.stmamba.branch_fixed", 3 * per_branch)
    bd._add(f"{name}.stmamba.param_proj", 3 * (2 * tokens * inner * inner + 2 * 2 * tokens * inner * n))
    bd._add(f"{name}.stmamba.scan", 3 * 6 * tokens * inner * n, scan=True)
    bd._add(f"{name}.stmamba.gate", 2 * tokens * inner * 4)
    # EDR
    bd._add(
        f"{name}.edr",
        2 * tokens * c_in * hidden * 2 + 2 * tokens * hidden * 27 + 2 * tokens * hidden * _ACT_FLOPS,
    )
    # projection
    bd._add(f"{name}.proj", 2 * tokens * c_in * c_out)
    # CA
    mid = max(1, c_out // 2)
    bd._add(f"{name}.ca", 2 * (c_out * mid * 2) + tokens * c_out * 2 + 2 * tokens * c_out * c_out * 27)


def flop_breakdown(config: NetworkConfig, h: int, w: int, t: int) -> FlopBreakdown:
    """Analytic forward-pass FLOP count (1 MAC = 2 FLOPs, biases and norms
    included, padded positions counted)."""
    bd = FlopBreakdown()
    c = config.base_channels
    tokens0 = t * h * w
    bd._add("stem", 2 * tokens0 * 27 + 2 * tokens0 * 1 * c)
    widths = [c, 2 * c, 4 * c]
    res = [(h, w), (h // 2, w // 2), (h // 4, w // 4)]
    for i in range(3):
        hh, ww = res[i]
        tokens = t * hh * ww
        cin = widths[i]
        for k in range(config.blocks[i]):
            cout = 2 * cin if k == config.blocks[i] - 1 else cin
            _block_flops(bd, f"enc{i + 1}.block{k + 1}", tokens, cin, cout, config)
        bd._add(f"enc{i + 1}.pool", t * hh * ww * 2 * cin)
    hb, wb = h // 8, w // 8
    tokens_b = t * hb * wb
    for k in range(config.blocks[3]):
        _block_flops(bd, f"bottleneck.block{k + 1}", tokens_b, 8 * c, 8 * c, config)
    for i, cw in enumerate((8 * c, 4 * c, 2 * c)):
        hh, ww = h // 8 * 2**i, w // 8 * 2**i
        tokens = t * hh * ww
        bd._add(
            f"dec{i + 1}",
            2 * tokens * cw * 27
            + 2 * tokens * cw * cw
            + tokens * cw * _ACT_FLOPS
            + 2 * (4 * tokens) * cw * (cw // 2),
        )
    tokens0 = t * h * w
    bd._add("head", 2 * tokens0 * c * c * 27 * 2 + 2 * tokens0 * c * 3)
    return bd


def count_flops(config: NetworkConfig, h: int, w: int, t: int) -> int:
    return flop_breakdown(config, h, w, t).total


# -- VWTS weight container ---------------------------------------------------


def save_weights(model: Model, path) -> None:
    """Serialize all weights, keys sorted, 64-bit little-endian payloads."""
    entries = sorted(model.weight_map().items())
    with open(path, "wb") as f:
        f.write(VWTS_MAGIC)
        f.write(struct.pack("<B", VWTS_VERSION))
        f.write(struct.pack("<I", len(entries)))
        for key, arr in entries:
            kb = key.encode("utf-8")
            f.write(struct.pack("<H", len(kb)))
            f.write(kb)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_weight_entries(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != VWTS_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}, expected {VWTS_MAGIC!r}")
    if blob[4] != VWTS_VERSION:
        raise FormatError(f"{path}: unsupported VWTS version {blob[4]}")
    (count,) = struct.unpack("<I", blob[5:9])
    pos = 9
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (klen,) = struct.unpack("<H", blob[pos : pos + 2])
        pos += 2
        key = blob[pos : pos + klen].decode("utf-8")
        pos += klen
        ndim = blob[pos]
        pos += 1
        shape = struct.unpack(f"<{ndim}I", blob[pos : pos + 4 * ndim])
        pos += 4 * ndim
        nbytes = int(np.prod(shape)) * 8 if ndim else 8
        arr = np.frombuffer(blob[pos : pos + nbytes], dtype="<f8").reshape(shape)
        pos += nbytes
        out[key] = arr.astype(np.float64)
    if pos != len(blob):
        raise FormatError(f"{path}: {len(blob) - pos} trailing bytes")
    return out


def load_weights(path, config: NetworkConfig, seed: int = 0) -> Model:
    """Build a model from config and fill it from a VWTS file, validating
    every key and shape."""
    model = build(config, seed)
    entries = read_weight_entries(path)
    params = model.named_parameters()
    unknown = sorted(set(entries) - set(params))
    if unknown:
        raise FormatError(f"{path}: unknown weight keys {unknown}")
    missing = sorted(set(params) - set(entries))
    if missing:
        raise FormatError(f"{path}: missing weight keys {missing}")
    for key, tensor in params.items():
        if entries[key].shape != tensor.data.shape:
            raise ShapeError(
                f"{path}: {key} has shape {entries[key].shape}, expected {tensor.data.shape}"
            )
        tensor.data = np.ascontiguousarray(entries[key])
    return model
