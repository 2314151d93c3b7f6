"""Composite network blocks: the three-branch spatial-temporal scan block
(STMamba), the edge-detail reconstruction block (EDR), channel attention (CA)
and the residual block combining them with learnable scales.

All blocks consume and produce features in (T, H, W, C) layout as autodiff
Tensors. Weight layout and names are stable; they form the entries of the
VWTS weight container.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ShapeError

TRUNC_NORMAL_STD = 0.02


def trunc_normal(rng: np.random.Generator, shape, std: float = TRUNC_NORMAL_STD) -> np.ndarray:
    return np.clip(rng.standard_normal(shape), -2.0, 2.0) * std


class Module:
    """Tiny container base: parameters are Tensor attributes, children are
    Module attributes; names follow the attribute path with dots."""

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, val in vars(self).items():
            if isinstance(val, Tensor):
                out[prefix + name] = val
            elif isinstance(val, Module):
                out.update(val.named_parameters(prefix + name + "."))
        return out


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator):
        self.weight = Tensor(trunc_normal(rng, (d_out, d_in)), requires_grad=True)
        self.bias = Tensor(np.zeros(d_out), requires_grad=True)

    def __call__(self, x):
        return ad.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.weight = Tensor(np.ones(dim), requires_grad=True)
        self.bias = Tensor(np.zeros(dim), requires_grad=True)

    def __call__(self, x):
        return ad.layer_norm(x, self.weight, self.bias)


class ScanBranch(Module):
    """Causal depthwise conv -> SiLU -> selective scan -> layer norm."""

    def __init__(
        self,
        channels: int,
        state_size: int,
        d_conv: int,
        backward: bool,
        rng: np.random.Generator,
    ):
        self.backward_scan = backward
        self.conv_weight = Tensor(trunc_normal(rng, (channels, d_conv)), requires_grad=True)
        self.conv_bias = Tensor(np.zeros(channels), requires_grad=True)
        # A = -exp(a_log), per channel over 1..N
        self.a_log = Tensor(
            np.tile(np.log(np.linspace(1.0, state_size, state_size)), (channels, 1)),
            requires_grad=True,
        )
        self.w_delta = Tensor(trunc_normal(rng, (channels, channels)), requires_grad=True)
        dt = np.exp(rng.uniform(np.log(1e-3), np.log(1e-1), size=channels))
        self.b_delta = Tensor(np.log(np.expm1(dt)), requires_grad=True)
        self.w_b = Tensor(trunc_normal(rng, (state_size, channels)), requires_grad=True)
        self.w_c = Tensor(trunc_normal(rng, (state_size, channels)), requires_grad=True)
        self.norm = LayerNorm(channels)

    def __call__(self, seq):
        """seq: (L, channels) Tensor."""
        x = ad.conv1d_depthwise_causal(seq, self.conv_weight, self.conv_bias)
        x = ad.silu(x)
        if self.backward_scan:
            x = ad.flip(x, axis=0)
        delta = ad.softplus_t(ad.linear(x, self.w_delta, self.b_delta))
        b_seq = ad.linear(x, self.w_b)
        c_seq = ad.linear(x, self.w_c)
        a = ad.mul(ad.exp(self.a_log), -1.0)
        y = ad.selective_scan_op(x, delta, a, b_seq, c_seq)
        if self.backward_scan:
            y = ad.flip(y, axis=0)
        return self.norm(y)


class STMamba(Module):
    """Three gated scan branches: spatial forward/backward and temporal."""

    def __init__(
        self,
        channels: int,
        state_size: int,
        d_conv: int,
        expand: int,
        rng: np.random.Generator,
    ):
        inner = expand * channels
        self.inner = inner
        self.in_proj = Linear(channels, inner, rng)
        self.gate_proj = Linear(channels, inner, rng)
        self.spatial_fwd = ScanBranch(inner, state_size, d_conv, False, rng)
        self.spatial_bwd = ScanBranch(inner, state_size, d_conv, True, rng)
        self.temporal = ScanBranch(inner, state_size, d_conv, False, rng)
        self.out_proj = Linear(inner, channels, rng)

    def __call__(self, feat):
        """feat: (T, H, W, C) Tensor."""
        t, h, w, _ = feat.shape
        x = ad.silu(self.in_proj(feat))
        z = ad.silu(self.gate_proj(feat))
        # frame-major: t outer, row-major spatial
        xs = ad.reshape(x, (t * h * w, self.inner))
        # pixel-major: spatial raster outer, t inner
        xt = ad.reshape(ad.transpose(x, (1, 2, 0, 3)), (h * w * t, self.inner))
        ys_f = ad.reshape(self.spatial_fwd(xs), (t, h, w, self.inner))
        ys_b = ad.reshape(self.spatial_bwd(xs), (t, h, w, self.inner))
        yt = ad.transpose(
            ad.reshape(self.temporal(xt), (h, w, t, self.inner)), (2, 0, 1, 3)
        )
        gated = ad.add(ad.add(ad.mul(ys_f, z), ad.mul(ys_b, z)), ad.mul(yt, z))
        return self.out_proj(gated)


class EDR(Module):
    """Linear -> GELU -> depthwise 3x3x3 conv -> GELU -> Linear."""

    def __init__(self, channels: int, mlp_ratio: int, rng: np.random.Generator):
        hidden = mlp_ratio * channels
        self.hidden = hidden
        self.fc1 = Linear(channels, hidden, rng)
        self.dw_weight = Tensor(trunc_normal(rng, (hidden, 3, 3, 3)), requires_grad=True)
        self.dw_bias = Tensor(np.zeros(hidden), requires_grad=True)
        self.fc2 = Linear(hidden, channels, rng)

    def __call__(self, tokens, nframes: int, h: int, w: int):
        """tokens: (L, C) frame-major sequence with L == nframes * h * w."""
        length = tokens.shape[0]
        if length != nframes * h * w:
            raise ShapeError(f"EDR: {length} tokens != {nframes}*{h}*{w}")
        x = ad.gelu(self.fc1(tokens))
        vol = ad.reshape(x, (nframes, h, w, self.hidden))
        vol = ad.conv3d_depthwise(vol, self.dw_weight, self.dw_bias)
        vol = ad.gelu(vol)
        x = ad.reshape(vol, (length, self.hidden))
        return self.fc2(x)


class CA(Module):
    """Global pool -> channel bottleneck -> sigmoid weights -> fusion conv."""

    def __init__(self, channels: int, rng: np.random.Generator):
        mid = max(1, channels // 2)
        self.squeeze = Linear(channels, mid, rng)
        self.excite = Linear(mid, channels, rng)
        self.fusion_weight = Tensor(
            trunc_normal(rng, (channels, channels, 3, 3, 3)), requires_grad=True
        )
        self.fusion_bias = Tensor(np.zeros(channels), requires_grad=True)

    def attention_weights(self, feat):
        pooled = ad.mean_axes(feat, (0, 1, 2))  # (C,)
        return ad.sigmoid(self.excite(ad.gelu(self.squeeze(pooled))))

    def __call__(self, feat):
        """feat: (T, H, W, C) Tensor."""
        att = self.attention_weights(feat)
        weighted = ad.mul(feat, att)
        return ad.conv3d(weighted, self.fusion_weight, self.fusion_bias)


class ResidualMambaBlock(Module):
    """STMamba + EDR + CA tied together with learnable residual scales.

    F1 = STMamba(LN(F)) + F*s1
    F2 = Proj(EDR(LN(F1)) + F1*s2)
    out = CA(LN(F2)) + F2*s3
    """

    def __init__(
        self,
        input_dim: int,
        output_dim: int,
        rng: np.random.Generator,
        state_size: int = 16,
        d_conv: int = 4,
        expand: int = 2,
        mlp_ratio: int = 4,
    ):
        self.input_dim = input_dim
        self.output_dim = output_dim
        self.norm1 = LayerNorm(input_dim)
        self.stmamba = STMamba(input_dim, state_size, d_conv, expand, rng)
        self.scale1 = Tensor(np.ones(1), requires_grad=True)
        self.norm2 = LayerNorm(input_dim)
        self.edr = EDR(input_dim, mlp_ratio, rng)
        self.scale2 = Tensor(np.ones(1), requires_grad=True)
        self.proj = Linear(input_dim, output_dim, rng)
        self.norm3 = LayerNorm(output_dim)
        self.ca = CA(output_dim, rng)
        self.scale3 = Tensor(np.ones(1), requires_grad=True)

    def __call__(self, feat):
        """feat: (T, H, W, input_dim) -> (T, H, W, output_dim)."""
        t, h, w, c = feat.shape
        if c != self.input_dim:
            raise ShapeError(f"block expects {self.input_dim} channels, got {c}")
        f1 = ad.add(self.stmamba(self.norm1(feat)), ad.mul(feat, self.scale1))
        tokens = ad.reshape(self.norm2(f1), (t * h * w, c))
        edr_out = ad.reshape(self.edr(tokens, t, h, w), (t, h, w, c))
        f2 = self.proj(ad.add(edr_out, ad.mul(f1, self.scale2)))
        return ad.add(self.ca(self.norm3(f2)), ad.mul(f2, self.scale3))


def zero_weights(module: Module) -> None:
    """Set every learned array in `module` to zeros (test/diagnostic helper)."""
    for p in module.named_parameters().values():
        p.data = np.zeros_like(p.data)


def set_identity_projection(block: ResidualMambaBlock) -> None:
    if block.input_dim != block.output_dim:
        raise ShapeError("identity projection needs input_dim == output_dim")
    block.proj.weight.data = np.eye(block.input_dim)
    block.proj.bias.data = np.zeros(block.input_dim)
