"""Minimal reverse-mode tensor engine on numpy.

Covers exactly the primitives the reconstruction network needs: linear maps,
causal depthwise 1-D convolution, 3-D full/depthwise convolution, layer norm,
SiLU/GELU/sigmoid/softplus, elementwise arithmetic, spatial max-pool and
nearest upsample, reductions, reshapes, and the selective-scan recurrence
(backward-through-time with saved states).

Gradients accumulate additively in a fixed reverse-topological order, so
results are deterministic.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

from .errors import ShapeError
from .ssm import ZOH_LIMIT_THRESHOLD, scan_backward_kernel, scan_forward_kernel

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)

LAYERNORM_EPS = 1e-5


class Tensor:
    """A node in the recorded operation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    # -- graph walking --------------------------------------------------

    def backward(self) -> None:
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                node._backward = None  # free the tape

    def zero_grad(self) -> None:
        self.grad = None

    # -- operator sugar ---------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __neg__(self):
        return mul(self, -1.0)

    def reshape(self, *shape):
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes)

    def sum(self):
        return sum_all(self)

    def mean(self):
        return mean_all(self)


def astensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


_GRAD_ENABLED = True


class no_grad:
    """Context manager disabling graph recording (inference paths)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad and t._backward is None and not t._parents:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _node(data, parents, backward_fn) -> Tensor:
    track = _GRAD_ENABLED and any(
        p.requires_grad or p._parents or p._backward for p in parents
    )
    out = Tensor(data)
    if track:
        out._parents = tuple(parents)
        out._backward = backward_fn
        out.requires_grad = True
    return out


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum grad down to `shape` after numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- elementwise arithmetic ----------------------------------------------


def add(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    out_data = a.data + b.data

    def bwd(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return _node(out_data, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    out_data = a.data * b.data

    def bwd(g):
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _node(out_data, (a, b), bwd)


def exp(a) -> Tensor:
    a = astensor(a)
    out_data = np.exp(a.data)

    def bwd(g):
        _accumulate(a, g * out_data)

    return _node(out_data, (a,), bwd)


def square(a) -> Tensor:
    a = astensor(a)

    def bwd(g):
        _accumulate(a, g * 2.0 * a.data)

    return _node(a.data * a.data, (a,), bwd)


# -- shape ops -------------------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = astensor(a)
    orig = a.data.shape

    def bwd(g):
        _accumulate(a, g.reshape(orig))

    return _node(a.data.reshape(shape), (a,), bwd)


def transpose(a, axes) -> Tensor:
    a = astensor(a)
    inv = np.argsort(axes)

    def bwd(g):
        _accumulate(a, np.ascontiguousarray(g.transpose(inv)))

    return _node(np.ascontiguousarray(a.data.transpose(axes)), (a,), bwd)


def flip(a, axis: int = 0) -> Tensor:
    a = astensor(a)

    def bwd(g):
        _accumulate(a, np.flip(g, axis=axis))

    return _node(np.ascontiguousarray(np.flip(a.data, axis=axis)), (a,), bwd)


# -- reductions --------------------------------------------------------------


def sum_all(a) -> Tensor:
    a = astensor(a)

    def bwd(g):
        _accumulate(a, np.full_like(a.data, float(g)))

    return _node(a.data.sum(), (a,), bwd)


def mean_all(a) -> Tensor:
    a = astensor(a)
    n = a.data.size

    def bwd(g):
        _accumulate(a, np.full_like(a.data, float(g) / n))

    return _node(a.data.mean(), (a,), bwd)


def mean_axes(a, axes: tuple[int, ...]) -> Tensor:
    """Mean over `axes` (dropped from the output)."""
    a = astensor(a)
    count = int(np.prod([a.data.shape[ax] for ax in axes]))
    kept = a.data.mean(axis=axes)

    def bwd(g):
        _accumulate(a, np.broadcast_to(np.expand_dims(g, axes) / count, a.data.shape).copy())

    return _node(kept, (a,), bwd)


def mse(a, b) -> Tensor:
    diff = add(astensor(a), mul(astensor(b), -1.0))
    return mean_all(square(diff))


# -- activations -------------------------------------------------------------


def sigmoid(a) -> Tensor:
    a = astensor(a)
    s = 1.0 / (1.0 + np.exp(-a.data))

    def bwd(g):
        _accumulate(a, g * s * (1.0 - s))

    return _node(s, (a,), bwd)


def silu(a) -> Tensor:
    a = astensor(a)
    s = 1.0 / (1.0 + np.exp(-a.data))
    out_data = a.data * s

    def bwd(g):
        _accumulate(a, g * (s + a.data * s * (1.0 - s)))

    return _node(out_data, (a,), bwd)


def gelu(a) -> Tensor:
    """Exact (erf-based) GELU."""
    a = astensor(a)
    cdf = 0.5 * (1.0 + erf(a.data * _INV_SQRT2))
    pdf = _INV_SQRT2PI * np.exp(-0.5 * a.data * a.data)

    def bwd(g):
        _accumulate(a, g * (cdf + a.data * pdf))

    return _node(a.data * cdf, (a,), bwd)


def softplus_t(a) -> Tensor:
    a = astensor(a)
    s = 1.0 / (1.0 + np.exp(-a.data))

    def bwd(g):
        _accumulate(a, g * s)

    return _node(np.logaddexp(0.0, a.data), (a,), bwd)


# -- linear algebra -----------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    out_data = a.data @ b.data

    def bwd(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return _node(out_data, (a, b), bwd)


def linear(x, weight, bias=None) -> Tensor:
    """x (..., in) @ weight(out, in).T + bias(out)."""
    x, weight = astensor(x), astensor(weight)
    lead = x.data.shape[:-1]
    d_in = x.data.shape[-1]
    x2 = reshape(x, (-1, d_in))
    wt = transpose(weight, (1, 0))
    y = matmul(x2, wt)
    if bias is not None:
        y = add(y, astensor(bias))
    return reshape(y, lead + (weight.data.shape[0],))


def layer_norm(x, weight, bias, eps: float = LAYERNORM_EPS) -> Tensor:
    """Per-token layer norm over the last axis with learned affine."""
    x, weight, bias = astensor(x), astensor(weight), astensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out_data = xhat * weight.data + bias.data
    c = x.data.shape[-1]

    def bwd(g):
        gxhat = g * weight.data
        m1 = gxhat.mean(axis=-1, keepdims=True)
        m2 = (gxhat * xhat).mean(axis=-1, keepdims=True)
        _accumulate(x, inv * (gxhat - m1 - xhat * m2))
        red = tuple(range(g.ndim - 1))
        _accumulate(weight, (g * xhat).sum(axis=red))
        _accumulate(bias, g.sum(axis=red))

    del c
    return _node(out_data, (x, weight, bias), bwd)


# -- convolutions -------------------------------------------------------------


def conv1d_depthwise_causal(x, weight, bias=None) -> Tensor:
    """x (L, C), weight (C, K); left zero padding of K-1 (causal)."""
    x, weight = astensor(x), astensor(weight)
    length, channels = x.data.shape
    k = weight.data.shape[1]
    xp = np.concatenate([np.zeros((k - 1, channels)), x.data], axis=0)
    # patches[l, c, j] = x[l - (K-1) + j, c]
    patches = np.lib.stride_tricks.sliding_window_view(xp, k, axis=0)
    out_data = np.einsum("lck,ck->lc", patches, weight.data)
    if bias is not None:
        out_data = out_data + astensor(bias).data
    parents = [x, weight]
    b = astensor(bias) if bias is not None else None
    if b is not None:
        parents.append(b)

    def bwd(g):
        _accumulate(weight, np.einsum("lck,lc->ck", patches, g))
        gxp = np.zeros_like(xp)
        for j in range(k):
            gxp[j : j + length] += g * weight.data[:, j]
        _accumulate(x, gxp[k - 1 :])
        if b is not None:
            _accumulate(b, g.sum(axis=0))

    return _node(out_data, tuple(parents), bwd)


def _pad3d(x: np.ndarray, kt: int, kh: int, kw: int) -> np.ndarray:
    pt, ph, pw = kt // 2, kh // 2, kw // 2
    return np.pad(x, ((pt, pt), (ph, ph), (pw, pw), (0, 0)))


def _patches3d(xp: np.ndarray, kt: int, kh: int, kw: int) -> np.ndarray:
    # (T, H, W, C, kt, kh, kw) view of the zero-padded input
    return np.lib.stride_tricks.sliding_window_view(xp, (kt, kh, kw), axis=(0, 1, 2))


def _scatter3d(gpatch_fn, shape, kt, kh, kw):
    """Accumulate per-offset gradient planes back onto the padded input."""
    t, h, w, c = shape
    pt, ph, pw = kt // 2, kh // 2, kw // 2
    gxp = np.zeros((t + 2 * pt, h + 2 * ph, w + 2 * pw, c))
    for i in range(kt):
        for j in range(kh):
            for k in range(kw):
                gxp[i : i + t, j : j + h, k : k + w] += gpatch_fn(i, j, k)
    if pt or ph or pw:
        return gxp[pt : pt + t, ph : ph + h, pw : pw + w]
    return gxp


def conv3d(x, weight, bias=None) -> Tensor:
    """Full 3-D convolution over (T, H, W) with 'same' zero padding.

    x (T, H, W, Cin), weight (Cout, Cin, kt, kh, kw), bias (Cout,).
    """
    x, weight = astensor(x), astensor(weight)
    _, cin, kt, kh, kw = weight.data.shape
    if x.data.shape[-1] != cin:
        raise ShapeError(f"conv3d: input channels {x.data.shape[-1]} != weight {cin}")
    xp = _pad3d(x.data, kt, kh, kw)
    patches = _patches3d(xp, kt, kh, kw)
    out_data = np.einsum("thwcijk,ocijk->thwo", patches, weight.data, optimize=True)
    if bias is not None:
        out_data = out_data + astensor(bias).data
    b = astensor(bias) if bias is not None else None
    parents = [x, weight] + ([b] if b is not None else [])

    def bwd(g):
        _accumulate(weight, np.einsum("thwcijk,thwo->ocijk", patches, g, optimize=True))
        wmat = weight.data  # (O, C, kt, kh, kw)
        _accumulate(
            x,
            _scatter3d(
                lambda i, j, k: g @ wmat[:, :, i, j, k],
                x.data.shape,
                kt,
                kh,
                kw,
            ),
        )
        if b is not None:
            _accumulate(b, g.sum(axis=(0, 1, 2)))

    return _node(out_data, tuple(parents), bwd)


def conv3d_depthwise(x, weight, bias=None) -> Tensor:
    """Per-channel 3-D convolution, x (T, H, W, C), weight (C, kt, kh, kw)."""
    x, weight = astensor(x), astensor(weight)
    c, kt, kh, kw = weight.data.shape
    if x.data.shape[-1] != c:
        raise ShapeError(f"depthwise conv3d: channels {x.data.shape[-1]} != weight {c}")
    xp = _pad3d(x.data, kt, kh, kw)
    patches = _patches3d(xp, kt, kh, kw)
    out_data = np.einsum("thwcijk,cijk->thwc", patches, weight.data, optimize=True)
    if bias is not None:
        out_data = out_data + astensor(bias).data
    b = astensor(bias) if bias is not None else None
    parents = [x, weight] + ([b] if b is not None else [])

    def bwd(g):
        _accumulate(weight, np.einsum("thwcijk,thwc->cijk", patches, g, optimize=True))
        wmat = weight.data
        _accumulate(
            x,
            _scatter3d(lambda i, j, k: g * wmat[:, i, j, k], x.data.shape, kt, kh, kw),
        )
        if b is not None:
            _accumulate(b, g.sum(axis=(0, 1, 2)))

    return _node(out_data, tuple(parents), bwd)


# -- resampling ---------------------------------------------------------------


def maxpool2x2(x) -> Tensor:
    """2x2 spatial max-pool on (T, H, W, C); ties route to the first window slot."""
    x = astensor(x)
    t, h, w, c = x.data.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2x2 needs even spatial dims, got {h}x{w}")
    win = x.data.reshape(t, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4)
    flat = win.reshape(t, h // 2, w // 2, c, 4)
    idx = flat.argmax(axis=-1)
    out_data = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def bwd(g):
        gflat = np.zeros_like(flat)
        np.put_along_axis(gflat, idx[..., None], g[..., None], axis=-1)
        gx = gflat.reshape(t, h // 2, w // 2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3)
        _accumulate(x, np.ascontiguousarray(gx.reshape(t, h, w, c)))

    return _node(np.ascontiguousarray(out_data), (x,), bwd)


def upsample_nearest2x(x) -> Tensor:
    """Nearest-neighbor 2x spatial upsample on (T, H, W, C)."""
    x = astensor(x)
    t, h, w, c = x.data.shape
    out_data = np.repeat(np.repeat(x.data, 2, axis=1), 2, axis=2)

    def bwd(g):
        _accumulate(x, g.reshape(t, h, 2, w, 2, c).sum(axis=(2, 4)))

    return _node(out_data, (x,), bwd)


# -- selective scan -----------------------------------------------------------


def selective_scan_op(x, delta, a, b_seq, c_seq) -> Tensor:
    """Forward selective scan with exact ZOH, differentiable in all inputs.

    x (L, C) channel inputs, delta (L, C) positive timescales, a (C, N)
    negative diagonal state matrix, b_seq (L, N), c_seq (L, N). The
    backward pass replays the recurrence in reverse with saved states.
    """
    x, delta, a = astensor(x), astensor(delta), astensor(a)
    b_seq, c_seq = astensor(b_seq), astensor(c_seq)
    length, channels = x.data.shape
    state = a.data.shape[1]

    a_mat = a.data  # (C, N)
    small = np.abs(a_mat) < ZOH_LIMIT_THRESHOLD
    safe_a = np.where(small, 1.0, a_mat)
    a_bar = np.exp(delta.data[:, :, None] * a_mat[None])  # (L, C, N)
    coeff = np.where(small[None], delta.data[:, :, None], (a_bar - 1.0) / safe_a[None])
    u = coeff * b_seq.data[:, None, :] * x.data[:, :, None]
    y = np.empty((length, channels))
    h_all = np.empty((length, channels, state))
    h0 = np.zeros((channels, state))
    scan_forward_kernel(a_bar, u, np.ascontiguousarray(c_seq.data), h0, y, h_all)

    def bwd(g):
        g = np.ascontiguousarray(g)
        # dC[l, n] = sum_c g[l, c] * h[l, c, n]
        _accumulate(c_seq, np.einsum("lc,lcn->ln", g, h_all))
        gh = np.empty_like(h_all)
        scan_backward_kernel(a_bar, np.ascontiguousarray(c_seq.data), g, gh)
        h_prev = np.concatenate([np.zeros((1, channels, state)), h_all[:-1]], axis=0)
        g_abar = gh * h_prev
        g_u = gh
        g_coeffB = g_u * x.data[:, :, None]  # grad wrt coeff * B product
        _accumulate(x, np.einsum("lcn,lcn->lc", g_u, coeff * b_seq.data[:, None, :]))
        _accumulate(b_seq, np.einsum("lcn,lcn->ln", g_coeffB, coeff))
        g_coeff = g_coeffB * b_seq.data[:, None, :]
        # d a_bar / d delta = a * a_bar ; d coeff / d delta = a_bar
        # d a_bar / d a = delta * a_bar
        # d coeff / d a = (delta*a_bar*a - (a_bar - 1)) / a^2, limit delta^2/2
        dcoeff_da = np.where(
            small[None],
            0.5 * delta.data[:, :, None] ** 2,
            (delta.data[:, :, None] * a_bar * a_mat[None] - (a_bar - 1.0))
            / (safe_a[None] ** 2),
        )
        g_delta = np.einsum(
            "lcn,lcn->lc", g_abar, a_mat[None] * a_bar
        ) + np.einsum("lcn,lcn->lc", g_coeff, a_bar)
        _accumulate(delta, g_delta)
        g_a = np.einsum("lcn,lcn->cn", g_abar, delta.data[:, :, None] * a_bar) + np.einsum(
            "lcn,lcn->cn", g_coeff, dcoeff_da
        )
        _accumulate(a, g_a)

    return _node(y, (x, delta, a, b_seq, c_seq), bwd)
