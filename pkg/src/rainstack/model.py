"""Forward-only reference of the dual-branch spatio-temporal state-space model.

The network has two U-Net branches — spatial feature extraction and
temporal feature fusion — built from two layer types: S3ML (spatial
state-space model layer) and TSML (temporal state-space model layer, which
fuses the branches through the dynamic stacking filter). This module
implements the forward pass from scratch at configurable toy scale for
shape/invariant verification; there is no training, and parameters are
seeded random or loaded from the package's own dump format.

Layer compositions (C1 = pointwise conv, C5D = depthwise 5x5 conv with
replicate padding, L = linear, LN = layer norm over channels, sigma = SiLU,
I = bilinear interpolation):

    S3ML:  f1, f2 = split(C1(f))
           g      = C1( sigma(C5D(f1)) * SSM(L(C5D(f2))) )
           local  = I( C1( sigma( C5D( C1( I(f) ) ) ) ) )
           out    = LN(g * local) + f

    TSML:  f1, f2 = split(C1(f_t))
           g      = C1( sigma(C5D(f1)) * SSM(L(C5D(f2))) )
           fused  = sigma( C5D( C1( DSF([f_s; f_t]) ) ) )
           out    = LN(g * fused) + f_t

The selective scan (SSM) runs along the channel axis: at every pixel the
channel vector is scanned as a length-C sequence of scalars with the
standard input-dependent discretized recurrence. All gating products are
elementwise. With all-zero parameters every layer reduces to the identity
(the residual path), which the tests exploit.
"""

import math
from dataclasses import dataclass, fields

import numpy as np
from scipy.special import expit

from ._accel import njit, numba_enabled
from .dsf import DsfParams, dsf_map
from .flow_warp import backward_warp
from .frame_io import FlowField, FrameSequence

_LN_EPS = 1e-5


# ---------------------------------------------------------------------------
# primitives

@dataclass
class LayerParams:
    """Weight/bias pair for one convolution or linear layer."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if not (np.all(np.isfinite(self.weight)) and np.all(np.isfinite(self.bias))):
            raise ValueError("layer parameters must be finite")


def _check_tensor(x, rank: int, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != rank:
        raise ValueError(f"{name} must have rank {rank}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite values")
    return x


def pointwise_conv1(x, p: LayerParams) -> np.ndarray:
    """1x1 convolution: per-pixel channel mixing, ``H x W x Cin -> H x W x Cout``."""
    x = _check_tensor(x, 3, "input")
    if p.weight.ndim != 2 or p.weight.shape[1] != x.shape[2]:
        raise ValueError(
            f"weight {p.weight.shape} incompatible with {x.shape[2]} input channels"
        )
    return x @ p.weight.T + p.bias


def linear(x, p: LayerParams) -> np.ndarray:
    """Linear layer over the trailing (channel) axis."""
    x = np.asarray(x, dtype=np.float64)
    if p.weight.ndim != 2 or p.weight.shape[1] != x.shape[-1]:
        raise ValueError(
            f"weight {p.weight.shape} incompatible with {x.shape[-1]} features"
        )
    return x @ p.weight.T + p.bias


def depthwise_conv5(x, p: LayerParams) -> np.ndarray:
    """Depthwise 5x5 convolution with replicate padding (spatial dims kept)."""
    x = _check_tensor(x, 3, "input")
    c = x.shape[2]
    if p.weight.shape != (c, 5, 5):
        raise ValueError(f"weight must be ({c}, 5, 5), got {p.weight.shape}")
    pad = np.pad(x, ((2, 2), (2, 2), (0, 0)), mode="edge")
    if numba_enabled():
        out = np.empty_like(x)
        _depthwise5_numba(np.ascontiguousarray(pad),
                          np.ascontiguousarray(p.weight), p.bias, out)
        return out
    h, w = x.shape[:2]
    out = np.zeros_like(x)
    for dy in range(5):
        for dx in range(5):
            out += pad[dy:dy + h, dx:dx + w] * p.weight[:, dy, dx]
    return out + p.bias


@njit(cache=True)
def _depthwise5_numba(pad, weight, bias, out):  # pragma: no cover - jitted
    h, w, c = out.shape
    for y in range(h):
        for x in range(w):
            for k in range(c):
                acc = 0.0
                for dy in range(5):
                    for dx in range(5):
                        acc += pad[y + dy, x + dx, k] * weight[k, dy, dx]
                out[y, x, k] = acc + bias[k]


def conv3(x, p: LayerParams) -> np.ndarray:
    """Full 3x3 convolution with replicate padding (patch embed/projection)."""
    x = _check_tensor(x, 3, "input")
    c_out, c_in = p.weight.shape[:2]
    if p.weight.ndim != 4 or p.weight.shape[2:] != (3, 3) or c_in != x.shape[2]:
        raise ValueError(
            f"weight {p.weight.shape} incompatible with {x.shape[2]} input channels"
        )
    pad = np.pad(x, ((1, 1), (1, 1), (0, 0)), mode="edge")
    h, w = x.shape[:2]
    out = np.zeros((h, w, c_out), dtype=np.float64)
    for dy in range(3):
        for dx in range(3):
            out += pad[dy:dy + h, dx:dx + w] @ p.weight[:, :, dy, dx].T
    return out + p.bias


def layer_norm(x, gamma=None, beta=None) -> np.ndarray:
    """Normalize over the channel (last) axis with epsilon 1e-5.

    The zero tensor maps to zero: the epsilon guards the division, so no
    special-casing is needed.
    """
    x = np.asarray(x, dtype=np.float64)
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    out = (x - mu) / np.sqrt(var + _LN_EPS)
    if gamma is not None:
        out = out * gamma
    if beta is not None:
        out = out + beta
    return out


def silu(x) -> np.ndarray:
    """SiLU activation ``x * sigmoid(x)``."""
    x = np.asarray(x, dtype=np.float64)
    return x * expit(x)


def bilinear_resize(x, target) -> np.ndarray:
    """Bilinear resampling to ``target = (th, tw)`` with half-pixel centers."""
    x = _check_tensor(x, 3, "input")
    h, w = x.shape[:2]
    th, tw = int(target[0]), int(target[1])
    if th < 1 or tw < 1:
        raise ValueError(f"target dims must be >= 1, got {(th, tw)}")
    if (th, tw) == (h, w):
        return x.copy()
    sy = np.clip((np.arange(th) + 0.5) * (h / th) - 0.5, 0.0, h - 1.0)
    sx = np.clip((np.arange(tw) + 0.5) * (w / tw) - 0.5, 0.0, w - 1.0)
    y0 = np.floor(sy).astype(np.int64)
    x0 = np.floor(sx).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (sy - y0)[:, None, None]
    fx = (sx - x0)[None, :, None]
    top = x[np.ix_(y0, x0)] * (1.0 - fx) + x[np.ix_(y0, x1)] * fx
    bot = x[np.ix_(y1, x0)] * (1.0 - fx) + x[np.ix_(y1, x1)] * fx
    return top * (1.0 - fy) + bot * fy


# ---------------------------------------------------------------------------
# selective scan

@dataclass
class SsmParams:
    """Parameters of the input-dependent (selective) state-space recurrence.

    For feature width D and state size N: per-channel transition ``a``
    (D x N, kept negative for stability), input/output projections ``w_b``
    and ``w_c`` (N x D), step-size projection ``w_delta`` (D x D) with bias
    ``b_delta`` (D), and feedthrough ``d`` (D).
    """

    state_dim: int
    a: np.ndarray
    w_b: np.ndarray
    w_c: np.ndarray
    w_delta: np.ndarray
    b_delta: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        n = self.state_dim
        self.a = np.asarray(self.a, dtype=np.float64)
        dim = self.a.shape[0]
        shapes = {
            "a": (dim, n), "w_b": (n, dim), "w_c": (n, dim),
            "w_delta": (dim, dim), "b_delta": (dim,), "d": (dim,),
        }
        for name, shape in shapes.items():
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != shape:
                raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")
            setattr(self, name, arr)

    @property
    def width(self) -> int:
        return self.a.shape[0]

    @classmethod
    def random(cls, width: int, state_dim: int, rng, scale: float = 0.1):
        return cls(
            state_dim=state_dim,
            a=-rng.uniform(0.5, 1.5, (width, state_dim)),
            w_b=rng.normal(0.0, scale, (state_dim, width)),
            w_c=rng.normal(0.0, scale, (state_dim, width)),
            w_delta=rng.normal(0.0, scale, (width, width)),
            b_delta=np.zeros(width),
            d=rng.normal(0.0, scale, width),
        )

    @classmethod
    def zeros(cls, width: int, state_dim: int):
        return cls(
            state_dim=state_dim,
            a=np.zeros((width, state_dim)),
            w_b=np.zeros((state_dim, width)),
            w_c=np.zeros((state_dim, width)),
            w_delta=np.zeros((width, width)),
            b_delta=np.zeros(width),
            d=np.zeros(width),
        )


def _softplus(z):
    return np.logaddexp(0.0, z)


def selective_scan(x, params: SsmParams) -> np.ndarray:
    """Batched evaluation of the selective-scan recurrence.

    For each step t:
        delta_t = softplus(x_t @ w_delta^T + b_delta)
        h_t     = exp(delta_t * a) ⊙ h_{t-1} + delta_t * (w_b @ x_t) * x_t
        y_t     = (w_c @ x_t) · h_t + d ⊙ x_t

    Accepts ``L x D`` or ``B x L x D`` input; vectorized over batch and
    channels, sequential over the scan axis.
    """
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    if x.ndim != 3 or x.shape[2] != params.width:
        raise ValueError(
            f"input must be (B, L, {params.width}), got shape {x.shape}"
        )
    if not np.all(np.isfinite(x)):
        raise ValueError("input contains non-finite values")
    batch, length, dim = x.shape
    n = params.state_dim
    h = np.zeros((batch, dim, n), dtype=np.float64)
    y = np.empty_like(x)
    for t in range(length):
        xt = x[:, t]                                   # (B, D)
        delta = _softplus(xt @ params.w_delta.T + params.b_delta)
        a_bar = np.exp(delta[:, :, None] * params.a)   # (B, D, N)
        b_t = xt @ params.w_b.T                        # (B, N)
        c_t = xt @ params.w_c.T                        # (B, N)
        h = a_bar * h + (delta * xt)[:, :, None] * b_t[:, None, :]
        y[:, t] = (h * c_t[:, None, :]).sum(axis=2) + params.d * xt
    return y[0] if squeeze else y


def selective_scan_reference(x, params: SsmParams) -> np.ndarray:
    """Naive sequential-loop oracle for :func:`selective_scan` (``L x D``)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.width:
        raise ValueError(f"input must be (L, {params.width}), got shape {x.shape}")
    length, dim = x.shape
    n = params.state_dim
    h = [[0.0] * n for _ in range(dim)]
    y = np.zeros_like(x)
    for t in range(length):
        b_t = [0.0] * n
        c_t = [0.0] * n
        for i in range(n):
            for k in range(dim):
                b_t[i] += params.w_b[i, k] * x[t, k]
                c_t[i] += params.w_c[i, k] * x[t, k]
        for k in range(dim):
            z = params.b_delta[k]
            for j in range(dim):
                z += params.w_delta[k, j] * x[t, j]
            delta = math.log1p(math.exp(-abs(z))) + max(z, 0.0)
            acc = 0.0
            for i in range(n):
                h[k][i] = (math.exp(delta * params.a[k, i]) * h[k][i]
                           + delta * b_t[i] * x[t, k])
                acc += c_t[i] * h[k][i]
            y[t, k] = acc + params.d[k] * x[t, k]
    return y


def _scan_channels(f, params: SsmParams) -> np.ndarray:
    """Run the SSM along the channel axis of an ``H x W x C`` feature map."""
    h, w, c = f.shape
    seq = f.reshape(h * w, c, 1)
    return selective_scan(seq, params).reshape(h, w, c)


# ---------------------------------------------------------------------------
# state-space model layers

def _random_layer(rng, *shape, scale=0.1):
    out = shape[0] if len(shape) == 1 else shape[0]
    return LayerParams(rng.normal(0.0, scale, shape), np.zeros(out))


def _zero_layer(*shape):
    return LayerParams(np.zeros(shape), np.zeros(shape[0]))


@dataclass
class S3mlParams:
    """Parameters of one spatial state-space model layer (channel width C)."""

    split: LayerParams        # C1: C -> 2C, halves f1 (gate) and f2 (scan)
    gate_dw: LayerParams      # C5D on f1
    scan_dw: LayerParams      # C5D on f2
    scan_lin: LayerParams     # L before the SSM
    ssm: SsmParams
    out: LayerParams          # C1 after the gated product
    local_in: LayerParams     # C1 at reduced resolution
    local_dw: LayerParams     # C5D at reduced resolution
    local_out: LayerParams    # C1 at reduced resolution
    ln_gamma: np.ndarray
    ln_beta: np.ndarray

    def __post_init__(self):
        self.ln_gamma = np.asarray(self.ln_gamma, dtype=np.float64)
        self.ln_beta = np.asarray(self.ln_beta, dtype=np.float64)

    @property
    def channels(self) -> int:
        return self.split.weight.shape[1]

    @classmethod
    def random(cls, c: int, state_dim: int, rng):
        return cls(
            split=_random_layer(rng, 2 * c, c),
            gate_dw=_random_layer(rng, c, 5, 5),
            scan_dw=_random_layer(rng, c, 5, 5),
            scan_lin=_random_layer(rng, c, c),
            ssm=SsmParams.random(1, state_dim, rng),
            out=_random_layer(rng, c, c),
            local_in=_random_layer(rng, c, c),
            local_dw=_random_layer(rng, c, 5, 5),
            local_out=_random_layer(rng, c, c),
            ln_gamma=np.ones(c),
            ln_beta=np.zeros(c),
        )

    @classmethod
    def zeros(cls, c: int, state_dim: int):
        return cls(
            split=_zero_layer(2 * c, c),
            gate_dw=_zero_layer(c, 5, 5),
            scan_dw=_zero_layer(c, 5, 5),
            scan_lin=_zero_layer(c, c),
            ssm=SsmParams.zeros(1, state_dim),
            out=_zero_layer(c, c),
            local_in=_zero_layer(c, c),
            local_dw=_zero_layer(c, 5, 5),
            local_out=_zero_layer(c, c),
            ln_gamma=np.zeros(c),
            ln_beta=np.zeros(c),
        )


@dataclass
class TsmlParams:
    """Parameters of one temporal state-space model layer."""

    split: LayerParams
    gate_dw: LayerParams
    scan_dw: LayerParams
    scan_lin: LayerParams
    ssm: SsmParams
    out: LayerParams
    fuse_pw: LayerParams      # C1 after the DSF
    fuse_dw: LayerParams      # C5D after it
    ln_gamma: np.ndarray
    ln_beta: np.ndarray
    dsf_a: float = 1.0
    dsf_b: float = 1.0

    def __post_init__(self):
        self.ln_gamma = np.asarray(self.ln_gamma, dtype=np.float64)
        self.ln_beta = np.asarray(self.ln_beta, dtype=np.float64)
        self.dsf_a = float(self.dsf_a)
        self.dsf_b = float(self.dsf_b)

    @property
    def channels(self) -> int:
        return self.split.weight.shape[1]

    @classmethod
    def random(cls, c: int, state_dim: int, rng, dsf_a=1.0, dsf_b=1.0):
        return cls(
            split=_random_layer(rng, 2 * c, c),
            gate_dw=_random_layer(rng, c, 5, 5),
            scan_dw=_random_layer(rng, c, 5, 5),
            scan_lin=_random_layer(rng, c, c),
            ssm=SsmParams.random(1, state_dim, rng),
            out=_random_layer(rng, c, c),
            fuse_pw=_random_layer(rng, c, c),
            fuse_dw=_random_layer(rng, c, 5, 5),
            ln_gamma=np.ones(c),
            ln_beta=np.zeros(c),
            dsf_a=dsf_a,
            dsf_b=dsf_b,
        )

    @classmethod
    def zeros(cls, c: int, state_dim: int):
        return cls(
            split=_zero_layer(2 * c, c),
            gate_dw=_zero_layer(c, 5, 5),
            scan_dw=_zero_layer(c, 5, 5),
            scan_lin=_zero_layer(c, c),
            ssm=SsmParams.zeros(1, state_dim),
            out=_zero_layer(c, c),
            fuse_pw=_zero_layer(c, c),
            fuse_dw=_zero_layer(c, 5, 5),
            ln_gamma=np.zeros(c),
            ln_beta=np.zeros(c),
        )


def _gated_scan_path(f, p) -> np.ndarray:
    """Shared gated-SSM trunk of S3ML and TSML."""
    c = p.channels
    both = pointwise_conv1(f, p.split)
    f1 = both[:, :, :c]
    f2 = both[:, :, c:]
    gate = silu(depthwise_conv5(f1, p.gate_dw))
    scanned = _scan_channels(linear(depthwise_conv5(f2, p.scan_dw), p.scan_lin), p.ssm)
    return pointwise_conv1(gate * scanned, p.out)


def s3ml_forward(f_s, p: S3mlParams, local_scale: float = 0.5) -> np.ndarray:
    """Spatial state-space model layer; output shape equals input shape."""
    f_s = _check_tensor(f_s, 3, "f_s")
    if f_s.shape[2] != p.channels:
        raise ValueError(f"expected {p.channels} channels, got {f_s.shape[2]}")
    h, w = f_s.shape[:2]
    g = _gated_scan_path(f_s, p)
    dh = max(1, round(h * local_scale))
    dw = max(1, round(w * local_scale))
    local = bilinear_resize(f_s, (dh, dw))
    local = pointwise_conv1(local, p.local_in)
    local = silu(depthwise_conv5(local, p.local_dw))
    local = pointwise_conv1(local, p.local_out)
    local = bilinear_resize(local, (h, w))
    return layer_norm(g * local, p.ln_gamma, p.ln_beta) + f_s


def tsml_forward(f_s, f_t, p: TsmlParams) -> np.ndarray:
    """Temporal state-space model layer; output shape equals ``f_t``'s."""
    f_s = _check_tensor(f_s, 3, "f_s")
    f_t = _check_tensor(f_t, 3, "f_t")
    if f_s.shape != f_t.shape:
        raise ValueError(f"branch mismatch: {f_s.shape} vs {f_t.shape}")
    if f_t.shape[2] != p.channels:
        raise ValueError(f"expected {p.channels} channels, got {f_t.shape[2]}")
    h, w = f_t.shape[:2]
    g = _gated_scan_path(f_t, p)
    stack = np.stack([f_s, f_t])
    fused = dsf_map(stack, DsfParams.constant(p.dsf_a, p.dsf_b, h, w))
    fused = pointwise_conv1(fused, p.fuse_pw)
    fused = silu(depthwise_conv5(fused, p.fuse_dw))
    return layer_norm(g * fused, p.ln_gamma, p.ln_beta) + f_t


# ---------------------------------------------------------------------------
# full model

@dataclass(frozen=True)
class ModelConfig:
    """Toy-scale structure of the dual-branch U-Net."""

    n_frames: int = 7
    levels: int = 2
    channels: int = 8
    state_dim: int = 4
    local_scale: float = 0.5
    dsf_a: float = 1.0
    dsf_b: float = 1.0

    def __post_init__(self):
        if self.n_frames < 3 or self.n_frames % 2 == 0:
            raise ValueError(f"n_frames must be odd and >= 3, got {self.n_frames}")
        if not 2 <= self.levels <= 4:
            raise ValueError(f"levels must be in [2, 4], got {self.levels}")
        if not 4 <= self.channels <= 32:
            raise ValueError(f"channels must be in [4, 32], got {self.channels}")
        if self.state_dim < 1:
            raise ValueError(f"state_dim must be >= 1, got {self.state_dim}")
        if not 0.0 < self.local_scale <= 1.0:
            raise ValueError(f"local_scale must be in (0, 1], got {self.local_scale}")


@dataclass
class LevelParams:
    """One encoder or decoder level: S3ML per branch plus the fusing TSML."""

    spatial: S3mlParams
    temporal: S3mlParams
    fuse: TsmlParams


@dataclass
class ModelParams:
    """Complete parameter set for :func:`vdmamba_forward`."""

    config: ModelConfig
    embed_s: LayerParams      # 3x3 conv, 3 -> C
    embed_t: LayerParams      # 3x3 conv, 3N -> C
    encoder: list
    decoder: list
    proj_derain: LayerParams  # 3x3 conv, C -> 3
    proj_flow: LayerParams    # 3x3 conv, C -> 2(N-1)


def init_params(config: ModelConfig, seed: int) -> ModelParams:
    """Seeded random parameters; identical seeds give identical arrays."""
    rng = np.random.default_rng(seed)
    c = config.channels
    n = config.n_frames

    def level():
        return LevelParams(
            spatial=S3mlParams.random(c, config.state_dim, rng),
            temporal=S3mlParams.random(c, config.state_dim, rng),
            fuse=TsmlParams.random(c, config.state_dim, rng,
                                   config.dsf_a, config.dsf_b),
        )

    return ModelParams(
        config=config,
        embed_s=_random_layer(rng, c, 3, 3, 3),
        embed_t=_random_layer(rng, c, 3 * n, 3, 3),
        encoder=[level() for _ in range(config.levels)],
        decoder=[level() for _ in range(config.levels)],
        proj_derain=_random_layer(rng, 3, c, 3, 3),
        proj_flow=_random_layer(rng, 2 * (n - 1), c, 3, 3),
    )


def zero_params(config: ModelConfig) -> ModelParams:
    """All-zero parameters: the trunk reduces to the residual identity."""
    c = config.channels
    n = config.n_frames

    def level():
        return LevelParams(
            spatial=S3mlParams.zeros(c, config.state_dim),
            temporal=S3mlParams.zeros(c, config.state_dim),
            fuse=TsmlParams.zeros(c, config.state_dim),
        )

    return ModelParams(
        config=config,
        embed_s=_zero_layer(c, 3, 3, 3),
        embed_t=_zero_layer(c, 3 * n, 3, 3),
        encoder=[level() for _ in range(config.levels)],
        decoder=[level() for _ in range(config.levels)],
        proj_derain=_zero_layer(3, c, 3, 3),
        proj_flow=_zero_layer(2 * (n - 1), c, 3, 3),
    )


def _run_level(f_s, f_t, lvl: LevelParams, local_scale: float):
    f_s = s3ml_forward(f_s, lvl.spatial, local_scale)
    f_t = s3ml_forward(f_t, lvl.temporal, local_scale)
    f_t = tsml_forward(f_s, f_t, lvl.fuse)
    return f_s, f_t


def vdmamba_forward(seq: FrameSequence, flows, params: ModelParams, mode: str):
    """Run the dual-branch forward pass.

    Non-center frames are first backward-warped toward the center by the
    given flows (one-step multi-frame alignment). The spatial branch embeds
    the center frame; the temporal branch embeds the channel-concatenation
    of the center with every aligned frame. Both branches run through the
    U-Net levels (downsampling by 2 between encoder levels, residual skip
    connections into the decoder).

    Returns the derained center image (3 channels, clipped to [0, 1]) in
    ``derain`` mode, or N-1 FlowFields in ``flow`` mode.
    """
    if mode not in ("derain", "flow"):
        raise ValueError(f"mode must be 'derain' or 'flow', got {mode!r}")
    cfg = params.config
    if len(seq) != cfg.n_frames:
        raise ValueError(f"expected {cfg.n_frames} frames, got {len(seq)}")
    flows = list(flows)
    if len(flows) != len(seq) - 1:
        raise ValueError(
            f"need {len(seq) - 1} flows for alignment, got {len(flows)}"
        )
    center = seq.center
    aligned = [center]
    k = 0
    for i, frame in enumerate(seq.frames):
        if i == seq.center_index:
            continue
        aligned.append(backward_warp(frame, flows[k]).image)
        k += 1

    f_s = conv3(center, params.embed_s)
    f_t = conv3(np.concatenate(aligned, axis=2), params.embed_t)

    skips = []
    for lvl in range(cfg.levels):
        f_s, f_t = _run_level(f_s, f_t, params.encoder[lvl], cfg.local_scale)
        skips.append((f_s, f_t))
        if lvl < cfg.levels - 1:
            half = (max(1, f_s.shape[0] // 2), max(1, f_s.shape[1] // 2))
            f_s = bilinear_resize(f_s, half)
            f_t = bilinear_resize(f_t, half)

    for lvl in reversed(range(cfg.levels)):
        if lvl < cfg.levels - 1:
            size = skips[lvl][0].shape[:2]
            f_s = bilinear_resize(f_s, size) + skips[lvl][0]
            f_t = bilinear_resize(f_t, size) + skips[lvl][1]
        f_s, f_t = _run_level(f_s, f_t, params.decoder[lvl], cfg.local_scale)

    if mode == "derain":
        out = conv3(f_t, params.proj_derain)
        return np.clip(center + out, 0.0, 1.0)
    raw = conv3(f_t, params.proj_flow)
    return [FlowField(raw[:, :, 2 * i].astype(np.float32),
                      raw[:, :, 2 * i + 1].astype(np.float32))
            for i in range(cfg.n_frames - 1)]


# ---------------------------------------------------------------------------
# named-tensor flattening (for the VDMF dump format)

_META_FIELDS = ("n_frames", "levels", "channels", "state_dim",
                "local_scale", "dsf_a", "dsf_b")


def _walk(obj, prefix, out):
    if isinstance(obj, LayerParams):
        out[prefix + ".w"] = obj.weight
        out[prefix + ".b"] = obj.bias
    elif isinstance(obj, (SsmParams, S3mlParams, TsmlParams, LevelParams)):
        for f in fields(obj):
            if f.name in ("state_dim",):
                continue
            val = getattr(obj, f.name)
            if isinstance(val, float):
                out[f"{prefix}.{f.name}"] = np.array([val])
            elif isinstance(val, np.ndarray):
                out[f"{prefix}.{f.name}"] = val
            else:
                _walk(val, f"{prefix}.{f.name}", out)
        if isinstance(obj, SsmParams):
            out[prefix + ".state_dim"] = np.array([float(obj.state_dim)])
    elif isinstance(obj, list):
        for i, item in enumerate(obj):
            _walk(item, f"{prefix}.{i}", out)
    else:
        raise TypeError(f"cannot flatten {type(obj).__name__} at {prefix}")


def named_tensors(params: ModelParams) -> dict:
    """Flatten a parameter set to an ordered ``name -> array`` mapping."""
    out = {}
    for name in _META_FIELDS:
        out[f"meta.{name}"] = np.array([float(getattr(params.config, name))])
    for f in fields(params):
        if f.name == "config":
            continue
        _walk(getattr(params, f.name), f.name, out)
    return out


def from_named_tensors(tensors: dict) -> ModelParams:
    """Rebuild a parameter set from :func:`named_tensors` output."""
    meta = {}
    for name in _META_FIELDS:
        key = f"meta.{name}"
        if key not in tensors:
            raise ValueError(f"parameter dump is missing {key}")
        raw = float(np.asarray(tensors[key]).ravel()[0])
        meta[name] = raw if name in ("local_scale", "dsf_a", "dsf_b") else int(raw)
    config = ModelConfig(**meta)
    params = zero_params(config)
    flat = named_tensors(params)
    unknown = sorted(set(tensors) - set(flat))
    missing = sorted(set(flat) - set(tensors))
    if unknown or missing:
        parts = []
        if missing:
            parts.append(f"missing {missing[:5]}")
        if unknown:
            parts.append(f"unknown {unknown[:5]}")
        raise ValueError("parameter dump mismatch: " + ", ".join(parts))
    _assign(params, tensors)
    return params


def _assign(params: ModelParams, tensors: dict) -> None:
    for f in fields(params):
        if f.name == "config":
            continue
        _assign_walk(getattr(params, f.name), f.name, tensors)


def _assign_walk(obj, prefix, tensors):
    if isinstance(obj, LayerParams):
        obj.weight = _fetch(tensors, prefix + ".w", obj.weight.shape)
        obj.bias = _fetch(tensors, prefix + ".b", obj.bias.shape)
    elif isinstance(obj, (SsmParams, S3mlParams, TsmlParams, LevelParams)):
        for f in fields(obj):
            if f.name == "state_dim":
                continue
            val = getattr(obj, f.name)
            name = f"{prefix}.{f.name}"
            if isinstance(val, float):
                setattr(obj, f.name, float(np.asarray(tensors[name]).ravel()[0]))
            elif isinstance(val, np.ndarray):
                setattr(obj, f.name, _fetch(tensors, name, val.shape))
            else:
                _assign_walk(val, name, tensors)
    elif isinstance(obj, list):
        for i, item in enumerate(obj):
            _assign_walk(item, f"{prefix}.{i}", tensors)


def _fetch(tensors, name, shape):
    arr = np.asarray(tensors[name], dtype=np.float64)
    if arr.shape != shape:
        raise ValueError(f"tensor {name} has shape {arr.shape}, expected {shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"tensor {name} contains non-finite values")
    return arr
