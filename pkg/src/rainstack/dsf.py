"""Dynamic stacking filter: sharpness/gate-controlled candidate fusion.

``dsf_scalar(G, a, b)`` is a softmin-weighted average over the candidates,
scored by the gated deviation profile ``D_n = (1/N) sum_j |x_n - b*x_j|``.
The two coefficients interpolate between the classic stacking filters:

    a -> 0            mean(G)
    a -> +inf, b = 1   median(G)
    a -> +inf, b = 0   min(G)     (candidates >= 0)
    a -> -inf, b = 0   max(G)     (candidates >= 0)

``dsf_map`` applies the filter independently at every pixel/channel of an
``N x H x W x C`` candidate stack with per-pixel ``a``/``b`` maps (broadcast
across channels). The map kernel has a numba build and a vectorized numpy
fallback, selected by :func:`rainstack._accel.numba_enabled`.
"""

import math
from dataclasses import dataclass

import numpy as np

from ._accel import njit, numba_enabled
from .smooth_stats import (
    _as_candidates,
    _check_grad_sharpness,
    _deviation_softmin_grad,
    _soft_mad_profile,
    mad_profile,
    soft_argmax_weights,
)


@dataclass(frozen=True)
class DsfParams:
    """Per-pixel sharpness and gate maps, shared across channels."""

    a_map: np.ndarray
    b_map: np.ndarray

    def __post_init__(self):
        a = np.ascontiguousarray(np.asarray(self.a_map, dtype=np.float64))
        b = np.ascontiguousarray(np.asarray(self.b_map, dtype=np.float64))
        if a.ndim != 2 or b.ndim != 2 or a.shape != b.shape:
            raise ValueError("a_map and b_map must be 2-D arrays of equal shape")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise ValueError("DSF parameter maps must be finite")
        object.__setattr__(self, "a_map", a)
        object.__setattr__(self, "b_map", b)

    @classmethod
    def constant(cls, a: float, b: float, h: int, w: int) -> "DsfParams":
        return cls(np.full((h, w), float(a)), np.full((h, w), float(b)))


def as_feature_stack(stack) -> np.ndarray:
    """Validate an ``N x H x W x C`` candidate stack."""
    arr = np.ascontiguousarray(np.asarray(stack, dtype=np.float64))
    if arr.ndim != 4 or arr.shape[0] < 1:
        raise ValueError("feature stack must have shape (N, H, W, C) with N >= 1")
    if not np.all(np.isfinite(arr)):
        raise ValueError("feature stack must be finite")
    return arr


def dsf_scalar(values, a: float, b: float, *, smooth_abs: bool = False) -> float:
    """Fuse one candidate set; always a convex combination of the inputs."""
    x = _as_candidates(values)
    a = float(a)
    d = _soft_mad_profile(x, float(b), a) if smooth_abs else mad_profile(x, b)
    return float(soft_argmax_weights(-d, a) @ x)


def dsf_grad(values, a: float, b: float):
    """Analytic gradients (d/dx, d/da, d/db) of the smooth-abs composite."""
    x = _as_candidates(values)
    a = _check_grad_sharpness(a)
    _, dx, da, db = _deviation_softmin_grad(x, a, float(b))
    return dx, da, db


def dsf_map(stack, params: DsfParams) -> np.ndarray:
    """Apply the filter at every pixel of a candidate stack.

    ``out[h, w, c] = dsf_scalar(stack[:, h, w, c], a_map[h, w], b_map[h, w])``.
    """
    arr = as_feature_stack(stack)
    _, h, w, _ = arr.shape
    if params.a_map.shape != (h, w):
        raise ValueError(
            f"parameter maps {params.a_map.shape} do not match stack spatial dims {(h, w)}"
        )
    if numba_enabled():
        return _dsf_map_numba(arr, params.a_map, params.b_map)
    return _dsf_map_numpy(arr, params.a_map, params.b_map)


def _dsf_map_numpy(stack: np.ndarray, a_map: np.ndarray, b_map: np.ndarray) -> np.ndarray:
    n = stack.shape[0]
    b = b_map[None, :, :, None]
    d = np.zeros_like(stack)
    for j in range(n):
        d += np.abs(stack - b * stack[j][None])
    d /= n
    t = -a_map[None, :, :, None] * d
    t -= t.max(axis=0, keepdims=True)
    wts = np.exp(t)
    wts /= wts.sum(axis=0, keepdims=True)
    return (wts * stack).sum(axis=0)


@njit(cache=True)
def _dsf_map_numba(stack, a_map, b_map):  # pragma: no cover - jitted
    n, h, w, c = stack.shape
    out = np.empty((h, w, c))
    d = np.empty(n)
    for y in range(h):
        for x in range(w):
            a = a_map[y, x]
            b = b_map[y, x]
            for ch in range(c):
                for i in range(n):
                    xi = stack[i, y, x, ch]
                    acc = 0.0
                    for j in range(n):
                        acc += abs(xi - b * stack[j, y, x, ch])
                    d[i] = acc / n
                tmax = -a * d[0]
                for i in range(1, n):
                    t = -a * d[i]
                    if t > tmax:
                        tmax = t
                wsum = 0.0
                vsum = 0.0
                for i in range(n):
                    e = math.exp(-a * d[i] - tmax)
                    wsum += e
                    vsum += e * stack[i, y, x, ch]
                out[y, x, ch] = vsum / wsum
    return out
