"""Backward warping by optical flow, synthetic flows, and the flow transfer loss.

Flow convention: a flow field stores, per target pixel (y, x), the
displacement (u, v) that is *added* to the target coordinate to find the
source sample, i.e. ``out(y, x) = src(y + v, x + u)`` with bilinear
interpolation. Sample points outside the image clamp to the border and are
flagged invalid so downstream consumers (median stacking, temporal loss)
can exclude them.
"""

from dataclasses import dataclass

import numpy as np

from ._accel import njit, numba_enabled
from .frame_io import FlowField


@dataclass(frozen=True)
class WarpResult:
    """A warped image plus its per-pixel validity mask.

    ``validity[y, x]`` is 1 exactly when the bilinear sample point lies
    inside ``[0, W-1] x [0, H-1]``, i.e. when every source tap with nonzero
    weight is a real pixel; clamped (extrapolated) pixels get 0.
    """

    image: np.ndarray
    validity: np.ndarray

    def __post_init__(self):
        image = np.asarray(self.image, dtype=np.float64)
        validity = np.asarray(self.validity, dtype=np.uint8)
        if image.ndim != 3 or validity.shape != image.shape[:2]:
            raise ValueError("image must be H x W x C with an H x W validity map")
        if not np.all(np.isfinite(image)):
            raise ValueError("warped image contains non-finite values")
        if not np.all((validity == 0) | (validity == 1)):
            raise ValueError("validity must be binary")
        object.__setattr__(self, "image", image)
        object.__setattr__(self, "validity", validity)


def backward_warp(src, flow: FlowField) -> WarpResult:
    """Resample ``src`` at coordinates displaced by ``flow``.

    Parameters
    ----------
    src : ndarray
        Source image, ``H x W x C`` finite float array.
    flow : FlowField
        Displacement field of the same spatial size.

    Returns
    -------
    WarpResult
        Bilinearly interpolated image and validity mask. Zero flow is the
        exact identity; integer-translation flows reproduce index shifts
        exactly on valid pixels.
    """
    src = np.asarray(src, dtype=np.float64)
    if src.ndim == 2:
        src = src[:, :, None]
    if src.ndim != 3:
        raise ValueError("src must be an H x W x C array")
    if not np.all(np.isfinite(src)):
        raise ValueError("src contains non-finite values")
    h, w = src.shape[:2]
    if (flow.height, flow.width) != (h, w):
        raise ValueError(
            f"dimension mismatch: image {h}x{w} vs flow {flow.height}x{flow.width}"
        )
    u = np.asarray(flow.u, dtype=np.float64)
    v = np.asarray(flow.v, dtype=np.float64)
    if numba_enabled():
        out = np.empty_like(src)
        valid = np.empty((h, w), dtype=np.uint8)
        _warp_numba(np.ascontiguousarray(src), u, v, out, valid)
    else:
        out, valid = _warp_numpy(src, u, v)
    return WarpResult(out, valid)


def _warp_numpy(src, u, v):
    h, w = src.shape[:2]
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    sx = xs + u
    sy = ys + v
    valid = ((sx >= 0.0) & (sx <= w - 1.0) & (sy >= 0.0) & (sy <= h - 1.0))
    sx = np.clip(sx, 0.0, w - 1.0)
    sy = np.clip(sy, 0.0, h - 1.0)
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (sx - x0)[:, :, None]
    fy = (sy - y0)[:, :, None]
    top = src[y0, x0] * (1.0 - fx) + src[y0, x1] * fx
    bot = src[y1, x0] * (1.0 - fx) + src[y1, x1] * fx
    out = top * (1.0 - fy) + bot * fy
    return out, valid.astype(np.uint8)


@njit(cache=True)
def _warp_numba(src, u, v, out, valid):
    h, w, c = src.shape
    for y in range(h):
        for x in range(w):
            sx = x + u[y, x]
            sy = y + v[y, x]
            ok = 0.0 <= sx <= w - 1.0 and 0.0 <= sy <= h - 1.0
            valid[y, x] = 1 if ok else 0
            if sx < 0.0:
                sx = 0.0
            elif sx > w - 1.0:
                sx = w - 1.0
            if sy < 0.0:
                sy = 0.0
            elif sy > h - 1.0:
                sy = h - 1.0
            x0 = int(np.floor(sx))
            y0 = int(np.floor(sy))
            x1 = min(x0 + 1, w - 1)
            y1 = min(y0 + 1, h - 1)
            fx = sx - x0
            fy = sy - y0
            for k in range(c):
                top = src[y0, x0, k] * (1.0 - fx) + src[y0, x1, k] * fx
                bot = src[y1, x0, k] * (1.0 - fx) + src[y1, x1, k] * fx
                out[y, x, k] = top * (1.0 - fy) + bot * fy


def synth_translation_flow(dx: float, dy: float, h: int, w: int) -> FlowField:
    """Constant-displacement flow field: u = dx and v = dy everywhere."""
    if h < 1 or w < 1:
        raise ValueError("flow dimensions must be >= 1")
    return FlowField(np.full((h, w), dx, dtype=np.float32),
                     np.full((h, w), dy, dtype=np.float32))


def flow_transfer_loss(pred, teacher) -> float:
    """Sum of absolute differences between predicted and teacher flows.

    Both arguments are equal-length lists of FlowField (one per non-center
    frame); the loss sums |du| + |dv| over every pixel of every pair.
    """
    pred = list(pred)
    teacher = list(teacher)
    if len(pred) != len(teacher):
        raise ValueError(f"length mismatch: {len(pred)} pred vs {len(teacher)} teacher")
    if not pred:
        raise ValueError("flow lists must be non-empty")
    total = 0.0
    for i, (p, t) in enumerate(zip(pred, teacher)):
        if (p.height, p.width) != (t.height, t.width):
            raise ValueError(f"dimension mismatch in flow pair {i}")
        du = p.u.astype(np.float64) - t.u.astype(np.float64)
        dv = p.v.astype(np.float64) - t.v.astype(np.float64)
        total += float(np.abs(du).sum() + np.abs(dv).sum())
    return total
