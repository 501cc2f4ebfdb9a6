"""Masked temporal median stacking and the deraining loss terms.

Pseudo-clean labels come from the per-pixel median of flow-aligned frames:
rain streaks are sparse and uncorrelated across frames, so at most pixels
the median of the aligned stack is the clean background. A patch-level mask
then keeps only sub-patches where the median stayed close to the original
center frame, excluding regions the alignment degraded.

L1 norms here are raw sums over pixels and channels (no averaging); the
temporal loss carries an explicit 1/(N-1) factor. The total loss switches
between the paired form ``l_rec + l_spa + lambda2 * l_tem`` and the
unpaired form ``lambda1 * l_sta + l_spa + lambda2 * l_tem``.
"""

import math
from dataclasses import dataclass

import numpy as np

from ._accel import njit, numba_enabled
from .frame_io import FlowField, FrameSequence, ensure_image
from .flow_warp import WarpResult, backward_warp


@dataclass(frozen=True)
class StackingConfig:
    """Masking parameters: a P x P patch grid, acceptance fraction theta,
    and per-pixel intensity slack delta."""

    P: int = 8
    theta: float = 0.8
    delta: float = 0.1

    def __post_init__(self):
        if self.P < 1:
            raise ValueError(f"P must be >= 1, got {self.P}")
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError(f"theta must be in [0, 1], got {self.theta}")
        if self.delta < 0.0:
            raise ValueError(f"delta must be >= 0, got {self.delta}")


@dataclass(frozen=True)
class StackingMask:
    """P x P binary acceptance grid with the pixel size of each sub-patch.

    The grid conceptually tiles the image edge-padded up to multiples of
    (patch_h, patch_w); acceptance fractions and losses only ever count the
    real (unpadded) pixels, and a sub-patch lying entirely in the padding
    is vacuously accepted.
    """

    accept: np.ndarray
    patch_h: int
    patch_w: int

    def __post_init__(self):
        accept = np.asarray(self.accept, dtype=np.uint8)
        if accept.ndim != 2 or accept.shape[0] != accept.shape[1]:
            raise ValueError("accept must be a square P x P grid")
        if not np.all((accept == 0) | (accept == 1)):
            raise ValueError("accept entries must be 0 or 1")
        if self.patch_h < 1 or self.patch_w < 1:
            raise ValueError("patch sizes must be >= 1")
        object.__setattr__(self, "accept", accept)

    @property
    def grid_size(self) -> int:
        return self.accept.shape[0]

    @property
    def acceptance_fraction(self) -> float:
        return float(self.accept.mean())


@dataclass(frozen=True)
class LossWeights:
    """Balance weights lambda1 (stacking) and lambda2 (temporal)."""

    lambda1: float = 0.1
    lambda2: float = 0.1

    def __post_init__(self):
        for name in ("lambda1", "lambda2"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0.0):
                raise ValueError(f"{name} must be finite and >= 0, got {v}")


# ---------------------------------------------------------------------------
# median stacking

def temporal_median(center, aligned) -> np.ndarray:
    """Per-pixel, per-channel median over the center and valid aligned pixels.

    Each aligned frame contributes at a pixel only where its validity mask
    is 1; the center always contributes, so every pixel has at least one
    candidate. Even candidate counts use the average of the middle two.
    """
    center = ensure_image(center, "center")
    aligned = list(aligned)
    if not aligned:
        return center.copy()
    for i, wr in enumerate(aligned):
        if not isinstance(wr, WarpResult):
            raise TypeError(f"aligned[{i}] must be a WarpResult")
        if wr.image.shape != center.shape:
            raise ValueError(
                f"aligned[{i}] has shape {wr.image.shape}, expected {center.shape}"
            )
    stack = np.stack([wr.image for wr in aligned])
    valid = np.stack([wr.validity for wr in aligned]).astype(bool)
    if numba_enabled():
        out = np.empty_like(center)
        _median_numba(np.ascontiguousarray(center),
                      np.ascontiguousarray(stack),
                      np.ascontiguousarray(valid), out)
        return out
    return _median_numpy(center, stack, valid)


def _median_numpy(center, stack, valid):
    full = np.concatenate([center[None], stack])
    full[1:][~valid] = np.nan
    return np.nanmedian(full, axis=0)


@njit(cache=True)
def _median_numba(center, stack, valid, out):
    m, h, w, c = stack.shape
    buf = np.empty(m + 1, dtype=np.float64)
    for y in range(h):
        for x in range(w):
            for k in range(c):
                cnt = 1
                buf[0] = center[y, x, k]
                for j in range(m):
                    if valid[j, y, x]:
                        buf[cnt] = stack[j, y, x, k]
                        cnt += 1
                # insertion sort of the candidate buffer
                for i in range(1, cnt):
                    key = buf[i]
                    p = i - 1
                    while p >= 0 and buf[p] > key:
                        buf[p + 1] = buf[p]
                        p -= 1
                    buf[p + 1] = key
                if cnt % 2 == 1:
                    out[y, x, k] = buf[cnt // 2]
                else:
                    out[y, x, k] = (buf[cnt // 2 - 1] + buf[cnt // 2]) / 2.0


# ---------------------------------------------------------------------------
# patch masking

def _patch_edges(extent: int, patches: int):
    """Start offsets of each sub-patch plus the common (padded) patch size."""
    size = -(-extent // patches)  # ceil division
    return [min(i * size, extent) for i in range(patches)] + [extent], size


def patch_mask(median, center, cfg: StackingConfig) -> StackingMask:
    """Accept each sub-patch whose fraction of unchanged pixels is >= theta.

    A pixel counts as unchanged when the max-over-channels absolute
    difference between median and center is <= delta; both comparisons are
    inclusive. Only real pixels enter the fraction (edge padding up to the
    P x P grid is ignored), and pad-only sub-patches are accepted.
    """
    median = ensure_image(median, "median")
    center = ensure_image(center, "center")
    if median.shape != center.shape:
        raise ValueError(f"dimension mismatch: {median.shape} vs {center.shape}")
    h, w = center.shape[:2]
    unchanged = np.abs(median - center).max(axis=2) <= cfg.delta
    rows, patch_h = _patch_edges(h, cfg.P)
    cols, patch_w = _patch_edges(w, cfg.P)
    accept = np.zeros((cfg.P, cfg.P), dtype=np.uint8)
    for i in range(cfg.P):
        for j in range(cfg.P):
            cell = unchanged[rows[i]:rows[i + 1], cols[j]:cols[j + 1]]
            if cell.size == 0 or cell.mean() >= cfg.theta:
                accept[i, j] = 1
    return StackingMask(accept, patch_h, patch_w)


def _check_grid(mask: StackingMask, h: int, w: int) -> None:
    p = mask.grid_size
    if -(-h // p) != mask.patch_h or -(-w // p) != mask.patch_w:
        raise ValueError(
            f"mask grid {p}x{p} with patches {mask.patch_h}x{mask.patch_w} "
            f"does not tile a {h}x{w} image"
        )


def render_mask_overlay(mask: StackingMask, image) -> np.ndarray:
    """Visualize a mask: rejected sub-patches are tinted toward red."""
    image = ensure_image(image, "image")
    h, w = image.shape[:2]
    _check_grid(mask, h, w)
    full = np.kron(mask.accept, np.ones((mask.patch_h, mask.patch_w)))[:h, :w]
    out = image.copy()
    rej = full == 0
    out[rej] = 0.5 * out[rej]
    out[rej, 0] += 0.5
    return out


# ---------------------------------------------------------------------------
# losses

def stacking_loss(derained, median, mask: StackingMask) -> float:
    """L1 residual against the median, summed over accepted sub-patches."""
    derained = ensure_image(derained, "derained")
    median = ensure_image(median, "median")
    if derained.shape != median.shape:
        raise ValueError(f"dimension mismatch: {derained.shape} vs {median.shape}")
    h, w = derained.shape[:2]
    _check_grid(mask, h, w)
    p = mask.grid_size
    rows, _ = _patch_edges(h, p)
    cols, _ = _patch_edges(w, p)
    diff = np.abs(derained - median)
    total = 0.0
    for i in range(p):
        for j in range(p):
            if mask.accept[i, j]:
                total += float(diff[rows[i]:rows[i + 1], cols[j]:cols[j + 1]].sum())
    return total


def reconstruction_losses(derained_dual, derained_spatial, truth):
    """Raw-L1 reconstruction residuals ``(l_rec, l_spa)`` against ``truth``.

    In unpaired mode the caller passes the masked median as the truth
    substitute for the spatial term.
    """
    derained_dual = ensure_image(derained_dual, "derained_dual")
    derained_spatial = ensure_image(derained_spatial, "derained_spatial")
    truth = ensure_image(truth, "truth")
    if not derained_dual.shape == derained_spatial.shape == truth.shape:
        raise ValueError("dimension mismatch between derained images and truth")
    l_rec = float(np.abs(truth - derained_dual).sum())
    l_spa = float(np.abs(truth - derained_spatial).sum())
    return l_rec, l_spa


def temporal_loss(derained_center, neighbors, inverse_flows) -> float:
    """Mean, over neighbors, of the masked L1 between the derained center
    warped back to each neighbor's geometry and that neighbor."""
    derained_center = ensure_image(derained_center, "derained_center")
    neighbors = list(neighbors)
    inverse_flows = list(inverse_flows)
    if not neighbors:
        raise ValueError("temporal loss needs at least one neighbor")
    if len(neighbors) != len(inverse_flows):
        raise ValueError(
            f"length mismatch: {len(neighbors)} neighbors vs "
            f"{len(inverse_flows)} flows"
        )
    total = 0.0
    for i, (frame, flow) in enumerate(zip(neighbors, inverse_flows)):
        frame = ensure_image(frame, f"neighbor {i}")
        if frame.shape != derained_center.shape:
            raise ValueError(f"neighbor {i} shape mismatch")
        warped = backward_warp(derained_center, flow)
        resid = np.abs(warped.image - frame) * warped.validity[:, :, None]
        total += float(resid.sum())
    return total / len(neighbors)


def total_loss(mode: str, components: dict, weights: LossWeights) -> float:
    """Combine loss terms per the paired/unpaired switch."""
    if mode == "paired":
        needed = ("l_rec", "l_spa", "l_tem")
    elif mode == "unpaired":
        needed = ("l_sta", "l_spa", "l_tem")
    else:
        raise ValueError(f"mode must be 'paired' or 'unpaired', got {mode!r}")
    missing = [k for k in needed if k not in components]
    if missing:
        raise ValueError(f"missing loss components for {mode} mode: {missing}")
    if mode == "paired":
        return (components["l_rec"] + components["l_spa"]
                + weights.lambda2 * components["l_tem"])
    return (weights.lambda1 * components["l_sta"] + components["l_spa"]
            + weights.lambda2 * components["l_tem"])


# ---------------------------------------------------------------------------
# pipeline

def generate_pseudo_labels(seq: FrameSequence, flows, cfg: StackingConfig):
    """Masked median stacking of a frame sequence.

    Warps every non-center frame toward the center by its flow, stacks the
    warped frames with the center, and returns the per-pixel median plus
    the patch acceptance mask.
    """
    flows = list(flows)
    if len(flows) != len(seq) - 1:
        raise ValueError(
            f"need one flow per non-center frame: got {len(flows)} "
            f"for {len(seq)} frames"
        )
    for i, flow in enumerate(flows):
        if not isinstance(flow, FlowField):
            raise TypeError(f"flows[{i}] must be a FlowField")
    aligned = []
    k = 0
    for n, frame in enumerate(seq.frames):
        if n == seq.center_index:
            continue
        aligned.append(backward_warp(frame, flows[k]))
        k += 1
    median = np.clip(temporal_median(seq.center, aligned), 0.0, 1.0)
    mask = patch_mask(median, seq.center, cfg)
    return median, mask
