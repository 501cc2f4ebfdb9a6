"""Deterministic synthetic rain-streak and scene generation.

The generator exists so that every pipeline property is testable without
external datasets: rain is an additive sparse layer of anti-aliased line
segments (I = B + R), and rainy sequences come with exact ground-truth
clean frames and flows. All randomness flows from the explicit seed in
:class:`RainConfig` through ``numpy.random.default_rng``, so identical
configurations produce bit-identical outputs across runs and thread counts.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from .frame_io import FlowField, FrameSequence, ensure_image
from .flow_warp import backward_warp, synth_translation_flow

#: Streak half-width in pixels; the anti-aliasing ramp extends 0.5 px beyond.
_HALF_WIDTH = 0.5

#: Hard cap on streaks per layer, guarding the coverage loop.
_MAX_STREAKS = 100_000


@dataclass(frozen=True)
class RainConfig:
    """Parameters of the synthetic rain layer."""

    density: float = 0.02
    streak_length: float = 12.0
    angle: float = 10.0
    intensity: float = 0.4
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.density <= 0.5:
            raise ValueError(f"density must be in [0, 0.5], got {self.density}")
        if self.streak_length < 1.0:
            raise ValueError(f"streak_length must be >= 1, got {self.streak_length}")
        if not 0.0 < self.intensity <= 1.0:
            raise ValueError(f"intensity must be in (0, 1], got {self.intensity}")


def synth_rain_layer(h: int, w: int, cfg: RainConfig) -> np.ndarray:
    """Generate an ``h x w x 3`` rain layer of line-segment streaks.

    Streaks of the configured length and angle (degrees from vertical) are
    added at uniform random positions until the fraction of nonzero pixels
    reaches ``cfg.density``; each streak has uniform intensity with a
    one-pixel anti-aliasing ramp, and overlaps blend by maximum.
    """
    if h < 1 or w < 1:
        raise ValueError("layer dimensions must be >= 1")
    layer = np.zeros((h, w), dtype=np.float64)
    if cfg.density > 0.0:
        rng = np.random.default_rng(cfg.seed)
        ang = math.radians(cfg.angle)
        dx = math.sin(ang) * cfg.streak_length / 2.0
        dy = math.cos(ang) * cfg.streak_length / 2.0
        total = h * w
        for _ in range(_MAX_STREAKS):
            if np.count_nonzero(layer) / total >= cfg.density:
                break
            cx = rng.uniform(0.0, w - 1.0)
            cy = rng.uniform(0.0, h - 1.0)
            _draw_segment(layer, cx - dx, cy - dy, cx + dx, cy + dy, cfg.intensity)
    return np.repeat(layer[:, :, None], 3, axis=2)


def _draw_segment(layer, x0, y0, x1, y1, intensity):
    h, w = layer.shape
    pad = _HALF_WIDTH + 1.0
    xa = max(int(math.floor(min(x0, x1) - pad)), 0)
    xb = min(int(math.ceil(max(x0, x1) + pad)), w - 1)
    ya = max(int(math.floor(min(y0, y1) - pad)), 0)
    yb = min(int(math.ceil(max(y0, y1) + pad)), h - 1)
    if xa > xb or ya > yb:
        return
    ys, xs = np.meshgrid(np.arange(ya, yb + 1, dtype=np.float64),
                         np.arange(xa, xb + 1, dtype=np.float64), indexing="ij")
    ex = x1 - x0
    ey = y1 - y0
    px = xs - x0
    py = ys - y0
    t = np.clip((px * ex + py * ey) / (ex * ex + ey * ey), 0.0, 1.0)
    dist = np.hypot(px - t * ex, py - t * ey)
    alpha = np.clip(_HALF_WIDTH + 0.5 - dist, 0.0, 1.0)
    region = layer[ya:yb + 1, xa:xb + 1]
    np.maximum(region, intensity * alpha, out=region)


def add_rain(clean, rain) -> np.ndarray:
    """Additive composition ``clip(clean + rain, 0, 1)``."""
    clean = ensure_image(clean, "clean")
    rain = ensure_image(rain, "rain")
    if clean.shape != rain.shape:
        raise ValueError(f"dimension mismatch: {clean.shape} vs {rain.shape}")
    return np.clip(clean + rain, 0.0, 1.0)


def make_rainy_sequence(clean, n_frames: int, motion, cfg: RainConfig):
    """Build a translating rainy sequence with exact ground truth.

    Clean frame ``n`` is the base image translated by ``(n - c) * motion``
    (replicate border), where ``c`` is the center index; each frame receives
    an independent rain layer (seed offset by the frame index). The returned
    flows are the exact translations that align each non-center frame to the
    center, ordered by frame index.

    Returns
    -------
    (FrameSequence, FrameSequence, list of FlowField)
        Rainy sequence, clean sequence, and the N-1 true flows.
    """
    base = ensure_image(clean, "clean")
    if n_frames < 1 or n_frames % 2 == 0:
        raise ValueError(f"n_frames must be odd and >= 1, got {n_frames}")
    mx, my = float(motion[0]), float(motion[1])
    h, w = base.shape[:2]
    center = n_frames // 2
    if center * abs(mx) >= w or center * abs(my) >= h:
        raise ValueError(
            f"motion ({mx}, {my}) pushes the visible region out of a "
            f"{h}x{w} frame over {n_frames} frames"
        )
    clean_frames = []
    rainy_frames = []
    flows = []
    for n in range(n_frames):
        k = n - center
        frame = backward_warp(base, synth_translation_flow(-k * mx, -k * my, h, w)).image
        frame = np.clip(frame, 0.0, 1.0)
        rain = synth_rain_layer(h, w, replace(cfg, seed=cfg.seed + n))
        clean_frames.append(frame)
        rainy_frames.append(add_rain(frame, rain))
        if n != center:
            flows.append(synth_translation_flow(k * mx, k * my, h, w))
    return (FrameSequence(tuple(rainy_frames), center),
            FrameSequence(tuple(clean_frames), center),
            flows)
