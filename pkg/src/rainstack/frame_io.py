"""Frame-sequence and optical-flow file I/O plus restoration quality metrics.

Images are ``H x W x 3`` float64 arrays with values in [0, 1] (8-bit inputs
are scaled by 1/255, which makes an intensity slack of 0.1 mean 10% of the
dynamic range). Flow files use the Middlebury format: the 4-byte magic
``PIEH``, width and height as little-endian int32, then row-major
interleaved (u, v) little-endian float32 pairs.
"""

import math
import os
import struct
from dataclasses import dataclass

import numpy as np
from PIL import Image as PILImage
from scipy.ndimage import gaussian_filter

FLO_MAGIC = b"PIEH"

#: PSNR reported for a zero-MSE pair; a fixed, serializable stand-in for
#: infinity so identical images still yield comparable numbers.
PSNR_CAP_DB = 99.0

#: SSIM window: 11 x 11 Gaussian, sigma 1.5 (truncated at radius 5).
_SSIM_SIGMA = 1.5
_SSIM_RADIUS = 5
_SSIM_C1 = 0.01 ** 2
_SSIM_C2 = 0.03 ** 2

# BT.601 luminance weights
_LUMA = np.array([0.299, 0.587, 0.114])


def ensure_image(arr, name: str = "image") -> np.ndarray:
    """Validate and return an ``H x W x 3`` float64 image in [0, 1]."""
    img = np.asarray(arr, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3 or img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"{name} must have shape (H, W, 3) with H, W >= 1")
    if not np.all(np.isfinite(img)):
        raise ValueError(f"{name} contains non-finite values")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ValueError(f"{name} values must lie in [0, 1]")
    return img


@dataclass(frozen=True)
class FrameSequence:
    """Ordered stack of same-size RGB frames with a designated center."""

    frames: tuple
    center_index: int

    def __post_init__(self):
        frames = tuple(ensure_image(f, f"frame {i}") for i, f in enumerate(self.frames))
        if len(frames) == 0:
            raise ValueError("frame sequence must contain at least one frame")
        shape = frames[0].shape
        for i, f in enumerate(frames):
            if f.shape != shape:
                raise ValueError(
                    f"frame {i} has shape {f.shape[:2]}, expected {shape[:2]}"
                )
        if not 0 <= self.center_index < len(frames):
            raise ValueError(
                f"center out of range: {self.center_index} for {len(frames)} frames"
            )
        object.__setattr__(self, "frames", frames)

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def center(self) -> np.ndarray:
        return self.frames[self.center_index]

    @property
    def height(self) -> int:
        return self.frames[0].shape[0]

    @property
    def width(self) -> int:
        return self.frames[0].shape[1]


@dataclass(frozen=True)
class FlowField:
    """Per-pixel displacement maps in pixel units (float32 storage)."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = np.ascontiguousarray(np.asarray(self.u, dtype=np.float32))
        v = np.ascontiguousarray(np.asarray(self.v, dtype=np.float32))
        if u.ndim != 2 or u.shape != v.shape:
            raise ValueError("u and v must be 2-D arrays of equal shape")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise ValueError("flow contains non-finite values")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @property
    def height(self) -> int:
        return self.u.shape[0]

    @property
    def width(self) -> int:
        return self.u.shape[1]


# ---------------------------------------------------------------------------
# image files

def load_image(path) -> np.ndarray:
    """Load one image file as an ``H x W x 3`` float64 array in [0, 1]."""
    try:
        with PILImage.open(path) as im:
            rgb = im.convert("RGB")
            arr = np.asarray(rgb, dtype=np.float64) / 255.0
    except (OSError, ValueError) as exc:
        raise ValueError(f"cannot decode image file {path}: {exc}") from exc
    return arr


def save_image(path, img) -> None:
    """Write an image as 8-bit RGB PNG (values rounded to the nearest level)."""
    img = ensure_image(img)
    data = np.round(img * 255.0).astype(np.uint8)
    _atomic_write(path, lambda tmp: PILImage.fromarray(data, mode="RGB").save(tmp, format="PNG"))


def load_frame_dir(path, center: int) -> FrameSequence:
    """Load all PNG frames of a directory, ordered by filename.

    Parameters
    ----------
    path : str or Path
        Directory containing the frames as 8-bit RGB PNGs.
    center : int
        0-based index of the center frame after sorting.
    """
    names = sorted(n for n in os.listdir(path) if n.lower().endswith(".png"))
    if not names:
        raise ValueError(f"no frames found in {path}")
    frames = [load_image(os.path.join(path, n)) for n in names]
    shape = frames[0].shape
    for name, frame in zip(names, frames):
        if frame.shape != shape:
            raise ValueError(
                f"frame {name} has size {frame.shape[:2]}, expected {shape[:2]}"
            )
    if not 0 <= center < len(frames):
        raise ValueError(f"center out of range: {center} for {len(frames)} frames")
    return FrameSequence(tuple(frames), center)


def save_frame_dir(path, frames, prefix: str = "frame_") -> list:
    """Write frames as ``<prefix>NNN.png``; returns the written paths."""
    os.makedirs(path, exist_ok=True)
    written = []
    for i, frame in enumerate(frames):
        p = os.path.join(path, f"{prefix}{i:03d}.png")
        save_image(p, frame)
        written.append(p)
    return written


# ---------------------------------------------------------------------------
# Middlebury flow files

def read_flow(path) -> FlowField:
    """Read a Middlebury .flo file; bit-exact inverse of :func:`write_flow`."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != FLO_MAGIC:
            raise ValueError(f"bad magic in {path}: expected {FLO_MAGIC!r}, got {magic!r}")
        header = f.read(8)
        if len(header) != 8:
            raise ValueError(f"truncated flow header in {path}")
        width, height = struct.unpack("<ii", header)
        if width < 1 or height < 1:
            raise ValueError(f"invalid flow dimensions {width} x {height} in {path}")
        payload = f.read(8 * width * height)
        if len(payload) != 8 * width * height:
            raise ValueError(f"truncated flow payload in {path}")
    data = np.frombuffer(payload, dtype="<f4").reshape(height, width, 2)
    if not np.all(np.isfinite(data)):
        raise ValueError(f"flow file {path} contains non-finite values")
    return FlowField(data[:, :, 0].copy(), data[:, :, 1].copy())


def write_flow(flow: FlowField, path) -> None:
    """Write a FlowField as a Middlebury .flo file."""
    h, w = flow.height, flow.width
    data = np.empty((h, w, 2), dtype="<f4")
    data[:, :, 0] = flow.u
    data[:, :, 1] = flow.v

    def emit(tmp):
        with open(tmp, "wb") as f:
            f.write(FLO_MAGIC)
            f.write(struct.pack("<ii", w, h))
            f.write(data.tobytes())

    _atomic_write(path, emit)


def _atomic_write(path, emit) -> None:
    # temp file in the target directory, then rename: readers never see
    # a partially written file
    path = os.fspath(path)
    tmp = path + ".tmp"
    emit(tmp)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# quality metrics

def compute_psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB over all pixels and channels.

    Unit peak is assumed (images in [0, 1]); a zero-MSE pair returns
    :data:`PSNR_CAP_DB` instead of infinity.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return 10.0 * math.log10(1.0 / mse)


def compute_ssim(a, b) -> float:
    """Mean structural similarity on luminance.

    Standard single-scale formulation: 11 x 11 Gaussian window (sigma 1.5),
    C1 = 0.01^2 and C2 = 0.03^2 on unit range, statistics compared over the
    window-valid interior region. RGB inputs are reduced to BT.601 luma.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 3:
        a = a @ _LUMA
        b = b @ _LUMA
    if min(a.shape) < 2 * _SSIM_RADIUS + 1:
        raise ValueError(
            f"image sides must be >= {2 * _SSIM_RADIUS + 1} for the SSIM window"
        )

    def blur(x):
        return gaussian_filter(x, _SSIM_SIGMA, truncate=_SSIM_RADIUS / _SSIM_SIGMA)

    mu_a = blur(a)
    mu_b = blur(b)
    var_a = blur(a * a) - mu_a * mu_a
    var_b = blur(b * b) - mu_b * mu_b
    cov = blur(a * b) - mu_a * mu_b

    num = (2.0 * mu_a * mu_b + _SSIM_C1) * (2.0 * cov + _SSIM_C2)
    den = (mu_a * mu_a + mu_b * mu_b + _SSIM_C1) * (var_a + var_b + _SSIM_C2)
    r = _SSIM_RADIUS
    return float(np.mean((num / den)[r:-r, r:-r]))
