"""Exact order statistics and their differentiable approximations.

A hard statistic (min, max, median) is a one-hot selection over a candidate
set. The soft versions replace the selection with softmax weights controlled
by a sharpness coefficient ``a``: at ``a = 0`` every soft statistic is the
plain mean, and as ``a`` grows the weights concentrate on the selected
candidate. Median selection scores each candidate by its mean absolute
deviation from the set (the quantity the true median minimizes), and the
weights are a softmin over those deviations:

    weights_n = exp(-a * D_n) / sum_k exp(-a * D_k)

All exponentials are computed with the max exponent subtracted first, so a
forward evaluation never overflows no matter how large ``a`` is.

Gradients are provided for the fully smooth composite in which the absolute
value inside the deviation profile is replaced by ``soft_abs`` at the same
sharpness; that keeps the function differentiable everywhere, including at
candidate ties.
"""

import numpy as np

#: Sharpness magnitudes above this are accepted for (stabilized) forward
#: evaluation but rejected by the gradient routines: central finite
#: differences stop being meaningful once exp(-a * D) saturates.
GRAD_SAFE_SHARPNESS = 50.0

#: Grid step of the brute-force MAD minimizer, as a fraction of the value
#: range of the candidate set.
MAD_GRID_STEP = 1e-4


def _as_candidates(values) -> np.ndarray:
    x = np.asarray(values, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("candidate set must be a non-empty 1-D sequence")
    if not np.all(np.isfinite(x)):
        raise ValueError("candidate values must be finite")
    return x


# ---------------------------------------------------------------------------
# exact statistics (oracles)

def exact_mean(values) -> float:
    """Arithmetic mean of the candidate set."""
    return float(np.mean(_as_candidates(values)))


def exact_min(values) -> float:
    """Smallest candidate."""
    return float(np.min(_as_candidates(values)))


def exact_max(values) -> float:
    """Largest candidate."""
    return float(np.max(_as_candidates(values)))


def exact_median(values) -> float:
    """Median; for even set sizes, the average of the two middle values."""
    return float(np.median(_as_candidates(values)))


def mean_abs_deviation(values, x: float) -> float:
    """(1/N) * sum_n |x - x_n|, the objective the median minimizes."""
    v = _as_candidates(values)
    return float(np.mean(np.abs(float(x) - v)))


def median_mad_oracle(values) -> float:
    """Brute-force minimizer of the mean absolute deviation.

    Evaluates the MAD objective on a dense uniform grid (step 1e-4 of the
    value range) augmented with the candidate values themselves, which are
    the kinks of the piecewise-linear objective, and returns the argmin.
    """
    x = _as_candidates(values)
    lo, hi = float(x.min()), float(x.max())
    if hi == lo:
        return lo
    grid = np.linspace(lo, hi, round(1.0 / MAD_GRID_STEP) + 1)
    grid = np.concatenate([grid, x])
    mad = np.abs(grid[:, None] - x[None, :]).mean(axis=1)
    return float(grid[np.argmin(mad)])


# ---------------------------------------------------------------------------
# soft statistics

def soft_argmax_weights(values, a: float) -> np.ndarray:
    """Softmax selection weights ``exp(a * x_n) / sum_j exp(a * x_j)``.

    The max exponent is subtracted before exponentiation, so the result is
    overflow-safe for any finite ``a * x_n``.
    """
    x = _as_candidates(values)
    with np.errstate(over="ignore", invalid="ignore"):
        z = float(a) * x
    if not np.all(np.isfinite(z)):
        raise ValueError("sharpness out of overflow-safe range: a * x not finite")
    z -= z.max()
    w = np.exp(z)
    return w / w.sum()


def soft_max(values, a: float) -> float:
    """Softmax-weighted average converging to the maximum as a -> +inf."""
    x = _as_candidates(values)
    return float(soft_argmax_weights(x, a) @ x)


def soft_min(values, a: float) -> float:
    """Softmax-weighted average converging to the minimum as a -> +inf."""
    x = _as_candidates(values)
    return float(soft_argmax_weights(-x, a) @ x)


def soft_abs(x, a: float):
    """Smooth absolute value, identical to ``soft_max({x, -x}, a)``.

    The two-candidate softmax collapses algebraically to ``x * tanh(a*x)``,
    which is what is evaluated (elementwise on arrays); it is exact at 0 and
    converges to |x| as ``a -> inf``.
    """
    x = np.asarray(x, dtype=np.float64)
    out = x * np.tanh(a * x)
    return float(out) if out.ndim == 0 else out


def mad_profile(values, b: float) -> np.ndarray:
    """Per-candidate deviation profile ``D_n = (1/N) sum_j |x_n - b*x_j|``.

    At ``b = 1`` this is each candidate's mean absolute deviation from the
    set; at ``b = 0`` it degrades to ``|x_n|``.
    """
    x = _as_candidates(values)
    return np.abs(x[:, None] - float(b) * x[None, :]).mean(axis=1)


def _soft_mad_profile(x: np.ndarray, b: float, a: float) -> np.ndarray:
    # smooth variant: |.| replaced by soft_abs at the same sharpness
    u = x[:, None] - b * x[None, :]
    return (u * np.tanh(a * u)).mean(axis=1)


def soft_median(values, a: float, *, smooth_abs: bool = False) -> float:
    """Differentiable median: softmin over the deviation profile at b=1.

    ``smooth_abs=True`` swaps the exact absolute value inside the profile
    for :func:`soft_abs`, producing the everywhere-smooth composite the
    gradient routines differentiate.
    """
    x = _as_candidates(values)
    a = float(a)
    d = _soft_mad_profile(x, 1.0, a) if smooth_abs else mad_profile(x, 1.0)
    return float(soft_argmax_weights(-d, a) @ x)


# ---------------------------------------------------------------------------
# analytic gradients

def _extremum_grad(x: np.ndarray, a: float, sign: float):
    # soft_max for sign=+1, soft_min for sign=-1
    w = soft_argmax_weights(sign * x, a)
    s = float(w @ x)
    dx = w * (1.0 + sign * a * (x - s))
    da = sign * float(w @ (x - s) ** 2)
    return dx, da


def _deviation_softmin_grad(x: np.ndarray, a: float, b: float):
    """Gradients of the smooth deviation-softmin composite.

    Returns (value, d/dx, d/da, d/db) of
        s = sum_n x_n * softmin_n(a * D),  D_n = (1/N) sum_j phi(x_n - b*x_j)
    with phi(u) = u * tanh(a*u). The sharpness appears both as the softmin
    temperature and inside phi, and d/da accounts for both.
    """
    n = x.size
    u = x[:, None] - b * x[None, :]
    th = np.tanh(a * u)
    sech2 = 1.0 - th * th
    phi = u * th
    dphi_du = th + a * u * sech2

    d = phi.mean(axis=1)
    w = soft_argmax_weights(-d, a)
    s = float(w @ x)
    g = w * (x - s)

    # J[n, k] = dD_n/dx_k
    jac = (np.diag(dphi_du.sum(axis=1)) - b * dphi_du) / n
    dx = w - a * (g @ jac)

    dd_da = (u * u * sech2).mean(axis=1)
    da = float(g @ (-d - a * dd_da))

    dd_db = -(dphi_du * x[None, :]).mean(axis=1)
    db = float(-a * (g @ dd_db))
    return s, dx, da, db


def _check_grad_sharpness(a: float) -> float:
    a = float(a)
    if abs(a) > GRAD_SAFE_SHARPNESS:
        raise ValueError(
            f"|a| = {abs(a):g} exceeds the gradient-safe bound {GRAD_SAFE_SHARPNESS:g}"
        )
    return a


def soft_stat_grad(kind: str, values, a: float):
    """Analytic gradients (d/dx vector, d/da) of a soft statistic.

    ``kind`` is one of ``min``, ``max``, ``median``. For the median the
    gradients are those of the ``smooth_abs=True`` composite, which is the
    function a finite-difference check must difference.
    """
    x = _as_candidates(values)
    a = _check_grad_sharpness(a)
    if kind == "max":
        return _extremum_grad(x, a, +1.0)
    if kind == "min":
        return _extremum_grad(x, a, -1.0)
    if kind == "median":
        _, dx, da, _ = _deviation_softmin_grad(x, a, 1.0)
        return dx, da
    raise ValueError(f"unknown soft statistic kind: {kind!r}")
