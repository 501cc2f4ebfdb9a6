"""Shared fixtures and numeric helpers for the test suite."""

import numpy as np
import pytest

from rainstack import mad_profile

#: Minimum pairwise gap between candidate values in sampled sets.
VALUE_GAP = 0.05

#: Minimum gap between the MAD-profile minimum and every candidate outside
#: the median min-group. At sharpness 500 the softmin leakage is then at
#: most 8 * exp(-500 * 0.035) ~ 2e-7, inside the 1e-6 limit tolerance.
MAD_GAP = 0.035


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def sample_separated_set(rng, n=None) -> np.ndarray:
    """Random candidate set on which the sharp DSF limits are well-posed.

    Pairwise value gaps are at least VALUE_GAP, and every candidate outside
    the median min-group sits at least MAD_GAP above the MAD-profile
    minimum. For even sizes the two middle candidates tie in the profile
    exactly (the mean-absolute-deviation is flat between them); that tie is
    what makes the sharp softmin converge to the average-of-middle-two
    median, so it is preserved rather than separated. Random sets almost
    never satisfy the profile-gap condition for n >= 4, hence the
    constructive sampling: the median-adjacent value gaps are sized so the
    profile clears MAD_GAP, everything else is jittered.
    """
    if n is None:
        n = int(rng.integers(3, 10))
    if n < 3:
        raise ValueError("need at least 3 candidates")
    need = np.full(n - 1, VALUE_GAP)
    if n % 2:
        m = (n - 1) // 2  # index of the median
        need[m - 1] = need[m] = max(VALUE_GAP, n * MAD_GAP)
    else:
        t = n // 2  # medians at t-1 and t
        if t - 2 >= 0:
            need[t - 2] = max(VALUE_GAP, n * MAD_GAP / 2.0)
        need[t] = max(VALUE_GAP, n * MAD_GAP / 2.0)
    slack = 1.0 - need.sum()
    assert slack > 0.0, "separation requirements exceed the unit interval"
    gaps = need + rng.dirichlet(np.ones(n - 1)) * slack * rng.uniform(0.2, 0.95)
    x0 = rng.uniform(0.0, 1.0 - gaps.sum())
    x = x0 + np.concatenate([[0.0], np.cumsum(gaps)])
    return x[rng.permutation(n)]


def assert_separated(x):
    """Sanity check that a sampled set satisfies the sampler's contract."""
    xs = np.sort(x)
    assert np.diff(xs).min() >= VALUE_GAP - 1e-12
    d = np.sort(mad_profile(x, 1.0))
    competitors = d[d > d[0] + 1e-9]
    if competitors.size:
        assert competitors.min() - d[0] >= MAD_GAP - 1e-12


def central_fd(fn, theta, h=1e-5) -> np.ndarray:
    """Central finite-difference gradient of a scalar function."""
    theta = np.asarray(theta, dtype=np.float64)
    g = np.empty_like(theta)
    for i in range(theta.size):
        hi = theta.copy()
        lo = theta.copy()
        hi[i] += h
        lo[i] -= h
        g[i] = (fn(hi) - fn(lo)) / (2.0 * h)
    return g


def rel_error(analytic, fd) -> float:
    """Norm-wise relative error between gradient vectors."""
    analytic = np.asarray(analytic, dtype=np.float64)
    fd = np.asarray(fd, dtype=np.float64)
    num = float(np.linalg.norm(analytic - fd))
    den = max(float(np.linalg.norm(analytic)), float(np.linalg.norm(fd)), 1e-12)
    return num / den


def block_texture(rng, h, w, block=8) -> np.ndarray:
    """Blocky random texture: strong edges every ``block`` pixels."""
    coarse = rng.uniform(0.1, 0.9, (-(-h // block), -(-w // block), 3))
    return np.repeat(np.repeat(coarse, block, axis=0), block, axis=1)[:h, :w]


def smooth_texture(rng, h, w, block=8) -> np.ndarray:
    """Smooth random texture (bilinearly upsampled coarse noise)."""
    from rainstack import bilinear_resize

    coarse = rng.uniform(0.1, 0.9, (max(2, h // block), max(2, w // block), 3))
    return np.clip(bilinear_resize(coarse, (h, w)), 0.0, 1.0)
