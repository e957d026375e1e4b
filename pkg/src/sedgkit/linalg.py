"""Dense small-matrix kernel: matrix exponentials and the first phi-function.

Every exponential scheme in this package is built from two primitives:

    expm(m)             exp(m) for a square matrix m
    phi1_times_h(a, h)  h * phi(a*h) with phi(z) = (exp(z) - 1)/z,
                        i.e. the integral of exp(a*s) over [0, h]

phi1_times_h never inverts its argument, so it is valid for singular
matrices (the damped-oscillator drift matrix has a zero column block).
All matrices here are small (d <= 4 in the shipped models) and dense.
"""

import numpy as np
import scipy.linalg


def _as_square(m, name="m"):
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} has non-finite entries")
    return m


def expm(m):
    """Matrix exponential of a square matrix.

    Uses scaling-and-squaring with a degree-13 Pade approximant (the
    standard dense algorithm), accurate to near machine precision for
    the moderate norms used here.

    Args:
        m: (d, d) array with finite entries.

    Returns:
        (d, d) array exp(m).

    Raises:
        ValueError: if m is not square or has non-finite entries.
    """
    m = _as_square(m)
    return scipy.linalg.expm(m)


def phi1_times_h(a, h):
    """h * phi(a*h) where phi(z) = (exp(z) - 1)/z.

    Equals the integral of exp(a*s) ds over [0, h]. Computed through the
    augmented-matrix identity

        exp([[a*h, h*I], [0, 0]]) = [[exp(a*h), h*phi(a*h)], [0, I]],

    which avoids inverting a and therefore works for singular a.

    Args:
        a: (d, d) array with finite entries.
        h: step size, must be > 0.

    Returns:
        (d, d) array h * phi(a*h).
    """
    a = _as_square(a, "a")
    h = float(h)
    if not np.isfinite(h) or h <= 0.0:
        raise ValueError(f"h must be a positive finite real, got {h}")
    d = a.shape[0]
    aug = np.zeros((2 * d, 2 * d))
    aug[:d, :d] = a * h
    aug[:d, d:] = h * np.eye(d)
    return scipy.linalg.expm(aug)[:d, d:]


def expm_2x2_batch(m):
    """Closed-form exponentials of a stack of 2x2 matrices.

    Vectorized fast path used by the Poisson stepper, where every Monte
    Carlo path carries its own exponent. Based on

        exp(M) = exp(mu) * (cosh(s) I + sinhc(s) (M - mu I)),
        mu = tr(M)/2,  s^2 = mu^2 - det(M),

    with the cos/sinc branch when s^2 < 0 (rotation-like blocks) and the
    s -> 0 limit handled by sinhc/sinc series. Agrees with the generic
    expm to ~1e-14 for the moderate norms that occur in stepping.

    Args:
        m: (..., 2, 2) array.

    Returns:
        (..., 2, 2) array of exponentials.
    """
    m = np.asarray(m, dtype=float)
    if m.shape[-2:] != (2, 2):
        raise ValueError(f"expected trailing (2, 2) dims, got shape {m.shape}")
    a = m[..., 0, 0]
    b = m[..., 0, 1]
    c = m[..., 1, 0]
    d = m[..., 1, 1]
    mu = 0.5 * (a + d)
    # s2 = ((a - d)/2)^2 + b*c is the squared eigenvalue offset from mu
    s2 = 0.25 * (a - d) ** 2 + b * c
    s = np.sqrt(np.abs(s2))
    small = np.abs(s2) < 1e-12
    with np.errstate(invalid="ignore", divide="ignore"):
        cosh_s = np.where(s2 >= 0.0, np.cosh(s), np.cos(s))
        sinhc_s = np.where(s2 >= 0.0, np.sinh(s) / s, np.sin(s) / s)
    # series for sinhc near s = 0: 1 + s2/6 + s2^2/120
    sinhc_series = 1.0 + s2 / 6.0 + s2 * s2 / 120.0
    cosh_series = 1.0 + s2 / 2.0 + s2 * s2 / 24.0
    cosh_s = np.where(small, cosh_series, cosh_s)
    sinhc_s = np.where(small, sinhc_series, sinhc_s)
    emu = np.exp(mu)
    out = np.empty(m.shape)
    half_diff = 0.5 * (a - d)
    out[..., 0, 0] = emu * (cosh_s + sinhc_s * half_diff)
    out[..., 0, 1] = emu * sinhc_s * b
    out[..., 1, 0] = emu * sinhc_s * c
    out[..., 1, 1] = emu * (cosh_s - sinhc_s * half_diff)
    return out
