"""Discrete gradients: coordinate-increment form and its symmetrization.

A discrete gradient of a scalar field H is a two-point vector field
DG(y, yhat) satisfying the chord identity

    DG(y, yhat) . (yhat - y) = H(yhat) - H(y)

and the consistency condition DG(y, y) = grad H(y). The coordinate
increment construction advances one coordinate at a time and divides the
field differences by the coordinate increments; averaging it with its
argument-swapped twin gives a symmetric discrete gradient. The chord
identity holds exactly (up to roundoff) by telescoping.

All callables are vectorized: points may carry leading batch dimensions,
shape (..., d). These functions sit inside the fixed-point loop of every
implicit scheme, so the implementation leans on preallocated work arrays
and evaluates analytic gradients only where coordinates nearly coincide.
A NaN produced by a field evaluation propagates into the result (and
from there into the solver's residual, which then reports failure).
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np


@dataclass(frozen=True)
class ScalarField:
    """A scalar field with an analytic gradient (and optional Hessian).

    Attributes:
        dim: dimension of the argument.
        value: callable (..., dim) -> (...,).
        grad: callable (..., dim) -> (..., dim); must be the true
            gradient of value (checked against finite differences in the
            test suite, not at construction).
        hess: optional callable (..., dim) -> (..., dim, dim).
    """

    dim: int
    value: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    hess: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __call__(self, x):
        return self.value(x)


@dataclass(frozen=True)
class DgConfig:
    """Near-coincidence handling for the divided differences.

    When |yhat_k - y_k| < coincidence_eps * (1 + |y_k| + |yhat_k|) the
    0/0 divided difference along coordinate k is replaced by the
    analytic partial derivative at the interval midpoint. The default
    threshold keeps the chord identity violated only at O(eps).
    """

    coincidence_eps: float = 1e-12

    def __post_init__(self):
        if not (0.0 < self.coincidence_eps <= 1e-6):
            raise ValueError(
                f"coincidence_eps must lie in (0, 1e-6], got {self.coincidence_eps}"
            )


_DEFAULT_CFG = DgConfig()


def _check_points(field, y, yhat):
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    if y.shape != yhat.shape or y.shape[-1] != field.dim:
        raise ValueError(
            f"point shapes {y.shape}, {yhat.shape} incompatible with dim {field.dim}"
        )
    return y, yhat


def _ci_dg(field, y, yhat, f_start, f_end, eps):
    """Coordinate-increment DG given precomputed endpoint values
    f_start = H(y), f_end = H(yhat)."""
    d = field.dim
    out = np.empty_like(y)
    z = y.copy()
    f_lo = f_start
    for k in range(d):
        yk = y[..., k]
        yhk = yhat[..., k]
        z[..., k] = yhk
        f_hi = f_end if k == d - 1 else np.asarray(field.value(z), dtype=float)
        den = yhk - yk
        near = np.abs(den) < eps * (1.0 + np.abs(yk) + np.abs(yhk))
        if near.any():
            dd = (f_hi - f_lo) / np.where(near, 1.0, den)
            zmid = z.copy()
            zmid[..., k] = 0.5 * (yk + yhk)
            gk = np.asarray(field.grad(zmid), dtype=float)[..., k]
            dd = np.where(near, gk, dd)
        else:
            dd = (f_hi - f_lo) / den
        out[..., k] = dd
        f_lo = f_hi
    return out


def coord_increment_dg(field, y, yhat, cfg=_DEFAULT_CFG):
    """Coordinate increment discrete gradient of a scalar field.

    Component k is the divided difference of the field along coordinate
    k with coordinates 1..k-1 already advanced to yhat. Where the k-th
    coordinates nearly coincide, the analytic partial derivative at the
    mixed point with coordinate k at the midpoint is used instead.

    Args:
        field: ScalarField of dimension d.
        y, yhat: arrays of shape (..., d).
        cfg: DgConfig.

    Returns:
        array of shape (..., d).
    """
    y, yhat = _check_points(field, y, yhat)
    f_start = np.asarray(field.value(y), dtype=float)
    f_end = np.asarray(field.value(yhat), dtype=float)
    return _ci_dg(field, y, yhat, f_start, f_end, cfg.coincidence_eps)


def symmetric_dg(field, y, yhat, cfg=_DEFAULT_CFG):
    """Symmetric discrete gradient: the argument-symmetrized average.

    Returns 0.5 * (coord_increment_dg(field, y, yhat)
                   + coord_increment_dg(field, yhat, y)),
    which satisfies the chord identity and is invariant under exchanging
    y and yhat. The two endpoint field values are shared between the
    forward and backward passes.
    """
    y, yhat = _check_points(field, y, yhat)
    f_y = np.asarray(field.value(y), dtype=float)
    return symmetric_dg_cached(field, y, f_y, yhat, cfg)


def symmetric_dg_cached(field, y, f_y, yhat, cfg=_DEFAULT_CFG):
    """symmetric_dg with the value at y precomputed.

    Hot-path variant for fixed-point loops where y stays fixed while
    yhat iterates; bitwise identical to symmetric_dg(field, y, yhat).
    """
    yhat = np.asarray(yhat, dtype=float)
    f_yhat = np.asarray(field.value(yhat), dtype=float)
    eps = cfg.coincidence_eps
    forward = _ci_dg(field, y, yhat, f_y, f_yhat, eps)
    backward = _ci_dg(field, yhat, y, f_yhat, f_y, eps)
    return 0.5 * (forward + backward)
