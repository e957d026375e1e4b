"""Reproducible Wiener increments with level coupling and truncation.

Increment grids are generated at a fine step ``h_fine`` with ``2**L``
entries per noise component and can be aggregated to coarser step sizes
by exact pairwise summation. Because coarse increments are literal sums
of the fine ones, a scheme run at a coarse step and a reference run at
the fine step see the same Brownian path, which is what strong-error
estimation needs.

Generation is counter-based (Philox) and keyed per (base_seed,
path_index, noise index), so a path's increments are bit-identical no
matter how many worker threads the Monte Carlo layer uses or how paths
are batched.
"""

from dataclasses import dataclass, field

import numpy as np

# room for the noise index in the second Philox key word
_MAX_NOISES = 256


@dataclass(frozen=True)
class TruncationPolicy:
    """Whether and how hard to clip normalized increments.

    The clip bound is C_h = sqrt(2 * k * |ln h|) on the N(0,1) draw, so
    the increment itself is bounded by C_h * sqrt(h). k defaults to 2,
    which keeps the clipping error below the scheme error for
    first-order schemes. Bounded increments keep the fixed-point maps of
    implicit schemes contractive.
    """

    enabled: bool = False
    k: float = 2.0

    def __post_init__(self):
        if self.k < 1.0:
            raise ValueError(f"truncation exponent k must be >= 1, got {self.k}")


@dataclass(frozen=True)
class IncrementGrid:
    """Finest-level Wiener increments for one sample path.

    Attributes:
        m: number of independent noises.
        n_fine: number of fine increments, always a power of two.
        h_fine: fine step size.
        increments: (m, n_fine) array of N(0, h_fine) draws.
        base_seed: 64-bit seed shared by the whole experiment.
        path_index: index of this path within the ensemble.
    """

    m: int
    n_fine: int
    h_fine: float
    increments: np.ndarray = field(repr=False)
    base_seed: int
    path_index: int


def generate(base_seed, path_index, m, L, h_fine):
    """Generate the fine-level increments of one path.

    Draw (r, n) depends only on (base_seed, path_index, r, n, L): each
    noise component has its own Philox stream keyed by (base_seed,
    path_index, r), and position n indexes into that stream.

    Args:
        base_seed: experiment seed (64-bit integer).
        path_index: path number, >= 0.
        m: number of noises, >= 1.
        L: fine level; the grid holds 2**L increments per noise.
        h_fine: fine step size, > 0.

    Returns:
        IncrementGrid with an (m, 2**L) array of N(0, h_fine) draws.
    """
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    if m > _MAX_NOISES:
        raise ValueError(f"at most {_MAX_NOISES} noises supported, got {m}")
    if L < 0:
        raise ValueError(f"L must be >= 0, got {L}")
    if path_index < 0:
        raise ValueError(f"path_index must be >= 0, got {path_index}")
    h_fine = float(h_fine)
    if not (h_fine > 0.0):
        raise ValueError(f"h_fine must be > 0, got {h_fine}")
    n_fine = 1 << int(L)
    out = np.empty((m, n_fine))
    root = np.sqrt(h_fine)
    for r in range(m):
        key = np.array(
            [np.uint64(base_seed & 0xFFFFFFFFFFFFFFFF),
             np.uint64(((path_index << 8) | r) & 0xFFFFFFFFFFFFFFFF)],
            dtype=np.uint64,
        )
        rng = np.random.Generator(np.random.Philox(key=key))
        out[r] = rng.standard_normal(n_fine)
    out *= root
    return IncrementGrid(
        m=m, n_fine=n_fine, h_fine=h_fine, increments=out,
        base_seed=int(base_seed), path_index=int(path_index),
    )


def aggregate(grid, factor):
    """Sum fine increments into coarse ones.

    Entry j of the result is the sum of fine increments j*factor ..
    (j+1)*factor - 1, computed by repeated pairwise halving. Halving
    makes aggregates at different levels exactly consistent with each
    other: aggregating to factor f1*f2 equals aggregating the factor-f1
    result by f2, bit for bit. No renormalization is applied.

    Args:
        grid: IncrementGrid (or a bare (m, n) array whose n is a power
            of two).
        factor: power of two dividing the number of fine increments.

    Returns:
        (m, n_fine // factor) array of coarse increments.
    """
    a = grid.increments if isinstance(grid, IncrementGrid) else np.asarray(grid)
    n = a.shape[-1]
    factor = int(factor)
    if factor < 1 or (factor & (factor - 1)) != 0:
        raise ValueError(f"factor must be a positive power of two, got {factor}")
    if n % factor != 0:
        raise ValueError(f"factor {factor} does not divide n_fine {n}")
    if factor == 1:
        return a.copy()
    while factor > 1:
        a = a[..., 0::2] + a[..., 1::2]
        factor >>= 1
    return a


def clip_bound(h, k):
    """The clip level C_h = sqrt(2 * k * |ln h|) for normalized draws."""
    h = float(h)
    if not (0.0 < h < 1.0):
        raise ValueError(f"truncation needs h in (0, 1), got {h}")
    if k < 1.0:
        raise ValueError(f"k must be >= 1, got {k}")
    return np.sqrt(2.0 * k * abs(np.log(h)))


def truncate_increment(xi, h, k):
    """Clip a standard normal draw to [-C_h, C_h].

    The caller multiplies the result by sqrt(h) to form the bounded
    increment. Identity on draws already inside the band, monotone, and
    symmetric.

    Args:
        xi: standard normal draw (scalar or array).
        h: step size in (0, 1).
        k: truncation exponent, >= 1.
    """
    c = clip_bound(h, k)
    return np.clip(xi, -c, c)


def truncate_raw_increments(dw, h, policy):
    """Apply a TruncationPolicy to raw increments dw ~ N(0, h).

    Clips dw at +-C_h * sqrt(h); returns dw unchanged when the policy is
    disabled. Used by implicit schemes on the increments of the level
    they actually step.
    """
    if policy is None or not policy.enabled:
        return dw
    bound = clip_bound(h, policy.k) * np.sqrt(h)
    return np.clip(dw, -bound, bound)
