"""Experiment drivers: trajectories, strong-order estimation, energy
expectation growth, and frequency sweeps.

Strong (root mean-square) errors are estimated with coupled Brownian
paths: each path's increments are generated once at a fine level and
aggregated exactly to every coarser step size, so the scheme run at a
coarse step and the reference run (the same scheme at the fine step)
share one noise realization. The error at the terminal time is averaged
over the ensemble and the order read off a least-squares fit of
log(rms) against log(h).

Paths are processed in batches vectorized across the batch; per-path
results are bit-identical regardless of batch sizes or thread counts
(increments are counter-keyed per path and the implicit solves freeze
each path at its own convergence point).
"""

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .integrators import make_scheme
from .models import LangevinLgModel, PoissonLgModel, build_model
from .wiener import TruncationPolicy, aggregate, generate

# cap on the increment block held per batch (bytes)
_BATCH_BYTES = 6e8


def _is_pow2(n):
    return n >= 1 and (n & (n - 1)) == 0


def resolve_threads(threads=None):
    """Thread count from the argument, SEDGKIT_THREADS, or the machine."""
    if threads is not None:
        return max(1, int(threads))
    env = os.environ.get("SEDGKIT_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


@dataclass
class ExperimentConfig:
    """Settings of one Monte Carlo experiment.

    h_list must be strictly decreasing; for convergence runs each
    t_end / h must be a power-of-two step count so the coarse grids nest
    inside the fine one. ref_factor (>= 32, power of two) refines the
    smallest h for the reference solution. truncation None means each
    scheme's default policy (clipping on for implicit schemes, off for
    explicit ones).
    """

    model: str
    scheme: str
    t_end: float
    h_list: list
    x0: np.ndarray
    params: dict = field(default_factory=dict)
    ref_factor: int = 128
    n_paths: int = 1000
    base_seed: int = 0
    truncation: Optional[TruncationPolicy] = None
    threads: Optional[int] = None
    out: Optional[str] = None

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float)
        self.h_list = [float(h) for h in self.h_list]
        if not self.h_list:
            raise ValueError("h_list must not be empty")
        if any(h <= 0.0 for h in self.h_list):
            raise ValueError("step sizes must be positive")
        if any(b >= a for a, b in zip(self.h_list, self.h_list[1:])):
            raise ValueError("h_list must be strictly decreasing")
        if self.t_end <= 0.0:
            raise ValueError(f"t_end must be > 0, got {self.t_end}")
        if not _is_pow2(self.ref_factor) or self.ref_factor < 32:
            raise ValueError(
                f"ref_factor must be a power of two >= 32, got {self.ref_factor}"
            )
        if self.n_paths < 1:
            raise ValueError(f"n_paths must be >= 1, got {self.n_paths}")

    @property
    def h(self):
        """The (largest) step size; single-h experiments use this one."""
        return self.h_list[0]


@dataclass
class ConvergenceTable:
    """RMS error against step size with a fitted log-log slope."""

    h: np.ndarray
    rms: np.ndarray
    stderr: np.ndarray
    slope: float
    intercept: float
    degenerate: bool = False


@dataclass
class GrowthReport:
    """Sample mean of the oscillator energy H1 over time."""

    t: np.ndarray
    mean_h1: np.ndarray
    stderr: np.ndarray


@dataclass
class SweepTable:
    """One-step rms errors per frequency, scheme and component."""

    rows: list  # (omega, scheme, component, rms)
    slopes: dict  # (scheme, component) -> log-log slope of rms vs omega


def fit_loglog(x, y):
    """Unweighted least-squares slope and intercept of log y vs log x."""
    lx = np.log(np.asarray(x, dtype=float))
    ly = np.log(np.asarray(y, dtype=float))
    slope, intercept = np.polyfit(lx, ly, 1)
    return float(slope), float(intercept)


def _noise_count(model):
    if isinstance(model, (PoissonLgModel, LangevinLgModel)):
        return 1
    return model.m


def _steps_for(t_end, h):
    n = t_end / h
    n_int = round(n)
    if abs(n - n_int) > 1e-9 * max(1.0, abs(n)) or n_int < 1:
        raise ValueError(f"t_end/h = {n} is not a positive integer step count")
    return int(n_int)


def _batch_ranges(n_paths, n_fine, m):
    batch = max(1, min(n_paths, int(_BATCH_BYTES // (8 * n_fine * m))))
    return [(lo, min(lo + batch, n_paths)) for lo in range(0, n_paths, batch)]


def _batch_increments(base_seed, lo, hi, m, L, h_fine):
    """Stack per-path grids into one (B, m, 2**L) block."""
    n_fine = 1 << L
    out = np.empty((hi - lo, m, n_fine))
    for i, p in enumerate(range(lo, hi)):
        out[i] = generate(base_seed, p, m, L, h_fine).increments
    return out


def _run_terminal(scheme, x0, h, incr):
    """Advance a batch to the last increment; incr has shape (B, m, n)."""
    x = np.broadcast_to(x0, (incr.shape[0], x0.shape[-1])).copy()
    n = incr.shape[-1]
    for k in range(n):
        x = scheme.step(x, h, incr[:, :, k])
    return x


def simulate_path(model, scheme, x0, h, n_steps, grid):
    """Integrate one trajectory of n_steps steps of size h.

    The grid must supply at least n_steps increments once aggregated to
    step h (h must be a power-of-two multiple of the grid's fine step).

    Returns:
        (n_steps + 1, d) array with x0 in the first row.
    """
    x0 = np.asarray(x0, dtype=float)
    if n_steps == 0:
        return x0[None, :].copy()
    ratio = h / grid.h_fine
    factor = round(ratio)
    if not math.isclose(ratio, factor, rel_tol=1e-9) or not _is_pow2(factor):
        raise ValueError(
            f"h = {h} is not a power-of-two multiple of h_fine = {grid.h_fine}"
        )
    incr = aggregate(grid, factor)
    if incr.shape[-1] < n_steps:
        raise ValueError(
            f"grid supplies {incr.shape[-1]} increments at step {h}, "
            f"need {n_steps}"
        )
    traj = np.empty((n_steps + 1, x0.shape[-1]))
    traj[0] = x0
    x = x0
    for k in range(n_steps):
        x = scheme.step(x, h, incr[:, k])
        traj[k + 1] = x
    return traj


def _build(cfg):
    model = build_model(cfg.model, cfg.params)
    scheme = make_scheme(cfg.scheme, model, truncation=cfg.truncation)
    return model, scheme


def strong_order(cfg):
    """Root mean-square error at t_end per step size, with fitted slope.

    The reference is the same scheme run at h_min / ref_factor on the
    coupled Brownian path. Per-h standard errors come from the path-wise
    squared errors (delta method on the square root). If every rms sits
    at rounding level the fit is flagged degenerate and the slope is
    NaN.
    """
    model, scheme = _build(cfg)
    m = _noise_count(model)
    counts = [_steps_for(cfg.t_end, h) for h in cfg.h_list]
    if any(not _is_pow2(n) for n in counts):
        raise ValueError(f"step counts {counts} must be powers of two")
    n_fine = max(counts) * cfg.ref_factor
    L = n_fine.bit_length() - 1
    h_fine = cfg.t_end / n_fine

    def run_batch(lo, hi):
        incr = _batch_increments(cfg.base_seed, lo, hi, m, L, h_fine)
        x_ref = _run_terminal(scheme, cfg.x0, h_fine, incr)
        sq = np.empty((hi - lo, len(counts)))
        for j, (h, n) in enumerate(zip(cfg.h_list, counts)):
            coarse = aggregate(incr, n_fine // n)
            x_h = _run_terminal(scheme, cfg.x0, h, coarse)
            sq[:, j] = np.sum((x_h - x_ref) ** 2, axis=-1)
        return sq

    ranges = _batch_ranges(cfg.n_paths, n_fine, m)
    workers = min(resolve_threads(cfg.threads), len(ranges))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            blocks = list(pool.map(lambda r: run_batch(*r), ranges))
    else:
        blocks = [run_batch(*r) for r in ranges]
    sq = np.concatenate(blocks, axis=0)

    mean_sq = sq.mean(axis=0)
    rms = np.sqrt(mean_sq)
    if cfg.n_paths > 1:
        se_mean = sq.std(axis=0, ddof=1) / np.sqrt(cfg.n_paths)
    else:
        se_mean = np.zeros_like(mean_sq)
    with np.errstate(divide="ignore", invalid="ignore"):
        stderr = np.where(rms > 0.0, se_mean / (2.0 * np.maximum(rms, 1e-300)), 0.0)

    degenerate = bool(np.all(rms < 1e-12))
    if degenerate:
        slope, intercept = float("nan"), float("nan")
    else:
        slope, intercept = fit_loglog(cfg.h_list, rms)
    return ConvergenceTable(
        h=np.asarray(cfg.h_list), rms=rms, stderr=stderr,
        slope=slope, intercept=intercept, degenerate=degenerate,
    )


def expectation_growth(cfg):
    """Sample mean of H1 = 0.5 (x1^2 + omega^2 x2^2) along the ensemble.

    Uses the first (single) entry of h_list. The model must be an
    oscillator-family model so that omega is defined.
    """
    model, scheme = _build(cfg)
    if getattr(model, "kind", None) != "oscillator":
        raise ValueError("expectation_growth needs an oscillator-family model")
    omega = model.params["omega"]
    h = cfg.h
    n = _steps_for(cfg.t_end, h)
    L = max(0, (n - 1).bit_length())  # smallest power of two >= n
    m = _noise_count(model)

    def run_batch(lo, hi):
        incr = _batch_increments(cfg.base_seed, lo, hi, m, L, h)
        x = np.broadcast_to(cfg.x0, (hi - lo, 2)).copy()
        s1 = np.empty(n + 1)
        s2 = np.empty(n + 1)
        h1 = 0.5 * (x[:, 0] ** 2 + omega * omega * x[:, 1] ** 2)
        s1[0], s2[0] = h1.sum(), (h1 * h1).sum()
        for k in range(n):
            x = scheme.step(x, h, incr[:, :, k])
            h1 = 0.5 * (x[:, 0] ** 2 + omega * omega * x[:, 1] ** 2)
            s1[k + 1], s2[k + 1] = h1.sum(), (h1 * h1).sum()
        return s1, s2

    ranges = _batch_ranges(cfg.n_paths, 1 << L, m)
    workers = min(resolve_threads(cfg.threads), len(ranges))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda r: run_batch(*r), ranges))
    else:
        parts = [run_batch(*r) for r in ranges]
    s1 = sum(p[0] for p in parts)
    s2 = sum(p[1] for p in parts)
    P = cfg.n_paths
    mean = s1 / P
    if P > 1:
        var = np.maximum(s2 / P - mean**2, 0.0) * P / (P - 1)
        stderr = np.sqrt(var / P)
    else:
        stderr = np.zeros_like(mean)
    return GrowthReport(t=h * np.arange(n + 1), mean_h1=mean, stderr=stderr)


SWEEP_COMPONENTS = ("x1", "x2")


def frequency_sweep(cfg, omega_list, schemes=("sedg", "sem")):
    """One-step rms error against frequency at fixed h.

    For each omega, every path takes a single step of size h (the first
    h_list entry) from x0 under each scheme, and is compared with the
    same scheme run at h / ref_factor on the coupled path. RMS errors
    are recorded per state component, and a log-log slope of error
    against omega is fitted per (scheme, component).
    """
    h = cfg.h
    ref = cfg.ref_factor
    L = ref.bit_length() - 1
    h_fine = h / ref
    rows = []
    errors = {}
    for omega in omega_list:
        params = dict(cfg.params)
        params["omega"] = float(omega)
        model = build_model(cfg.model, params)
        sq = {name: np.zeros(2) for name in schemes}
        for lo, hi in _batch_ranges(cfg.n_paths, ref, 1):
            incr = _batch_increments(cfg.base_seed, lo, hi, 1, L, h_fine)
            total = aggregate(incr, ref)
            for name in schemes:
                scheme = make_scheme(name, model, truncation=cfg.truncation)
                x_ref = _run_terminal(scheme, cfg.x0, h_fine, incr)
                x_h = scheme.step(
                    np.broadcast_to(cfg.x0, (hi - lo, 2)).copy(), h, total[:, :, 0]
                )
                sq[name] += np.sum((x_h - x_ref) ** 2, axis=0)
        for name in schemes:
            rms = np.sqrt(sq[name] / cfg.n_paths)
            for ci, comp in enumerate(SWEEP_COMPONENTS):
                rows.append((float(omega), name, comp, float(rms[ci])))
                errors.setdefault((name, comp), []).append(float(rms[ci]))
    slopes = {}
    for key, errs in errors.items():
        slopes[key], _ = fit_loglog(list(omega_list), errs)
    return SweepTable(rows=rows, slopes=slopes)
