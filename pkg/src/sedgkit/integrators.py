"""One-step maps: exponential discrete-gradient schemes and baselines.

The exponential discrete-gradient (EDG) family propagates the linear
part of the drift exactly through matrix exponentials and discretizes
the gradient parts with a symmetric discrete gradient:

    X_{n+1} = exp(A h) X_n + h phi(A h) Q1 DG_U(X_n, X_{n+1})
              + sum_r exp(A h / 2) Q2_r DG_Vr(X_n, X_{n+1}) dW_r .

The scheme is generally implicit; the fixed point is solved by plain
Picard iteration seeded at X_n (the maps are contractions for the small
steps used here). Specialized variants exist for the Poisson and
Langevin structures and for the linear oscillator, where the scheme has
a closed form. Baselines: symplectic Euler-Maruyama, Stratonovich
Milstein and plain Euler-Maruyama.

All step maps are vectorized: states may carry leading batch dimensions,
shape (..., d); every batch row is stepped independently, and masked
fixed-point iteration guarantees a path's output does not depend on
which other paths share its batch.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import linalg
from .dgrad import symmetric_dg_cached
from .models import LangevinLgModel, LgSdeModel, PoissonLgModel, ito_drift
from .wiener import TruncationPolicy, truncate_raw_increments


@dataclass(frozen=True)
class FixedPointConfig:
    """Stopping rule for the Picard iteration of implicit steps."""

    abs_tol: float = 1e-13
    rel_tol: float = 1e-13
    max_iter: int = 100

    def __post_init__(self):
        if self.abs_tol <= 0.0 or self.rel_tol < 0.0:
            raise ValueError("fixed-point tolerances must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


_DEFAULT_FP = FixedPointConfig()


class FixedPointError(RuntimeError):
    """Raised when the Picard iteration fails to contract.

    Attributes:
        iterations: iterations performed before giving up.
        residual: largest remaining update norm among unconverged rows.
        n_failed: number of unconverged batch rows.
    """

    def __init__(self, iterations, residual, n_failed=1):
        self.iterations = iterations
        self.residual = residual
        self.n_failed = n_failed
        super().__init__(
            f"fixed-point iteration did not converge: {n_failed} state(s) "
            f"with residual {residual:.3e} after {iterations} iterations"
        )


# after this many pure Picard sweeps the update is averaged with the
# current iterate, which breaks the rare period-2 roundoff cycles that
# divided differences can produce just above the tolerance
_DAMP_AFTER = 40
# residuals that stagnate within this factor of the tolerance are the
# roundoff floor of the map itself (cancellation in a near-coincident
# divided difference); such rows are accepted rather than aborted
_STALL_ACCEPT = 1e3


def fixed_point_solve(map_fn, x0, cfg=_DEFAULT_FP):
    """Solve x = map_fn(x) by Picard iteration from x0.

    Batched: x0 may have shape (..., d); every row iterates until its
    own update norm drops below abs_tol + rel_tol * |x|, then freezes,
    so results are bit-identical regardless of how rows are batched.
    Iterations beyond a fixed stagnation window are damped (averaged
    with the previous iterate); damping keeps the contraction convergent
    and removes two-cycles at the roundoff floor. Rows whose residual
    stagnates at that floor (within 1e3 of the tolerance, typically once
    per ~1e7 steps) are accepted at the floor; anything above it raises.

    Returns:
        array of x0's shape with |map_fn(x) - x| at tolerance (or at the
        map's roundoff floor for stagnated rows).

    Raises:
        FixedPointError: if any row fails to converge within max_iter.
    """
    x = np.asarray(x0, dtype=float).copy()
    active = np.ones(x.shape[:-1], dtype=bool)
    delta = np.zeros(x.shape[:-1])
    tol = None
    for it in range(1, cfg.max_iter + 1):
        fx = map_fn(x)
        r = fx - x
        delta = np.sqrt((r * r).sum(axis=-1))
        tol = cfg.abs_tol + cfg.rel_tol * np.sqrt((x * x).sum(axis=-1))
        # NaN residuals compare False on both sides and stay active
        conv_now = active & (delta <= tol)
        if it <= _DAMP_AFTER:
            x = np.where(active[..., None], fx, x)
        else:
            upd = np.where(conv_now[..., None], fx, 0.5 * (x + fx))
            x = np.where(active[..., None], upd, x)
        active = active & ~conv_now
        if not active.any():
            return x
    stuck = active & ~(delta <= _STALL_ACCEPT * tol)
    if not stuck.any():
        return x
    raise FixedPointError(
        iterations=cfg.max_iter,
        residual=float(np.max(delta[stuck])) if stuck.ndim else float(delta),
        n_failed=int(np.count_nonzero(stuck)),
    )


def _dw_component(dW, r, m):
    """Extract noise component r from dW given m noises.

    Accepts scalars, shape (m,), or batched (..., m); for m == 1 also
    bare (...,) arrays.
    """
    dW = np.asarray(dW, dtype=float)
    if m == 1:
        if dW.ndim and dW.shape[-1] == 1:
            return dW[..., 0]
        return dW
    if dW.ndim == 0 or dW.shape[-1] != m:
        raise ValueError(f"dW must provide {m} noise components, got shape {dW.shape}")
    return dW[..., r]


class StepScheme:
    """Base class for one-step maps (X_n, h, dW_n) -> X_{n+1}.

    Subclasses implement _step. Propagators that depend only on (A, h)
    are cached per step size; a cache entry is recomputed whenever h
    changes. Steps are deterministic functions of their inputs.
    """

    name = "base"
    implicit = False

    def __init__(self, fp=None, truncation=None):
        self.fp = fp if fp is not None else _DEFAULT_FP
        self.truncation = truncation
        self._cache = {}

    def _props(self, h):
        entry = self._cache.get(h)
        if entry is None:
            entry = self._make_props(h)
            self._cache[h] = entry
        return entry

    def _make_props(self, h):
        return ()

    def _clip(self, dW, h):
        return truncate_raw_increments(dW, h, self.truncation)

    def with_fp(self, fp):
        """A copy of this scheme with a different fixed-point config."""
        import copy

        dup = copy.copy(self)
        dup.fp = fp
        dup._cache = {}
        return dup

    def step(self, x, h, dW):
        x = np.asarray(x, dtype=float)
        h = float(h)
        if h <= 0.0:
            raise ValueError(f"h must be > 0, got {h}")
        return self._step(x, h, dW)


class SedgScheme(StepScheme):
    """Exponential discrete-gradient scheme for a general model."""

    name = "sedg"
    implicit = True

    def __init__(self, model, fp=None, truncation=None):
        if not isinstance(model, LgSdeModel):
            raise ValueError("sedg needs a general-form model")
        super().__init__(fp, truncation)
        self.model = model

    def _make_props(self, h):
        A = self.model.A
        E = linalg.expm(A * h)
        phi_q1 = linalg.phi1_times_h(A, h) @ self.model.Q1
        eh = linalg.expm(A * (0.5 * h))
        eh_q2 = [eh @ q2 for q2 in self.model.Q2]
        return E, phi_q1, eh_q2

    def _step(self, x, h, dW):
        model = self.model
        E, phi_q1, eh_q2 = self._props(h)
        dws = [np.asarray(self._clip(_dw_component(dW, r, model.m), h))[..., None]
               for r in range(model.m)]
        base = np.einsum("ij,...j->...i", E, x)
        f_u = np.asarray(model.U.value(x), dtype=float)
        f_vs = [np.asarray(v.value(x), dtype=float) for v in model.V]

        def assemble(dg_u, dg_vs):
            out = base + np.einsum("ij,...j->...i", phi_q1, dg_u)
            for r in range(model.m):
                out = out + np.einsum("ij,...j->...i", eh_q2[r], dg_vs[r]) * dws[r]
            return out

        def step_map(xp):
            dg_u = symmetric_dg_cached(model.U, x, f_u, xp)
            dg_vs = [symmetric_dg_cached(v, x, f_vs[r], xp)
                     for r, v in enumerate(model.V)]
            return assemble(dg_u, dg_vs)

        # DG(x, x) = grad(x) exactly, so the first Picard iterate is explicit
        first = assemble(model.U.grad(x), [v.grad(x) for v in model.V])
        return fixed_point_solve(step_map, first, self.fp)


class SedgPoissonScheme(StepScheme):
    """Energy-preserving exponential DG scheme for Poisson systems.

    One step reads X_{n+1} = E X_n + (E - I) M^{-1} DG_U(X_n, X_{n+1})
    with E = exp(QM (h + sigma dW_n)): the stochastic part of the linear
    flow rides inside the exponent, which is what makes the energy
    0.5 X'MX + U(X) exactly invariant at the converged point.
    """

    name = "sedg_poisson"
    implicit = True

    def __init__(self, model, fp=None, truncation=None):
        if not isinstance(model, PoissonLgModel):
            raise ValueError("sedg_poisson needs a Poisson-structured model")
        super().__init__(fp, truncation)
        self.model = model
        self._A = model.Q @ model.M
        self._M_inv = np.linalg.inv(model.M)

    def _exponentials(self, theta):
        ms = self._A * np.asarray(theta)[..., None, None]
        if self.model.d == 2:
            return linalg.expm_2x2_batch(ms)
        if ms.ndim == 2:
            return linalg.expm(ms)
        import scipy.linalg

        return scipy.linalg.expm(ms)

    def _step(self, x, h, dW):
        model = self.model
        dw = self._clip(_dw_component(dW, 0, 1), h)
        theta = h + model.sigma * np.asarray(dw)
        E = self._exponentials(theta)
        K = (E - np.eye(model.d)) @ self._M_inv
        base = np.einsum("...ij,...j->...i", E, x)
        f_u = np.asarray(model.U.value(x), dtype=float)

        def step_map(xp):
            dg = symmetric_dg_cached(model.U, x, f_u, xp)
            return base + np.einsum("...ij,...j->...i", K, dg)

        first = base + np.einsum("...ij,...j->...i", K, model.U.grad(x))
        return fixed_point_solve(step_map, first, self.fp)


def _langevin_coeffs(nu, h):
    """(e^{-nu h}, e^{-nu h/2}, nubar, (nubar - h)/nu, (1 - e^{-nu h/2})/nu)
    with nubar = (1 - e^{-nu h})/nu.

    Switches to 4-term series when nu*h < 1e-6: the closed form of
    (nubar - h)/nu cancels catastrophically there.
    """
    z = nu * h
    alpha = math.exp(-z)
    alpha_half = math.exp(-0.5 * z)
    if z < 1e-6:
        nubar = h * (1.0 - z / 2.0 + z * z / 6.0 - z * z * z / 24.0)
        c2 = h * h * (-0.5 + z / 6.0 - z * z / 24.0 + z * z * z / 120.0)
        c3 = 0.5 * h * (1.0 - z / 4.0 + z * z / 24.0 - z * z * z / 192.0)
    else:
        nubar = -math.expm1(-z) / nu
        c2 = (nubar - h) / nu
        c3 = -math.expm1(-0.5 * z) / nu
    return alpha, alpha_half, nubar, c2, c3


class SedgLangevinScheme(StepScheme):
    """Exponential DG scheme for Langevin-type systems.

    The momentum update is explicit given Q_{n+1}; only the position
    half is solved by fixed point:

        P' = e^{-nu h} P - nubar DG_U0(Q, Q') + e^{-nu h/2} sigma dW
        Q' = Q + nubar M^{-1} P + ((nubar - h)/nu) M^{-1} DG_U0(Q, Q')
             + ((1 - e^{-nu h/2})/nu) M^{-1} sigma dW

    with nubar = (1 - e^{-nu h})/nu.
    """

    name = "sedg_langevin"
    implicit = True

    def __init__(self, model, fp=None, truncation=None):
        if not isinstance(model, LangevinLgModel):
            raise ValueError("sedg_langevin needs a Langevin-structured model")
        super().__init__(fp, truncation)
        self.model = model
        self._M_inv = model.M_inv

    def _make_props(self, h):
        return _langevin_coeffs(self.model.nu, h)

    def _step(self, x, h, dW):
        model = self.model
        db = model.dbar
        alpha, alpha_half, nubar, c2, c3 = self._props(h)
        dw = self._clip(_dw_component(dW, 0, 1), h)
        p, q = x[..., :db], x[..., db:]
        sig_dw = np.asarray(dw)[..., None] * model.sigma
        minv = self._M_inv

        def apply_minv(v):
            return np.einsum("ij,...j->...i", minv, v)

        q_forcing = q + nubar * apply_minv(p) + c3 * apply_minv(sig_dw)
        f_q = np.asarray(model.U0.value(q), dtype=float)

        def q_map(qp):
            dg = symmetric_dg_cached(model.U0, q, f_q, qp)
            return q_forcing + c2 * apply_minv(dg)

        q_first = q_forcing + c2 * apply_minv(model.U0.grad(q))
        q_new = fixed_point_solve(q_map, q_first, self.fp)
        dg = symmetric_dg_cached(model.U0, q, f_q, q_new)
        p_new = alpha * p - nubar * dg + alpha_half * sig_dw
        return np.concatenate([p_new, q_new], axis=-1)


class SedgOscillatorScheme(StepScheme):
    """Closed-form exponential DG step for the linear oscillator.

    x1' = cos(h w) x1 - w sin(h w) x2 + sigma cos(h w / 2) dW
    x2' = sin(h w)/w x1 + cos(h w) x2 + sigma sin(h w / 2)/w dW

    Explicit and exactly symplectic: the one-step Jacobian is the
    rotation-like matrix with determinant cos^2 + sin^2 = 1.
    """

    name = "sedg_oscillator"
    implicit = False

    def __init__(self, omega, sigma, fp=None, truncation=None):
        if omega <= 0.0:
            raise ValueError(f"omega must be > 0, got {omega}")
        super().__init__(fp, truncation)
        self.omega = float(omega)
        self.sigma = float(sigma)

    def _step(self, x, h, dW):
        w = self.omega
        dw = self._clip(_dw_component(dW, 0, 1), h)
        c, s = math.cos(h * w), math.sin(h * w)
        ch, sh = math.cos(0.5 * h * w), math.sin(0.5 * h * w)
        x1, x2 = x[..., 0], x[..., 1]
        out = np.empty(np.broadcast_shapes(x.shape[:-1], np.shape(dw)) + (2,))
        out[..., 0] = c * x1 - w * s * x2 + self.sigma * ch * dw
        out[..., 1] = (s / w) * x1 + c * x2 + (self.sigma * sh / w) * dw
        return out


class SemOscillatorScheme(StepScheme):
    """Symplectic Euler-Maruyama for oscillator-family models.

    x1' = x1 + h * drift_1(x) + g_1(x) dW,  x2' = x2 + h * x1'.

    Uses the Stratonovich drift directly: for this family the Ito
    correction vanishes (the noise potential is either linear or a
    function of the position coordinate only while noise enters the
    velocity).
    """

    name = "sem"
    implicit = False

    def __init__(self, model, fp=None, truncation=None):
        if not (isinstance(model, LgSdeModel) and model.kind == "oscillator"):
            raise ValueError("sem needs an oscillator-family or Langevin model")
        super().__init__(fp, truncation)
        self.model = model

    def _step(self, x, h, dW):
        dw = self._clip(_dw_component(dW, 0, 1), h)
        drift1 = self.model.drift(x)[..., 0]
        g1 = self.model.diffusion(0, x)[..., 0]
        out = np.empty(np.broadcast_shapes(x.shape[:-1], np.shape(dw)) + (2,))
        out[..., 0] = x[..., 0] + h * drift1 + g1 * dw
        out[..., 1] = x[..., 1] + h * out[..., 0]
        return out


class SemLangevinScheme(StepScheme):
    """Symplectic Euler-Maruyama for Langevin-type systems.

    P' = P + h (-grad U0(Q) - nu P) + sigma dW,  Q' = Q + h M^{-1} P'.
    Additive noise, so Ito and Stratonovich drifts coincide.
    """

    name = "sem"
    implicit = False

    def __init__(self, model, fp=None, truncation=None):
        if not isinstance(model, LangevinLgModel):
            raise ValueError("this SEM variant needs a Langevin model")
        super().__init__(fp, truncation)
        self.model = model
        self._M_inv = model.M_inv

    def _step(self, x, h, dW):
        model = self.model
        db = model.dbar
        dw = self._clip(_dw_component(dW, 0, 1), h)
        p, q = x[..., :db], x[..., db:]
        sig_dw = np.asarray(dw)[..., None] * model.sigma
        p_new = p + h * (-model.U0.grad(q) - model.nu * p) + sig_dw
        q_new = q + h * np.einsum("ij,...j->...i", self._M_inv, p_new)
        return np.concatenate([p_new, q_new], axis=-1)


class MilsteinScheme(StepScheme):
    """Stratonovich Milstein baseline for single-noise models.

    X' = X + (A X + Q1 grad U) h + g dW + 0.5 (dg/dx g) dW^2 with
    g = Q2 grad V and dg/dx g = Q2 Hess V Q2 grad V. Strong order 1.
    """

    name = "milstein"
    implicit = False

    def __init__(self, model, fp=None, truncation=None):
        if not isinstance(model, LgSdeModel):
            raise ValueError("milstein needs a general-form model")
        if model.m != 1:
            raise ValueError("milstein supports a single noise only")
        if model.hessV is None:
            raise ValueError("milstein needs the Hessian of the diffusion potential")
        super().__init__(fp, truncation)
        self.model = model

    def _step(self, x, h, dW):
        model = self.model
        dw = self._clip(_dw_component(dW, 0, 1), h)
        g = model.diffusion(0, x)
        hg = np.einsum("...ij,...j->...i", model.hessV[0](x), g) @ model.Q2[0].T
        dw = np.asarray(dw)[..., None]
        return x + h * model.drift(x) + g * dw + 0.5 * hg * dw * dw


class EulerMaruyamaScheme(StepScheme):
    """Euler-Maruyama on the Ito form; strong order 1/2 comparison line."""

    name = "euler_maruyama"
    implicit = False

    def __init__(self, model, fp=None, truncation=None):
        if not isinstance(model, LgSdeModel):
            raise ValueError("euler_maruyama needs a general-form model")
        if model.hessV is None:
            raise ValueError("euler_maruyama needs Hessians for the Ito drift")
        super().__init__(fp, truncation)
        self.model = model

    def _step(self, x, h, dW):
        model = self.model
        out = x + h * ito_drift(model, x)
        for r in range(model.m):
            dw = self._clip(_dw_component(dW, r, model.m), h)
            out = out + model.diffusion(r, x) * np.asarray(dw)[..., None]
        return out


def oscillator_step_jacobian(omega, h):
    """Analytic one-step Jacobian of the closed-form oscillator step."""
    c, s = math.cos(h * omega), math.sin(h * omega)
    return np.array([[c, -omega * s], [s / omega, c]])


# ---------------------------------------------------------------------------
# free-function forms (no caching; convenient for tests and notebooks)

def sedg_step(model, x, h, dW, fp=None, truncation=None):
    """One general exponential-DG step; see SedgScheme."""
    return SedgScheme(model, fp, truncation).step(x, h, dW)


def sedg_poisson_step(model, x, h, dW, fp=None, truncation=None):
    """One energy-preserving Poisson step; see SedgPoissonScheme."""
    return SedgPoissonScheme(model, fp, truncation).step(x, h, dW)


def sedg_langevin_step(model, x, h, dW, fp=None, truncation=None):
    """One Langevin exponential-DG step; see SedgLangevinScheme."""
    return SedgLangevinScheme(model, fp, truncation).step(x, h, dW)


def sedg_oscillator_step(omega, sigma, x, h, dW):
    """One closed-form oscillator step; see SedgOscillatorScheme."""
    return SedgOscillatorScheme(omega, sigma).step(x, h, dW)


def sem_step(omega, sigma, x, h, dW):
    """One symplectic Euler-Maruyama step for the linear oscillator:
    x1' = x1 - omega^2 h x2 + sigma dW, x2' = x2 + h x1'."""
    x = np.asarray(x, dtype=float)
    dw = _dw_component(dW, 0, 1)
    out = np.empty(np.broadcast_shapes(x.shape[:-1], np.shape(dw)) + (2,))
    out[..., 0] = x[..., 0] - omega * omega * h * x[..., 1] + sigma * dw
    out[..., 1] = x[..., 1] + h * out[..., 0]
    return out


def milstein_step(model, x, h, dW):
    """One Stratonovich-Milstein step; see MilsteinScheme."""
    return MilsteinScheme(model).step(x, h, dW)


def euler_maruyama_step(model, x, h, dW):
    """One Euler-Maruyama step on the Ito form; see EulerMaruyamaScheme."""
    return EulerMaruyamaScheme(model).step(x, h, dW)


SCHEME_NAMES = ("sedg", "sedg_poisson", "sedg_langevin", "sedg_oscillator",
                "sem", "milstein", "euler_maruyama")


def make_scheme(name, model=None, fp=None, truncation=None):
    """Build a StepScheme by name for a given model.

    Native Poisson/Langevin models are embedded into the general form
    automatically where the requested scheme needs it. When
    ``truncation`` is None, implicit schemes default to clipping enabled
    (k = 2) and explicit schemes to clipping disabled; pass an explicit
    TruncationPolicy to override.
    """
    if name not in SCHEME_NAMES:
        raise ValueError(f"unknown scheme {name!r} (expected one of {SCHEME_NAMES})")

    def default_trunc(implicit):
        if truncation is not None:
            return truncation
        return TruncationPolicy(enabled=implicit, k=2.0)

    if name == "sedg":
        if hasattr(model, "as_lg_sde"):
            model = model.as_lg_sde()
        return SedgScheme(model, fp, default_trunc(True))
    if name == "sedg_poisson":
        return SedgPoissonScheme(model, fp, default_trunc(True))
    if name == "sedg_langevin":
        return SedgLangevinScheme(model, fp, default_trunc(True))
    if name == "sedg_oscillator":
        params = getattr(model, "params", {})
        if getattr(model, "kind", None) != "oscillator" or "sigma" not in params:
            raise ValueError("sedg_oscillator needs the linear oscillator model")
        return SedgOscillatorScheme(params["omega"], params["sigma"],
                                    fp, default_trunc(False))
    if name == "sem":
        if isinstance(model, LangevinLgModel):
            return SemLangevinScheme(model, fp, default_trunc(False))
        return SemOscillatorScheme(model, fp, default_trunc(False))
    if name == "milstein":
        if hasattr(model, "as_lg_sde"):
            model = model.as_lg_sde()
        return MilsteinScheme(model, fp, default_trunc(False))
    if hasattr(model, "as_lg_sde"):
        model = model.as_lg_sde()
    return EulerMaruyamaScheme(model, fp, default_trunc(False))
