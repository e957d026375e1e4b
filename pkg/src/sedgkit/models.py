"""Concrete SDE instances with linear-plus-gradient coefficients.

The general model family is

    dX = (A X + Q1 grad U(X)) dt + sum_r Q2_r grad V_r(X) o dW_r   (Stratonovich)

with constant matrices A, Q1, Q2_r and scalar potentials U, V_r. Two
structured families get native representations in addition to their
embedding into the general form:

* stochastic Poisson systems dX = Q (M X + grad U(X)) (dt + sigma o dW)
  with Q skew-symmetric, whose energy 0.5 X'MX + U(X) is invariant;
* Langevin-type systems dP = -grad U0(Q) dt - nu P dt + sigma o dW,
  dQ = M^{-1} P dt, which dissipate the symplectic form at rate nu.

Both natives provide ``as_lg_sde()`` so the general integrator can be
cross-checked against the specialized ones on identical vector fields.
"""

from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional

import numpy as np

from .dgrad import ScalarField


def _zero_field(dim):
    def value(x):
        return np.zeros(np.shape(x)[:-1])

    def grad(x):
        return np.zeros(np.shape(x))

    def hess(x):
        return np.zeros(np.shape(x) + (dim,))

    return ScalarField(dim=dim, value=value, grad=grad, hess=hess)


def _linear_field(coeffs):
    """Field c . x (zero Hessian)."""
    c = np.asarray(coeffs, dtype=float)
    dim = c.shape[0]

    def value(x):
        return np.einsum("...i,i->...", np.asarray(x, dtype=float), c)

    def grad(x):
        return np.broadcast_to(c, np.shape(x)).copy()

    def hess(x):
        return np.zeros(np.shape(x) + (dim,))

    return ScalarField(dim=dim, value=value, grad=grad, hess=hess)


@dataclass(frozen=True)
class Scalar1D:
    """A smooth function of one variable with derivatives, for the
    oscillator potentials that depend on the position coordinate only."""

    value: Callable[[np.ndarray], np.ndarray]
    deriv: Callable[[np.ndarray], np.ndarray]
    second: Optional[Callable[[np.ndarray], np.ndarray]] = None


@dataclass(frozen=True)
class LgSdeModel:
    """An SDE with linear-plus-gradient coefficients.

    Attributes:
        d: state dimension.
        m: number of independent noises.
        A: (d, d) drift matrix.
        Q1: (d, d) matrix in front of grad U.
        Q2: list of m (d, d) matrices in front of grad V_r.
        U: drift potential.
        V: list of m diffusion potentials.
        kind: structural tag ("generic", "oscillator", ...) used for
            scheme dispatch.
        params: construction parameters, kept for reporting.
    """

    d: int
    m: int
    A: np.ndarray
    Q1: np.ndarray
    Q2: list
    U: ScalarField
    V: list
    kind: str = "generic"
    params: dict = dc_field(default_factory=dict)

    @property
    def hessV(self):
        """Hessian callables of the diffusion potentials, or None if any
        potential lacks one."""
        hs = [f.hess for f in self.V]
        return None if any(h is None for h in hs) else hs

    def drift(self, x):
        """Stratonovich drift A x + Q1 grad U(x), batched."""
        x = np.asarray(x, dtype=float)
        # einsum keeps batched and single-state results bit-identical
        return (np.einsum("ij,...j->...i", self.A, x)
                + np.einsum("ij,...j->...i", self.Q1, self.U.grad(x)))

    def diffusion(self, r, x):
        """Diffusion vector g_r(x) = Q2_r grad V_r(x), batched."""
        x = np.asarray(x, dtype=float)
        return np.einsum("ij,...j->...i", self.Q2[r], self.V[r].grad(x))


def ito_drift(model, x):
    """Drift of the Ito form of a Stratonovich model.

    Returns A x + Q1 grad U(x) + 0.5 * sum_r Q2_r Hess V_r(x) g_r(x),
    where g_r = Q2_r grad V_r. Requires Hessians of every V_r.

    Raises:
        ValueError: if any diffusion potential has no Hessian.
    """
    hessV = model.hessV
    if hessV is None:
        raise ValueError(
            "ito_drift needs Hessians of all diffusion potentials; "
            f"model {model.kind!r} does not provide them"
        )
    x = np.asarray(x, dtype=float)
    out = model.drift(x)
    for r in range(model.m):
        g = model.diffusion(r, x)
        hg = np.einsum("...ij,...j->...i", hessV[r](x), g)
        out = out + 0.5 * np.einsum("ij,...j->...i", model.Q2[r], hg)
    return out


@dataclass(frozen=True)
class PoissonLgModel:
    """Stochastic Poisson system dX = Q (M X + grad U) (dt + sigma o dW).

    Q must be skew-symmetric and nonsingular, M symmetric and
    nonsingular. The energy 0.5 X'MX + U(X) is a first integral of the
    exact flow.
    """

    d: int
    Q: np.ndarray
    M: np.ndarray
    U: ScalarField
    sigma: float
    params: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=float)
        M = np.asarray(self.M, dtype=float)
        if not np.allclose(Q, -Q.T, atol=1e-12):
            raise ValueError("Q must be skew-symmetric")
        if not np.allclose(M, M.T, atol=1e-12):
            raise ValueError("M must be symmetric")
        if abs(np.linalg.det(Q)) < 1e-300 or abs(np.linalg.det(M)) < 1e-300:
            raise ValueError("Q and M must be nonsingular")

    def energy(self, x):
        """0.5 x'Mx + U(x), batched."""
        x = np.asarray(x, dtype=float)
        quad = 0.5 * np.einsum("...i,ij,...j->...", x, self.M, x)
        return quad + self.U.value(x)

    def energy_field(self):
        """The energy as a ScalarField (it is also the diffusion
        potential of the general-form embedding)."""
        M = self.M
        U = self.U

        def value(x):
            return self.energy(x)

        def grad(x):
            return np.asarray(x) @ M.T + U.grad(x)

        hess = None
        if U.hess is not None:
            def hess(x):  # noqa: F811
                return np.broadcast_to(M, np.shape(x) + (self.d,)) + U.hess(x)

        return ScalarField(dim=self.d, value=value, grad=grad, hess=hess)

    def as_lg_sde(self):
        """Embed into the general form: A = QM, Q1 = Q, single noise
        with Q2 = sigma*Q and diffusion potential equal to the energy."""
        A = self.Q @ self.M
        return LgSdeModel(
            d=self.d, m=1, A=A, Q1=self.Q.copy(),
            Q2=[self.sigma * self.Q],
            U=self.U, V=[self.energy_field()],
            kind="poisson_embedded", params=dict(self.params),
        )


@dataclass(frozen=True)
class LangevinLgModel:
    """Langevin-type system in (P, Q) variables.

    dP = -grad U0(Q) dt - nu P dt + sigma o dW(t),
    dQ = M^{-1} P dt,

    with nu > 0, M positive definite and a single noise. The state of
    the embedded general form is X = (P, Q).
    """

    dbar: int
    nu: float
    M: np.ndarray
    U0: ScalarField
    sigma: np.ndarray
    params: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        if self.nu <= 0.0:
            raise ValueError(f"nu must be > 0, got {self.nu}")
        M = np.asarray(self.M, dtype=float)
        if not np.allclose(M, M.T, atol=1e-12) or np.any(np.linalg.eigvalsh(M) <= 0):
            raise ValueError("M must be symmetric positive definite")

    @property
    def M_inv(self):
        return np.linalg.inv(self.M)

    def as_lg_sde(self):
        """Embed into the general form via the block structure
        A = [[-nu I, 0], [M^{-1}, 0]], Q1 = [[0, -I], [I, 0]],
        Q2 = I, U(X) = U0(Q), V(X) = sigma . P."""
        db = self.dbar
        d = 2 * db
        A = np.zeros((d, d))
        A[:db, :db] = -self.nu * np.eye(db)
        A[db:, :db] = self.M_inv
        Q1 = np.zeros((d, d))
        Q1[:db, db:] = -np.eye(db)
        Q1[db:, :db] = np.eye(db)
        U0 = self.U0

        def u_value(x):
            return U0.value(np.asarray(x)[..., db:])

        def u_grad(x):
            x = np.asarray(x)
            out = np.zeros(x.shape)
            out[..., db:] = U0.grad(x[..., db:])
            return out

        u_hess = None
        if U0.hess is not None:
            def u_hess(x):  # noqa: F811
                x = np.asarray(x)
                out = np.zeros(x.shape + (d,))
                out[..., db:, db:] = U0.hess(x[..., db:])
                return out

        U = ScalarField(dim=d, value=u_value, grad=u_grad, hess=u_hess)
        V = _linear_field(np.concatenate([np.asarray(self.sigma, dtype=float),
                                          np.zeros(db)]))
        return LgSdeModel(
            d=d, m=1, A=A, Q1=Q1, Q2=[np.eye(d)], U=U, V=[V],
            kind="langevin_embedded", params=dict(self.params),
        )


def make_oscillator(omega, sigma):
    """Linear stochastic oscillator with additive noise.

    dx1 = -omega^2 x2 dt + sigma o dW, dx2 = x1 dt. In the general form:
    A = [[0, -omega^2], [1, 0]], Q1 = 0, Q2 = I, V = sigma * x1.
    """
    if omega <= 0.0:
        raise ValueError(f"omega must be > 0, got {omega}")
    if sigma == 0.0:
        raise ValueError("sigma must be nonzero")
    A = np.array([[0.0, -omega * omega], [1.0, 0.0]])
    return LgSdeModel(
        d=2, m=1, A=A, Q1=np.zeros((2, 2)), Q2=[np.eye(2)],
        U=_zero_field(2), V=[_linear_field([sigma, 0.0])],
        kind="oscillator", params={"omega": float(omega), "sigma": float(sigma)},
    )


def make_wind_poisson(lam, sigma):
    """Averaged wind-induced oscillation model as a Poisson system.

    Q = [[0, -1], [1, 0]], M = lam * I and the cubic potential
    U = -0.5 * (x1 * x2^2 - x1^3 / 3).
    """
    if sigma < 0.0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    Q = np.array([[0.0, -1.0], [1.0, 0.0]])
    M = lam * np.eye(2)

    def value(x):
        x = np.asarray(x, dtype=float)
        a, b = x[..., 0], x[..., 1]
        return -0.5 * (a * b * b - a * a * a / 3.0)

    def grad(x):
        x = np.asarray(x, dtype=float)
        a, b = x[..., 0], x[..., 1]
        out = np.empty(x.shape)
        out[..., 0] = 0.5 * (a * a - b * b)
        out[..., 1] = -a * b
        return out

    def hess(x):
        x = np.asarray(x, dtype=float)
        a, b = x[..., 0], x[..., 1]
        out = np.empty(x.shape + (2,))
        out[..., 0, 0] = a
        out[..., 0, 1] = -b
        out[..., 1, 0] = -b
        out[..., 1, 1] = -a
        return out

    U = ScalarField(dim=2, value=value, grad=grad, hess=hess)
    return PoissonLgModel(
        d=2, Q=Q, M=M, U=U, sigma=float(sigma),
        params={"lambda": float(lam), "sigma": float(sigma)},
    )


def make_damped_oscillator(nu, sigma):
    """Damped linear oscillator as a Langevin-type system.

    M = I (one degree of freedom), U0(q) = 0.5 q^2, scalar noise
    amplitude sigma on the momentum equation.
    """
    if sigma == 0.0:
        raise ValueError("sigma must be nonzero")

    def value(q):
        return 0.5 * np.asarray(q, dtype=float)[..., 0] ** 2

    def grad(q):
        return np.asarray(q, dtype=float).copy()

    def hess(q):
        return np.ones(np.shape(q) + (1,))

    U0 = ScalarField(dim=1, value=value, grad=grad, hess=hess)
    return LangevinLgModel(
        dbar=1, nu=float(nu), M=np.eye(1), U0=U0,
        sigma=np.array([float(sigma)]),
        params={"nu": float(nu), "sigma": float(sigma)},
    )


_DEFAULT_U = Scalar1D(value=lambda s: -np.cos(s), deriv=np.sin, second=np.cos)
_DEFAULT_V = Scalar1D(value=np.sin, deriv=np.cos, second=lambda s: -np.sin(s))


def make_nonlinear_oscillator(omega, u_field=None, v_field=None):
    """Nonlinear oscillator dx1 = (-omega^2 x2 + f(x2)) dt + g(x2) o dW,
    dx2 = x1 dt, with f = u', g = v'.

    The defaults u = -cos, v = sin give f = sin, g = cos: smooth bounded
    potentials suitable for frequency sweeps. They are toolkit defaults,
    not canonical values.

    Args:
        omega: oscillation frequency, > 0.
        u_field, v_field: Scalar1D potentials of the position variable.
    """
    if omega <= 0.0:
        raise ValueError(f"omega must be > 0, got {omega}")
    u = u_field if u_field is not None else _DEFAULT_U
    v = v_field if v_field is not None else _DEFAULT_V
    A = np.array([[0.0, -omega * omega], [1.0, 0.0]])
    S = np.array([[0.0, 1.0], [0.0, 0.0]])  # routes d/dx2 into row 1

    def lift(s1d):
        def value(x):
            return s1d.value(np.asarray(x, dtype=float)[..., 1])

        def grad(x):
            x = np.asarray(x, dtype=float)
            out = np.zeros(x.shape)
            out[..., 1] = s1d.deriv(x[..., 1])
            return out

        hess = None
        if s1d.second is not None:
            def hess(x):  # noqa: F811
                x = np.asarray(x, dtype=float)
                out = np.zeros(x.shape + (2,))
                out[..., 1, 1] = s1d.second(x[..., 1])
                return out

        return ScalarField(dim=2, value=value, grad=grad, hess=hess)

    return LgSdeModel(
        d=2, m=1, A=A, Q1=S, Q2=[S.copy()], U=lift(u), V=[lift(v)],
        kind="oscillator", params={"omega": float(omega)},
    )


MODEL_NAMES = ("oscillator", "wind_poisson", "damped_oscillator",
               "nonlinear_oscillator")


def build_model(name, params=None):
    """Construct a model by registry name with keyword parameters.

    Known names: oscillator, wind_poisson, damped_oscillator,
    nonlinear_oscillator. Unknown names or parameters raise ValueError.
    """
    params = dict(params or {})
    if name == "oscillator":
        model = make_oscillator(params.pop("omega", 50.0), params.pop("sigma", 2.0))
    elif name == "wind_poisson":
        model = make_wind_poisson(params.pop("lambda", 1.0), params.pop("sigma", 0.3))
    elif name == "damped_oscillator":
        model = make_damped_oscillator(params.pop("nu", 1.0), params.pop("sigma", 0.3))
    elif name == "nonlinear_oscillator":
        model = make_nonlinear_oscillator(params.pop("omega", 10.0))
    else:
        raise ValueError(f"unknown model {name!r} (expected one of {MODEL_NAMES})")
    if params:
        raise ValueError(f"unknown parameters for model {name!r}: {sorted(params)}")
    return model
