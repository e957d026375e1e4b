import math

import numpy as np
import pytest

from sedgkit.dgrad import ScalarField
from sedgkit.integrators import (
    FixedPointConfig,
    FixedPointError,
    SCHEME_NAMES,
    euler_maruyama_step,
    fixed_point_solve,
    make_scheme,
    milstein_step,
    oscillator_step_jacobian,
    sedg_langevin_step,
    sedg_oscillator_step,
    sedg_poisson_step,
    sedg_step,
    sem_step,
)
from sedgkit.integrators import _langevin_coeffs
from sedgkit.models import (
    LangevinLgModel,
    LgSdeModel,
    PoissonLgModel,
    make_damped_oscillator,
    make_nonlinear_oscillator,
    make_oscillator,
    make_wind_poisson,
)
from sedgkit.wiener import TruncationPolicy, clip_bound


def zero_field(dim):
    return ScalarField(
        dim=dim,
        value=lambda x: np.zeros(np.shape(x)[:-1]),
        grad=lambda x: np.zeros(np.shape(x)),
        hess=lambda x: np.zeros(np.shape(x) + (dim,)),
    )


J2 = np.array([[0.0, 1.0], [-1.0, 0.0]])


# ---------------------------------------------------------------- fixed point

def test_fixed_point_identity_map():
    x0 = np.array([1.0, -2.0])
    out = fixed_point_solve(lambda x: x, x0)
    assert np.array_equal(out, x0)


def test_fixed_point_affine_contraction():
    c = np.array([0.5, 1.0])
    out = fixed_point_solve(lambda x: 0.5 * x + c, np.array([1.0, 1.0]))
    np.testing.assert_allclose(out, 2.0 * c, rtol=0, atol=1e-12)


def test_fixed_point_divergence_raises_with_diagnostics():
    with pytest.raises(FixedPointError) as exc:
        fixed_point_solve(lambda x: 2.0 * x + 1.0, np.array([1.0]))
    err = exc.value
    assert err.iterations == 100
    assert err.residual > 1.0
    assert err.n_failed == 1


def test_fixed_point_batched_rows_freeze_independently():
    # row 0 is an easy contraction, row 1 a slow one: results must match
    # the rows solved alone, bit for bit
    def slow_fast(x):
        out = np.empty_like(x)
        out[..., 0] = 0.1 * x[..., 0] + 1.0
        out[..., 1] = 0.9 * x[..., 1] + 1.0
        return out

    both = fixed_point_solve(slow_fast, np.zeros((1, 2)))[0]
    np.testing.assert_allclose(both, [1.0 / 0.9, 10.0], atol=1e-11)


def test_fixed_point_config_validation():
    with pytest.raises(ValueError):
        FixedPointConfig(abs_tol=0.0)
    with pytest.raises(ValueError):
        FixedPointConfig(max_iter=0)


# ------------------------------------------------------------------- schemes

def test_sedg_matches_oscillator_closed_form():
    model = make_oscillator(50.0, 2.0)
    rng = np.random.default_rng(1)
    for _ in range(100):
        x = rng.normal(size=2)
        h = float(rng.uniform(0.005, 0.1))
        dw = float(rng.normal() * math.sqrt(h))
        a = sedg_step(model, x, h, dw)
        b = sedg_oscillator_step(50.0, 2.0, x, h, dw)
        assert np.abs(a - b).max() < 1e-12


def test_sedg_pure_linear_model_is_exact_exponential_flow():
    from sedgkit.linalg import expm

    A = np.array([[0.0, -4.0], [1.0, 0.0]])
    model = LgSdeModel(d=2, m=1, A=A, Q1=np.zeros((2, 2)),
                       Q2=[np.zeros((2, 2))], U=zero_field(2),
                       V=[zero_field(2)])
    x = np.array([0.3, -0.2])
    h = 0.05
    out = sedg_step(model, x, h, 0.77)
    np.testing.assert_allclose(out, expm(A * h) @ x, atol=1e-14)


def test_sedg_on_langevin_embedding_matches_specialized_step():
    model = make_damped_oscillator(1.0, 0.3)
    lg = model.as_lg_sde()
    rng = np.random.default_rng(2)
    for _ in range(100):
        x = rng.normal(size=2)
        h = float(rng.uniform(0.01, 0.1))
        dw = float(rng.normal() * math.sqrt(h))
        a = sedg_langevin_step(model, x, h, dw)
        b = sedg_step(lg, x, h, dw)
        assert np.abs(a - b).max() < 1e-10


def test_poisson_step_pure_linear_conserves_quadratic_form():
    from sedgkit.linalg import expm

    Q = np.array([[0.0, -1.0], [1.0, 0.0]])
    M = 1.3 * np.eye(2)
    model = PoissonLgModel(d=2, Q=Q, M=M, U=zero_field(2), sigma=0.4)
    x = np.array([0.7, -0.1])
    h, dw = 2.0**-4, 0.2
    out = sedg_poisson_step(model, x, h, dw)
    want = expm(Q @ M * (h + 0.4 * dw)) @ x
    np.testing.assert_allclose(out, want, atol=1e-12)
    assert abs(out @ M @ out - x @ M @ x) < 1e-12


def test_poisson_step_energy_identity_per_step():
    model = make_wind_poisson(1.0, 0.3)
    rng = np.random.default_rng(3)
    x = np.array([0.1, 1.0])
    h = 2.0**-4
    for _ in range(50):
        dw = float(rng.normal() * math.sqrt(h))
        x_new = sedg_poisson_step(model, x, h, dw)
        assert abs(model.energy(x_new) - model.energy(x)) <= 10.0 * 1e-13
        x = x_new


def test_poisson_step_deterministic_special_case():
    model = make_wind_poisson(1.0, 0.0)
    x = np.array([0.1, 1.0])
    out = sedg_poisson_step(model, x, 2.0**-4, 0.9)  # sigma=0: dW inert
    assert abs(model.energy(out) - model.energy(x)) < 1e-13


def test_langevin_linear_decoupled_case():
    model = LangevinLgModel(dbar=1, nu=2.0, M=np.eye(1), U0=zero_field(1),
                            sigma=np.array([0.0]))
    p, q = 0.8, -0.3
    h = 0.25
    out = sedg_langevin_step(model, np.array([p, q]), h, 0.4)
    alpha = math.exp(-2.0 * h)
    nubar = (1.0 - alpha) / 2.0
    np.testing.assert_allclose(out, [alpha * p, q + nubar * p], atol=1e-14)


def test_langevin_coefficients_against_mpmath():
    import mpmath

    mpmath.mp.dps = 50
    for nu, h in [(1.0, 0.1), (2.0, 2.0**-5), (1e-3, 0.5), (1e-8, 0.5),
                  (1e-12, 0.25), (5.0, 1e-9)]:
        alpha, alpha_half, nubar, c2, c3 = _langevin_coeffs(nu, h)
        z = mpmath.mpf(nu) * mpmath.mpf(h)
        nubar_m = (1 - mpmath.e**(-z)) / nu
        c2_m = (nubar_m - h) / nu
        c3_m = (1 - mpmath.e**(-z / 2)) / nu
        assert abs(nubar - float(nubar_m)) <= 1e-14 * abs(float(nubar_m))
        assert abs(c2 - float(c2_m)) <= 1e-12 * abs(float(c2_m))
        assert abs(c3 - float(c3_m)) <= 1e-14 * abs(float(c3_m))


def test_langevin_small_nu_limits():
    # nubar -> h and (nubar - h)/nu -> -h^2/2 as nu -> 0
    h = 0.5
    _, _, nubar, c2, _ = _langevin_coeffs(1e-10, h)
    assert abs(nubar - h) < 1e-10
    assert abs(c2 - (-h * h / 2.0)) < 1e-10


def test_oscillator_step_quarter_turn():
    w = 4.0
    h = math.pi / (2.0 * w)
    out = sedg_oscillator_step(w, 1.0, np.array([1.0, 0.0]), h, 0.0)
    np.testing.assert_allclose(out, [0.0, 1.0 / w], atol=1e-15)


def test_oscillator_jacobian_symplectic():
    rng = np.random.default_rng(4)
    for _ in range(100):
        w = float(rng.uniform(0.5, 100.0))
        h = float(rng.uniform(0.001, 0.2))
        G = oscillator_step_jacobian(w, h)
        assert np.abs(G.T @ J2 @ G - J2).max() < 1e-12
        assert abs(np.linalg.det(G) - 1.0) < 1e-15


def test_oscillator_one_step_energy_growth():
    # E[H1(X1)] = H1(x0) + sigma^2 h / 2
    omega, sigma, h = 50.0, 2.0, 2.0**-6
    x0 = np.array([0.0, 0.02])
    rng = np.random.default_rng(5)
    n = 100_000
    dw = rng.normal(size=n) * math.sqrt(h)
    out = sedg_oscillator_step(omega, sigma, x0, h, dw)
    h1 = 0.5 * (out[:, 0] ** 2 + omega**2 * out[:, 1] ** 2)
    want = 0.5 + sigma**2 * h / 2.0
    se = h1.std(ddof=1) / math.sqrt(n)
    assert abs(h1.mean() - want) < 3.0 * se


def test_sem_step_values_and_jacobian():
    out = sem_step(3.0, 1.0, np.array([1.0, 0.0]), 0.1, 0.0)
    np.testing.assert_allclose(out, [1.0, 0.1], atol=1e-16)
    # triangular product structure: det = 1 exactly up to rounding
    w, h = 7.0, 0.05
    G = np.array([[1.0, -w * w * h], [h, 1.0 - w * w * h * h]])
    assert abs(np.linalg.det(G) - 1.0) < 1e-13
    assert np.abs(G.T @ J2 @ G - J2).max() < 1e-12


def test_milstein_additive_noise_has_no_correction():
    model = make_oscillator(5.0, 2.0)
    x = np.array([0.4, -0.1])
    h, dw = 0.02, 0.3
    out = milstein_step(model, x, h, dw)
    want = x + h * (model.A @ x) + np.array([2.0, 0.0]) * dw
    np.testing.assert_allclose(out, want, atol=1e-14)


def test_milstein_wind_poisson_against_straight_line_oracle():
    lg = make_wind_poisson(1.0, 0.3).as_lg_sde()
    x = np.array([0.1, 1.0])
    h, dw = 2.0**-4, 0.05
    got = milstein_step(lg, x, h, dw)

    # independent straight-line arithmetic for this exact model
    sig, lam = 0.3, 1.0
    a, b = x
    Q = np.array([[0.0, -1.0], [1.0, 0.0]])
    gradU = np.array([0.5 * (a * a - b * b), -a * b])
    hessU = np.array([[a, -b], [-b, -a]])
    drift = Q @ (lam * x + gradU)           # QM x + Q grad U
    gradH = lam * x + gradU
    g = sig * (Q @ gradH)                   # Q2 grad V with V = energy
    hessH = lam * np.eye(2) + hessU
    corr = sig * (Q @ (hessH @ g))          # Q2 HessV (Q2 grad V)
    want = x + h * drift + g * dw + 0.5 * corr * dw * dw
    np.testing.assert_allclose(got, want, atol=1e-14)


def test_milstein_rejects_multinoise_and_missing_hessian():
    model = make_oscillator(5.0, 2.0)
    two_noise = LgSdeModel(d=2, m=2, A=model.A, Q1=model.Q1,
                           Q2=[np.eye(2), np.eye(2)], U=model.U,
                           V=[model.V[0], model.V[0]])
    with pytest.raises(ValueError):
        milstein_step(two_noise, np.zeros(2), 0.1, np.zeros(2))


def test_euler_maruyama_step():
    model = make_oscillator(5.0, 2.0)
    x = np.array([0.4, -0.1])
    out = euler_maruyama_step(model, x, 0.02, 0.3)
    want = x + 0.02 * (model.A @ x) + np.array([2.0, 0.0]) * 0.3
    np.testing.assert_allclose(out, want, atol=1e-14)


def test_sem_scheme_on_nonlinear_oscillator():
    model = make_nonlinear_oscillator(10.0)
    scheme = make_scheme("sem", model)
    x = np.array([0.5, 0.2])
    h, dw = 0.03125, 0.04
    out = scheme.step(x, h, dw)
    p_new = 0.5 + h * (-100.0 * 0.2 + math.sin(0.2)) + math.cos(0.2) * dw
    np.testing.assert_allclose(out, [p_new, 0.2 + h * p_new], atol=1e-14)


def test_sem_scheme_on_langevin_model():
    model = make_damped_oscillator(1.0, 0.3)
    scheme = make_scheme("sem", model)
    x = np.array([0.5, 0.2])
    h, dw = 0.03125, 0.04
    p_new = 0.5 + h * (-0.2 - 1.0 * 0.5) + 0.3 * dw
    np.testing.assert_allclose(scheme.step(x, h, dw),
                               [p_new, 0.2 + h * p_new], atol=1e-14)


# -------------------------------------------------------- scheme object layer

def test_propagator_cache_consistency():
    from sedgkit.linalg import expm, phi1_times_h

    model = make_oscillator(5.0, 2.0)
    scheme = make_scheme("sedg", model)
    x = np.array([0.1, 0.2])
    scheme.step(x, 0.125, 0.01)
    E, phi_q1, eh_q2 = scheme._props(0.125)
    assert np.abs(E - expm(model.A * 0.125)).max() < 1e-14
    assert np.abs(phi_q1 - phi1_times_h(model.A, 0.125) @ model.Q1).max() < 1e-14
    assert scheme._props(0.125) is scheme._props(0.125)
    scheme.step(x, 0.0625, 0.01)
    assert 0.0625 in scheme._cache and 0.125 in scheme._cache


def test_step_determinism():
    model = make_wind_poisson(1.0, 0.3)
    scheme = make_scheme("sedg_poisson", model)
    x = np.array([0.1, 1.0])
    a = scheme.step(x, 2.0**-4, 0.07)
    b = scheme.step(x, 2.0**-4, 0.07)
    assert np.array_equal(a, b)


@pytest.mark.parametrize("name,model_maker", [
    ("sedg_poisson", lambda: make_wind_poisson(1.0, 0.3)),
    ("sedg_langevin", lambda: make_damped_oscillator(1.0, 0.3)),
    ("sedg", lambda: make_nonlinear_oscillator(10.0)),
])
def test_batched_step_matches_solo_bitwise(name, model_maker):
    model = model_maker()
    scheme = make_scheme(name, model)
    rng = np.random.default_rng(6)
    xs = rng.normal(size=(5, 2))
    h = 2.0**-5
    dws = rng.normal(size=5) * math.sqrt(h)
    batch = scheme.step(xs, h, dws)
    for i in range(5):
        solo = scheme.step(xs[i], h, dws[i])
        assert np.array_equal(batch[i], solo)


def test_truncation_clips_inside_implicit_schemes():
    model = make_wind_poisson(1.0, 0.3)
    h = 2.0**-4
    policy = TruncationPolicy(enabled=True, k=2.0)
    clipped = make_scheme("sedg_poisson", model, truncation=policy)
    plain = make_scheme("sedg_poisson", model,
                        truncation=TruncationPolicy(enabled=False))
    x = np.array([0.1, 1.0])
    huge = 50.0
    bound = clip_bound(h, 2.0) * math.sqrt(h)
    a = clipped.step(x, h, huge)
    b = plain.step(x, h, bound)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, plain.step(x, h, huge))


def test_make_scheme_defaults_truncation_by_implicitness():
    wp = make_wind_poisson(1.0, 0.3)
    osc = make_oscillator(50.0, 2.0)
    assert make_scheme("sedg_poisson", wp).truncation.enabled
    assert not make_scheme("sedg_oscillator", osc).truncation.enabled
    assert not make_scheme("sem", osc).truncation.enabled


def test_make_scheme_registry_and_errors():
    wp = make_wind_poisson(1.0, 0.3)
    do = make_damped_oscillator(1.0, 0.3)
    osc = make_oscillator(50.0, 2.0)
    nl = make_nonlinear_oscillator(10.0)
    assert make_scheme("sedg", wp).name == "sedg"  # auto-embedded
    assert make_scheme("milstein", wp).name == "milstein"
    assert make_scheme("euler_maruyama", do).name == "euler_maruyama"
    assert make_scheme("sedg_oscillator", osc).implicit is False
    with pytest.raises(ValueError):
        make_scheme("no_such_scheme", wp)
    with pytest.raises(ValueError):
        make_scheme("sedg_poisson", do)
    with pytest.raises(ValueError):
        make_scheme("sedg_langevin", wp)
    with pytest.raises(ValueError):
        make_scheme("sedg_oscillator", nl)  # no closed form without sigma
    assert set(SCHEME_NAMES) == {
        "sedg", "sedg_poisson", "sedg_langevin", "sedg_oscillator",
        "sem", "milstein", "euler_maruyama",
    }


def test_with_fp_returns_independent_copy():
    model = make_wind_poisson(1.0, 0.3)
    scheme = make_scheme("sedg_poisson", model)
    tight = scheme.with_fp(FixedPointConfig(abs_tol=1e-14, rel_tol=1e-14,
                                            max_iter=200))
    assert tight is not scheme
    assert tight.fp.abs_tol == 1e-14
    assert scheme.fp.abs_tol == 1e-13
    x = np.array([0.1, 1.0])
    assert np.abs(tight.step(x, 2.0**-4, 0.05)
                  - scheme.step(x, 2.0**-4, 0.05)).max() < 1e-12


def test_step_rejects_nonpositive_h():
    scheme = make_scheme("sedg_oscillator", make_oscillator(5.0, 1.0))
    with pytest.raises(ValueError):
        scheme.step(np.zeros(2), 0.0, 0.0)
