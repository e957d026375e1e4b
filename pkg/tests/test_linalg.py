import numpy as np
import pytest

from sedgkit.linalg import expm, expm_2x2_batch, phi1_times_h


def test_expm_zero_is_identity():
    assert np.array_equal(expm(np.zeros((3, 3))), np.eye(3))


def test_expm_oscillator_rotation_block():
    # exp(h*[[0,-w^2],[1,0]]) = [[cos(wh), -w sin(wh)], [sin(wh)/w, cos(wh)]]
    h, w = 0.1, 3.0
    m = h * np.array([[0.0, -w * w], [1.0, 0.0]])
    wh = w * h
    ref = np.array([[np.cos(wh), -w * np.sin(wh)],
                    [np.sin(wh) / w, np.cos(wh)]])
    assert np.abs(expm(m) - ref).max() < 1e-12


def test_expm_diagonal():
    m = np.diag([0.3, -1.7])
    assert np.abs(expm(m) - np.diag(np.exp([0.3, -1.7]))).max() < 1e-14


@pytest.mark.parametrize("d", [2, 4])
def test_expm_times_expm_neg_is_identity(d):
    rng = np.random.default_rng(31 + d)
    for _ in range(25):
        m = rng.normal(size=(d, d))
        norm = np.linalg.norm(m)
        if norm > 5.0:
            m *= 5.0 / norm
        assert np.abs(expm(m) @ expm(-m) - np.eye(d)).max() < 1e-10


def test_expm_of_skew_is_orthogonal():
    rng = np.random.default_rng(7)
    for d in (2, 3, 4):
        a = rng.normal(size=(d, d))
        s = a - a.T
        q = expm(s)
        assert np.abs(q.T @ q - np.eye(d)).max() < 1e-10


def test_expm_rejects_bad_input():
    with pytest.raises(ValueError):
        expm(np.array([[np.nan, 0.0], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        expm(np.ones((2, 3)))


def test_phi_at_zero_matrix():
    h = 0.7
    assert np.array_equal(phi1_times_h(np.zeros((2, 2)), h), h * np.eye(2))


def test_phi_diagonal_matches_scalar_formula():
    lam = np.array([0.8, -2.5, 1e-3])
    h = 0.37
    got = phi1_times_h(np.diag(lam), h)
    want = np.diag((np.exp(lam * h) - 1.0) / lam)
    assert np.abs(got - want).max() < 1e-13


def test_phi_langevin_block_closed_forms():
    # integral of exp(As) over [0,h] for A = [[-nu,0],[1,0]] has blocks
    # [[nubar, 0], [(h - nubar)/nu, h]] with nubar = (1 - e^{-nu h})/nu,
    # i.e. the lower-left block is -(1/nu)(nubar - h)
    nu, h = 1.0, 0.5
    a = np.array([[-nu, 0.0], [1.0, 0.0]])
    got = phi1_times_h(a, h)
    nubar = (1.0 - np.exp(-nu * h)) / nu
    want = np.array([[nubar, 0.0], [(h - nubar) / nu, h]])
    assert np.abs(got - want).max() < 1e-13


def test_phi_singular_matrix_is_fine():
    # zero column: not invertible, the augmented form must still work
    a = np.array([[-1.0, 0.0], [1.0, 0.0]])
    got = phi1_times_h(a, 0.25)
    assert np.all(np.isfinite(got))


def test_phi_integral_identity():
    # A * (integral of exp(As) ds) + I = exp(A h)
    rng = np.random.default_rng(5)
    for _ in range(20):
        a = rng.normal(size=(3, 3))
        h = float(rng.uniform(0.05, 1.5))
        lhs = a @ phi1_times_h(a, h) + np.eye(3)
        assert np.abs(lhs - expm(a * h)).max() < 1e-10


def test_phi_rejects_bad_input():
    with pytest.raises(ValueError):
        phi1_times_h(np.eye(2), 0.0)
    with pytest.raises(ValueError):
        phi1_times_h(np.eye(2), -1.0)
    with pytest.raises(ValueError):
        phi1_times_h(np.full((2, 2), np.inf), 0.1)


def test_expm_2x2_batch_agrees_with_generic():
    rng = np.random.default_rng(11)
    mats = [rng.normal(size=(2, 2)) for _ in range(40)]
    # rotation-like, defective and diagonal corner cases
    mats.append(np.array([[0.0, -4.0], [4.0, 0.0]]))
    mats.append(np.array([[1.0, 1.0], [0.0, 1.0]]))
    mats.append(np.array([[2.0, 0.0], [0.0, 2.0]]))
    mats.append(np.zeros((2, 2)))
    batch = np.stack(mats)
    got = expm_2x2_batch(batch)
    for i, m in enumerate(mats):
        assert np.abs(got[i] - expm(m)).max() < 1e-12


def test_expm_2x2_batch_shape_check():
    with pytest.raises(ValueError):
        expm_2x2_batch(np.zeros((3, 3)))
