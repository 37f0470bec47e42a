import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cpabaug.class_model import (
    ClassModel,
    TangentSampleSet,
    close_under_inversion,
    fit_covariance,
    intrinsic_mean_gradient,
    log_density,
    principal_components,
    sample_transformation,
)
from cpabaug.transform import jacobian_sign_check

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False, width=64)


def sample_set(n, d, seed=0, label=3):
    return TangentSampleSet(label, np.random.default_rng(seed).standard_normal((n, d)))


def test_close_adds_negations():
    theta = np.array([[1.0, -2.0, 0.5]])
    closed = close_under_inversion(TangentSampleSet(0, theta))
    assert closed.closed_under_inversion
    np.testing.assert_array_equal(closed.thetas, [[1.0, -2.0, 0.5], [-1.0, 2.0, -0.5]])


def test_close_is_idempotent_and_doubles_generic_sets():
    s = sample_set(7, 4)
    closed = close_under_inversion(s)
    assert len(closed) == 14
    again = close_under_inversion(TangentSampleSet(0, closed.thetas))
    np.testing.assert_array_equal(again.thetas, closed.thetas)


def test_close_keeps_zero_vectors_single():
    closed = close_under_inversion(TangentSampleSet(0, np.zeros((3, 2))))
    assert len(closed) == 3


def test_gradient_small_cases():
    theta = np.array([0.1, 0.2, -0.3])
    np.testing.assert_array_equal(intrinsic_mean_gradient(TangentSampleSet(0, [theta])), theta)
    np.testing.assert_array_equal(intrinsic_mean_gradient(TangentSampleSet(0, [theta, theta])), 2 * theta)
    with pytest.raises(ValueError):
        intrinsic_mean_gradient(TangentSampleSet(0, np.zeros((0, 3))))


def test_gradient_matches_plain_sum():
    s = sample_set(20, 5)
    np.testing.assert_allclose(intrinsic_mean_gradient(s), s.thetas.sum(axis=0), atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 30), st.integers(1, 8)), elements=finite),
       st.randoms(use_true_random=False))
def test_lemma_closed_sets_have_exact_zero_gradient(thetas, rnd):
    closed = close_under_inversion(TangentSampleSet(0, thetas)).thetas
    order = list(range(len(closed)))
    rnd.shuffle(order)
    grad = intrinsic_mean_gradient(TangentSampleSet(0, closed[order], True))
    assert np.all(grad == 0.0)


def test_fit_requires_closure_and_two_samples():
    with pytest.raises(ValueError, match="closed"):
        fit_covariance(sample_set(5, 3))
    with pytest.raises(ValueError):
        fit_covariance(TangentSampleSet(0, np.zeros((1, 3)), True))
    with pytest.raises(ValueError):
        fit_covariance(close_under_inversion(sample_set(5, 3)), shrinkage=1.0)


def test_fit_zero_samples():
    m = fit_covariance(close_under_inversion(TangentSampleSet(0, np.zeros((4, 3)))))
    np.testing.assert_array_equal(m.sigma, np.zeros((3, 3)))


@pytest.mark.parametrize("s", [0.0, 0.3])
def test_fit_pair_formula(s):
    theta = np.array([1.0, 2.0, -1.0, 0.5])
    m = fit_covariance(close_under_inversion(TangentSampleSet(0, [theta])), shrinkage=s)
    expected = (1 - s) * np.outer(theta, theta) + s * theta @ theta / 4 * np.eye(4)
    np.testing.assert_allclose(m.sigma, expected, atol=1e-14)
    assert m.n_samples == 2


def test_fit_invariant_under_negation():
    s = sample_set(30, 6)
    a = fit_covariance(close_under_inversion(s))
    b = fit_covariance(close_under_inversion(TangentSampleSet(3, -s.thetas)))
    np.testing.assert_array_equal(a.sigma, b.sigma)


def full_rank_model(d=6, n=200, seed=0):
    return fit_covariance(close_under_inversion(sample_set(n, d, seed)))


def test_spectrum():
    m = full_rank_model()
    assert np.all(np.diff(m.eigenvalues) <= 0)
    assert np.all(m.eigenvalues >= 0)
    recon = m.eigenvectors @ np.diag(m.eigenvalues) @ m.eigenvectors.T
    assert np.abs(recon - m.sigma).max() < 1e-8
    assert np.abs(m.eigenvectors.T @ m.eigenvectors - np.eye(m.d)).max() < 1e-9


def test_log_density_values():
    m = full_rank_model()
    assert log_density(m, np.zeros(m.d)) == 0.0
    for i in range(m.d):
        v = m.eigenvectors[:, i] * np.sqrt(m.eigenvalues[i])
        assert abs(log_density(m, v) + 0.5) < 1e-10
    inv = np.linalg.inv(m.sigma)
    for theta in np.random.default_rng(1).standard_normal((10, m.d)):
        assert abs(log_density(m, theta) - (-0.5 * theta @ inv @ theta)) < 1e-8


def test_log_density_outside_support():
    theta = np.array([1.0, 0.0, 0.0])
    m = fit_covariance(close_under_inversion(TangentSampleSet(0, [theta])))
    assert m.rank == 1
    assert log_density(m, 2 * theta) == pytest.approx(-2.0)
    assert log_density(m, np.array([0.0, 1.0, 0.0])) == -np.inf


def test_sampling(basis):
    rng = np.random.default_rng(2)
    thetas = rng.standard_normal((400, basis.d)) * np.linspace(0.05, 0.5, basis.d)
    m = fit_covariance(close_under_inversion(TangentSampleSet(1, thetas)))
    T0 = sample_transformation(m, basis, np.random.default_rng(0), scale=0.0)
    assert not np.any(T0.theta)
    a = m.sample(basis, np.random.default_rng(9)).theta
    b = m.sample(basis, np.random.default_rng(9)).theta
    np.testing.assert_array_equal(a, b)

    draws = m.sample_theta(np.random.default_rng(3), size=100_000)
    emp = draws.T @ draws / len(draws)
    assert np.linalg.norm(emp - m.sigma) / np.linalg.norm(m.sigma) < 0.05
    chi2 = np.mean([-2 * log_density(m, t) for t in draws[:20_000]])
    assert abs(chi2 - m.rank) < 0.02 * m.rank


def test_principal_components():
    m = full_rank_model()
    pcs = principal_components(m, m.d)
    assert abs(sum(lam for lam, _ in pcs) - np.trace(m.sigma)) < 1e-10
    for _, v in pcs:
        assert v[np.argmax(np.abs(v))] > 0
    with pytest.raises(ValueError):
        principal_components(m, 0)
    with pytest.raises(ValueError):
        principal_components(m, m.d + 1)


def test_rank_one_principal_direction():
    theta = np.array([3.0, -1.0, 2.0])
    m = fit_covariance(close_under_inversion(TangentSampleSet(0, [theta])))
    lam, v = principal_components(m, 1)[0]
    assert abs(abs(v @ theta) / np.linalg.norm(theta) - 1) < 1e-12
    assert lam == pytest.approx(theta @ theta)


def test_principal_deformations_are_valid(basis, prior):
    rng = np.random.default_rng(4)
    thetas = prior.sample(rng, size=300) * 0.2
    m = fit_covariance(close_under_inversion(TangentSampleSet(2, thetas)))
    lam, v = principal_components(m, 1)[0]
    from cpabaug.transform import Transformation
    for sign in (-3, 3):
        assert jacobian_sign_check(Transformation(sign * np.sqrt(lam) * v, basis), 10)


def test_class_model_validation():
    with pytest.raises(ValueError):
        ClassModel(0, np.array([[1.0, 2.0], [0.0, 1.0]]), 2)
