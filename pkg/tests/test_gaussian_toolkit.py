import math

import numpy as np
import pytest
from hypothesis import given, seed, settings
from hypothesis import strategies as st

from toda_cft.core import gaussian_toolkit as gt
from toda_cft.core.errors import CertificateViolation, InputError


class CrossProduct(gt.Functional):
    """-x_a x_b across blocks; claims a certificate it does not have."""

    certified = True
    name = "cross-product"

    def __call__(self, x):
        return -x[:, 0, 0] * x[:, 1, 0]


def test_model_validation():
    with pytest.raises(InputError):
        gt.SmallGaussianModel(np.array([[1.0, 0.5], [0.0, 1.0]]), blocks=2, block_size=1)
    with pytest.raises(InputError):
        gt.SmallGaussianModel(np.array([[1.0, 2.0], [2.0, 1.0]]), blocks=2, block_size=1)
    with pytest.raises(InputError):
        gt.SmallGaussianModel(np.eye(3), blocks=2, block_size=1)
    with pytest.raises(InputError):
        gt.SmallGaussianModel(np.eye(65), blocks=65, block_size=1)


def test_partition_decouple_keeps_marginals():
    model = gt.two_block_chaos_model(0.5, points=4)
    decoupled = model.decoupled()
    np.testing.assert_array_equal(decoupled.covariance[:4, :4], model.covariance[:4, :4])
    np.testing.assert_array_equal(decoupled.covariance[4:, 4:], model.covariance[4:, 4:])
    assert not np.any(decoupled.covariance[:4, 4:])
    assert model.partition_decouple([[0, 1]]).covariance.tolist() == model.covariance.tolist()


@pytest.mark.parametrize("groups", [[[0]], [[0], [0, 1]], [[0], [2]]])
def test_partition_must_cover_every_block_once(groups):
    with pytest.raises(InputError):
        gt.two_block_exponential_model(0.3).partition_decouple(groups)


def test_singular_model_samples_on_its_support():
    x = gt.two_block_exponential_model(1.0).sample(50, seed=2)
    np.testing.assert_allclose(x[:, 0, 0], -x[:, 1, 0], atol=1e-6)


def test_exponential_expectation():
    model = gt.two_block_exponential_model(0.4)
    assert gt.ExponentialFunctional().expectation(model) == pytest.approx(math.exp(0.6))


@pytest.mark.parametrize("c", [0.0, 0.4, 1.0])
def test_kahane_exponential(c):
    report = gt.kahane_compare(gt.two_block_exponential_model(c), gt.ExponentialFunctional(), 20000, seed=4)
    assert report.passed
    assert abs(report.lhs - math.exp(1.0 - c)) <= 4.0 * report.lhs_stderr + 1e-12
    assert report.rhs == pytest.approx(math.e, rel=0.1)


def test_kahane_two_block_chaos():
    model = gt.two_block_chaos_model(0.5)
    report = gt.kahane_compare(model, gt.MassPowerFunctional(model), 20000, seed=6)
    assert report.passed
    assert report.lhs <= report.rhs


def test_uncertified_functional_is_refused():
    with pytest.raises(CertificateViolation):
        gt.kahane_compare(gt.two_block_exponential_model(0.2), gt.BoxIndicator([-1, -1], [1, 1]), 100, seed=0)


def test_false_certificate_is_caught():
    with pytest.raises(CertificateViolation, match="Mixed partial"):
        gt.check_certificate(gt.two_block_exponential_model(0.2), CrossProduct(), seed=0)


def test_girsanov_for_a_quadratic():
    rng = np.random.default_rng(8)
    root = rng.normal(size=(3, 3))
    model = gt.SmallGaussianModel(root @ root.T, blocks=3, block_size=1)
    functional = gt.QuadraticFunctional(0.5, rng.normal(size=3), rng.normal(size=(3, 3)))
    report = gt.girsanov_verify(model, np.array([0.0, 0.3, 0.0]), functional, 20000, seed=3)
    assert report.passed
    assert report.closed_form_gap <= 1e-10 * max(1.0, abs(report.closed_form_rhs))
    assert all(abs(z) <= 4.0 for z in report.closed_form_z_scores)


def test_girsanov_for_a_box():
    model = gt.two_block_chaos_model(0.3, points=3)
    box = gt.BoxIndicator(np.full(6, -0.5), np.full(6, 1.5))
    report = gt.girsanov_verify(model, np.full(6, 0.2), box, 20000, seed=5)
    assert report.passed
    assert report.closed_form_gap is None


@pytest.mark.parametrize("weight", [-1, 2, [1.0, 2.0, 3.0]])
def test_girsanov_rejects_bad_weights(weight):
    with pytest.raises(InputError):
        gt.girsanov_verify(gt.two_block_exponential_model(0.2), weight, gt.ExponentialFunctional(), 10, seed=0)


@seed(5)
@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=1, max_value=6), st.integers(min_value=0, max_value=2**32 - 1))
def test_girsanov_closed_form(dimension, draw):
    rng = np.random.default_rng(draw)
    root = rng.normal(size=(dimension, dimension))
    model = gt.SmallGaussianModel(root @ root.T, blocks=dimension, block_size=1)
    functional = gt.QuadraticFunctional(rng.normal(), rng.normal(size=dimension), rng.normal(size=(dimension, dimension)))
    lhs, rhs = gt.girsanov_closed_form(model, rng.normal(size=dimension), functional)
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(rhs))


def test_girsanov_report_fails_when_monte_carlo_misses_the_closed_form():
    report = gt.GirsanovReport(
        lhs=1.0, lhs_stderr=0.01, rhs=1.0, rhs_stderr=0.01, z_score=0.0, closed_form_lhs=1.2, closed_form_rhs=1.2
    )
    assert report.closed_form_gap == 0.0
    assert report.closed_form_z_scores == pytest.approx((-20.0, -20.0))
    assert not report.passed
    assert report.to_dict()["closed_form_z_scores"] == report.closed_form_z_scores
