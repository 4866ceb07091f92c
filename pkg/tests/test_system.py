import numpy as np
import pytest

from infoplan.system import (
    LinearGaussianSystem,
    MatrixPolynomial,
    SensingModel,
    SensingSegment,
    VerificationSpec,
    segment_at,
)


def test_constant_polynomial_derivative_is_zero():
    spec = VerificationSpec.window(np.eye(2), 1.0, 2.0)
    assert np.all(spec.mv_at(1.5, 1) == 0)
    assert np.all(spec.mv_at(1.5, 3) == 0)


def test_linear_blend_derivative_and_endpoints(rng):
    Mi, Mf = rng.standard_normal((2, 3)), rng.standard_normal((2, 3))
    spec = VerificationSpec.linear_blend(Mi, Mf, 2.0, 5.0)
    assert np.array_equal(spec.mv_at(2.0), Mi)
    assert np.allclose(spec.mv_at(5.0), Mf, atol=1e-15)
    assert np.allclose(spec.mv_at(3.3, 1), (Mf - Mi) / 3.0)
    assert np.allclose(spec.mv_at(3.5), 0.5 * (Mi + Mf))


def test_quadratic_finite_difference(rng):
    P = MatrixPolynomial(rng.standard_normal((3, 2, 2)))
    t, h = 0.7, 1e-4
    fd = (P(t + h) - P(t - h)) / (2 * h)
    assert np.allclose(fd, P(t, 1), atol=1e-7)
    assert np.allclose(P(t, 2), 2 * P.coeffs[2])


def test_mv_outside_support_rejected():
    spec = VerificationSpec.window(np.eye(2), 1.0, 2.0)
    with pytest.raises(ValueError):
        spec.mv_at(0.5)
    point = VerificationSpec.point(np.eye(2), 1.0)
    with pytest.raises(ValueError):
        point.mv_at(1.1)


def test_spec_validation():
    with pytest.raises(ValueError):
        VerificationSpec.window(np.eye(2), 2.0, 2.0)
    with pytest.raises(ValueError):
        VerificationSpec.point(np.eye(2), -1.0)


def test_system_validation():
    with pytest.raises(ValueError):
        LinearGaussianSystem(np.eye(2), np.eye(3), np.eye(3), np.eye(2))
    with pytest.raises(np.linalg.LinAlgError):
        LinearGaussianSystem(np.eye(2), np.eye(2), np.eye(2), -np.eye(2))
    s = LinearGaussianSystem(lambda t: t * np.eye(2), np.eye(2), np.eye(2), np.eye(2))
    assert not s.time_invariant
    assert np.allclose(s.A_at(2.0), 2 * np.eye(2))


def test_sensing_model_covers_horizon():
    sm = SensingModel(np.ones((1, 2)), [[0.5]])
    segs = sm.segments(None, 1.5)
    assert segment_at(segs, 1.5) is segs[0]
    assert np.allclose(segs[0].info_at(0.3), 2 * np.ones((2, 2)))
    with pytest.raises(ValueError):
        segment_at(segs, 2.0)
    assert isinstance(segs[0], SensingSegment)
