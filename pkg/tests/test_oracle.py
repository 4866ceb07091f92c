import numpy as np
import pytest
import scipy.linalg

from infoplan.mi import mi_windowed
from infoplan.oracle import (
    DiscreteJointModel,
    OracleSizeError,
    brute_mi,
    conditional_cov,
    joint_covariance,
    schur_conditional,
    van_loan,
)
from infoplan.smoother import p0_given_point
from infoplan.system import LinearGaussianSystem, SensingModel, VerificationSpec

from conftest import random_stable_system


def small_problem(rng):
    system, sensing = random_stable_system(rng, n=2, full_noise=True)
    spec = VerificationSpec.window(np.eye(2)[:1], 0.6, 1.0)
    return system, sensing, spec


def test_single_query_is_prior(rng):
    system, _ = random_stable_system(rng, n=3)
    J = joint_covariance(DiscreteJointModel(system), [(0.0, np.eye(3))])
    assert np.allclose(J, system.P0)


def test_noiseless_cross_block(rng):
    A = rng.standard_normal((3, 3))
    P0 = np.eye(3) + 0.1
    s = LinearGaussianSystem(A, np.zeros((3, 1)), [[1.0]], P0)
    J = joint_covariance(DiscreteJointModel(s), [(0.0, np.eye(3)), (0.7, np.eye(3))])
    Phi = scipy.linalg.expm(0.7 * A)
    assert np.allclose(J[:3, 3:], P0 @ Phi.T)


def test_query_order_is_irrelevant(rng):
    system, _ = random_stable_system(rng, n=3)
    m = DiscreteJointModel(system)
    q = [(0.5, np.eye(3)[:1]), (0.1, np.eye(3)), (0.9, np.ones((1, 3)))]
    J = joint_covariance(m, q)
    Jr = joint_covariance(m, q[::-1])
    perm = np.r_[4, 1, 2, 3, 0]
    assert np.allclose(J, Jr[np.ix_(perm, perm)])


def test_point_closed_form_two_orderings(rng):
    system, _ = random_stable_system(rng, n=3)
    M = np.eye(3)[:2]
    m = DiscreteJointModel(system)
    a = schur_conditional(m, (0.0, np.eye(3)), [(1.2, M)])
    J = joint_covariance(m, [(1.2, M), (0.0, np.eye(3))])
    perm = np.r_[2:5, 0:2]
    b = conditional_cov(J[np.ix_(perm, perm)], 3)
    assert np.allclose(a, b, atol=1e-12)
    assert np.allclose(a, p0_given_point(system, VerificationSpec.point(M, 1.2)), rtol=1e-6)


def test_conditioning_edge_cases(rng):
    system, _ = random_stable_system(rng, n=3)
    m = DiscreteJointModel(system)
    assert np.allclose(schur_conditional(m, (0.4, np.eye(3)), []),
                       joint_covariance(m, [(0.4, np.eye(3))]))
    assert np.allclose(schur_conditional(m, (0.0, np.eye(3)), [(0.0, np.eye(3))]), 0, atol=1e-10)


def test_superset_conditioning(rng):
    system, _ = random_stable_system(rng, n=3)
    m = DiscreteJointModel(system)
    few = [(0.5, np.eye(3)[:1])]
    many = few + [(1.0, np.eye(3)[1:2])]
    a = schur_conditional(m, (0.0, np.eye(3)), few)
    b = schur_conditional(m, (0.0, np.eye(3)), many)
    assert np.linalg.eigvalsh(a - b).min() >= -1e-12


def test_van_loan_scalar():
    Phi, Q = van_loan(np.array([[-1.0]]), np.array([[2.0]]), 0.5)
    assert abs(Phi[0, 0] - np.exp(-0.5)) < 1e-14
    assert abs(Q[0, 0] - (1 - np.exp(-1.0))) < 1e-14


def test_brute_mi_symmetric(rng):
    system, sensing, spec = small_problem(rng)
    segs = sensing.segments(None, 0.5)
    a = brute_mi(system, segs, spec, 0.5, dt=1e-2, m=30, order="zv")
    b = brute_mi(system, segs, spec, 0.5, dt=1e-2, m=30, order="vz")
    assert abs(a - b) <= 1e-9


def test_brute_mi_blind(rng):
    system, _, spec = small_problem(rng)
    blind = SensingModel(np.zeros((1, 2)), [[1.0]]).segments(None, 0.5)
    assert abs(brute_mi(system, blind, spec, 0.5, dt=1e-2, m=20)) < 1e-9


def test_brute_mi_dt_convergence(rng):
    system, sensing, spec = small_problem(rng)
    segs = sensing.segments(None, 0.5)
    vals = [brute_mi(system, segs, spec, 0.5, dt=dt, m=100) for dt in (2e-2, 1e-2, 5e-3, 2.5e-3)]
    steps = np.abs(np.diff(vals))
    assert steps[1] <= steps[0] / 2 * 1.05 and steps[2] <= steps[1] / 2 * 1.05
    cont = mi_windowed(system, sensing, None, spec, 0.5).total_mi
    assert abs(vals[-1] - cont) / cont < 1e-2


def test_size_cap(rng):
    system, sensing, spec = small_problem(rng)
    with pytest.raises(OracleSizeError, match="increase dt"):
        brute_mi(system, sensing.segments(None, 0.5), spec, 0.5, dt=1e-4, m=10, max_rows=4000)
