import numpy as np
import pytest

from infoplan.core import TimeGrid
from infoplan.flows import lyapunov_forward, riccati_filter_forward
from infoplan.mi import (
    info_rate,
    mi_pointwise_filter,
    mi_pointwise_smoother,
    mi_windowed,
    rate_matrix,
)
from infoplan.system import LinearGaussianSystem, SensingModel, VerificationSpec

from conftest import random_stable_system


def test_no_sensing_no_information(rng):
    system, sensing = random_stable_system(rng, n=3)
    blind = SensingModel(np.zeros((1, 3)), [[1.0]])
    point = VerificationSpec.point(np.eye(3)[:2], 1.5)
    assert abs(mi_pointwise_smoother(system, blind, None, point, 1.0).total_mi) < 1e-9
    assert abs(mi_pointwise_filter(system, blind, None, point, 1.0)) < 1e-9
    window = VerificationSpec.window(np.eye(3), 1.0, 2.0)
    B = LinearGaussianSystem(system.A, np.eye(3), 0.5 * np.eye(3), system.P0)
    assert abs(mi_windowed(B, blind, None, window, 1.0).total_mi) < 1e-9


def test_zero_horizon_gives_zero(rng):
    system, sensing = random_stable_system(rng, n=2)
    point = VerificationSpec.point(np.eye(2), 1.0)
    assert abs(mi_pointwise_smoother(system, sensing, None, point, 0.0).total_mi) < 1e-12


def test_scalar_hand_case():
    s = LinearGaussianSystem([[0.0]], [[1.0]], [[1.0]], [[1.0]])
    sensing = SensingModel([[1.0]], [[1.0]])
    spec = VerificationSpec.point([[1.0]], 1.0)
    smoother = mi_pointwise_smoother(s, sensing, None, spec, 1.0).total_mi
    filt = mi_pointwise_filter(s, sensing, None, spec, 1.0)
    # Riccati q' = 1 - q^2 from 1 stays at 1; prior variance 2 at T=1
    assert abs(filt - 0.5 * np.log(2.0)) < 1e-10
    assert abs(smoother - filt) < 1e-8


def test_forms_agree_on_random_systems(rng):
    for _ in range(10):
        system, sensing = random_stable_system(rng)
        spec = VerificationSpec.point(rng.standard_normal((1, system.n_X)), 1.5)
        a = mi_pointwise_smoother(system, sensing, None, spec, 0.8).total_mi
        b = mi_pointwise_filter(system, sensing, None, spec, 0.8)
        assert abs(a - b) <= 1e-6 * b


def test_information_and_covariance_forms_agree(rng):
    system, sensing = random_stable_system(rng, n=4)
    spec = VerificationSpec.point(np.eye(4)[:2], 2.0)
    a = mi_pointwise_smoother(system, sensing, None, spec, 1.0).total_mi
    b = mi_pointwise_smoother(system, sensing, None, spec, 1.0, form="information").total_mi
    assert abs(a - b) <= 1e-8 * a


def test_time_varying_agreement(rng):
    A0 = rng.standard_normal((3, 3)) - 2 * np.eye(3)
    A1 = 0.3 * rng.standard_normal((3, 3))
    s = LinearGaussianSystem(lambda t: A0 + A1 * t, np.eye(3), 0.5 * np.eye(3), np.eye(3))
    sensing = SensingModel(rng.standard_normal((2, 3)), np.eye(2))
    spec = VerificationSpec.point(np.eye(3)[:1], 1.2)
    a = mi_pointwise_smoother(s, sensing, None, spec, 0.7).total_mi
    b = mi_pointwise_filter(s, sensing, None, spec, 0.7)
    assert abs(a - b) <= 1e-6 * b


def test_more_noise_less_information(rng):
    system, sensing = random_stable_system(rng, n=3)
    spec = VerificationSpec.point(np.eye(3), 1.0)
    noisy = SensingModel(sensing.C, 2.0 * sensing.Sigma_N)
    a = mi_pointwise_smoother(system, sensing, None, spec, 1.0).total_mi
    b = mi_pointwise_smoother(system, noisy, None, spec, 1.0).total_mi
    assert b < a


def test_full_state_window_equals_point(rng):
    system, sensing = random_stable_system(rng, n=3, full_noise=True)
    w = mi_windowed(system, sensing, None, VerificationSpec.window(np.eye(3), 1.0, 1.8), 0.6)
    p = mi_pointwise_smoother(system, sensing, None, VerificationSpec.point(np.eye(3), 1.0), 0.6)
    assert abs(w.total_mi - p.total_mi) <= 1e-6 * p.total_mi


def test_window_nesting_monotone(rng):
    system, sensing = random_stable_system(rng, n=3, full_noise=True)
    M = rng.standard_normal((2, 3))
    small = mi_windowed(system, sensing, None, VerificationSpec.window(M, 1.0, 1.5), 0.8)
    large = mi_windowed(system, sensing, None, VerificationSpec.window(M, 1.0, 2.5), 0.8)
    assert large.total_mi >= small.total_mi - 1e-8


def test_onthefly_trace_is_monotone_and_ends_at_total(rng):
    system, sensing = random_stable_system(rng, n=4, full_noise=True)
    rep = mi_windowed(system, sensing, None, VerificationSpec.window(np.eye(4)[:2], 1.0, 2.0), 1.0)
    assert np.min(np.diff(rep.onthefly)) >= -1e-9
    assert abs(rep.onthefly[0]) < 1e-12
    assert rep.onthefly[-1] == rep.total_mi
    assert np.all(rep.rate >= -1e-9)


def test_rate_matches_finite_difference(rng):
    system, sensing = random_stable_system(rng, n=3, full_noise=True)
    rep = mi_windowed(system, sensing, None, VerificationSpec.window(np.eye(3)[:2], 1.0, 2.0), 1.0)
    h = rep.times[1] - rep.times[0]
    fd = (rep.onthefly[2:] - rep.onthefly[:-2]) / (2 * h)
    mid = rep.rate[1:-1]
    assert np.max(np.abs(fd - mid) / np.abs(mid)) <= 1e-3


def test_rate_degenerate_cases(rng):
    G = rng.standard_normal((3, 3))
    Q = G @ G.T + np.eye(3)
    C = rng.standard_normal((2, 3))
    assert info_rate(Q, np.zeros((3, 3)), C, np.eye(2)) == 0.0
    D = np.eye(3)
    assert info_rate(Q, D, np.zeros((2, 3)), np.eye(2)) == 0.0
    assert info_rate(Q, D, C, np.eye(2)) > 0
    Pi = rate_matrix(Q, D)
    assert np.allclose(Pi, Pi.T)


def test_horizon_inside_window_rejected(rng):
    system, sensing = random_stable_system(rng, n=2, full_noise=True)
    with pytest.raises(ValueError):
        mi_windowed(system, sensing, None, VerificationSpec.window(np.eye(2), 1.0, 2.0), 1.5)


def test_filter_ordering_on_random_systems(rng):
    for _ in range(5):
        system, sensing = random_stable_system(rng)
        g = TimeGrid(0, 1, 1e-3)
        Q = riccati_filter_forward(system, sensing.segments(None, 1.0), system.P0, g)
        P = lyapunov_forward(system, system.P0, g)
        gaps = [np.linalg.eigvalsh(p - q).min() for p, q in zip(P.values, Q.values)]
        assert min(gaps) >= -1e-8
