import numpy as np
import pytest

from infoplan.chain import build_chain
from infoplan.mi import mi_pointwise_smoother, mi_windowed
from infoplan.scenarios import (
    HOURS_PER_MODEL_TIME,
    ScenarioError,
    SingerScenario,
    WeatherScenario,
    build_singer,
    build_weather,
    kernel_C,
    lorenz2003_rhs,
    lorenz_jacobian_local,
    pseudo_range_C,
    region_indices,
    spin_up,
)
from infoplan.system import VerificationSpec


def fd_jacobian_local(state, region, h=1e-6):
    idx = region_indices(region)
    J = np.zeros((len(idx), len(idx)))
    for c, (i, j) in enumerate(idx):
        e = np.zeros_like(state)
        e[i, j] = h
        d = (lorenz2003_rhs(state + e) - lorenz2003_rhs(state - e)) / (2 * h)
        J[:, c] = [d[a, b] for a, b in idx]
    return J


# ---- Singer -----------------------------------------------------------------

def test_singer_dynamics():
    sc = SingerScenario(2, np.zeros((3, 2)), np.zeros((2, 2)))
    ev = np.sort(np.linalg.eigvals(sc.A()).real)
    assert np.allclose(ev, [-0.4] * 4 + [0.0] * 8)
    B = sc.B()
    assert np.all(B[[0, 1, 3, 4, 6, 7, 9, 10]] == 0)
    assert np.all(B.sum(axis=0) == 1)


def test_singer_defaults_pass_through():
    system, sensing, spec, problem = build_singer({}, seed=0)
    sc = sensing.scenario
    assert system.n_X == 6
    assert (sc.kappa, sc.alpha, sc.beta) == (0.4, 2000.0, 100.0)
    assert np.allclose(system.Sigma_W, 0.07 ** 2 * np.eye(2))
    assert np.allclose(sensing.Sigma_N_for(5), 0.25 ** 2 * np.eye(5))
    assert problem.n_S == 20 and problem.m_s == 5
    assert (spec.T_i, spec.T_f) == (3.0, 5.0)
    assert np.array_equal(spec.mv_at(4.0), np.eye(6)[[1, 4]])
    assert build_chain(system, spec).K == 2


def test_singer_is_seeded():
    a = build_singer({}, seed=5)
    b = build_singer({}, seed=5)
    assert np.array_equal(a[0].P0, b[0].P0)
    assert np.array_equal(a[1].scenario.sensors, b[1].scenario.sensors)


def test_pseudo_range_hand_value():
    sc = SingerScenario(1, np.array([[60.0, 50.0]]), np.array([[50.0, 50.0]]))
    C = pseudo_range_C(sc, [0])
    assert abs(abs(C[0, 0]) - 200.0) < 1e-12
    assert C[0, 3] == 0.0  # due east: no y weight
    assert np.all(C[0, [1, 2, 4, 5]] == 0)


def test_pseudo_range_far_and_coincident():
    far = SingerScenario(1, np.array([[1e7, 0.0]]), np.zeros((1, 2)))
    assert np.abs(pseudo_range_C(far, [0])).max() < 1e-3
    same = SingerScenario(1, np.zeros((1, 2)), np.zeros((1, 2)))
    assert np.all(np.isfinite(pseudo_range_C(same, [0])))
    with pytest.raises(ScenarioError):
        pseudo_range_C(same, [])


def test_position_window_reconstructs_state():
    system, sensing, _, _ = build_singer({}, seed=0)
    segs = sensing.segments([tuple(range(5))], 1.0)
    pos = VerificationSpec.window(sensing.scenario.selector("position"), 3.0, 5.0)
    w = mi_windowed(system, segs, None, pos, 1.0).total_mi
    p = mi_pointwise_smoother(system, segs, None, VerificationSpec.point(np.eye(6), 3.0), 1.0)
    assert abs(w - p.total_mi) <= 1e-4 * p.total_mi


# ---- Lorenz-2003 ------------------------------------------------------------

def test_zonal_symmetry():
    phi = np.tile(np.linspace(1.0, 4.0, 17), (72, 1))
    d = lorenz2003_rhs(phi)
    assert np.allclose(d, d[0][None, :], atol=1e-12)


def test_stencil_footprint(rng):
    phi = spin_up(1, steps=50)
    i0, j0 = 30, 8
    e = np.zeros_like(phi)
    e[i0, j0] = 1e-3
    changed = np.argwhere(np.abs(lorenz2003_rhs(phi + e) - lorenz2003_rhs(phi)) > 0)
    for i, j in changed:
        di = (i - i0 + 36) % 72 - 36
        dj = j - j0
        assert (dj == 0 and -3 <= di <= 5) or (di == 0 and -3 <= dj <= 5)


def test_local_jacobian_against_finite_differences(rng):
    phi = 4.0 + rng.standard_normal((72, 17))
    region = (20, 6, 4, 3)
    J = lorenz_jacobian_local(phi, region)
    fd = fd_jacobian_local(phi, region)
    assert np.allclose(J, fd, rtol=1e-6, atol=1e-6 * np.abs(fd).max())


def test_zero_state_jacobian_is_linear_part():
    zero = np.zeros((72, 17))
    region = (45, 9, 4, 3)
    J = lorenz_jacobian_local(zero, region)
    fd = fd_jacobian_local(zero, region)
    assert np.allclose(J, fd, atol=1e-8)
    # interior rows away from the north/south padding see damping only
    mid = lorenz_jacobian_local(zero, (45, 6, 4, 3))
    assert np.allclose(mid, -np.eye(12), atol=1e-12)


def test_spun_up_jacobian_is_unstable():
    J = lorenz_jacobian_local(spin_up(0))
    assert np.linalg.eigvals(J).real.max() > 0


# ---- kernel sensing -----------------------------------------------------------

def nodes():
    return np.array([(i + 1.0, j + 1.0) for i, j in region_indices((45, 9, 4, 3))])


def test_kernel_interpolates_nodes():
    sc = WeatherScenario(nodes())
    for j, r in enumerate(sc.nodes):
        assert np.allclose(kernel_C(sc, r), np.eye(12)[j], atol=1e-10)


def test_kernel_far_field():
    sc = WeatherScenario(nodes())
    assert np.abs(kernel_C(sc, [0.0, 0.0])).max() < 1e-10


def test_kernel_midpoint_symmetry():
    sc = WeatherScenario(nodes())
    a, b = sc.nodes[5], sc.nodes[6]
    rho = sc.kernel(0.5 * (a + b))[0]
    assert abs(rho[5] - rho[6]) < 1e-15
    assert abs(rho[5] - np.exp(-0.125)) < 1e-15


def test_kernel_gram_failure():
    with pytest.raises(ScenarioError):
        WeatherScenario(nodes(), length_scales=(50.0, 50.0))


def test_weather_units_and_pass_through():
    system, sensing, spec, problem = build_weather({}, seed=0)
    assert HOURS_PER_MODEL_TIME == 120
    assert (problem.tau, spec.T_i, spec.T_f) == (6 / 120, 60 / 120, 84 / 120)
    assert problem.speed == pytest.approx(120 / 3)
    assert sensing.scenario.length_scales == (1.0, 0.7)
    assert system.n_X == 12 and np.array_equal(system.B, np.eye(12))
    assert np.allclose(sensing.Sigma_N, 0.05 ** 2)
