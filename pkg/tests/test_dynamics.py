import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad_vec
from scipy.linalg import expm

from heatctl.certify import PlantSpec, build_M
from heatctl.dynamics import (BrownianPath, IncrementStream, ObserverState, brownian_path, exo_series,
                              observer_propagators, observer_step, path_seed, simulate_coupled,
                              simulate_scalar_Z)

A4 = np.array([[0.0, 2.0], [-2.0, 0.0]])
C4 = np.array([[1.0, 0.0]])
L4 = np.array([[-5.0], [-1.0]])
F4 = A4 + L4 @ C4
PI2 = math.pi ** 2


def plant(sigma=0.1):
    return PlantSpec(c=1.02, sigma=sigma, A=A4, C=C4, L=L4)


def test_empty_path():
    p = brownian_path(3, 1e-3, 0)
    assert p.steps == 0 and p.B().tolist() == [0.0]


@given(st.integers(min_value=0, max_value=2 ** 63 - 1), st.integers(min_value=1, max_value=500))
def test_path_determinism(seed, steps):
    a = brownian_path(seed, 1e-3, steps)
    b = brownian_path(seed, 1e-3, steps)
    assert np.array_equal(a.increments, b.increments)


def test_distinct_seeds_differ():
    assert not np.array_equal(brownian_path(1, 1e-3, 10).increments, brownian_path(2, 1e-3, 10).increments)


def test_increment_statistics():
    dt = 1e-3
    inc = brownian_path(12345, dt, 10 ** 6).increments
    z = inc / math.sqrt(dt)
    assert abs(z.mean()) < 4 / math.sqrt(z.size)
    assert 0.95 * dt <= inc.var() <= 1.05 * dt


def test_increments_read_only():
    p = brownian_path(0, 1e-3, 5)
    with pytest.raises(ValueError):
        p.increments[0] = 1.0


def test_bad_path_args():
    with pytest.raises(ValueError):
        brownian_path(0, 0.0, 5)
    with pytest.raises(ValueError):
        brownian_path(0, 1e-3, -1)


def test_stream_matches_single_paths_regardless_of_chunking():
    seeds = [path_seed(9, i) for i in range(4)]
    s1 = IncrementStream(seeds, 1e-3)
    whole = s1.draw(100)
    s2 = IncrementStream(seeds, 1e-3)
    parts = np.vstack([s2.draw(30), s2.draw(70)])
    assert np.array_equal(whole, parts)
    assert np.array_equal(whole[:, 2], brownian_path(seeds[2], 1e-3, 100).increments)


def test_exo_zero():
    _, w = exo_series([0.0, 0.0], 1e-2, 50, A4, C4)
    assert np.all(w == 0)


def test_exo_rotation_value():
    steps = 1000
    _, w = exo_series([1.0, 0.0], (math.pi / 2) / steps, steps, A4, C4)
    assert w[-1] == pytest.approx(-1.0, abs=1e-12)
    assert w[0] == 1.0


def test_exo_norm_conserved():
    xi, _ = exo_series([0.3, -0.4], 1e-3, 10 ** 5, A4, C4)
    r = np.linalg.norm(xi, axis=1)
    assert np.max(np.abs(r / r[0] - 1)) < 1e-10


def test_exo_dimension_mismatch():
    with pytest.raises(ValueError):
        exo_series([1.0, 0.0, 0.0], 1e-3, 5, A4, C4)


def test_propagators_against_quadrature():
    dt = 0.05
    pr = observer_propagators(A4, C4, L4, 1.02, dt)
    assert np.allclose(pr.Phi, expm(F4 * dt), atol=1e-14)
    Psi = quad_vec(lambda s: expm(F4 * s), 0, dt, epsabs=1e-14)[0]
    assert np.allclose(pr.Psi, Psi, atol=1e-13)
    assert np.allclose(pr.bZ, (F4 @ L4 + (1.02 + PI2) * L4).ravel())


def test_observer_zero_stays_zero():
    pr = observer_propagators(A4, C4, L4, 1.02, 1e-3)
    obs = ObserverState.from_theta([0.0, 0.0], 0.0, L4, C4)
    for _ in range(100):
        obs = observer_step(obs, 0.0, 0.0, pr)
    assert np.all(obs.theta == 0) and obs.w_hat == 0


def test_observer_homogeneous_matches_exponential():
    dt = 1e-3
    pr = observer_propagators(A4, C4, L4, 1.02, dt)
    th0 = np.array([0.7, -1.3])
    obs = ObserverState.from_theta(th0, 0.0, L4, C4)
    for _ in range(1000):
        obs = observer_step(obs, 0.0, 0.0, pr)
    assert np.max(np.abs(obs.theta - expm(F4 * 1.0) @ th0)) < 1e-12


def test_observer_state_recomputes_estimates():
    obs = ObserverState.from_theta([1.0, 2.0], 0.5, L4, C4)
    assert np.allclose(obs.xi_hat, [1.0 - 2.5, 2.0 - 0.5])
    assert obs.w_hat == pytest.approx(1.0 - 2.5)


def test_observer_constant_input_exact():
    # with Z and u0 held constant the ZOH step is exact at every sample time
    dt = 0.01
    pr = observer_propagators(A4, C4, L4, 1.02, dt)
    Z, u0 = 0.4, -0.2
    obs = ObserverState.from_theta([0.0, 0.0], Z, L4, C4)
    for _ in range(100):
        obs = observer_step(obs, Z, u0, pr)
    forcing = pr.bZ * Z + L4.ravel() * u0
    exact = np.linalg.solve(F4, (expm(F4 * 1.0) - np.eye(2)) @ forcing)
    assert np.max(np.abs(obs.theta - exact)) < 1e-12


def test_coupled_zero():
    p = brownian_path(0, 1e-3, 1000)
    X = simulate_coupled(0.0, [0.0, 0.0], plant(), 1e-3, 1.0, p)
    assert np.all(X == 0)


def test_coupled_deterministic_first_order():
    M = build_M(1.02, A4, L4, C4)
    x0 = np.array([0.2, 0.5, -0.3])
    exact = expm(M * 1.0) @ x0
    errs = []
    for dt in (1e-2, 5e-3, 2.5e-3):
        n = int(round(1 / dt))
        X = simulate_coupled(x0[0], x0[1:], plant(sigma=0.0), dt, 1.0, brownian_path(0, dt, n))
        errs.append(np.max(np.abs(X[-1] - exact)))
    assert errs[0] / errs[1] == pytest.approx(2, abs=0.2)
    assert errs[1] / errs[2] == pytest.approx(2, abs=0.2)


def test_coupled_batch_equals_single():
    dt = 1e-3
    seeds = [path_seed(4, i) for i in range(3)]
    dB = IncrementStream(seeds, dt).draw(500)
    X = simulate_coupled(np.full(3, 0.1), np.tile([[0.2], [0.3]], (1, 3)), plant(), dt, 0.5, dB)
    one = simulate_coupled(0.1, [0.2, 0.3], plant(), dt, 0.5, brownian_path(seeds[1], dt, 500))
    assert np.allclose(X[..., 1], one, rtol=1e-13, atol=1e-15)


def test_coupled_horizon_mismatch():
    with pytest.raises(ValueError):
        simulate_coupled(0.1, [0.0, 0.0], plant(), 1e-3, 1.0, brownian_path(0, 1e-3, 10))


def test_coupled_noise_on_diagonal_of_diffusion():
    # one step from (Z, eta) = (1, 0): the increment enters as sigma (1, L) dB
    dB = np.array([[0.01]])
    X = simulate_coupled(np.array([1.0]), np.zeros((2, 1)), plant(), 1e-3, 1e-3, dB)
    M = build_M(1.02, A4, L4, C4)
    expected = np.array([1.0, 0, 0]) + 1e-3 * M[:, 0] + 0.1 * np.array([1.0, -5.0, -1.0]) * 0.01
    assert np.allclose(X[1, :, 0], expected, atol=1e-15)


def test_scalar_Z_zero():
    p = brownian_path(0, 1e-3, 100)
    assert np.all(simulate_scalar_Z(0.0, np.zeros(100), np.zeros(100), 1.02, 0.1, p) == 0)


def test_scalar_Z_decay():
    errs = []
    for dt in (1e-3, 5e-4):
        n = int(round(0.5 / dt))
        p = BrownianPath(seed=0, dt=dt, increments=np.zeros(n))
        Z = simulate_scalar_Z(1.0, np.ones(n), -np.ones(n), 1.02, 0.3, p)
        errs.append(abs(Z[-1] - math.exp(-(1.02 + PI2) * 0.5)))
    assert errs[0] < 1e-3
    assert errs[0] / errs[1] == pytest.approx(2, abs=0.2)


def test_scalar_Z_length_check():
    with pytest.raises(ValueError):
        simulate_scalar_Z(1.0, np.zeros(5), np.zeros(10), 1.02, 0.1, brownian_path(0, 1e-3, 10))
