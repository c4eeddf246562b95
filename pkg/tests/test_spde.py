import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from heatctl.certify import CertificationError
from heatctl.dynamics import BrownianPath, brownian_path, simulate_scalar_Z
from heatctl.experiments import coupled_initial, scenario_preset
from heatctl.kernel import build_transform, identity_transform, solve_kernel, trapezoid_weights
from heatctl.scenario import ScenarioError
from heatctl.spde import (FieldState, FieldStepper, Measurements, ModalStepper, SimulationAbort,
                          Trajectory, dobc_control, measure, norm_sq, simulate_closed_loop,
                          simulate_open_loop, simulate_target, step_field)


def coarsen(path: BrownianPath, factor: int) -> BrownianPath:
    inc = path.increments.reshape(-1, factor).sum(axis=1)
    return BrownianPath(seed=path.seed, dt=path.dt * factor, increments=inc)


def test_zero_in_zero_out():
    s = step_field(FieldState(np.zeros(9)), 0.0, 40.0, 0.0, 0.1, 0.03, 1e-3)
    assert np.all(s.y == 0) and s.t == pytest.approx(1e-3)


def test_field_state_rejects_nan():
    with pytest.raises(ValueError):
        FieldState(np.array([0.0, np.nan]))


def test_stepper_arguments():
    with pytest.raises(ValueError):
        FieldStepper(2, 0.0, 0.0, 1e-3)
    with pytest.raises(ValueError):
        FieldStepper(9, 0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        FieldStepper(9, 0.0, 0.0, 1e-3, scheme="upwind")


@pytest.mark.parametrize("scheme", ["compact", "central"])
def test_mean_conserved_without_reaction(scheme):
    m = 33
    rng = np.random.default_rng(0)
    y = rng.standard_normal(m)
    w = trapezoid_weights(m)
    st_ = FieldStepper(m, 0.0, 0.0, 1e-3, scheme)
    m0 = w @ y
    for _ in range(1000):
        y = st_.step(y, 0.0, 0.0, 0.0)
    assert abs(w @ y - m0) < 1e-10


@pytest.mark.parametrize("scheme", ["compact", "central"])
def test_heat_equation_dissipates_about_mean(scheme):
    m = 33
    x = np.linspace(0, 1, m)
    y = np.exp(x) + np.sin(5 * x)
    w = trapezoid_weights(m)
    st_ = FieldStepper(m, 0.0, 0.0, 1e-3, scheme)
    prev = np.inf
    for _ in range(300):
        y = st_.step(y, 0.0, 0.0, 0.0)
        dev = norm_sq(y - w @ y)
        assert dev < prev
        prev = dev


@pytest.mark.parametrize("scheme", ["compact", "central"])
def test_modal_stepper_equals_tridiagonal(scheme):
    m = 17
    rng = np.random.default_rng(5)
    tri = FieldStepper(m, 2.5, 0.3, 1e-3, scheme)
    mod = ModalStepper(m, 2.5, 0.3, 1e-3, scheme)
    y = rng.standard_normal((m, 3))
    yh = mod.to_modal(y)
    for _ in range(50):
        g, dB = rng.standard_normal(3), 0.03 * rng.standard_normal(3)
        y = tri.step(y, g, 0.2, dB)
        yh = mod.step(yh, g, 0.2, dB)
    assert np.max(np.abs(mod.to_field(yh) - y)) < 1e-12 * np.max(np.abs(y))


@pytest.mark.parametrize("scheme, ratio", [("compact", 15), ("central", 3.9)])
def test_eigenvalue_order(scheme, ratio):
    # cos(2 pi x) is an exact eigenvector; one implicit step of length 1 gives y1 = y0 / (1 - lambda)
    errs = []
    for m in (17, 33, 65):
        x = np.linspace(0, 1, m)
        y1 = FieldStepper(m, 0.0, 0.0, 1.0, scheme).step(np.cos(2 * np.pi * x), 0.0, 0.0, 0.0)
        assert np.allclose(y1, y1[0] * np.cos(2 * np.pi * x), atol=1e-14)
        errs.append(abs(1 - 1 / y1[0] + 4 * np.pi ** 2))
    assert errs[0] / errs[1] > ratio and errs[1] / errs[2] > ratio


def test_boundary_flux_sets_slope():
    # steady state of y'' = 0, y'(0) = 0, y'(1) = g with c_shift keeping it well posed: y ~ g cosh
    m = 65
    st_ = FieldStepper(m, 0.0, 1.0, 1.0, "central")
    y = np.zeros(m)
    for _ in range(200):
        y = st_.step(y, 0.5, 0.0, 0.0)
    x = np.linspace(0, 1, m)
    exact = 0.5 * np.cosh(x) / np.sinh(1.0)
    assert np.max(np.abs(y - exact)) < 1e-4


def test_measure_examples():
    m = 129
    x = np.linspace(0, 1, m)
    tp = identity_transform(m)
    assert measure(FieldState(np.zeros(m)), tp) == (0.0, 0.0, 0.0)
    _, Z, _ = measure(FieldState(np.cos(np.pi * x)), tp)
    assert Z == pytest.approx(0.5, abs=1e-6)
    _, Z, _ = measure(FieldState(np.ones(m)), tp)
    assert abs(Z) < 1e-10
    with pytest.raises(ValueError):
        measure(FieldState(np.zeros(m - 1)), tp)


def test_batched_measurements_match(section4_65_tp):
    rng = np.random.default_rng(2)
    y = rng.standard_normal((65, 4))
    meas = Measurements(section4_65_tp)
    y1, Z, kx = meas(y)
    for i in range(4):
        ref = measure(FieldState(y[:, i]), section4_65_tp)
        assert np.allclose([y1[i], Z[i], kx[i]], ref, rtol=1e-12, atol=1e-12)


@given(st.floats(-10, 10), st.floats(-10, 10), st.floats(-30, 0), st.floats(-5, 5))
def test_dobc_control_is_affine(y1, kx, k11, wh):
    assert dobc_control(y1, kx, k11, wh) == pytest.approx(k11 * y1 + kx - wh, abs=1e-12)


def test_dobc_control_examples():
    assert dobc_control(0, 0, 0, 0) == 0
    assert dobc_control(0.0, 0.0, -20.7517, 0.3) == -0.3


def test_closed_loop_zero_data(section4_65):
    sc = section4_65.replace(y0="zero", xi0=(0.0, 0.0), T=0.05)
    tr = simulate_closed_loop(sc, seed=1)
    assert np.all(tr.norm_sq == 0) and np.all(tr.u == 0)
    assert len(tr.t) == sc.steps + 1


def test_closed_loop_deterministic_z_decay(section4_65, section4_65_tp):
    # with eta(0) = 0 and no noise z follows the target system up to the spatial defect
    Z0, _ = coupled_initial(section4_65, section4_65_tp)
    L = np.array(section4_65.L)
    sc = section4_65.replace(sigma=0.0, xi0=(0.0, 0.0), theta0=tuple(-L * Z0), T=0.3)
    tr = simulate_closed_loop(sc, seed=0, snapshot_every=300, tp=section4_65_tp)
    z0 = norm_sq(section4_65_tp.forward @ tr.snapshots[0][1])
    for t, y in tr.snapshots:
        z = norm_sq(section4_65_tp.forward @ y)
        assert math.sqrt(z) <= math.sqrt(z0) * math.exp(-sc.c * t) * 1.01
    assert tr.norm_sq[-1] < tr.norm_sq[0]


def test_observer_error_drift_is_second_order_in_space():
    drift = []
    for m in (65, 129):
        s = scenario_preset("section4").replace(m=m)
        tp = build_transform(solve_kernel(s.a_samples(), s.c))
        Z0, _ = coupled_initial(s, tp)
        sc = s.replace(sigma=0.0, xi0=(0.0, 0.0), theta0=tuple(-np.array(s.L) * Z0), T=0.3)
        drift.append(np.max(np.abs(simulate_closed_loop(sc, seed=0, tp=tp).w_hat)))
    assert drift[1] < 0.02
    assert drift[0] / drift[1] > 3.5


def test_closed_loop_rejects_uncertified(section4_65):
    with pytest.raises(CertificationError):
        simulate_closed_loop(section4_65.replace(sigma=0.2), seed=0)
    with pytest.raises(ScenarioError):
        simulate_closed_loop(section4_65.replace(mode="open"), seed=0)


def test_closed_loop_is_deterministic(section4_65, section4_65_tp):
    sc = section4_65.replace(T=0.1)
    a = simulate_closed_loop(sc, seed=3, tp=section4_65_tp)
    b = simulate_closed_loop(sc, seed=3, tp=section4_65_tp)
    for col in Trajectory.COLUMNS:
        assert np.array_equal(getattr(a, col), getattr(b, col))


def test_z_consistency_short_run(section4_65, section4_65_tp):
    sc = section4_65.replace(T=0.5)
    tr = simulate_closed_loop(sc, seed=1, tp=section4_65_tp)
    Zs = simulate_scalar_Z(tr.Z[0], -tr.w_hat, tr.w, sc.c, sc.sigma, tr.path)
    assert np.max(np.abs(Zs - tr.Z)) <= 0.03 * np.max(np.abs(tr.Z))


def test_transform_commutes_with_dynamics():
    errs = []
    for m in (33, 65):
        sc = scenario_preset("section4").replace(m=m, T=0.3, dt=2e-4)
        tp = build_transform(solve_kernel(sc.a_samples(), sc.c))
        tr = simulate_closed_loop(sc, seed=7, tp=tp, snapshot_every=300)
        wt = tr.w - tr.w_hat
        tz = simulate_target(sc.replace(mode="target"), w_tilde_series=wt, z0=tp.forward @ sc.y0_samples(),
                             path=tr.path, snapshot_every=300)
        err = max(np.max(np.abs(tp.forward @ y - z)) for (_, y), (_, z) in zip(tr.snapshots, tz.snapshots))
        errs.append(err / np.max(np.abs(tz.snapshots[0][1])))
    assert errs[1] < errs[0]
    assert errs[1] < 0.05


def test_target_zero_and_energy_decay():
    sc = scenario_preset("section4").replace(mode="target", m=33, T=0.5, sigma=0.0)
    tr = simulate_target(sc, seed=0, z0=np.zeros(33))
    assert np.all(tr.norm_sq == 0)
    for prof in ("const 1", "cos 1", "cos 3 2"):
        s2 = sc.replace(y0=prof)
        tr = simulate_target(s2, seed=0)
        bound = tr.norm_sq[0] * np.exp(-2 * s2.c * tr.t)
        assert np.all(tr.norm_sq <= bound * (1 + 2 * s2.c * s2.dt) + 1e-15)


def test_open_loop_single_path_grows():
    sc = scenario_preset("remark2").replace(m=65, dt=1e-3)
    tr = simulate_open_loop(sc, seed=2)
    sel = tr.t >= 0.5
    slope = np.polyfit(tr.t[sel], np.log(tr.norm_sq[sel]), 1)[0]
    assert slope > 0


def test_open_loop_strong_error_halves():
    base = scenario_preset("remark2").replace(m=65)
    x = base.x
    errs = np.zeros(3)
    for seed in range(4):
        fine = brownian_path(seed, 2.5e-4, 4000)
        for i, f in enumerate((4, 2, 1)):
            p = coarsen(fine, f)
            sc = base.replace(dt=p.dt)
            tr = simulate_open_loop(sc, path=p, snapshot_every=1)
            B = p.B()
            e = 0.0
            for k, (t, y) in enumerate(tr.snapshots):
                ex = np.cos(2 * np.pi * x) * np.exp(t + 0.1 * B[k])
                e = max(e, np.max(np.abs(y - ex)) / np.max(np.abs(ex)))
            errs[i] += e
    assert errs[0] / errs[1] >= 1.3
    assert errs[1] / errs[2] >= 1.3


def test_open_loop_with_heat_only_decays_to_mean():
    sc = scenario_preset("remark2").replace(a="zero", sigma=0.0, y0="cos 1 0.5", m=33, dt=1e-3, T=0.5)
    tr = simulate_open_loop(sc, seed=0)
    assert np.all(np.diff(tr.norm_sq) <= 1e-15)


def test_numerical_abort_is_reported():
    sc = scenario_preset("remark2").replace(a="const 999.9", dt=1e-3, T=0.2, m=17)
    with pytest.raises(SimulationAbort) as info:
        simulate_open_loop(sc, seed=0)
    assert info.value.step > 0


def test_trajectory_csv(tmp_path, section4_65, section4_65_tp):
    sc = section4_65.replace(T=0.01)
    tr = simulate_closed_loop(sc, seed=0, tp=section4_65_tp, snapshot_every=50)
    tr.to_csv(tmp_path / "t.csv")
    tr.snapshots_to_csv(tmp_path / "s.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "t,norm_sq,y1,Z,w,w_hat,u"
    assert len(lines) == sc.steps + 2
    data = np.loadtxt(tmp_path / "t.csv", delimiter=",", skiprows=1)
    assert np.array_equal(data[:, 1], tr.norm_sq)
    snap = (tmp_path / "s.csv").read_text().splitlines()
    assert snap[0] == "t,x,y" and len(snap) == 1 + 3 * 65
