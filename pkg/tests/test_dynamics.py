import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from netlaw.dynamics import (DEFAULT_PARAMS, STATE_DIM, SIM_SETTINGS, DynamicsError, DynamicsSpec, IntegrationError,
                             Trajectory, add_state_noise, builtin_rhs, integrate_ivp, measured_snr_db,
                             simulate_dataset)
from netlaw.topology import Topology, gen_ba, gen_er


def pair():
    return Topology(np.array([[0.0, 1.0], [1.0, 0.0]]))


def isolated(n=1):
    return Topology(np.zeros((n, n)))


def test_epi_substitution():
    out = builtin_rhs(DynamicsSpec("Epi"), pair(), np.array([[0.5], [0.5]]))
    assert out[0, 0] == pytest.approx(-0.25, abs=1e-15)


def test_lv_isolated_node():
    assert builtin_rhs(DynamicsSpec("LV"), isolated(), np.array([[2.0]]))[0, 0] == pytest.approx(-3.0)


def test_gene_single_neighbour():
    out = builtin_rhs(DynamicsSpec("Gene"), pair(), np.array([[0.0], [1.0]]))
    assert out[0, 0] == pytest.approx(0.5)


def test_default_parameters_match_published_values():
    assert DEFAULT_PARAMS["LV"] == {"alpha": 0.5, "theta": 1.0}
    assert DEFAULT_PARAMS["Rossler"] == {"eps": 0.15, "a": 0.2, "b": 0.2, "c": 5.7}
    assert DEFAULT_PARAMS["Lorenz"]["b"] == pytest.approx(10 / 3)
    assert DEFAULT_PARAMS["Kuramoto"]["eps"] == 0.015
    assert STATE_DIM["FHN"] == 2 and STATE_DIM["Rossler"] == 3


def test_spec_validation():
    with pytest.raises(DynamicsError):
        DynamicsSpec("Nope")
    with pytest.raises(DynamicsError):
        DynamicsSpec("LV", {"gamma": 1.0})
    with pytest.raises(DynamicsError):
        DynamicsSpec("LV", {"alpha": float("nan")})
    with pytest.raises(DynamicsError):
        builtin_rhs(DynamicsSpec("LV"), pair(), np.zeros((3, 1)))


def test_integrator_matches_exponential():
    traj = integrate_ivp(lambda t, x: -x, None, np.array([[1.0]]), 1.0, 0.1, rtol=1e-12, atol=1e-12)
    assert abs(traj.states[-1, 0, 0] - math.exp(-1.0)) < 1e-9
    assert traj.times[0] == 0.0 and traj.times.size == 11


def test_integrator_constant_rhs():
    traj = integrate_ivp(lambda t, x: np.zeros_like(x), None, np.array([[3.0], [4.0]]), 2.0, 0.5)
    assert np.all(traj.states == np.array([[3.0], [4.0]]))


def oscillator(t, x):
    return np.stack([x[:, 1], -x[:, 0]], axis=1)


def test_harmonic_oscillator_energy():
    traj = integrate_ivp(oscillator, None, np.array([[1.0, 0.0]]), 10.0, 0.01, rtol=1e-12, atol=1e-12)
    energy = (traj.states[:, 0, :] ** 2).sum(axis=1)
    assert np.max(np.abs(energy - 1.0)) < 1e-8


def test_halving_tolerance_never_hurts():
    def err(tol):
        tr = integrate_ivp(lambda t, x: -x, None, np.array([[1.0]]), 1.0, 0.05, rtol=tol, atol=tol)
        e1 = abs(tr.states[-1, 0, 0] - math.exp(-1))
        osc = integrate_ivp(oscillator, None, np.array([[1.0, 0.0]]), 10.0, 0.1, rtol=tol, atol=tol)
        e2 = abs(osc.states[-1, 0, 0] - math.cos(10.0))
        return e1, e2

    for tol in (1e-6, 1e-8, 1e-10):
        a, b = err(tol), err(tol / 2)
        assert b[0] <= a[0] * 1.01 + 1e-15 and b[1] <= a[1] * 1.01 + 1e-15


def test_blow_up_reports_time():
    with pytest.raises(IntegrationError) as info:
        integrate_ivp(lambda t, x: x ** 2, None, np.array([[1.0]]), 2.0, 0.1)
    assert 0.5 < info.value.t_fail <= 1.0 + 1e-6


def test_lv_table_row_grid():
    init, dt, T, T_end = SIM_SETTINGS["LV"]
    assert (init, dt, T, T_end) == (("uniform", 0.0, 5.0), 1e-4, 0.1, 0.5)
    traj = simulate_dataset(DynamicsSpec("LV"), gen_er(10, 0.3, 0), init, dict(dt=dt, T=T, T_end=T_end), 1)
    assert traj.times.size == 5001
    assert traj.times[-1] == pytest.approx(0.5)


def test_epi_stays_in_unit_interval():
    init, dt, T, T_end = SIM_SETTINGS["Epi"]
    traj = simulate_dataset(DynamicsSpec("Epi"), gen_er(30, 0.15, 0), init, dict(dt=dt, T=T, T_end=T_end), 3)
    assert traj.states.min() >= 0.0 and traj.states.max() <= 1.0


def test_constant_init_on_vertex_transitive_graph():
    ring = np.roll(np.eye(8), 1, axis=1) + np.roll(np.eye(8), -1, axis=1)
    traj = simulate_dataset(DynamicsSpec("Lorenz"), Topology(ring), ("constant", 0.1),
                            dict(dt=0.01, T=1.0, T_end=2.0), 0)
    assert np.allclose(traj.states, traj.states[:, :1, :], atol=1e-12)


def test_simulation_is_bit_reproducible():
    top = gen_er(10, 0.3, 0)
    row = dict(dt=0.01, T=1.0, T_end=2.0)
    a = simulate_dataset(DynamicsSpec("Kuramoto"), top, ("uniform", 0, 6.28), row, 4)
    b = simulate_dataset(DynamicsSpec("Kuramoto"), top, ("uniform", 0, 6.28), row, 4)
    assert np.array_equal(a.states, b.states)
    assert np.array_equal(a.spec.node_params["omega"], b.spec.node_params["omega"])


def test_noise_sentinel_and_snr():
    t = np.linspace(0, 200, 20001)
    traj = Trajectory(t, np.sin(t)[:, None, None])
    assert add_state_noise(traj, float("inf"), 0) is traj
    snrs = [measured_snr_db(traj.states, add_state_noise(traj, 30.0, s).states) for s in range(20)]
    assert abs(np.mean(snrs) - 30.0) < 0.5


def test_noise_power_ratio_between_levels():
    t = np.linspace(0, 200, 20001)
    traj = Trajectory(t, np.sin(t)[:, None, None])
    p30 = np.mean((add_state_noise(traj, 30.0, 1).states - traj.states) ** 2)
    p50 = np.mean((add_state_noise(traj, 50.0, 1).states - traj.states) ** 2)
    assert p30 / p50 == pytest.approx(100.0, rel=1e-9)


def test_trajectory_csv_round_trip(tmp_path):
    top = gen_er(6, 0.5, 0)
    traj = simulate_dataset(DynamicsSpec("Kuramoto"), top, ("uniform", 0, 6.28), dict(dt=0.1, T=1, T_end=2), 2)
    traj.save_csv(tmp_path / "t.csv")
    back = Trajectory.load_csv(tmp_path / "t.csv")
    assert np.array_equal(back.states, traj.states) and np.array_equal(back.times, traj.times)
    assert np.array_equal(back.spec.node_params["omega"], traj.spec.node_params["omega"])
    assert back.seed == 2


def test_trajectory_invariants():
    with pytest.raises(DynamicsError):
        Trajectory(np.array([0.0, 1.0, 3.0]), np.zeros((3, 1, 1)))
    with pytest.raises(DynamicsError):
        Trajectory(np.array([0.0, 1.0]), np.array([[[0.0]], [[np.inf]]]))


@pytest.mark.parametrize("model", sorted(m for m in STATE_DIM if m != "PredatorPrey"))
def test_rhs_is_permutation_equivariant(model):
    rng = np.random.default_rng(0)
    top = gen_ba(9, 2, 1)
    spec = DynamicsSpec(model)
    if model == "Kuramoto":
        spec = DynamicsSpec(model, node_params={"omega": rng.normal(1, 1, 9)})
    x = rng.uniform(0.1, 1.5, (9, spec.d))
    perm = rng.permutation(9)
    base = builtin_rhs(spec, top, x)
    pspec = spec
    if model == "Kuramoto":
        pspec = DynamicsSpec(model, node_params={"omega": spec.node_params["omega"][perm]})
    moved = builtin_rhs(pspec, top.permuted(perm), x[perm])
    assert np.allclose(moved, base[perm], rtol=1e-13, atol=1e-13)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 1000))
def test_epi_invariant_region_property(seed):
    top = gen_er(12, 0.3, seed)
    traj = simulate_dataset(DynamicsSpec("Epi"), top, ("uniform", 0, 1), dict(dt=0.05, T=1, T_end=3), seed,
                            rtol=1e-9, atol=1e-12)
    assert traj.states.min() >= -1e-12 and traj.states.max() <= 1 + 1e-12
