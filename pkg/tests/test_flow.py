import math

import numpy as np
import pytest

from shallowflow.errors import FlowOverflowError, PreconditionError
from shallowflow.flow import (
    NeuralOde,
    act,
    act_deriv,
    flow,
    flow_at_times,
    flow_trajectory,
    leaky_relu,
    piecewise_flow,
    reference_flow,
    scalar_flow_activation,
    smoothed_leaky_relu,
    trajectory_states,
)
from shallowflow.spectral import OmegaBox, delta_star

LEAKY = leaky_relu(0.1)
SMOOTH = smoothed_leaky_relu(0.1)


def scalar_ode(a, b=0.0, spec=LEAKY, steps=20):
    return NeuralOde(
        A=np.array([[float(a)]]), b=np.array([float(b)]), activation=spec,
        euler_steps=steps,
    )


def test_leaky_values():
    assert act(LEAKY, -2.0) == pytest.approx(-0.2)
    assert act(LEAKY, 3.0) == pytest.approx(3.0)


def test_smoothed_junctions():
    assert SMOOTH.zbar == pytest.approx(math.atanh(math.sqrt(0.9)), abs=1e-15)
    assert act(SMOOTH, 0.0) == 0.0
    assert act(SMOOTH, -SMOOTH.zbar) == pytest.approx(math.tanh(-SMOOTH.zbar), abs=1e-15)
    # continuity across both junctions
    for z0 in (0.0, -SMOOTH.zbar):
        below = act(SMOOTH, z0 - 1e-9)
        above = act(SMOOTH, z0 + 1e-9)
        assert abs(float(above) - float(below)) < 1e-8


def test_derivative_range_dense_sampling():
    z = np.linspace(-50.0, 50.0, 100_000)
    for spec in (LEAKY, SMOOTH):
        dv = act_deriv(spec, z)
        assert dv.min() >= 0.1 - 1e-15
        assert dv.max() <= 1.0 + 1e-15
    assert act_deriv(LEAKY, 0.0) == 1.0
    assert act_deriv(SMOOTH, 0.0) == 1.0


def test_flow_closed_form_positive_regime():
    assert flow(scalar_ode(1.0), np.array([1.0]))[0] == pytest.approx(
        (1.0 + 1.0 / 20.0) ** 20, rel=1e-14
    )


def test_flow_closed_form_negative_regime():
    assert flow(scalar_ode(1.0), np.array([-1.0]))[0] == pytest.approx(
        -((1.0 + 0.1 / 20.0) ** 20), rel=1e-13
    )


def test_flow_zero_fixed_point():
    ode = NeuralOde(A=np.eye(3), b=np.zeros(3), activation=LEAKY)
    assert np.array_equal(flow(ode, np.zeros(3)), np.zeros(3))


def test_flow_overflow_names_step():
    ode = scalar_ode(100.0, steps=5)
    with pytest.raises(FlowOverflowError, match="step 1"):
        flow(ode, np.array([1e308]))


def test_flow_at_times_endpoints_and_midpoint():
    ode = scalar_ode(1.0)
    u0 = np.array([1.0])
    assert flow_at_times(ode, u0, [0.0])[0][0] == 1.0
    assert flow_at_times(ode, u0, [1.0])[0][0] == flow(ode, u0)[0]
    assert flow_at_times(ode, u0, [0.5])[0][0] == pytest.approx(1.05**10, rel=1e-14)


def test_flow_at_times_rejects_empty():
    with pytest.raises(PreconditionError):
        flow_at_times(scalar_ode(1.0), np.array([1.0]), [])


def test_trajectory_semigroup_bitwise():
    rng = np.random.default_rng(20)
    ode = NeuralOde(
        A=rng.standard_normal((3, 3)), b=rng.standard_normal(3), activation=LEAKY
    )
    u0 = rng.standard_normal(3)
    traj = flow_trajectory(ode, u0)
    # continue from the state at node 7 with the same stepper
    tail = trajectory_states(ode, traj.states[7][None, :])[:, 0, :]
    assert np.array_equal(tail[: 20 - 7 + 1], traj.states[7:])


def test_euler_convergence_first_order():
    rng = np.random.default_rng(21)
    A = np.abs(rng.standard_normal((3, 3))) * 0.5
    b = np.abs(rng.standard_normal(3))
    u0 = np.abs(rng.standard_normal(3)) + 0.5  # positive orbit: smooth regime
    flows = {}
    for n in (20, 40, 80, 160, 320):
        flows[n] = flow(NeuralOde(A=A, b=b, activation=LEAKY, euler_steps=n), u0)
    for n in (20, 40, 80):
        num = np.linalg.norm(flows[2 * n] - flows[4 * n])
        den = np.linalg.norm(flows[n] - flows[2 * n])
        assert 0.4 <= num / den <= 0.6


def test_gronwall_exact_solution_dominates_euler():
    a, b, u0 = 1.3, 0.7, 0.9
    for n in (5, 20, 100, 400):
        traj = flow_trajectory(scalar_ode(a, b, steps=n), np.array([u0]))
        exact = np.exp(a * traj.times) * u0 + (b / a) * (np.exp(a * traj.times) - 1.0)
        assert np.all(exact >= traj.states[:, 0] - 1e-12)


def test_scalar_flow_activation_closed_form():
    phi = scalar_flow_activation(0.0, LEAKY, 20)
    assert phi(0.0) == 0.0
    assert phi(1.0) == pytest.approx(1.05**20, rel=1e-14)


def test_scalar_flow_activation_matches_uncoupled_system():
    lam = -0.4
    phi = scalar_flow_activation(lam, SMOOTH, 20)
    v = np.array([0.3, -1.2, 2.0, -5.0])
    ode = NeuralOde(A=np.eye(4), b=lam * np.ones(4), activation=SMOOTH)
    assert np.max(np.abs(phi(v) - flow(ode, v))) <= 1e-14


def test_piecewise_flow_identity_phases():
    rng = np.random.default_rng(22)
    ode = NeuralOde(A=rng.standard_normal((2, 2)), b=rng.standard_normal(2), activation=LEAKY)
    u0 = rng.standard_normal(2)
    assert np.array_equal(piecewise_flow(ode, 0.0, 1.0, u0), flow(ode, u0))


def test_piecewise_flow_zero_field_pure_scaling():
    ode = NeuralOde(A=np.zeros((2, 2)), b=np.zeros(2), activation=LEAKY)
    u0 = np.array([0.5, -2.0])
    out = piecewise_flow(ode, -0.7, 1.9, u0)
    assert np.allclose(out, math.exp(0.9) * math.exp(0.7) * u0, rtol=1e-14)


def test_piecewise_flow_scaling_composition():
    rng = np.random.default_rng(23)
    ode = NeuralOde(
        A=0.3 * rng.standard_normal((3, 3)), b=rng.standard_normal(3), activation=SMOOTH
    )
    u0 = rng.standard_normal(3)
    lhs = piecewise_flow(ode, -math.log(2.0), 1.0 + math.log(3.0), u0)
    rhs = 3.0 * flow(ode, 2.0 * u0)
    assert np.max(np.abs(lhs - rhs)) <= 1e-14 * max(1.0, np.max(np.abs(rhs)))


def test_piecewise_flow_rejects_bad_phases():
    ode = scalar_ode(1.0)
    with pytest.raises(PreconditionError):
        piecewise_flow(ode, 0.1, 2.0, np.array([1.0]))
    with pytest.raises(PreconditionError):
        piecewise_flow(ode, -0.1, 0.9, np.array([1.0]))


def test_lipschitz_bound_sampled_pairs():
    rng = np.random.default_rng(24)
    for _ in range(10):
        d = int(rng.integers(1, 5))
        A = rng.standard_normal((d, d))
        b = rng.standard_normal(d)
        ode = NeuralOde(A=A, b=b, activation=LEAKY, euler_steps=1000)
        bound = math.exp(delta_star(A, OmegaBox(dim=d, alpha=0.1)).value)
        U = rng.standard_normal((50, d)) * 2
        V = rng.standard_normal((50, d)) * 2
        fu = flow(ode, U)
        fv = flow(ode, V)
        lhs = np.linalg.norm(fu - fv, axis=1)
        rhs = bound * np.linalg.norm(U - V, axis=1) * (1.0 + 1e-6)
        assert np.all(lhs <= rhs)


def test_reference_flow_matches_euler_limit():
    rng = np.random.default_rng(25)
    ode = NeuralOde(
        A=rng.standard_normal((2, 2)), b=rng.standard_normal(2), activation=SMOOTH,
        euler_steps=4000,
    )
    u0 = rng.standard_normal(2)
    euler = flow(ode, u0)
    rk4 = reference_flow(ode, u0, n_steps=500)
    assert np.linalg.norm(euler - rk4) <= 5e-3
