import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gridtopo import StabilityObjective
from gridtopo.dynamics import (DisconnectedTopology, GramianError, StateSpace, closed_form_objective,
                               impulse_energy_estimate, kron_reduce, observability_gramian, psd_sqrt,
                               state_matrices)
from gridtopo.network import build_network, reduced_laplacian
from instances import network, random_graph


def test_state_matrices_two_node():
    net = network(2, [(1, 2)])
    ss = state_matrices(net, [1], StabilityObjective.coherence(net))
    expected = [[0, 0, 1, 0], [0, 0, 0, 1], [-1, 1, -1, 0], [1, -1, 0, -1]]
    assert np.allclose(ss.A, expected)
    assert np.allclose(ss.B, [[0, 0], [0, 0], [1, 0], [0, 1]])
    assert not ss.C[2:, :].any()


def test_coherence_preset():
    net = network(3, [(1, 2), (2, 3)])
    obj = StabilityObjective.coherence(net)
    assert np.allclose(obj.W, np.eye(3) - np.ones((3, 3)) / 3)
    assert not obj.S.any() and obj.preset == "coherence"


def test_zero_output_gives_zero():
    net = network(3, [(1, 2), (2, 3)])
    obj = StabilityObjective(np.zeros((3, 3)), np.zeros(3))
    ss = state_matrices(net, [1, 1], obj)
    g = observability_gramian(ss)
    assert g.h2_squared == 0 and not g.Q.any()
    assert impulse_energy_estimate(ss) == 0


def test_output_scaling_is_quadratic():
    net = network(3, [(1, 2), (2, 3), (1, 3)])
    ss = state_matrices(net, [1, 1, 1], StabilityObjective.coherence(net))
    base = observability_gramian(ss).h2_squared
    scaled = observability_gramian(StateSpace(ss.A, ss.B, 3.0 * ss.C)).h2_squared
    assert scaled == pytest.approx(9 * base, rel=1e-10)


def test_gramian_residual_and_impulse_match_on_path():
    net = network(3, [(1, 2), (2, 3)], damping=0.025)
    ss = state_matrices(net, [1, 1], StabilityObjective.coherence(net))
    g = observability_gramian(ss)
    assert g.residual <= 1e-8
    est = impulse_energy_estimate(ss)
    assert abs(est - g.h2_squared) <= 5e-3 * g.h2_squared


def test_impulse_estimate_quadratic_in_input_gain():
    net = network(3, [(1, 2), (2, 3), (1, 3)])
    ss = state_matrices(net, [1, 1, 1], StabilityObjective.coherence(net))
    one = impulse_energy_estimate(ss)
    two = impulse_energy_estimate(StateSpace(ss.A, 2 * ss.B, ss.C))
    assert two == pytest.approx(4 * one, rel=1e-9)


def test_observable_rigid_mode_rejected():
    net = network(2, [(1, 2)])
    obj = StabilityObjective(np.eye(2), np.zeros(2))
    with pytest.raises(GramianError):
        observability_gramian(state_matrices(net, [1], obj))


def test_disconnected_topology_not_hurwitz():
    net = network(3, [(1, 2), (2, 3)])
    with pytest.raises(GramianError, match="Hurwitz"):
        observability_gramian(state_matrices(net, [1, 0], StabilityObjective.coherence(net)))


def test_closed_form_examples():
    assert closed_form_objective(np.eye(2), [[2, -1], [-1, 1]]) == pytest.approx(3)
    assert closed_form_objective(np.eye(2), [[2, -1], [-1, 2]]) == pytest.approx(4 / 3)
    assert closed_form_objective(np.zeros((2, 2)), [[2, -1], [-1, 2]]) == 0
    with pytest.raises(DisconnectedTopology, match="disconnected topology"):
        closed_form_objective(np.eye(2), [[1, 0], [0, 0]])


def test_psd_sqrt_of_laplacian():
    W = np.eye(4) - np.ones((4, 4)) / 4
    R = psd_sqrt(W)
    assert np.allclose(R @ R, W, atol=1e-12)


def test_kron_series_combination():
    L = reduced_laplacian(network(3, [(1, 2, 1.0), (2, 3, 1.0)]), [1, 1])
    # reduced nodes (2, 3); eliminate node 2 -> node 3 hangs from the reference by 1/2
    assert np.allclose(kron_reduce(L, [1]), [[0.5]])
    full = np.array([[1.0, -1, 0], [-1, 2, -1], [0, -1, 1]])
    assert np.allclose(kron_reduce(full, [0, 2]), [[0.5, -0.5], [-0.5, 0.5]])


def test_kron_identity_map():
    L = np.array([[2.0, -1], [-1, 2]])
    assert np.array_equal(kron_reduce(L, [0, 1]), L)


def test_kron_singular_interior():
    L = np.array([[1.0, -1, 0], [-1, 1, 0], [0, 0, 0]])
    with pytest.raises(np.linalg.LinAlgError):
        kron_reduce(L, [0, 1])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_kron_inverse_block(seed):
    rng = np.random.default_rng(seed)
    edges, _ = random_graph(rng, 7, int(rng.integers(6, 16)))
    net = network(7, edges)
    L = reduced_laplacian(net, np.ones(net.n_edges))
    drop = rng.choice(6, 2, replace=False)
    keep = np.setdiff1d(np.arange(6), drop)
    assert np.allclose(np.linalg.inv(kron_reduce(L, keep)), np.linalg.inv(L)[np.ix_(keep, keep)], atol=1e-9)


def test_zero_injection_states_are_reduced():
    net = build_network([{"id": 1}, {"id": 2, "kind": "zero_injection"}, {"id": 3}],
                        [(1, 2, 1.0), (2, 3, 1.0)], 1)
    ss = state_matrices(net, [1, 1], StabilityObjective.coherence(net))
    assert ss.A.shape == (4, 4)
    assert np.allclose(ss.A[2:, :2], [[-0.5, 0.5], [0.5, -0.5]])


def test_monotone_in_edge_addition_exhaustive():
    rng = np.random.default_rng(3)
    for n in (3, 4, 5):
        edges, _ = random_graph(rng, n, min(n * (n - 1) // 2, 7))
        net = network(n, edges)
        Wr = StabilityObjective.coherence(net).reduced_weights
        from gridtopo.oracle import all_feasible
        from gridtopo import DesignProblem
        prob = DesignProblem(net, StabilityObjective.coherence(net), "meshed", net.n_edges)
        for z, _, f in all_feasible(prob):
            for k in np.flatnonzero(z == 0):
                z2 = z.copy()
                z2[k] = 1
                assert closed_form_objective(Wr, reduced_laplacian(net, z2)) <= f + 1e-12
