import csv

import numpy as np
import pytest

from gridtopo.dynamics import closed_form_objective
from gridtopo.network import reduced_laplacian
from gridtopo.oracle import HARD_CAP, enumerate_optimal, feasible_selections, verify_solution, write_ranked_csv
from gridtopo.problem import InfeasibleProblem
from instances import family, identity_weights, mode_cases, network, problem, triangle


def test_triangle_radial():
    net = triangle()
    rep = enumerate_optimal(problem(net, "radial", None, identity_weights(net)), keep_all=True)
    assert rep.best_objective == pytest.approx(2)
    assert [net.edge_ids(k) for k in np.flatnonzero(rep.best_selection)] == [(1, 2), (1, 3)]
    assert rep.count == 3
    assert [round(o, 12) for o, _ in rep.ranked] == [2, 3, 3]


def test_triangle_meshed_all():
    net = triangle()
    rep = enumerate_optimal(problem(net, "meshed", 3, identity_weights(net)))
    assert rep.best_selection.sum() == 3 and rep.best_objective == pytest.approx(4 / 3)


def test_budget_below_n_is_infeasible():
    net = network(4, [(1, 2), (2, 3), (3, 4), (1, 4)], [(1, 2), (2, 3)])
    rep = enumerate_optimal(problem(net, "augment", 0))
    assert not rep.feasible and rep.count == 0
    with pytest.raises(InfeasibleProblem):
        problem(triangle(), "meshed", 1)


def test_full_selection_matches_closed_form():
    for name, net in family(10):
        prob = problem(net, "meshed", net.n_edges)
        rep = enumerate_optimal(prob)
        Lf = reduced_laplacian(net, np.ones(net.n_edges))
        assert rep.best_objective == closed_form_objective(prob.objective.reduced_weights, Lf), name


def test_masks_respect_mode_constraints():
    for name, net in family(12):
        for mode, budget in mode_cases(net):
            prob = problem(net, mode, budget)
            for row in feasible_selections(prob):
                z = row.astype(bool)
                assert prob.min_edges <= z.sum() <= prob.total_budget
                assert z[prob.existing].all()


def test_hard_cap():
    n = 8
    edges = [(u, v) for u in range(1, n + 1) for v in range(u + 1, n + 1)][: HARD_CAP + 1]
    net = network(n, edges)
    with pytest.raises(ValueError, match="22"):
        enumerate_optimal(problem(net, "radial", None))


def test_verify_oracle_optimum_passes():
    for name, net in family(8):
        prob = problem(net, "radial", None)
        rep = enumerate_optimal(prob)
        rec = verify_solution(prob, rep.best_selection, objective=rep.best_objective)
        assert rec["passed"], (name, rec["failures"])


def test_verify_detects_dropped_edge_and_perturbation():
    net = network(4, [(1, 2), (1, 3), (2, 3), (3, 4)])
    prob = problem(net, "meshed", 4)
    rep = enumerate_optimal(prob)
    z = rep.best_selection.copy()
    X = np.linalg.inv(reduced_laplacian(net, z))
    z_drop = z.copy()
    z_drop[net.edge_index(3, 4)] = 0
    rec = verify_solution(prob, z_drop, X)
    assert not rec["passed"] and ("connected" in rec["failures"] or "residual_ok" in rec["failures"])
    rec = verify_solution(prob, z, X + 1e-3)
    assert "residual_ok" in rec["failures"]


def test_ranked_csv(tmp_path):
    net = triangle()
    prob = problem(net, "radial", None, identity_weights(net))
    rep = enumerate_optimal(prob, keep_all=True)
    path = tmp_path / "ranked.csv"
    write_ranked_csv(rep, prob, path)
    rows = list(csv.DictReader(path.open()))
    assert len(rows) == 3 and float(rows[0]["objective"]) == pytest.approx(2)


def test_ties_broken_lexicographically():
    net = network(3, [(1, 2), (1, 3), (2, 3)])
    prob = problem(net, "radial", None, identity_weights(net))
    rep = enumerate_optimal(prob, keep_all=True)
    tied = [sel for o, sel in rep.ranked if abs(o - 3) < 1e-9]
    assert len(tied) == 2 and tied == sorted(tied)


def test_selection_count_matches_brute_force():
    import itertools
    from gridtopo.network import is_connected
    for name, net in family(10):
        for mode, budget in mode_cases(net):
            prob = problem(net, mode, budget)
            brute = 0
            for bits in itertools.product([0, 1], repeat=net.n_edges):
                z = np.array(bits, bool)
                if (z[prob.existing].all() and prob.min_edges <= z.sum() <= prob.total_budget
                        and is_connected(net, z)):
                    brute += 1
            assert len(feasible_selections(prob)) == brute, (name, mode, budget)


def test_wide_networks_beyond_64_lines():
    n = 14
    pairs = [(u, v) for u in range(1, n + 1) for v in range(u + 1, n + 1)]
    free = pairs[-4:]
    net = network(n, pairs, pairs[:-4])
    assert net.n_edges > 64
    rep = enumerate_optimal(problem(net, "augment", 2), keep_all=True)
    assert rep.count == 1 + 4 + 6
    assert rep.best_selection.sum() == net.n_edges - 2
