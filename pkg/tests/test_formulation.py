import numpy as np
import pytest

from gridtopo.backend import HighsBackend
from gridtopo.formulation import (EQ, GE, BoundBox, VariableLayout, apriori_valid_inequalities, assemble,
                                  budget_constraint, identity_constraints, mccormick_group)
from gridtopo.network import find_critical_edges, reduced_laplacian, shortest_path_reactances
from gridtopo.oracle import all_feasible
from gridtopo.problem import InfeasibleProblem
from gridtopo.tightening import tighten
from instances import family, identity_weights, network, problem, triangle


def _feasible(cons, point):
    return all(c.violation(point) <= 1e-12 for c in cons)


def test_mccormick_binary_exactness():
    cons = mccormick_group(0, 1, 2, 0.0, 1.0)
    assert len(cons) == 4
    for X in (0.0, 0.3, 1.0):
        assert _feasible(cons, {0: 0.0, 1: 0.0, 2: X})
        assert not _feasible(cons, {0: 0.1, 1: 0.0, 2: X})
        assert _feasible(cons, {0: X, 1: 1.0, 2: X})
        assert not _feasible(cons, {0: X + 0.05, 1: 1.0, 2: X})


def test_mccormick_degenerate_interval():
    cons = mccormick_group(0, 1, 2, 2.0, 2.0)
    assert _feasible(cons, {0: 1.0, 1: 0.5, 2: 2.0})
    assert not _feasible(cons, {0: 1.1, 1: 0.5, 2: 2.0})


def test_mccormick_fractional_range():
    cons = mccormick_group(0, 1, 2, 0.0, 1.0)
    ok = [y for y in np.linspace(-0.2, 0.8, 101) if _feasible(cons, {0: y, 1: 0.5, 2: 0.5})]
    assert min(ok) == pytest.approx(0.0) and max(ok) == pytest.approx(0.5)


def test_mccormick_requires_finite_bounds():
    with pytest.raises(ValueError, match="bound tightening must run first"):
        mccormick_group(0, 1, 2, 0.0, np.inf)


def _expand(cons, layout, z, X):
    x = np.zeros(layout.n_vars)
    x[: layout.n_z] = z
    for (i, j), k in layout.x_of.items():
        x[k] = X[i, j]
    for ell, i, j in layout.y_rows:
        x[layout.y(ell, i, j)] = z[ell] * X[i, j]
    return x


def test_identity_rows_triangle():
    net = triangle()
    lay = VariableLayout(net)
    cons = identity_constraints(net, lay)
    assert len(cons) == 4 and all(c.sense == EQ for c in cons)
    row22 = cons[0]
    assert row22.rhs == 1.0
    touched = {lay.y_rows[k - lay.n_z - lay.n_x][0] for k in row22.coeffs}
    assert touched == {0, 2}
    X = np.linalg.inv(reduced_laplacian(net, np.ones(3)))
    x = _expand(cons, lay, np.ones(3), X)
    assert max(c.violation(x) for c in cons) < 1e-12


def test_identity_two_nodes():
    net = network(2, [(1, 2, 4.0)])
    lay = VariableLayout(net)
    (c,) = identity_constraints(net, lay)
    assert list(c.coeffs.values()) == [4.0] and c.rhs == 1.0


def test_y_count_sparse():
    for _, net in family(12):
        lay = VariableLayout(net)
        assert lay.n_y <= 2 * net.n_edges * net.n_reduced
        assert lay.n_x == net.n_reduced * (net.n_reduced + 1) // 2


def test_budget_rows():
    net = triangle([(1, 2), (2, 3)])
    (c,), fixed = budget_constraint(net, None, "radial")
    assert c.sense == EQ and c.rhs == 2
    (c,), fixed = budget_constraint(net, 2, "augment")
    assert fixed == (0, 2) and set(c.coeffs) == {1} and c.rhs == 2
    (c,), _ = budget_constraint(net, 3, "meshed")
    assert c.rhs == 3
    with pytest.raises(InfeasibleProblem, match="cannot span"):
        budget_constraint(net, 1, "meshed")


def test_apriori_triangle():
    net = triangle()
    lay = VariableLayout(net)
    Lf_inv = np.linalg.inv(reduced_laplacian(net, np.ones(3)))
    cons = apriori_valid_inequalities(lay, Lf_inv, [], None)
    floor = [c for c in cons if c.name == "rfloor"]
    assert len(floor) == 1 and floor[0].rhs == pytest.approx(2 / 3) and floor[0].sense == GE
    assert not [c for c in cons if c.name == "bridgecap"]
    assert len([c for c in cons if c.name == "mmat"]) == 2


def test_assemble_triangle_radial():
    net = triangle()
    prob = problem(net, "radial", None, identity_weights(net))
    box, ctx = tighten(prob)
    m = assemble(prob, box, critical=ctx.critical, dhat=ctx.dhat, Lf_inv=ctx.Lf_inv)
    assert m.layout.n_z == 3 and m.layout.n_x == 3 and m.layout.n_y <= 12
    again = assemble(prob, box, critical=ctx.critical, dhat=ctx.dhat, Lf_inv=ctx.Lf_inv)
    assert m.fingerprint() == again.fingerprint()


def test_assemble_rejects_infinite_box():
    net = triangle()
    prob = problem(net, "meshed", 3)
    with pytest.raises(ValueError, match="bound tightening must run first"):
        assemble(prob, BoundBox.empty(2))


def test_all_existing_is_lp():
    net = triangle([(1, 2), (1, 3), (2, 3)])
    prob = problem(net, "augment", 0)
    box, ctx = tighten(prob)
    m = assemble(prob, box, critical=ctx.critical, dhat=ctx.dhat, Lf_inv=ctx.Lf_inv)
    assert np.all(m.lb[: m.layout.n_z] == 1)
    res = HighsBackend().solve_lp(m.relaxed(), tight=True)
    X = m.layout.unpack_x(res.x)
    assert np.allclose(X, np.linalg.inv(reduced_laplacian(net, np.ones(3))), atol=1e-9)


def test_lp_export_mentions_every_variable():
    net = triangle()
    prob = problem(net, "radial", None)
    box, ctx = tighten(prob)
    text = assemble(prob, box, critical=ctx.critical, dhat=ctx.dhat, Lf_inv=ctx.Lf_inv).to_lp()
    assert text.startswith("\\") and "Subject To" in text and text.rstrip().endswith("End")
    assert "Binaries" in text and "z_2" in text and "X_1_1" in text


def test_apriori_valid_for_every_topology():
    for name, net in family(20):
        prob = problem(net, "meshed", net.n_edges)
        lay = VariableLayout(net)
        Lf_inv = np.linalg.inv(reduced_laplacian(net, np.ones(net.n_edges)))
        crit, _ = find_critical_edges(net)
        cons = apriori_valid_inequalities(lay, Lf_inv, crit, shortest_path_reactances(net))
        for z, X, _ in all_feasible(prob):
            x = _expand(cons, lay, z, X)
            assert max(c.violation(x) for c in cons) <= 1e-9, name


def test_model_exact_at_every_binary_point():
    for name, net in family(10):
        prob = problem(net, "meshed", net.n_edges)
        box, ctx = tighten(prob)
        m = assemble(prob, box, critical=ctx.critical, dhat=ctx.dhat, Lf_inv=ctx.Lf_inv)
        for z, X, _ in all_feasible(prob):
            x = _expand(m.constraints, m.layout, z, X)
            assert m.max_violation(x) <= 1e-9, name
