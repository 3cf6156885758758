import math

import numpy as np
import pytest

from optdesign.oracle import laplacian_tree_count
from optdesign.workbench import (DesignProblem, ObservationModel, WeightDomain, block_ak_K, block_model,
                                 concurrence_graph, equireplicate_domain, helmert_basis, pairs,
                                 projected_block_model, quadratic_grid_model, quadratic_grid_rescaling_matrix,
                                 replication_domain, replication_rows, section2_domain, section2_model,
                                 uranium_cost_row, uranium_domain, URANIUM_MARGINS)


def test_observation_model_shapes_and_errors():
    model = ObservationModel([[1.0, 2.0], np.ones((2, 3))])
    assert (model.m, model.s, model.ells) == (2, 2, [1, 3])
    with pytest.raises(ValueError):
        ObservationModel([])
    with pytest.raises(ValueError):
        ObservationModel([[1.0, 2.0], [1.0]])
    with pytest.raises(ValueError):
        ObservationModel([[np.nan, 1.0]])
    with pytest.raises(ValueError):
        ObservationModel([[1.0]], labels=["a", "b"])


def test_observation_model_roundtrip_and_transform():
    model = section2_model()
    again = ObservationModel.from_dict(model.to_dict())
    for A, B in zip(model.matrices, again.matrices):
        np.testing.assert_array_equal(A, B)
    T = np.array([[2.0, 1.0], [0.0, 1.0]])
    np.testing.assert_allclose(model.transformed(T).matrices[1], T @ model.matrices[1])
    bad = model.to_dict()
    bad["m"] = 3
    with pytest.raises(ValueError):
        ObservationModel.from_dict(bad)


def test_weight_domain_contains_exact_arithmetic():
    dom = WeightDomain.exact(3, 4).add_ineq([1, -1, 0], 1, ">=")
    assert dom.contains([2, 1, 1])
    assert not dom.contains([1, 1, 2])
    assert not dom.contains([2.5, 0.5, 1])
    assert not dom.contains([3, 1, 1])
    simplex = section2_domain(constrained=True)
    assert simplex.contains([0.4583333, 0.2083333, 0.3333334], tol=1e-6)
    assert not simplex.contains([0.3, 0.3, 0.4])


def test_weight_domain_validation():
    with pytest.raises(ValueError):
        WeightDomain(2, lower=[1.0, 0.0], upper=[0.0, 1.0])
    with pytest.raises(ValueError):
        WeightDomain(2, lower=[-1.0, 0.0])
    with pytest.raises(ValueError):
        WeightDomain(2).add_ineq([1, 1], 1, "<")
    with pytest.raises(ValueError):
        WeightDomain(2, eq=[([1, 1, 1], 1)])
    with pytest.raises(ValueError):
        WeightDomain(2, integer=True).integer_bounds()


def test_weight_domain_roundtrip_and_relax():
    dom = equireplicate_domain(5, 7)
    again = WeightDomain.from_dict(dom.to_dict())
    assert again.to_dict() == dom.to_dict()
    rel = dom.relaxed()
    assert not rel.integer and len(rel.ineq) == len(dom.ineq)
    lo, hi = dom.integer_bounds()
    assert np.all(lo == 0) and np.all(hi == 7)


def test_partial_ok():
    dom = WeightDomain.exact(3, 4).add_ineq([1, 1, 0], 2, "<=")
    assert dom.partial_ok(np.array([1.0, 1.0, 0.0]))
    assert not dom.partial_ok(np.array([2.0, 1.0, 0.0]))
    assert not dom.partial_ok(np.array([0.0, 0.0, 5.0]))


def test_block_model_pairs_and_replications():
    t = 5
    model = block_model(t)
    assert model.s == math.comb(t, 2) and model.m == t - 1
    assert pairs(3) == [(0, 1), (0, 2), (1, 2)]
    R = replication_rows(t)
    np.testing.assert_array_equal(R.sum(axis=0), 2 * np.ones(model.s))


def test_equireplicate_domain_rows():
    eq = equireplicate_domain(4, 6)  # 2N/t = 3 exactly
    assert len(eq.eq) == 4 and not eq.ineq
    uneq = equireplicate_domain(5, 6)  # 2.4 -> [2, 3]
    assert not uneq.eq and len(uneq.ineq) == 10
    w = np.array([1, 1, 0, 0, 0, 1, 1, 1, 0, 1])  # replications 2,3,2,2,3
    assert uneq.contains(w)


def test_replication_domain():
    dom = replication_domain(4, 5, [((0,), ">=", 3), ((1, 2), "=", 5)])
    assert len(dom.ineq) == 1 and len(dom.eq) == 1
    assert dom.contains([1, 1, 1, 1, 1, 0])


def test_helmert_and_block_K():
    U = helmert_basis(5)
    np.testing.assert_allclose(U.T @ U, np.eye(4), atol=1e-12)
    np.testing.assert_allclose(U.T @ np.ones(5), 0, atol=1e-12)
    K = block_ak_K(5)
    np.testing.assert_allclose(K @ K.T, 5 * np.eye(4) - np.ones((4, 4)), atol=1e-12)
    assert projected_block_model(5).m == 4


def test_concurrence_graph_tree_counts():
    t = 4
    w = np.ones(6, dtype=int)  # complete graph K4: 4^2 = 16 trees
    g = concurrence_graph(w, t)
    assert g.degrees() == [3, 3, 3, 3]
    assert g.spanning_trees() == 16
    assert laplacian_tree_count(2 * w, t) == 16 * 2 ** 3
    assert laplacian_tree_count([1, 0, 0, 0, 0, 1], t) == 0
    with pytest.raises(ValueError):
        concurrence_graph([0.5] * 6, t)


def test_uranium_grid():
    model = quadratic_grid_model()
    scaled = quadratic_grid_model(rescale=True)
    assert (model.s, model.m) == (54, 6)
    T = quadratic_grid_rescaling_matrix()
    for A, B in zip(model.matrices, scaled.matrices):
        np.testing.assert_allclose(T @ A, B, atol=1e-8)
    dom = uranium_domain(with_cost=True)
    assert len(dom.eq) == len(URANIUM_MARGINS) and len(dom.ineq) == 1
    assert uranium_cost_row()[:3].tolist() == [0.0, 10.0, 20.0]


def test_design_problem_roundtrip(tmp_path):
    prob = DesignProblem(block_model(4), "AK", block_ak_K(4), equireplicate_domain(4, 6), {"source": "test"})
    path = tmp_path / "p.json"
    prob.save(path)
    again = DesignProblem.load(path)
    assert again.criterion == "AK" and again.meta == {"source": "test"}
    np.testing.assert_allclose(again.K, prob.K)
    assert again.domain.to_dict() == prob.domain.to_dict()
    with pytest.raises(ValueError):
        DesignProblem(block_model(4), "E")
    with pytest.raises(ValueError):
        DesignProblem(block_model(4), "D", domain=WeightDomain.simplex(3))
