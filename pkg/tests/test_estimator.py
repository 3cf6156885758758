import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from optdesign import ExchangeDesign, OptimalDesign
from optdesign.workbench import WeightDomain, block_model, equireplicate_domain, section2_model

X = np.array([[1.0, 0.0], [-0.5, np.sqrt(3) / 2], [-0.5, -np.sqrt(3) / 2]])


def test_params_roundtrip_and_clone():
    est = OptimalDesign(criterion="A", tol=1e-7)
    assert est.get_params()["criterion"] == "A"
    est.set_params(criterion="G")
    assert clone(est).criterion == "G"


def test_fit_predict_score_approximate():
    est = OptimalDesign().fit(X)
    np.testing.assert_allclose(est.weights_, [1 / 3] * 3, atol=1e-6)
    assert est.status_ == "Optimal"
    assert est.n_features_in_ == 2 and est.n_points_ == 3
    np.testing.assert_allclose(est.predict(X), [2.0] * 3, atol=1e-5)
    assert est.score() == pytest.approx(0.5, rel=1e-6)
    assert est.information_matrix().shape == (2, 2)


def test_not_fitted():
    with pytest.raises(NotFittedError):
        OptimalDesign().predict(X)


def test_dimension_mismatch():
    est = OptimalDesign().fit(X)
    with pytest.raises(ValueError):
        est.predict(np.ones((2, 3)))


def test_constrained_domain():
    dom = WeightDomain.simplex(3).add_ineq([1, -1, 0], 0.25, ">=")
    est = OptimalDesign().fit(X, domain=dom)
    np.testing.assert_allclose(est.weights_, [0.4583, 0.2083, 0.3333], atol=1e-3)


def test_exact_design():
    est = OptimalDesign(exact=True, N=4, epsilon=0).fit(X)
    assert sorted(est.weights_) == [1, 1, 2]
    assert est.status_ == "ProvedOptimal"
    with pytest.raises(ValueError):
        OptimalDesign(exact=True).fit(X)
    with pytest.raises(ValueError):
        OptimalDesign(exact=True, N=3).fit(X, domain=WeightDomain.simplex(3))


def test_exact_with_heuristic_seed_and_list_input():
    model = block_model(5)
    est = OptimalDesign(exact=True, heuristic_runs=3, epsilon=0)
    est.fit(model.matrices, domain=equireplicate_domain(5, 6))
    assert est.criterion_value_ ** 4 == pytest.approx(12)


def test_c_criterion_needs_K():
    with pytest.raises(ValueError):
        OptimalDesign(criterion="c").fit(X)
    with pytest.raises(ValueError):
        OptimalDesign(criterion="c", K=[1.0, 0.0, 0.0]).fit(X)
    est = OptimalDesign(criterion="c", K=[1.0, 0.0]).fit(X)
    assert est.criterion_value_ > 0


def test_exchange_design():
    est = ExchangeDesign(N=6, runs=3).fit(X)
    np.testing.assert_array_equal(est.weights_, [2, 2, 2])
    assert est.status_ == "Heuristic" and len(est.run_values_) == 3
    with pytest.raises(ValueError):
        ExchangeDesign().fit(X)


def test_bad_inputs():
    with pytest.raises(ValueError):
        OptimalDesign().fit(np.ones(3))
    with pytest.raises(ValueError):
        OptimalDesign().fit(np.zeros((0, 2)))
    with pytest.raises(TypeError):
        OptimalDesign(exact=True, N=2.5).fit(X)
