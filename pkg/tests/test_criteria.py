import math

import numpy as np
import pytest

from _instances import random_instance
from optdesign.conic import Status
from optdesign.criteria import Criterion, compile_criterion, evaluate_fixed, i_to_ak, solve_criterion
from optdesign.oracle import phi_direct
from optdesign.workbench import ObservationModel, WeightDomain, block_model, section2_domain, section2_model


def test_criterion_validation():
    with pytest.raises(ValueError):
        Criterion("E")
    with pytest.raises(ValueError):
        Criterion("DK")
    assert Criterion("c", [1.0, 0.0]).K.shape == (2, 1)
    assert Criterion("I").family() == "AK" and Criterion("D").family() == "DK"
    with pytest.raises(ValueError):
        Criterion("AK", np.ones((3, 1))).resolve_K(section2_model())
    with pytest.raises(ValueError):
        Criterion("AK", np.ones((2, 2))).resolve_K(section2_model())


def test_i_to_ak_factor():
    model = block_model(4)
    K = i_to_ak(model)
    S = sum(A @ A.T for A in model.matrices) / model.s
    np.testing.assert_allclose(K @ K.T, S, atol=1e-12)


@pytest.mark.parametrize("kind", ["D", "A", "G", "I"])
def test_fixed_weights_match_direct(kind):
    rng = np.random.default_rng(11)
    for _ in range(8):
        model, w, _ = random_instance(rng)
        phi, status = evaluate_fixed(kind, model, w)
        direct = phi_direct(kind, model, w)
        if direct in (0.0, -math.inf):
            assert phi == direct
        else:
            assert phi == pytest.approx(direct, rel=1e-6)


@pytest.mark.parametrize("kind", ["DK", "AK", "c"])
def test_fixed_weights_match_direct_with_K(kind):
    rng = np.random.default_rng(12)
    for _ in range(8):
        model, w, K = random_instance(rng)
        if kind == "c":
            K = K[:, :1]
        phi, _ = evaluate_fixed(Criterion(kind, K), model, w)
        direct = phi_direct(kind, model, w, K)
        if direct == 0.0:
            assert phi == pytest.approx(0.0, abs=1e-6)
        else:
            assert phi == pytest.approx(direct, rel=1e-6)


def test_section2_d_optimum():
    res = solve_criterion(Criterion("D"), section2_model(), section2_domain())
    np.testing.assert_allclose(res.weights, [1 / 3] * 3, atol=1e-6)
    assert res.status == "Optimal"
    assert res.phi == pytest.approx(0.5, rel=1e-7)
    assert res.bound >= res.phi - 1e-9


def test_section2_constrained_optimum():
    res = solve_criterion(Criterion("D"), section2_model(), section2_domain(True))
    np.testing.assert_allclose(res.weights, [0.4583, 0.2083, 0.3333], atol=1e-3)


def test_a_and_g_optimum_on_simplex_are_equiangular():
    # symmetric three-point model: every criterion picks uniform weights
    for kind in ["A", "G", "I"]:
        res = solve_criterion(Criterion(kind), section2_model(), section2_domain())
        np.testing.assert_allclose(res.weights, [1 / 3] * 3, atol=1e-5)


def test_c_optimum_single_point_line():
    # points e1, e2 in the plane, c = (1, 1): optimum splits 1/2, 1/2
    model = ObservationModel([[1.0, 0.0], [0.0, 1.0]])
    res = solve_criterion(Criterion("c", [1.0, 1.0]), model, WeightDomain.simplex(2))
    np.testing.assert_allclose(res.weights, [0.5, 0.5], atol=1e-6)
    assert res.phi == pytest.approx(0.25, rel=1e-6)


def test_infeasible_domain_reported():
    dom = WeightDomain.simplex(3).add_ineq([1, 1, 1], 2, ">=")
    res = solve_criterion(Criterion("D"), section2_model(), dom)
    assert res.status == "Infeasible"


def test_g_fixed_weight_outside_range_is_minus_infinity():
    phi, status = evaluate_fixed("G", section2_model(), [1.0, 0.0, 0.0])
    assert phi == -math.inf and status == Status.PRIMAL_INFEASIBLE


def test_program_sizes():
    model = section2_model()
    cp = compile_criterion("G", model, section2_domain())
    assert cp.family == "G" and len(cp.aux["H"]) == model.s ** 2
    cp = compile_criterion(Criterion("AK", np.eye(2)[:, :1]), model, section2_domain())
    assert cp.aux["mu"].size == model.s
    with pytest.raises(ValueError):
        compile_criterion("D", model, WeightDomain.simplex(4))
