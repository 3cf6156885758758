import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from _instances import random_model, random_weights
from optdesign.oracle import (brute_force_exact, compositions, count_compositions, efficiency,
                              former_socp_fixture, kiefer_wolfowitz_certificate, laplacian_tree_count,
                              phi_direct, variance_function, verification_report)
from optdesign.workbench import (ObservationModel, WeightDomain, block_model, section2_domain, section2_model)


def test_phi_direct_closed_forms():
    model = ObservationModel([[1.0, 0.0], [0.0, 1.0]])
    w = [0.25, 0.75]
    assert phi_direct("D", model, w) == pytest.approx(math.sqrt(0.25 * 0.75))
    assert phi_direct("A", model, w) == pytest.approx(1.0 / (4.0 + 4.0 / 3.0))
    assert phi_direct("G", model, w) == pytest.approx(-4.0)
    assert phi_direct("c", model, w, [1.0, 0.0]) == pytest.approx(0.25)
    assert phi_direct("DK", model, w, [[0.0], [1.0]]) == pytest.approx(0.75)
    assert phi_direct("AK", model, w, np.eye(2)) == pytest.approx(phi_direct("A", model, w))
    # I: average over the two points of the variance, here (4 + 4/3)/2
    assert phi_direct("I", model, w) == pytest.approx(2.0 / (4.0 + 4.0 / 3.0))


def test_phi_direct_nonestimable():
    model = ObservationModel([[1.0, 0.0], [0.0, 1.0]])
    assert phi_direct("D", model, [1.0, 0.0]) == 0.0
    assert phi_direct("G", model, [1.0, 0.0]) == -math.inf
    assert phi_direct("A", model, [1.0, 0.0]) == 0.0
    assert phi_direct("c", model, [1.0, 0.0], [1.0, 0.0]) == pytest.approx(1.0)
    assert phi_direct("c", model, [1.0, 0.0], [0.0, 1.0]) == 0.0
    with pytest.raises(ValueError):
        phi_direct("AK", model, [1.0, 1.0])
    with pytest.raises(ValueError):
        phi_direct("E", model, [1.0, 1.0])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_phi_d_scales_with_weights(seed):
    rng = np.random.default_rng(seed)
    model = random_model(rng)
    w = random_weights(rng, model.s, sparse=False)
    assert phi_direct("D", model, 3.0 * w) == pytest.approx(3.0 * phi_direct("D", model, w), rel=1e-9, abs=1e-300)


def test_variance_function_infinite_outside_range():
    model = ObservationModel([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    d = variance_function(model, [1.0, 0.0, 0.0])
    assert d[0] == pytest.approx(1.0) and math.isinf(d[1]) and math.isinf(d[2])


def test_compositions_colex_and_count():
    comps = list(compositions(2, 3))
    assert comps[0] == (2, 0, 0) and comps[-1] == (0, 0, 2)
    assert len(comps) == count_compositions(2, 3) == 6
    assert len(set(comps)) == 6 and all(sum(c) == 2 for c in comps)


def test_brute_force_enumeration():
    model = section2_model()
    res = brute_force_exact("D", model, WeightDomain.exact(3, 3))
    assert res.value == pytest.approx(1.5) and res.evaluated == 10
    np.testing.assert_array_equal(res.maximisers, [[1, 1, 1]])
    dom = WeightDomain.exact(3, 3).add_ineq([1, -1, 0], 1, ">=")
    res = brute_force_exact("D", model, dom)
    assert all(w[0] - w[1] >= 1 for w in res.maximisers)
    with pytest.raises(ValueError):
        brute_force_exact("D", model, WeightDomain(3))
    with pytest.raises(ValueError):
        brute_force_exact("D", model, WeightDomain.exact(3, 100), limit=10)


def test_kiefer_wolfowitz_certificate():
    model = section2_model()
    cert = kiefer_wolfowitz_certificate(model, [1, 1, 1])
    assert cert.passed and cert.max_variance == pytest.approx(2.0)
    bad = kiefer_wolfowitz_certificate(model, [0.6, 0.2, 0.2])
    assert not bad.passed and bad.notes
    with pytest.raises(ValueError):
        kiefer_wolfowitz_certificate(model, [0, 0, 0])


def test_efficiency_orientation():
    model = section2_model()
    ref = np.ones(3) / 3
    w = np.array([0.5, 0.25, 0.25])
    for kind in ["D", "A", "G"]:
        e = efficiency(kind, model, w, ref)
        assert 0 < e < 1
        assert efficiency(kind, model, ref, ref) == pytest.approx(1.0)
    assert efficiency("G", model, [1, 0, 0], ref) == 0.0
    with pytest.raises(ValueError):
        efficiency("D", model, w, [1, 0, 0])


def test_former_socp_fixture_on_constrained_domain():
    w, sol = former_socp_fixture(section2_model(), section2_domain(True))
    np.testing.assert_allclose(w, [0.4482, 0.1982, 0.3536], atol=1e-3)
    assert phi_direct("D", section2_model(), w) < phi_direct("D", section2_model(), [11 / 24, 5 / 24, 1 / 3])


def test_verification_report_and_integer_determinant():
    model = block_model(4)
    w = np.ones(6)
    phi = phi_direct("D", model, w)
    rep = verification_report("D", model, w, phi)
    assert rep["match"] and rep["integer_determinant"] == laplacian_tree_count(w, 4) == 16
    assert not verification_report("D", model, w, phi * 1.01)["match"]
