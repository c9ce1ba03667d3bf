import json
import math

import numpy as np
import pytest

from kcontract.compound import add_compound, mult_compound
from kcontract.lurie import (
    Certificate,
    LurieSystem,
    certify_lurie,
    certify_with_gain,
    closed_loop_jacobian,
    gain_condition_check,
    k_ari_check,
    k_ari_matrix,
    lemma1_gap,
    linear_feedback,
    recertify,
    scalar_p_search,
    scale_for_gain,
    tanh_diagonal,
    user_sampled,
)
from kcontract.measures import mu2, mu2_scaled


def random_lurie(rng, n=None, q=None, damping=None, coupling=0.5):
    n = n or int(rng.integers(2, 6))
    q = q or int(rng.integers(1, n + 1))
    damping = damping if damping is not None else rng.uniform(0.5, 3.0)
    A = -damping * np.eye(n) + 0.5 * rng.standard_normal((n, n))
    B = coupling * rng.standard_normal((n, q))
    C = coupling * rng.standard_normal((q, n))
    return LurieSystem(A, B, C, tanh_diagonal(q))


def scaled_compound_measure(J, Q, k):
    return mu2_scaled(add_compound(J, k), mult_compound(Q, k))


def test_decoupled_system_rate_is_measure_of_compound(rng):
    for _ in range(10):
        n = 4
        A = -2.0 * np.eye(n) + 0.3 * rng.standard_normal((n, n))
        sys = LurieSystem(A, np.zeros((n, 1)), np.zeros((1, n)), linear_feedback(np.zeros((1, 1))))
        for k in range(1, n + 1):
            cert = certify_lurie(sys, k, backoff=0.0)
            assert cert.certified
            assert cert.rate == pytest.approx(-mu2(add_compound(A, k)), rel=1e-9)


def test_backoff_keeps_strict_margin():
    sys = LurieSystem(-np.eye(3), np.zeros((3, 1)), np.zeros((1, 3)),
                      linear_feedback(np.zeros((1, 1))))
    for k in (1, 2, 3):
        cert = certify_lurie(sys, k)
        assert cert.certified
        assert cert.rate == pytest.approx(0.95 * k)
        assert cert.details["ari_slack"] > 0


def test_certificate_soundness_on_random_systems(rng):
    """Whenever certified, mu_{2,Q^(k)}(J^[k]) <= -rate at random states."""
    hits = 0
    for _ in range(40):
        sys = random_lurie(rng)
        for k in range(1, sys.n + 1):
            cert = certify_lurie(sys, k)
            if not cert.certified:
                continue
            hits += 1
            for x in rng.uniform(-3, 3, size=(20, sys.n)):
                J = closed_loop_jacobian(sys, 0.0, x)
                assert scaled_compound_measure(J, cert.Q, k) <= -cert.rate + 1e-8
    assert hits > 20


def test_soundness_with_general_q(rng):
    for _ in range(10):
        sys = random_lurie(rng, n=3, q=2, damping=3.0)
        M = rng.standard_normal((3, 3))
        Q = M @ M.T + 2 * np.eye(3)
        for k in (1, 2, 3):
            cert = certify_lurie(sys, k, "given-Q", Q=Q)
            if cert.certified:
                for x in rng.uniform(-3, 3, size=(20, 3)):
                    J = closed_loop_jacobian(sys, 0.0, x)
                    assert scaled_compound_measure(J, Q, k) <= -cert.rate + 1e-8


def test_ari_forms_agree(rng):
    for _ in range(20):
        sys = random_lurie(rng, n=4)
        k = int(rng.integers(1, 5))
        eta1 = float(rng.uniform(-1, 1))
        chk = k_ari_check(sys, k, np.eye(4), eta1)
        M = k_ari_matrix(sys, k, np.eye(4), eta1)
        assert np.linalg.eigvalsh(M)[-1] == pytest.approx(chk.top_k_sum, abs=1e-9)
        G = rng.standard_normal((4, 4))
        Q = G @ G.T + np.eye(4)
        chk = k_ari_check(sys, k, Q, eta1)
        lam = np.linalg.eigvalsh(k_ari_matrix(sys, k, Q, eta1))[-1]
        # congruent forms: same sign of the top eigenvalue
        if abs(chk.top_k_sum) > 1e-6:
            assert (lam > 0) == (chk.top_k_sum > 0)


def test_lemma1_gap_nonpositive(rng):
    for _ in range(50):
        n, m = rng.integers(1, 6, size=2)
        M = rng.standard_normal((n, m))
        N = rng.standard_normal((m, n))
        for k in range(1, n + 1):
            assert lemma1_gap(M, N, k) <= 1e-10
    with pytest.raises(ValueError):
        lemma1_gap(np.ones((2, 3)), np.ones((2, 3)), 1)


def test_sampled_gain_never_below_analytic(rng):
    for _ in range(10):
        sys = random_lurie(rng, n=3, q=3)
        samples = [(0.0, y) for y in rng.uniform(-3, 3, size=(100, 3))]
        analytic = gain_condition_check(sys, 2, np.eye(3))
        sampled = user_sampled(sys.phi.eval, sys.phi.jac, 3, 3)
        sys_s = LurieSystem(sys.A, sys.B, sys.C, sampled)
        est = gain_condition_check(sys_s, 2, np.eye(3), samples)
        assert est.provenance == "sampled-only"
        assert est.eta2 >= analytic.eta2 - 1e-9


def test_sampled_nonlinearity_yields_sampled_only(rng):
    sys = random_lurie(rng, n=3, q=2, damping=3.0, coupling=0.3)
    phi = user_sampled(lambda t, y: np.arctan(y), lambda t, y: np.diag(1 / (1 + y**2)), 2, 2,
                       sample_box=(-np.ones(2), np.ones(2)))
    cert = certify_lurie(LurieSystem(sys.A, sys.B, sys.C, phi), 2)
    assert cert.status == "sampled-only"
    with pytest.raises(ValueError):
        certify_lurie(LurieSystem(sys.A, sys.B, sys.C,
                                  user_sampled(phi.eval, phi.jac, 2, 2)), 2)


def test_linear_feedback_matches_closed_loop(rng):
    for _ in range(10):
        n = 3
        A = -3 * np.eye(n) + rng.standard_normal((n, n)) * 0.3
        B = rng.standard_normal((n, 1))
        C = rng.standard_normal((1, n))
        K = np.array([[0.4]])
        sys = LurieSystem(A, B, C, linear_feedback(K))
        Acl = A - B @ K @ C
        np.testing.assert_allclose(sys.jacobian(0.0, np.ones(n)), Acl)
        for k in (1, 2, 3):
            cert = certify_lurie(sys, k)
            if cert.certified:
                assert scaled_compound_measure(Acl, cert.Q, k) <= -cert.rate + 1e-9


def test_gain_scaled_certificate(rng):
    sys = random_lurie(rng, n=3, q=2, damping=3.0, coupling=0.4)
    scaled = scale_for_gain(sys, 2.0)
    x = rng.standard_normal(3)
    np.testing.assert_allclose(scaled.rhs(0.0, x), sys.rhs(0.0, x))
    cert = certify_with_gain(sys, 2, 1.0)
    assert cert.eta2 == 0.0
    if cert.certified:
        for x in rng.uniform(-3, 3, size=(20, 3)):
            J = closed_loop_jacobian(sys, 0.0, x)
            assert scaled_compound_measure(J, cert.Q, 2) <= -cert.rate + 1e-8
    bad = certify_with_gain(sys, 2, 0.5)
    assert bad.status == "infeasible"
    assert bad.margin == -math.inf


def test_scalar_p_closed_form():
    sys = LurieSystem(-np.diag([1.0, 2.0, 3.0]), np.eye(3), np.eye(3), tanh_diagonal(3))
    res = scalar_p_search(sys, 2, 1.2)
    assert res.p == pytest.approx(1 / 1.2)
    assert res.g_min == pytest.approx(2.4)
    assert res.alpha_k == pytest.approx(1.5)
    assert res.feasible
    assert not scalar_p_search(sys, 1, 1.2).feasible
    with pytest.raises(ValueError):
        scalar_p_search(sys, 1, 0.0)


def test_recertify_monotone(rng):
    checked = 0
    for _ in range(30):
        sys = random_lurie(rng, n=4)
        for k in range(1, 4):
            cert = certify_lurie(sys, k)
            if cert.certified and cert.eta1 >= 0 and cert.eta2 >= 0:
                for ell in range(k + 1, 5):
                    again = recertify(sys, cert, ell)
                    assert again.certified
                    assert (again.eta1, again.eta2) == (cert.eta1, cert.eta2)
                    checked += 1
    assert checked > 10


def test_certificate_validation():
    with pytest.raises(ValueError):
        Certificate(1, -np.eye(2), 1.0, 0.0, "certified", 1.0, "both")
    with pytest.raises(ValueError):
        Certificate(1, np.eye(2), 1.0, 0.0, "certified", 0.0, "both")
    with pytest.raises(ValueError):
        Certificate(1, np.eye(2), 1.0, 0.0, "maybe", 1.0, "both")
    with pytest.raises(np.linalg.LinAlgError):
        Certificate(1, np.diag([1.0, 1e-13]), 1.0, 0.0, "infeasible", 1.0, "none")


def test_certificate_serialises(rng):
    cert = certify_lurie(random_lurie(rng, n=3), 2)
    doc = json.loads(json.dumps(cert.to_dict()))
    assert doc["k"] == 2
    assert doc["rate"] == pytest.approx(cert.rate)
    np.testing.assert_array_equal(np.array(doc["Q"]), cert.Q)
    np.testing.assert_allclose(cert.weight(), mult_compound(cert.Q, 2))


def test_bad_inputs():
    with pytest.raises(ValueError):
        LurieSystem(np.eye(3), np.eye(2), np.eye(3), tanh_diagonal(3))
    sys = LurieSystem(-np.eye(2), np.eye(2), np.eye(2), tanh_diagonal(2))
    with pytest.raises(ValueError):
        certify_lurie(sys, 3)
    with pytest.raises(ValueError):
        certify_lurie(sys, 1, "given-Q")
    with pytest.raises(ValueError):
        certify_lurie(sys, 1, "bisection")
