import math

import numpy as np
import pytest

from mixflow import (BasisError, DomainError, P_bundle, R_bundle, decompose_mu,
                     make_basis, mean_potential, reconstruct_rho, reduce_rho,
                     state_coefficients)
from mixflow.changevar import mean_potential_derivatives

from conftest import all_models, unit_ideal_gas


def closed_form_script_m(varrho, q):
    """Unit-mass two-species ideal gas: varrho = 2 e^{M-1} cosh(q/2)."""
    return 1.0 + math.log(varrho / (2.0 * math.cosh(q / 2.0)))


class TestBasis:
    def test_two_species_worked_example(self):
        basis = make_basis(2)
        # unique dual pair with xi^2 = 1^2: oracle is the direct 2x2 solve
        assert np.allclose(basis.xi[:, 0], [0.5, -0.5], atol=1e-15)
        assert np.allclose(basis.xi[:, 1], [1.0, 1.0], atol=1e-15)
        assert np.allclose(basis.eta[:, 0], [1.0, -1.0], atol=1e-15)
        assert np.allclose(basis.eta[:, 1], [0.5, 0.5], atol=1e-15)
        oracle = np.linalg.solve(basis.xi.T, np.eye(2))
        assert np.allclose(basis.eta, oracle, atol=1e-15)

    @pytest.mark.parametrize("n", [2, 3, 4, 5])
    def test_duality_holds(self, n):
        basis = make_basis(n)
        assert np.max(np.abs(basis.xi.T @ basis.eta - np.eye(n))) < 1e-14
        assert np.allclose(basis.xi[:, -1], np.ones(n))

    def test_projector_properties(self):
        basis = make_basis(4)
        P = basis.proj
        assert np.allclose(P, P.T, atol=0)
        assert np.allclose(P @ P, P, atol=1e-15)
        assert np.allclose(P @ np.ones(4), 0.0, atol=1e-15)

    def test_custom_three_species(self):
        cols = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, -1.0]])
        basis = make_basis(3, xi_reduced=cols)
        assert np.max(np.abs(basis.xi.T @ basis.eta - np.eye(3))) < 1e-14
        oracle = np.linalg.solve(basis.xi.T, np.eye(3))
        assert np.allclose(basis.eta, oracle, atol=1e-14)

    def test_singular_basis_reports_condition(self):
        # a column parallel to 1^N cannot be completed to a basis
        with pytest.raises(BasisError, match="condition"):
            make_basis(3, xi_reduced=np.array([[1.0, 0.0], [1.0, 1.0],
                                               [1.0, -1.0]]))


class TestDecomposition:
    def test_worked_example(self):
        basis = make_basis(2)
        q, mN = decompose_mu(basis, np.array([2.0, 1.0]))
        assert q == pytest.approx([1.0])
        assert mN == pytest.approx(1.5)

    def test_mean_vector_maps_to_zero_q(self):
        basis = make_basis(4)
        q, mN = decompose_mu(basis, 3.7 * np.ones(4))
        assert np.max(np.abs(q)) < 1e-14
        assert mN == pytest.approx(3.7)

    @pytest.mark.parametrize("n", [2, 3, 5])
    def test_reconstruction_round_trip(self, n, rng):
        basis = make_basis(n)
        mu = rng.normal(scale=2.0, size=(200, n))
        q, mN = decompose_mu(basis, mu)
        back = q @ basis.Q.T + mN[:, None]
        assert np.max(np.abs(back - mu)) < 1e-13


class TestScriptM:
    def test_closed_form_symmetric_point(self):
        model = unit_ideal_gas(2)
        basis = make_basis(2)
        val = mean_potential(model, basis, 2.0, np.array([0.0]))
        assert val == pytest.approx(1.0, abs=1e-12)

    def test_closed_form_random_states(self, rng):
        model = unit_ideal_gas(2)
        basis = make_basis(2)
        for _ in range(30):
            varrho = rng.uniform(0.2, 8.0)
            q = rng.normal(scale=2.0)
            val = mean_potential(model, basis, varrho, np.array([q]))
            assert val == pytest.approx(closed_form_script_m(varrho, q),
                                        abs=1e-12)

    @pytest.mark.parametrize("n", [2, 3])
    def test_derivatives_match_finite_differences(self, n, rng):
        basis = make_basis(n)
        for model in all_models(n):
            for _ in range(5):
                varrho = rng.uniform(0.5, 5.0)
                q = rng.normal(scale=0.5, size=n - 1)
                d_rho, d_q = mean_potential_derivatives(model, basis, varrho, q)
                eps = 1e-6
                fd_rho = (mean_potential(model, basis, varrho + eps, q)
                          - mean_potential(model, basis, varrho - eps, q)) / (2 * eps)
                assert d_rho == pytest.approx(fd_rho, abs=1e-6)
                for k in range(n - 1):
                    dq = np.zeros(n - 1)
                    dq[k] = eps
                    fd_q = (mean_potential(model, basis, varrho, q + dq)
                            - mean_potential(model, basis, varrho, q - dq)) / (2 * eps)
                    assert d_q[k] == pytest.approx(fd_q, abs=1e-6)

    def test_domain_errors(self):
        model = unit_ideal_gas(2)
        basis = make_basis(2)
        with pytest.raises(DomainError):
            mean_potential(model, basis, -1.0, np.array([0.0]))
        with pytest.raises(DomainError):
            reconstruct_rho(model, basis, 1.0, np.array([0.0]),
                            guess_rho=np.array([1.0, -1.0]))


class TestReconstruction:
    def test_symmetric_point(self):
        model = unit_ideal_gas(2)
        basis = make_basis(2)
        rho = reconstruct_rho(model, basis, 2.0, np.array([0.0]))
        assert np.allclose(rho, [1.0, 1.0], atol=1e-12)

    @pytest.mark.parametrize("n", [2, 3, 4])
    def test_mass_constraint(self, n, rng):
        basis = make_basis(n)
        varrho = rng.uniform(0.2, 10.0, size=64)
        q = rng.normal(scale=1.5, size=(64, n - 1))
        for model in all_models(n):
            rho = reconstruct_rho(model, basis, varrho, q)
            assert np.min(rho) > 0.0
            assert np.max(np.abs(np.sum(rho, axis=-1) - varrho)) < 1e-10

    def test_positivity_for_extreme_q(self):
        model = unit_ideal_gas(3)
        basis = make_basis(3)
        for q in ([50.0, -30.0], [-40.0, 45.0]):
            rho = reconstruct_rho(model, basis, 1.0, np.array(q))
            assert np.min(rho) > 0.0
            assert np.sum(rho) == pytest.approx(1.0, abs=1e-10)

    @pytest.mark.parametrize("n", [2, 3, 4])
    def test_bijection_round_trip(self, n, rng):
        basis = make_basis(n)
        rho = rng.uniform(0.1, 10.0, size=(300, n))
        for model in all_models(n):
            varrho, q = reduce_rho(model, basis, rho)
            back = reconstruct_rho(model, basis, varrho, q)
            assert np.max(np.abs(back - rho)) < 1e-9

    def test_basis_covariance(self, rng):
        # the reconstructed composition does not depend on the basis choice
        model = all_models(3)[1]
        basis_a = make_basis(3)
        basis_b = make_basis(3, xi_reduced=np.array([[1.0, 0.0], [0.0, 1.0],
                                                     [-1.0, -1.0]]))
        rho = rng.uniform(0.2, 5.0, size=(50, 3))
        varrho_a, q_a = reduce_rho(model, basis_a, rho)
        varrho_b, q_b = reduce_rho(model, basis_b, rho)
        assert np.allclose(varrho_a, varrho_b, atol=0)
        rec_a = reconstruct_rho(model, basis_a, varrho_a, q_a)
        rec_b = reconstruct_rho(model, basis_b, varrho_b, q_b)
        assert np.max(np.abs(rec_a - rec_b)) < 1e-9


class TestReducedFields:
    def test_r_bundle_symmetric_point(self):
        model = unit_ideal_gas(2)
        basis = make_basis(2)
        R, Rq, Rrho = R_bundle(model, basis, 2.0, np.array([0.0]))
        # hand check with conjugate Hessian = identity at rho = (1, 1)
        assert np.allclose(R, [0.0], atol=1e-12)
        assert np.allclose(Rq, [[0.5]], atol=1e-12)
        assert np.allclose(Rrho, [0.0], atol=1e-12)

    def test_r_closed_form_two_species(self, rng):
        # R_1 = (varrho / 2) tanh(q / 2) for unit-mass ideal gases
        model = unit_ideal_gas(2)
        basis = make_basis(2)
        for _ in range(20):
            varrho = rng.uniform(0.3, 6.0)
            q = rng.normal(scale=1.5)
            R, _, _ = R_bundle(model, basis, varrho, np.array([q]))
            assert R[0] == pytest.approx(0.5 * varrho * math.tanh(q / 2.0),
                                         abs=1e-11)

    @pytest.mark.parametrize("n", [2, 3])
    def test_rq_matches_fd_and_is_spd(self, n, rng):
        basis = make_basis(n)
        for model in all_models(n):
            varrho = rng.uniform(0.5, 5.0, size=100)
            q = rng.normal(scale=0.8, size=(100, n - 1))
            R, Rq, Rrho = R_bundle(model, basis, varrho, q)
            assert np.max(np.abs(Rq - np.swapaxes(Rq, -1, -2))) < 1e-10
            assert np.min(np.linalg.eigvalsh(Rq)) > 0.0
            eps = 1e-5
            for k in range(n - 1):
                dq = np.zeros((100, n - 1))
                dq[:, k] = eps
                Rp, _, _ = R_bundle(model, basis, varrho, q + dq)
                Rm, _, _ = R_bundle(model, basis, varrho, q - dq)
                fd = (Rp - Rm) / (2 * eps)
                assert np.max(np.abs(fd - Rq[..., k])) < 1e-6
            fd_rho = (R_bundle(model, basis, varrho + eps, q)[0]
                      - R_bundle(model, basis, varrho - eps, q)[0]) / (2 * eps)
            assert np.max(np.abs(fd_rho - Rrho)) < 1e-6

    def test_p_bundle_ideal_unit_masses(self, rng):
        # P(varrho, q) = varrho identically, so P_rho = 1 and P_q = 0
        model = unit_ideal_gas(2)
        basis = make_basis(2)
        varrho = rng.uniform(0.3, 6.0, size=50)
        q = rng.normal(scale=1.5, size=(50, 1))
        P, Prho, Pq = P_bundle(model, basis, varrho, q)
        assert np.max(np.abs(P - varrho)) < 1e-10
        assert np.max(np.abs(Prho - 1.0)) < 1e-10
        assert np.max(np.abs(Pq)) < 1e-10

    @pytest.mark.parametrize("n", [2, 3])
    def test_p_derivatives_match_fd(self, n, rng):
        basis = make_basis(n)
        for model in all_models(n):
            varrho = rng.uniform(0.5, 5.0, size=100)
            q = rng.normal(scale=0.8, size=(100, n - 1))
            P, Prho, Pq = P_bundle(model, basis, varrho, q)
            eps = 1e-5
            fd_rho = (P_bundle(model, basis, varrho + eps, q)[0]
                      - P_bundle(model, basis, varrho - eps, q)[0]) / (2 * eps)
            assert np.max(np.abs(fd_rho - Prho)) < 1e-6
            for k in range(n - 1):
                dq = np.zeros((100, n - 1))
                dq[:, k] = eps
                fd = (P_bundle(model, basis, varrho, q + dq)[0]
                      - P_bundle(model, basis, varrho, q - dq)[0]) / (2 * eps)
                assert np.max(np.abs(fd - Pq[:, k])) < 1e-6

    def test_p_fd_convergence_order(self, rng):
        # C^2 smoothness shows as second-order central-difference convergence
        model = all_models(3)[1]
        basis = make_basis(3)
        varrho, q = 2.2, np.array([0.3, -0.4])
        _, Prho, _ = P_bundle(model, basis, varrho, q)
        errs = []
        for eps in (1e-2, 5e-3):
            fd = (P_bundle(model, basis, varrho + eps, q)[0]
                  - P_bundle(model, basis, varrho - eps, q)[0]) / (2 * eps)
            errs.append(abs(fd - Prho))
        assert errs[0] / max(errs[1], 1e-16) > 2.0**1.9 * 0.9

    def test_gibbs_duhem_in_reduced_variables(self, rng):
        # dP along a path in (varrho, q) equals rho . dmu
        model = all_models(3)[1]
        basis = make_basis(3)

        def state(t):
            return 2.0 + 0.5 * t, np.array([0.2 * t, -0.3 * t + 0.1])

        eps = 1e-6
        for t in np.linspace(0.0, 1.0, 5):
            vr_p, q_p = state(t + eps)
            vr_m, q_m = state(t - eps)
            dP = (P_bundle(model, basis, vr_p, q_p)[0]
                  - P_bundle(model, basis, vr_m, q_m)[0]) / (2 * eps)
            rho_p = reconstruct_rho(model, basis, vr_p, q_p)
            rho_m = reconstruct_rho(model, basis, vr_m, q_m)
            rho_c = reconstruct_rho(model, basis, *state(t))
            dmu = (model.mu(rho_p) - model.mu(rho_m)) / (2 * eps)
            assert dP == pytest.approx(float(rho_c @ dmu), abs=1e-6)


def test_state_coefficients_consistency(rng):
    model = all_models(2)[2]
    basis = make_basis(2)
    c = state_coefficients(model, basis, 3.0, np.array([0.4]))
    assert np.sum(c.rho) == pytest.approx(3.0, abs=1e-10)
    assert c.P == pytest.approx(float(model.pressure(c.rho)), abs=1e-10)
    q_split, mN = decompose_mu(basis, c.mu)
    assert q_split == pytest.approx([0.4], abs=1e-11)
    assert mN == pytest.approx(float(c.scriptM), abs=1e-11)
