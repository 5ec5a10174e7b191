import numpy as np
import pytest

from mixflow import (Grid1D, MixtureProblem, OnsagerSpec, ReactionSpec,
                     eval_f, eval_g, make_basis, no_forcing, sine_forcing)
from mixflow.discretization import BC, d1
from mixflow.linearization import eval_f_prime, eval_g_prime

from conftest import all_models, unit_ideal_gas


def make_problem(n_species=2, n=32, model=None, forcing=None, reaction=None,
                 base=None):
    model = model if model is not None else unit_ideal_gas(n_species)
    basis = make_basis(n_species)
    grid = Grid1D(length=1.0, n=n)
    onsager = OnsagerSpec(n_species=n_species,
                          base=np.eye(n_species) if base is None else base)
    reaction = reaction if reaction is not None else ReactionSpec(n_species=n_species)
    forcing = forcing if forcing is not None else no_forcing(n_species - 1)
    return MixtureProblem(model=model, basis=basis, grid=grid, onsager=onsager,
                          reaction=reaction, forcing=forcing, viscosity=1.0)


def smooth_state(problem, amp=0.3):
    x = problem.grid.centers
    m = problem.n_q
    modes = np.arange(1, m + 1)[None, :]
    q = amp * np.cos(np.pi * modes * x[:, None]) + 0.1
    varrho = 2.0 + 0.4 * np.cos(2 * np.pi * x)
    v = 0.25 * np.sin(np.pi * x)
    return q, varrho, v


class TestRightHandSides:
    def test_constant_resting_state_gives_zero_g(self):
        problem = make_problem()
        n = problem.grid.n
        q = np.full((n, 1), 0.3)
        varrho = np.full(n, 2.0)
        v = np.zeros(n)
        g = eval_g(problem, q, varrho, v, 0.0)
        assert np.all(g == 0.0)

    def test_constant_reaction_survives_alone(self):
        c = np.array([0.2, -0.2])
        reaction = ReactionSpec(n_species=2,
                                rate=lambda rho: np.broadcast_to(c, rho.shape))
        problem = make_problem(reaction=reaction)
        n = problem.grid.n
        q = np.full((n, 1), 0.1)
        varrho = np.full(n, 2.0)
        g = eval_g(problem, q, varrho, np.zeros(n), 0.0)
        oracle = c @ problem.basis.Q  # projection onto the reduced components
        assert np.allclose(g, np.tile(oracle, (n, 1)), atol=1e-15)

    def test_constant_resting_state_gives_zero_f(self):
        problem = make_problem()
        n = problem.grid.n
        f = eval_f(problem, np.full((n, 1), -0.2), np.full(n, 1.5),
                   np.zeros(n), 0.0)
        assert np.all(f == 0.0)

    def test_f_closed_form_for_unit_ideal_gas(self):
        # P(varrho, q) = varrho exactly, so f = -grad varrho - varrho v v_x
        problem = make_problem()
        q, varrho, v = smooth_state(problem, amp=0.2)
        f = eval_f(problem, q, varrho, v, 0.0)
        grid = problem.grid
        oracle = (-d1(varrho, grid, BC.NONE)
                  - varrho * v * d1(v, grid, BC.DIRICHLET_ZERO))
        assert np.max(np.abs(f - oracle)) < 1e-9

    def test_f_includes_forcing_terms(self):
        forcing = sine_forcing(1, 1.0, btilde_amplitude=[0.3],
                               bbar_amplitude=0.4, mode=1, omega=0.0)
        problem = make_problem(forcing=forcing)
        n = problem.grid.n
        q = np.full((n, 1), 0.0)
        varrho = np.full(n, 2.0)
        f = eval_f(problem, q, varrho, np.zeros(n), 0.0)
        x = problem.grid.centers
        # R = 0 at the symmetric state, so only varrho * bbar survives
        assert np.allclose(f, 2.0 * 0.4 * np.cos(np.pi * x), atol=1e-12)

    @pytest.mark.parametrize("which", ["g", "f"])
    def test_refinement_oracle(self, which):
        # coarse evaluations converge at second order toward a fine-grid
        # reference restricted by block averaging
        def fields(grid):
            x = grid.centers
            q = 0.2 * np.cos(np.pi * x)[:, None] + 0.05
            varrho = 2.0 + 0.3 * np.cos(2 * np.pi * x)
            v = 0.2 * np.sin(np.pi * x)
            return q, varrho, v

        forcing = sine_forcing(1, 1.0, btilde_amplitude=[0.25],
                               bbar_amplitude=0.2, mode=1, omega=0.0)
        values = {}
        for n in (64, 128, 1024):
            problem = make_problem(n=n, forcing=forcing)
            q, varrho, v = fields(problem.grid)
            if which == "g":
                values[n] = eval_g(problem, q, varrho, v, 0.0)
            else:
                values[n] = eval_f(problem, q, varrho, v, 0.0)[:, None]

        def restrict(arr, factor):
            return arr.reshape(-1, factor, arr.shape[1]).mean(axis=1)

        err64 = np.max(np.abs(values[64] - restrict(values[1024], 16)))
        err128 = np.max(np.abs(values[128] - restrict(values[1024], 8)))
        assert np.log2(err64 / err128) > 1.7


class TestLinearisedOperators:
    def test_zero_perturbation_maps_to_zero(self):
        problem = make_problem()
        u = smooth_state(problem)
        gp = eval_g_prime(problem, u, u, 0.0)
        fp = eval_f_prime(problem, u, u, 0.0)
        n, m = problem.grid.n, problem.n_q
        assert np.all(gp.apply(problem.grid, np.zeros((n, m)), np.zeros(n),
                               np.zeros(n)) == 0.0)
        assert np.all(fp.apply(problem.grid, np.zeros((n, m)), np.zeros(n),
                               np.zeros(n)) == 0.0)

    def test_g_vx_coefficient_vanishes_at_symmetric_state(self):
        # for equal unit masses at q = 0 the reduced density R and its
        # varrho-derivative both vanish, so the div v coefficient is zero
        problem = make_problem()
        n = problem.grid.n
        u = (np.zeros((n, 1)), np.full(n, 2.0), np.zeros(n))
        gp = eval_g_prime(problem, u, u, 0.0)
        assert np.max(np.abs(gp.g_vx)) < 1e-11

    @pytest.mark.parametrize("n_species", [2, 3])
    def test_directional_derivative_matches_fd(self, n_species, rng):
        model = all_models(n_species)[1]
        forcing = sine_forcing(n_species - 1, 1.0,
                               btilde_amplitude=0.2 * np.ones(n_species - 1),
                               bbar_amplitude=0.3, mode=1, omega=2.0)
        problem = make_problem(n_species=n_species, model=model,
                               forcing=forcing)
        grid = problem.grid
        x = grid.centers
        m = problem.n_q
        t = 0.21
        ustar = smooth_state(problem, amp=0.25)
        gp = eval_g_prime(problem, ustar, ustar, t)
        fp = eval_f_prime(problem, ustar, ustar, t)
        g0 = eval_g(problem, *ustar, t)
        f0 = eval_f(problem, *ustar, t)
        for trial in range(10):
            coef = rng.normal(scale=1.0, size=(m, 2))
            rbar = (coef[None, :, 0] * np.cos(np.pi * x)[:, None]
                    + coef[None, :, 1] * np.cos(2 * np.pi * x)[:, None])
            sbar = rng.normal() * np.cos(np.pi * x) + rng.normal() * 0.5
            wbar = rng.normal() * np.sin(np.pi * x) + rng.normal() * np.sin(
                2 * np.pi * x)
            lin_g = gp.apply(grid, rbar, sbar, wbar)
            lin_f = fp.apply(grid, rbar, sbar, wbar)
            errs_g, errs_f = [], []
            for eps in (2e-3, 1e-3):
                q_e = ustar[0] + eps * rbar
                rho_e = ustar[1] + eps * sbar
                v_e = ustar[2] + eps * wbar
                errs_g.append(np.max(np.abs(
                    (eval_g(problem, q_e, rho_e, v_e, t) - g0) / eps - lin_g)))
                errs_f.append(np.max(np.abs(
                    (eval_f(problem, q_e, rho_e, v_e, t) - f0) / eps - lin_f)))
            scale = max(1.0, np.max(np.abs(lin_g)), np.max(np.abs(lin_f)))
            # first-order remainder: halving eps should nearly halve the error
            assert errs_g[0] / scale < 0.05
            assert errs_f[0] / scale < 0.05
            assert errs_g[0] / max(errs_g[1], 1e-14) > 2.0**0.9 * 0.95
            assert errs_f[0] / max(errs_f[1], 1e-14) > 2.0**0.9 * 0.95

    def test_segment_average_reproduces_finite_difference(self):
        # g(u) - g(u*) = g'(u, u*)(u - u*) up to the Gauss quadrature error
        problem = make_problem(n_species=2, model=all_models(2)[2])
        ustar = smooth_state(problem, amp=0.2)
        q1 = ustar[0] + 0.05 * np.cos(np.pi * problem.grid.centers)[:, None]
        rho1 = ustar[1] * (1.0 + 0.02 * np.cos(2 * np.pi * problem.grid.centers))
        v1 = ustar[2] + 0.03 * np.sin(np.pi * problem.grid.centers)
        u1 = (q1, rho1, v1)
        gp = eval_g_prime(problem, u1, ustar, 0.0)
        lhs = eval_g(problem, *u1, 0.0) - eval_g(problem, *ustar, 0.0)
        rhs = gp.apply(problem.grid, q1 - ustar[0], rho1 - ustar[1],
                       v1 - ustar[2])
        assert np.max(np.abs(lhs - rhs)) < 2e-8
