import math

import numpy as np

from mixflow import Grid1D, spd_product_eigs, step_q_parabolic, step_v_parabolic
from mixflow.solver import diffusion_apply


def constant_blocks(grid, mat):
    return np.tile(np.asarray(mat, dtype=float), (grid.n, 1, 1))


class TestQStep:
    def test_constant_state_is_stationary(self):
        grid = Grid1D(length=1.0, n=32)
        Rq = constant_blocks(grid, [[2.0, 0.3], [0.3, 1.0]])
        Mt = constant_blocks(grid, [[1.0, 0.1], [0.1, 0.5]])
        q_prev = np.tile([0.7, -0.2], (32, 1))
        out = step_q_parabolic(grid, Rq, Mt, np.zeros((32, 2)), q_prev, 1e-3)
        assert np.max(np.abs(out - q_prev)) < 1e-14

    def test_scalar_mode_decay_rate(self):
        # one implicit Euler step damps the cosine mode at the heat-kernel
        # rate up to O(dt) per step
        L, r_coef, m_coef = 1.0, 2.0, 0.6
        a = m_coef / r_coef
        lam = (math.pi / L) ** 2
        for n, dt in ((256, 2e-3), (256, 1e-3), (512, 5e-4)):
            grid = Grid1D(length=L, n=n)
            q0 = np.cos(math.pi * grid.centers / L)[:, None]
            out = step_q_parabolic(grid, constant_blocks(grid, [[r_coef]]),
                                   constant_blocks(grid, [[m_coef]]),
                                   np.zeros((n, 1)), q0, dt)
            ratio = out[:, 0] / q0[:, 0]
            assert np.max(ratio) - np.min(ratio) < 1e-8  # pure mode stays pure
            exact = math.exp(-a * lam * dt)
            assert abs(np.mean(ratio) - exact) < 2.0 * (a * lam * dt) ** 2

    def test_three_species_equals_eigenbasis_scalar_solves(self, rng):
        # the non-diagonal constant-coefficient system decouples in the
        # eigenbasis of Rq^{-1} Mt, whose spectrum is real positive
        grid = Grid1D(length=1.0, n=48)
        Rq_mat = np.array([[2.0, 0.4], [0.4, 1.2]])
        Mt_mat = np.array([[1.0, 0.25], [0.25, 0.6]])
        eigvals, eigvecs = spd_product_eigs(np.linalg.inv(Rq_mat), Mt_mat)
        x = grid.centers
        q = (np.stack([0.6 * np.cos(math.pi * x), -0.3 * np.cos(2 * math.pi * x)],
                      axis=1))
        coeffs = np.linalg.solve(eigvecs, q.T).T
        dt, steps = 1e-3, 5
        q_block = q.copy()
        Rq = constant_blocks(grid, Rq_mat)
        Mt = constant_blocks(grid, Mt_mat)
        for _ in range(steps):
            q_block = step_q_parabolic(grid, Rq, Mt, np.zeros_like(q_block),
                                       q_block, dt)
        for _ in range(steps):
            new = np.empty_like(coeffs)
            for i in range(2):
                new[:, i] = step_q_parabolic(
                    grid, constant_blocks(grid, [[1.0]]),
                    constant_blocks(grid, [[eigvals[i]]]),
                    np.zeros((grid.n, 1)), coeffs[:, i:i + 1], dt)[:, 0]
            coeffs = new
        q_eig = coeffs @ eigvecs.T
        assert np.max(np.abs(q_block - q_eig)) < 1e-10

    def test_diffusion_apply_matches_implicit_operator(self, rng):
        # the flux-form divergence is the exact inverse operation of the step
        grid = Grid1D(length=1.0, n=24)
        Rq = constant_blocks(grid, [[1.5, 0.2], [0.2, 0.9]])
        Mt_cells = constant_blocks(grid, [[1.0, 0.1], [0.1, 0.4]])
        Mt_cells += 0.05 * rng.normal(size=(24, 1, 1))  # cellwise variation
        Mt_cells = 0.5 * (Mt_cells + np.swapaxes(Mt_cells, -1, -2))
        g = rng.normal(size=(24, 2))
        q_prev = rng.normal(size=(24, 2))
        dt = 1e-2
        q_new = step_q_parabolic(grid, Rq, Mt_cells, g, q_prev, dt)
        lhs = (np.einsum("jkl,jl->jk", Rq, q_new - q_prev) / dt
               - diffusion_apply(grid, Mt_cells, q_new))
        assert np.max(np.abs(lhs - g)) < 1e-10


class TestVStep:
    def test_zero_forcing_keeps_rest(self):
        grid = Grid1D(length=1.0, n=32)
        out = step_v_parabolic(grid, np.full(32, 2.0), np.zeros(32),
                               np.zeros(32), 1e-3, viscosity=1.0)
        assert np.all(out == 0.0)

    def test_sine_mode_decay_rate(self):
        L, mu_eff, rho_val = 1.0, 0.8, 2.0
        lam = (math.pi / L) ** 2
        a = mu_eff / rho_val
        for n, dt in ((256, 2e-3), (512, 1e-3)):
            grid = Grid1D(length=L, n=n)
            v0 = np.sin(math.pi * grid.centers / L)
            out = step_v_parabolic(grid, np.full(n, rho_val), np.zeros(n),
                                   v0, dt, viscosity=mu_eff)
            interior = slice(4, n - 4)
            ratio = out[interior] / v0[interior]
            exact = math.exp(-a * lam * dt)
            assert abs(np.median(ratio) - exact) < 2.0 * (a * lam * dt) ** 2 \
                + 10.0 * a * dt * (math.pi / L) ** 2 * grid.dx**2

    def test_manufactured_solution_orders(self):
        # v(x, t) = e^{-t} sin(pi x); forcing from the strong equation
        L, mu_eff, rho_val = 1.0, 0.7, 1.3

        def run(n, dt, t_end):
            grid = Grid1D(length=L, n=n)
            x = grid.centers
            steps = int(round(t_end / dt))
            v = np.sin(math.pi * x / L)  # initial data at t = 0
            rho = np.full(n, rho_val)
            for k in range(steps):
                t_next = (k + 1) * dt
                f = ((mu_eff * (math.pi / L) ** 2 - rho_val)
                     * math.exp(-t_next) * np.sin(math.pi * x / L))
                v = step_v_parabolic(grid, rho, f, v, dt, viscosity=mu_eff)
            return grid, v

        t_end = 0.05
        # spatial order: time error scaled out by an exact dt ~ dx^2 coupling
        errs = []
        for n in (16, 32, 64):
            steps = n**2 // 16
            grid, v = run(n, t_end / steps, t_end)
            exact = math.exp(-t_end) * np.sin(math.pi * grid.centers / L)
            errs.append(np.max(np.abs(v - exact)))
        assert 1.8 < np.log2(errs[0] / errs[1])
        assert 1.8 < np.log2(errs[1] / errs[2])

        # temporal order via consecutive-dt differences on a fixed fine grid
        n = 512
        sols = [run(n, dt, t_end)[1] for dt in (2.5e-3, 1.25e-3, 6.25e-4)]
        d1_ = np.max(np.abs(sols[0] - sols[1]))
        d2_ = np.max(np.abs(sols[1] - sols[2]))
        assert 0.8 < np.log2(d1_ / d2_) < 1.2
