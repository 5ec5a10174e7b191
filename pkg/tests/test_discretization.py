import numpy as np
import pytest

from mixflow import (BC, Grid1D, GridError, LinearSolverError, d1, d2,
                     integrate, solve_block_tridiag)
from mixflow.discretization import face_average
from mixflow.errors import UsageError


class TestGrid:
    def test_geometry(self):
        g = Grid1D(length=2.0, n=8)
        assert g.dx == pytest.approx(0.25)
        assert g.centers[0] == pytest.approx(0.125)
        assert g.centers[-1] == pytest.approx(2.0 - 0.125)
        assert g.faces.shape == (9,)

    def test_too_coarse(self):
        with pytest.raises(GridError):
            Grid1D(length=1.0, n=3)
        with pytest.raises(GridError):
            Grid1D(length=-1.0, n=8)


class TestDifferences:
    def test_constants_are_annihilated(self):
        g = Grid1D(length=1.0, n=16)
        const = np.full(16, 3.7)
        for bc in (BC.NEUMANN_ZERO, BC.NONE):
            assert np.all(d1(const, g, bc) == 0.0)
            assert np.all(d2(const, g, bc) == 0.0)
        # the admissible constant under homogeneous Dirichlet walls is zero
        zero = np.zeros(16)
        assert np.all(d1(zero, g, BC.DIRICHLET_ZERO) == 0.0)
        assert np.all(d2(zero, g, BC.DIRICHLET_ZERO) == 0.0)

    def test_neumann_cosine_second_difference_order_two(self):
        errs = []
        for n in (32, 64, 128):
            g = Grid1D(length=1.0, n=n)
            f = np.cos(np.pi * g.centers)
            errs.append(np.max(np.abs(d2(f, g, BC.NEUMANN_ZERO)
                                      + np.pi**2 * f)))
        assert np.log2(errs[0] / errs[1]) > 1.9
        assert np.log2(errs[1] / errs[2]) > 1.9

    def test_neumann_cosine_first_difference_order_two(self):
        errs = []
        for n in (32, 64, 128):
            g = Grid1D(length=1.0, n=n)
            f = np.cos(np.pi * g.centers)
            exact = -np.pi * np.sin(np.pi * g.centers)
            errs.append(np.max(np.abs(d1(f, g, BC.NEUMANN_ZERO) - exact)))
        assert np.log2(errs[0] / errs[1]) > 1.9

    def test_dirichlet_boundary_rows_use_odd_extension(self):
        g = Grid1D(length=1.0, n=16)
        f = np.sin(np.pi * g.centers)
        out = d2(f, g, BC.DIRICHLET_ZERO)
        assert out[0] == pytest.approx((f[1] - 3.0 * f[0]) / g.dx**2, abs=0)
        assert out[-1] == pytest.approx((f[-2] - 3.0 * f[-1]) / g.dx**2, abs=0)
        out1 = d1(f, g, BC.DIRICHLET_ZERO)
        assert out1[0] == pytest.approx((f[1] + f[0]) / (2 * g.dx), abs=0)

    def test_dirichlet_interior_truncation_order_two(self):
        errs = []
        for n in (32, 64, 128):
            g = Grid1D(length=1.0, n=n)
            f = np.sin(np.pi * g.centers)
            err = np.abs(d2(f, g, BC.DIRICHLET_ZERO) + np.pi**2 * f)
            errs.append(np.max(err[1:-1]))
        assert np.log2(errs[0] / errs[1]) > 1.9

    def test_one_sided_stencils_order_two(self):
        errs1, errs2 = [], []
        for n in (32, 64, 128):
            g = Grid1D(length=1.0, n=n)
            f = np.exp(g.centers)
            errs1.append(np.max(np.abs(d1(f, g, BC.NONE) - f)))
            errs2.append(np.max(np.abs(d2(f, g, BC.NONE) - f)))
        assert np.log2(errs1[0] / errs1[1]) > 1.8
        assert np.log2(errs2[0] / errs2[1]) > 1.5  # first-order boundary rows
        assert errs2[-1] < 1e-2

    def test_discrete_integration_by_parts_is_exact(self, rng):
        # sum d1(f) g dx + sum f d1(g) dx telescopes to the wall terms,
        # which cancel exactly for the (Neumann f, Dirichlet g) ghost pair
        g = Grid1D(length=1.0, n=32)
        for _ in range(20):
            f = rng.normal(size=32)
            w = rng.normal(size=32)
            total = (np.sum(d1(f, g, BC.NEUMANN_ZERO) * w)
                     + np.sum(f * d1(w, g, BC.DIRICHLET_ZERO))) * g.dx
            assert abs(total) < 1e-13

    def test_component_axes_are_broadcast(self):
        g = Grid1D(length=1.0, n=8)
        f = np.stack([np.cos(np.pi * g.centers),
                      np.cos(2 * np.pi * g.centers)], axis=1)
        out = d2(f, g, BC.NEUMANN_ZERO)
        assert out.shape == (8, 2)

    def test_integrate_midpoint(self):
        g = Grid1D(length=2.0, n=64)
        assert integrate(np.ones(64), g) == pytest.approx(2.0)

    def test_face_average(self):
        vals = np.array([1.0, 3.0, 5.0])
        assert np.allclose(face_average(vals), [2.0, 4.0])


class TestBlockTridiagonal:
    def test_identity_returns_rhs(self, rng):
        n, m = 10, 3
        diag = np.tile(np.eye(m), (n, 1, 1))
        zero = np.zeros((n, m, m))
        rhs = rng.normal(size=(n, m))
        x = solve_block_tridiag(zero, diag, zero, rhs)
        assert np.array_equal(x, rhs)

    @pytest.mark.parametrize("m", [1, 2, 3])
    def test_random_diagonally_dominant_vs_dense(self, m, rng):
        n = 64
        lower = rng.normal(size=(n, m, m)) * 0.2
        upper = rng.normal(size=(n, m, m)) * 0.2
        diag = np.tile(3.0 * np.eye(m), (n, 1, 1)) + rng.normal(size=(n, m, m)) * 0.2
        rhs = rng.normal(size=(n, m))
        x = solve_block_tridiag(lower, diag, upper, rhs)
        dense = np.zeros((n * m, n * m))
        for j in range(n):
            dense[j * m:(j + 1) * m, j * m:(j + 1) * m] = diag[j]
            if j > 0:
                dense[j * m:(j + 1) * m, (j - 1) * m:j * m] = lower[j]
            if j < n - 1:
                dense[j * m:(j + 1) * m, (j + 1) * m:(j + 2) * m] = upper[j]
        oracle = np.linalg.solve(dense, rhs.ravel()).reshape(n, m)
        assert np.max(np.abs(x - oracle)) < 1e-11
        residual = dense @ x.ravel() - rhs.ravel()
        assert np.max(np.abs(residual)) < 1e-11 * max(1.0, np.max(np.abs(rhs)))

    def test_scalar_poisson_manufactured_solution(self):
        # -u'' = pi^2 sin(pi x), u = sin(pi x) with zero walls
        errs = []
        for n in (32, 64, 128):
            g = Grid1D(length=1.0, n=n)
            a = 1.0 / g.dx**2
            diag = np.full(n, 2.0 * a)
            diag[0] = diag[-1] = 3.0 * a  # odd-extension ghost rows
            lower = np.full(n, -a)
            upper = np.full(n, -a)
            rhs = np.pi**2 * np.sin(np.pi * g.centers)
            u = solve_block_tridiag(lower[:, None, None], diag[:, None, None],
                                    upper[:, None, None], rhs[:, None])[:, 0]
            errs.append(np.max(np.abs(u - np.sin(np.pi * g.centers))))
        assert np.log2(errs[0] / errs[1]) > 1.8
        assert np.log2(errs[1] / errs[2]) > 1.8

    def test_singular_pivot_reports_row(self):
        n, m = 5, 1
        diag = np.ones((n, m, m))
        diag[3] = 0.0
        zero = np.zeros((n, m, m))
        with pytest.raises(LinearSolverError, match="row 3"):
            solve_block_tridiag(zero, diag, zero, np.ones((n, m)))

    def test_shape_mismatch(self):
        with pytest.raises(UsageError):
            solve_block_tridiag(np.zeros((4, 1, 1)), np.ones((5, 1, 1)),
                                np.zeros((5, 1, 1)), np.ones((5, 1)))
