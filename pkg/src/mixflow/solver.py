"""Time-stepping fixed-point solvers for the reformulated mixture system.

In the reduced variables (q, varrho, v) the system reads

    R_q(varrho, q) dq/dt - div( Mt(varrho, q) grad q ) = g(q, varrho, v, ...)
    d varrho/dt + div(varrho v) = 0
    varrho dv/dt - div S(grad v) = f(q, varrho, v, ...)

with Neumann walls for q, no-slip walls for v, and lower-order right-hand
sides g and f collecting convection, forcing and reaction terms.  Two
linearisation strategies turn this into an iterable map:

* ``fixed_point_T``  -- freeze coefficients and lower-order terms at the
  previous iterate, solve continuity (conservative upwind), then the two
  linear parabolic problems (implicit Euler, block-tridiagonal solves)
  over the whole time window; repeat until the sweep-to-sweep
  sup-difference is below tolerance.  The first iterate extends the
  initial data as constants in time.

* ``fixed_point_T1`` -- near an equilibrium, iterate on the perturbation
  (r, sigma, w) = (q, varrho, v) - (qhat0, rhohat0, vhat0) around extensions
  of the initial data (constant in time for q and v; the density extension
  transports the initial density with the extended velocity).  The
  lower-order terms are fully linearised through the segment-averaged
  derivative operators of :mod:`mixflow.linearization`, and sigma solves a
  perturbed continuity equation whose source is discretised in flux form,
  so its discrete mean stays exactly zero.

Notes on conventions baked into the discretisation:

* The reaction enters g with a plus sign (the sign carried by the
  divergence-expanded form of the mass-transport block, which is the
  equation the solver discretises).
* Continuity is advanced with the frozen velocity at the start of each
  step; the parabolic steps are implicit Euler with coefficients and
  right-hand sides frozen at the end-of-step time of the previous iterate.
* Per sweep, a contraction energy (weighted L2 of iterate differences
  plus gradient dissipation over a window) is recorded; geometric decay of
  this energy is the practical contraction monitor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional

import numpy as np

from . import changevar, diagnostics, linearization, mobility
from .discretization import BC, Grid1D, d1, d2, face_average, integrate, solve_block_tridiag
from .errors import PositivityError, StepSizeError, UsageError

DEFAULT_CFL = 0.9
DEFAULT_MAX_SUBSTEPS = 100_000
_COMPAT_TOL_FACTOR = 5.0


# ---------------------------------------------------------------------------
# problem and configuration containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ForcingSpec:
    """Projected body forces.

    ``btilde(x, t)`` returns the reduced force (n, N-1) and must vanish at
    the domain endpoints; ``btilde_div`` is its spatial derivative (needed
    in g); ``bbar(x, t)`` is the mean force driving the momentum balance.
    ``None`` entries mean identically zero.
    """

    n_q: int
    btilde: Optional[Callable] = None
    btilde_div: Optional[Callable] = None
    bbar: Optional[Callable] = None

    def __post_init__(self):
        if (self.btilde is None) != (self.btilde_div is None):
            raise UsageError("btilde and btilde_div must be supplied together")

    @property
    def has_btilde(self) -> bool:
        return self.btilde is not None

    @property
    def is_zero(self) -> bool:
        return self.btilde is None and self.bbar is None

    def btilde_at(self, x, t):
        if self.btilde is None:
            return np.zeros((x.shape[0], self.n_q))
        return np.asarray(self.btilde(x, t), dtype=float)

    def btilde_div_at(self, x, t):
        if self.btilde_div is None:
            return np.zeros((x.shape[0], self.n_q))
        return np.asarray(self.btilde_div(x, t), dtype=float)

    def bbar_at(self, x, t):
        if self.bbar is None:
            return np.zeros(x.shape[0])
        return np.asarray(self.bbar(x, t), dtype=float)


def sine_forcing(n_q, length, btilde_amplitude=None, bbar_amplitude=0.0,
                 mode=1, omega=0.0) -> ForcingSpec:
    """b_tilde ~ sin(k pi x / L), b_bar ~ cos(k pi x / L), cos(omega t) in time.

    The sine profile vanishes at both walls, which is the 1D form of the
    no-normal-force compatibility required of the projected forcing.
    """
    k = mode * math.pi / length
    amp = None if btilde_amplitude is None else np.atleast_1d(
        np.asarray(btilde_amplitude, dtype=float))
    if amp is not None and amp.shape != (n_q,):
        raise UsageError(f"btilde_amplitude must have {n_q} components")

    btilde = btilde_div = bbar = None
    if amp is not None and np.any(amp != 0.0):
        def btilde(x, t, _a=amp, _k=k, _w=omega):
            return np.sin(_k * x)[:, None] * _a * math.cos(_w * t)

        def btilde_div(x, t, _a=amp, _k=k, _w=omega):
            return _k * np.cos(_k * x)[:, None] * _a * math.cos(_w * t)

    if bbar_amplitude:
        def bbar(x, t, _b=bbar_amplitude, _k=k, _w=omega):
            return _b * np.cos(_k * x) * math.cos(_w * t)

    return ForcingSpec(n_q=n_q, btilde=btilde, btilde_div=btilde_div, bbar=bbar)


def no_forcing(n_q) -> ForcingSpec:
    return ForcingSpec(n_q=n_q)


@dataclass(frozen=True)
class MixtureProblem:
    """Static data of one solver setup: models, grid, closure and forcing."""

    model: object
    basis: object
    grid: Grid1D
    onsager: mobility.OnsagerSpec
    reaction: mobility.ReactionSpec
    forcing: ForcingSpec
    viscosity: float  # effective 1D modulus lambda_bulk + 2 mu_shear

    def __post_init__(self):
        if not self.viscosity > 0.0:
            raise UsageError("effective viscosity must be strictly positive")
        if self.forcing.n_q != self.n_q:
            raise UsageError("forcing dimension does not match the basis")

    @property
    def n_q(self) -> int:
        return self.basis.n_species - 1


@dataclass(frozen=True)
class SolverConfig:
    """Time window, fixed-point controls and contraction-energy weights."""

    dt: float
    t_end: float
    fp_tol: float = 1e-10
    fp_max_sweeps: int = 40
    contraction_window: Optional[float] = None  # t1; defaults to t_end
    k0: float = 1.0
    p0: float = 1.0
    mode: str = "direct"  # "direct" (T) or "perturbation" (T1)
    cfl_max: float = DEFAULT_CFL
    max_substeps: int = DEFAULT_MAX_SUBSTEPS
    keep_iterates: bool = False

    def __post_init__(self):
        if not (self.dt > 0.0 and self.t_end > 0.0 and self.fp_tol > 0.0):
            raise UsageError("dt, t_end and fp_tol must be positive")
        steps = self.t_end / self.dt
        if abs(steps - round(steps)) > 1e-8 * max(1.0, steps):
            raise UsageError("t_end must be an integer number of time steps")
        if self.mode not in ("direct", "perturbation"):
            raise UsageError(f"unknown solver mode {self.mode!r}")
        t1 = self.t_end if self.contraction_window is None else self.contraction_window
        if not 0.0 < t1 <= self.t_end + 1e-12 * self.t_end:
            raise UsageError("contraction window must lie in (0, t_end]")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    @property
    def window(self) -> float:
        return self.t_end if self.contraction_window is None else self.contraction_window


@dataclass
class Trajectory:
    """Snapshots of the reduced state at every time level."""

    times: np.ndarray          # (K+1,)
    q: np.ndarray              # (K+1, n, N-1)
    varrho: np.ndarray         # (K+1, n)
    v: np.ndarray              # (K+1, n)

    @property
    def n_steps(self) -> int:
        return self.times.shape[0] - 1


@dataclass
class SweepRecord:
    """Scalar monitors of one fixed-point sweep."""

    sweep: int
    sup_diff: float
    energy: float
    energy_ratio: Optional[float]
    v_surrogate: float
    blowup: float
    rho_min: float
    rho_max: float


@dataclass
class IterationTrace:
    """Full record of a fixed-point run."""

    mode: str
    sweeps: list = dc_field(default_factory=list)
    converged: bool = False
    residuals: dict = dc_field(default_factory=dict)
    mass_drift: float = float("nan")
    sigma_mean_max: Optional[float] = None
    equilibrium_distance: Optional[float] = None
    iterates: Optional[list] = None

    @property
    def non_contractive(self) -> bool:
        return not self.converged


# ---------------------------------------------------------------------------
# right-hand sides g and f
# ---------------------------------------------------------------------------


def reduced_mobility_from_rho(onsager, basis, rho):
    """Mt = Q^T M(rho) Q when the composition is already reconstructed."""
    return mobility.reduced_mobility_from_rho(onsager, basis, rho)


def eval_g(problem: MixtureProblem, q, varrho, v, t, coeffs=None, mob=None):
    """Lower-order right-hand side of the q-block.

    g = (R_rho varrho - R) div v - R_q v . grad q
        - Mt_rho grad varrho . btilde - Mt_q grad q . btilde - Mt div btilde
        + rtilde(varrho, q)
    """
    grid = problem.grid
    if coeffs is None:
        coeffs = changevar.state_coefficients(problem.model, problem.basis, varrho, q)
    qx = d1(q, grid, BC.NEUMANN_ZERO)
    div_v = d1(v, grid, BC.DIRICHLET_ZERO)
    g = (coeffs.R_rho * varrho[:, None] - coeffs.R) * div_v[:, None]
    g -= v[:, None] * np.einsum("jkl,jl->jk", coeffs.R_q, qx)
    if problem.forcing.has_btilde:
        x = grid.centers
        bt = problem.forcing.btilde_at(x, t)
        btx = problem.forcing.btilde_div_at(x, t)
        if mob is None:
            mob = mobility.reduced_mobility_bundle(
                problem.onsager, problem.basis, problem.model, varrho, q,
                guess_rho=coeffs.rho)
        Mt, Mt_rho, Mt_q = mob
        rhox = d1(varrho, grid, BC.NONE)
        g -= rhox[:, None] * np.einsum("jkl,jl->jk", Mt_rho, bt)
        g -= np.einsum("jmkl,jm,jl->jk", Mt_q, qx, bt)
        g -= np.einsum("jkl,jl->jk", Mt, btx)
    if problem.reaction.rate is not None:
        g += problem.reaction.rtilde(problem.model, problem.basis, varrho, q,
                                     rho=coeffs.rho)
    return g


def eval_f(problem: MixtureProblem, q, varrho, v, t, coeffs=None):
    """Lower-order right-hand side of the momentum block.

    f = -P_rho grad varrho - P_q . grad q - varrho (v . grad) v
        + R . btilde + varrho bbar
    """
    grid = problem.grid
    if coeffs is None:
        coeffs = changevar.state_coefficients(problem.model, problem.basis, varrho, q)
    qx = d1(q, grid, BC.NEUMANN_ZERO)
    rhox = d1(varrho, grid, BC.NONE)
    vx = d1(v, grid, BC.DIRICHLET_ZERO)
    f = -coeffs.P_rho * rhox - np.einsum("jk,jk->j", coeffs.P_q, qx)
    f -= varrho * v * vx
    if not problem.forcing.is_zero:
        x = grid.centers
        f += np.einsum("jk,jk->j", coeffs.R, problem.forcing.btilde_at(x, t))
        f += varrho * problem.forcing.bbar_at(x, t)
    return f


# ---------------------------------------------------------------------------
# continuity equation: conservative upwind and the characteristics oracle
# ---------------------------------------------------------------------------


def face_velocity(v_cells):
    """Cell velocities to face velocities; the walls are at rest."""
    vf = np.zeros(v_cells.shape[0] + 1)
    vf[1:-1] = 0.5 * (v_cells[:-1] + v_cells[1:])
    return vf


def upwind_flux(cell_values, vf):
    """First-order upwind flux of cell_values at every face."""
    flux = np.zeros(vf.shape[0])
    plus = np.maximum(vf[1:-1], 0.0)
    minus = np.minimum(vf[1:-1], 0.0)
    flux[1:-1] = plus * cell_values[:-1] + minus * cell_values[1:]
    return flux


def upwind_substeps(grid, vf, dt, cfl_max, max_substeps, extra=0.0):
    """Number of substeps keeping the positivity-limiting CFL below cfl_max."""
    outflow = np.maximum(vf[1:], 0.0) - np.minimum(vf[:-1], 0.0)
    cmax = float(np.max(outflow)) + extra
    nsub = max(1, int(math.ceil(dt * cmax / (grid.dx * cfl_max))))
    if nsub > max_substeps:
        raise StepSizeError(
            f"continuity sub-stepping needs {nsub} substeps (cap {max_substeps}); "
            "reduce dt or the velocity magnitude"
        )
    return nsub


def upwind_transport_step(grid, values, v_cells, dt, cfl_max=DEFAULT_CFL,
                          max_substeps=DEFAULT_MAX_SUBSTEPS, extra_face_flux=None):
    """One conservative upwind step from t to t+dt with frozen velocity.

    The update is sub-stepped so the positivity-limiting CFL number stays
    below ``cfl_max``; total mass changes only through wall fluxes, which
    vanish.  ``extra_face_flux`` (shape n+1, zero at the walls) is added to
    the upwind flux, still in conservative form.
    """
    vf = face_velocity(v_cells)
    nsub = upwind_substeps(grid, vf, dt, cfl_max, max_substeps)
    tau = dt / nsub
    out = np.asarray(values, dtype=float).copy()
    for _ in range(nsub):
        flux = upwind_flux(out, vf)
        if extra_face_flux is not None:
            flux = flux + extra_face_flux
        out -= (tau / grid.dx) * (flux[1:] - flux[:-1])
    return out


def solve_continuity(grid, rho0, v_series, dt, cfl_max=DEFAULT_CFL,
                     max_substeps=DEFAULT_MAX_SUBSTEPS):
    """March d varrho/dt + div(varrho v*) = 0 with the frozen velocity series.

    ``v_series`` has shape (K+1, n); step k uses the velocity at its start.
    Total discrete mass is conserved to rounding per step, and positivity
    is preserved under the sub-stepped CFL guard.
    """
    v_series = np.asarray(v_series, dtype=float)
    K = v_series.shape[0] - 1
    out = np.empty((K + 1, grid.n))
    out[0] = np.asarray(rho0, dtype=float)
    for k in range(K):
        out[k + 1] = upwind_transport_step(grid, out[k], v_series[k], dt,
                                           cfl_max, max_substeps)
    return out


def characteristics_density(grid, rho0_fn, v_series, dt, time_index=None,
                            n_substeps=4):
    """Density at one time level from the characteristics representation.

    Integrates the backward characteristics through the (interpolated)
    velocity field with RK4 and evaluates

        varrho(x, t) = varrho0(y(0; t, x)) exp(-int_0^t div v(y(s), s) ds).

    Cross-validates the upwind scheme; ``rho0_fn`` is the analytic initial
    density so no interpolation error enters at t = 0.
    """
    v_series = np.asarray(v_series, dtype=float)
    K = v_series.shape[0] - 1
    k_target = K if time_index is None else int(time_index)
    if not 0 <= k_target <= K:
        raise UsageError("time_index outside the stored series")
    xs = np.concatenate([[0.0], grid.centers, [grid.length]])
    vx_series = np.stack([d1(v_series[k], grid, BC.DIRICHLET_ZERO)
                          for k in range(K + 1)])

    def velocity(y, tau):
        k = min(max(int(tau / dt), 0), K - 1) if K > 0 else 0
        w = (tau - k * dt) / dt if K > 0 else 0.0
        vk = (1.0 - w) * v_series[k] + w * v_series[k + 1] if K > 0 else v_series[0]
        vals = np.concatenate([[0.0], vk, [0.0]])
        return np.interp(y, xs, vals)

    def divergence(y, tau):
        k = min(max(int(tau / dt), 0), K - 1) if K > 0 else 0
        w = (tau - k * dt) / dt if K > 0 else 0.0
        dk = (1.0 - w) * vx_series[k] + w * vx_series[k + 1] if K > 0 else vx_series[0]
        return np.interp(y, grid.centers, dk)

    y = grid.centers.copy()
    D = np.zeros(grid.n)
    if k_target > 0:
        total = k_target * n_substeps
        h = -k_target * dt / total
        tau = k_target * dt
        for _ in range(total):
            k1y, k1d = velocity(y, tau), divergence(y, tau)
            k2y = velocity(y + 0.5 * h * k1y, tau + 0.5 * h)
            k2d = divergence(y + 0.5 * h * k1y, tau + 0.5 * h)
            k3y = velocity(y + 0.5 * h * k2y, tau + 0.5 * h)
            k3d = divergence(y + 0.5 * h * k2y, tau + 0.5 * h)
            k4y = velocity(y + h * k3y, tau + h)
            k4d = divergence(y + h * k3y, tau + h)
            y = y + (h / 6.0) * (k1y + 2.0 * k2y + 2.0 * k3y + k4y)
            D = D + (h / 6.0) * (k1d + 2.0 * k2d + 2.0 * k3d + k4d)
            tau += h
        y = np.clip(y, 0.0, grid.length)
    return np.asarray(rho0_fn(y), dtype=float) * np.exp(D)


# ---------------------------------------------------------------------------
# implicit Euler steps of the parabolic blocks
# ---------------------------------------------------------------------------


def diffusion_apply(grid, Mt_cells, q_cells):
    """Flux-form div(Mt grad q) with zero-flux walls; matches the implicit step."""
    Mt_f = face_average(Mt_cells)
    dq = (q_cells[1:] - q_cells[:-1]) / grid.dx
    flux = np.einsum("jkl,jl->jk", Mt_f, dq)
    out = np.empty_like(q_cells)
    out[0] = flux[0] / grid.dx
    out[-1] = -flux[-1] / grid.dx
    out[1:-1] = (flux[1:] - flux[:-1]) / grid.dx
    return out


def step_q_parabolic(grid, Rq_cells, Mt_cells, g_cells, q_prev, dt):
    """One implicit Euler step of R_q dq/dt - div(Mt grad q) = g, Neumann walls.

    Coefficients are cellwise SPD matrices; the face mobilities are
    arithmetic averages and the resulting block-tridiagonal system is
    solved directly.
    """
    n, m = g_cells.shape
    invdx2 = 1.0 / grid.dx**2
    Mt_f = face_average(Mt_cells) * invdx2
    lower = np.zeros((n, m, m))
    upper = np.zeros((n, m, m))
    diag = Rq_cells / dt
    lower[1:] = -Mt_f
    upper[:-1] = -Mt_f
    diag = diag.copy()
    diag[1:] += Mt_f
    diag[:-1] += Mt_f
    rhs = g_cells + np.einsum("jkl,jl->jk", Rq_cells, q_prev) / dt
    return solve_block_tridiag(lower, diag, upper, rhs)


def step_v_parabolic(grid, rho_cells, f_cells, v_prev, dt, viscosity):
    """One implicit Euler step of varrho dv/dt - mu_eff v_xx = f, no-slip walls."""
    n = f_cells.shape[0]
    a = viscosity / grid.dx**2
    diag = rho_cells / dt + 2.0 * a
    diag = diag.copy()
    diag[0] += a   # odd-extension ghost doubles the wall coupling
    diag[-1] += a
    lower = np.full(n, -a)
    upper = np.full(n, -a)
    rhs = f_cells + rho_cells * v_prev / dt
    return solve_block_tridiag(lower[:, None, None], diag[:, None, None],
                               upper[:, None, None], rhs[:, None])[:, 0]


# ---------------------------------------------------------------------------
# contraction energy
# ---------------------------------------------------------------------------


def contraction_energy(prev, curr, grid, dt, window=None, k0=1.0, p0=1.0):
    """Weighted iterate-difference energy over a window [0, t1].

    E = k0 sup_{tau <= t1} ( ||e(tau)||_L2^2 + ||sigma(tau)||_L2^2 )
        + p0 int_0^{t1} int ( |grad r|^2 + |grad w|^2 )

    with e = |r| + |w| pointwise, r/sigma/w the differences of the q,
    varrho and v components of the two sweeps.  The time integral uses the
    right-endpoint rule (both sweeps share the initial data, so the k = 0
    difference vanishes).
    """
    q_a, rho_a, v_a = prev
    q_b, rho_b, v_b = curr
    q_a, q_b = np.asarray(q_a, float), np.asarray(q_b, float)
    rho_a, rho_b = np.asarray(rho_a, float), np.asarray(rho_b, float)
    v_a, v_b = np.asarray(v_a, float), np.asarray(v_b, float)
    if q_a.shape != q_b.shape or rho_a.shape != rho_b.shape or v_a.shape != v_b.shape:
        raise UsageError("sweep snapshots have mismatched shapes")
    if q_a.shape[0] != rho_a.shape[0] or q_a.shape[0] != v_a.shape[0]:
        raise UsageError("sweep components have mismatched time axes")
    K = q_a.shape[0] - 1
    k1 = K if window is None else min(K, int(round(window / dt)))
    r = q_b[: k1 + 1] - q_a[: k1 + 1]
    sigma = rho_b[: k1 + 1] - rho_a[: k1 + 1]
    w = v_b[: k1 + 1] - v_a[: k1 + 1]
    e = np.linalg.norm(r, axis=-1) + np.abs(w)
    sup_term = float(np.max(np.sum(e**2 + sigma**2, axis=1) * grid.dx))
    grad = 0.0
    for k in range(1, k1 + 1):
        rx = d1(r[k], grid, BC.NEUMANN_ZERO)
        wx = d1(w[k], grid, BC.DIRICHLET_ZERO)
        grad += dt * float(np.sum(rx**2) + np.sum(wx**2)) * grid.dx
    return k0 * sup_term + p0 * grad


# ---------------------------------------------------------------------------
# initial-data validation shared by both drivers
# ---------------------------------------------------------------------------


def _wall_derivative(field, dx):
    """Quadratic-fit estimates of the derivative at both wall faces."""
    left = (-2.0 * field[0] + 3.0 * field[1] - field[2]) / dx
    right = (2.0 * field[-1] - 3.0 * field[-2] + field[-3]) / dx
    return left, right


def _wall_value(field):
    """Quadratic-fit estimates of the value at both wall faces."""
    left = (15.0 * field[0] - 10.0 * field[1] + 3.0 * field[2]) / 8.0
    right = (15.0 * field[-1] - 10.0 * field[-2] + 3.0 * field[-3]) / 8.0
    return left, right


def validate_initial_state(problem, q0, rho0, v0):
    """Shape checks plus the discrete compatibility conditions at the walls.

    Wall values/derivatives are extrapolated quadratically from the first
    cell centres, so compatible analytic profiles pass at second order in
    the grid spacing.
    """
    grid, m = problem.grid, problem.n_q
    q0 = np.asarray(q0, dtype=float)
    rho0 = np.asarray(rho0, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    if q0.shape != (grid.n, m) or rho0.shape != (grid.n,) or v0.shape != (grid.n,):
        raise UsageError("initial fields have wrong shapes for this problem")
    if np.min(rho0) <= 0.0:
        raise PositivityError("initial total mass density must be positive")
    tol = _COMPAT_TOL_FACTOR * grid.dx**2
    qscale = max(1.0, float(np.max(np.abs(q0))))
    dq_left, dq_right = _wall_derivative(q0, grid.dx)
    if max(np.max(np.abs(dq_left)), np.max(np.abs(dq_right))) > tol * qscale:
        raise UsageError(
            "initial q violates the wall compatibility condition grad q = 0"
        )
    vscale = max(1.0, float(np.max(np.abs(v0))))
    v_left, v_right = _wall_value(v0)
    if max(abs(v_left), abs(v_right)) > tol * vscale:
        raise UsageError("initial velocity violates the no-slip compatibility v = 0")
    return q0, rho0, v0


def _sweep_diagnostics(q_new, v_new, rho_new, grid, dt):
    report_q = diagnostics.v_norm_surrogate(q_new, grid, dt, p=4.0,
                                            bc=BC.NEUMANN_ZERO)
    report_v = diagnostics.v_norm_surrogate(v_new, grid, dt, p=4.0,
                                            bc=BC.DIRICHLET_ZERO)
    v_sur = float(report_q.v_series[-1] + report_v.v_series[-1])
    blow = float(diagnostics.blowup_functional(q_new, v_new, grid, dt)[-1])
    return v_sur, blow


# ---------------------------------------------------------------------------
# the direct fixed-point map T
# ---------------------------------------------------------------------------


def fixed_point_T(problem: MixtureProblem, q0, rho0, v0, config: SolverConfig):
    """Iterate the frozen-coefficient map until the sweeps stop moving.

    Returns ``(trajectory, trace)``; non-convergence is reported through
    ``trace.converged`` (the trace is flagged non-contractive), while a
    loss of density positivity aborts with :class:`PositivityError`.
    """
    grid, dt = problem.grid, config.dt
    q0, rho0, v0 = validate_initial_state(problem, q0, rho0, v0)
    K = config.n_steps
    times = np.arange(K + 1) * dt

    qs = np.repeat(q0[None], K + 1, axis=0)
    vs = np.repeat(v0[None], K + 1, axis=0)
    rho_prev = np.repeat(rho0[None], K + 1, axis=0)

    trace = IterationTrace(mode="direct")
    if config.keep_iterates:
        trace.iterates = []
    prev_energy = None
    converged = False

    for sweep in range(1, config.fp_max_sweeps + 1):
        rho_new = solve_continuity(grid, rho0, vs, dt, config.cfl_max,
                                   config.max_substeps)
        rho_min = float(np.min(rho_new))
        if rho_min <= 0.0:
            k_bad, j_bad = np.unravel_index(int(np.argmin(rho_new)), rho_new.shape)
            raise PositivityError(
                f"density positivity lost at sweep {sweep}, t={k_bad * dt:g}, "
                f"x={grid.centers[j_bad]:g} (min {rho_min:.3e})"
            )
        q_new = np.empty_like(qs)
        v_new = np.empty_like(vs)
        q_new[0] = q0
        v_new[0] = v0
        guess_rho = None
        for k in range(K):
            t_next = times[k + 1]
            coeffs = changevar.state_coefficients(
                problem.model, problem.basis, rho_new[k + 1], qs[k + 1],
                guess_rho=guess_rho)
            guess_rho = coeffs.rho
            if problem.forcing.has_btilde:
                mob = mobility.reduced_mobility_bundle(
                    problem.onsager, problem.basis, problem.model,
                    rho_new[k + 1], qs[k + 1], guess_rho=coeffs.rho)
                Mt = mob[0]
            else:
                mob = None
                Mt = reduced_mobility_from_rho(problem.onsager, problem.basis,
                                               coeffs.rho)
            g_star = eval_g(problem, qs[k + 1], rho_new[k + 1], vs[k + 1],
                            t_next, coeffs=coeffs, mob=mob)
            q_new[k + 1] = step_q_parabolic(grid, coeffs.R_q, Mt, g_star,
                                            q_new[k], dt)
            f_star = eval_f(problem, qs[k + 1], rho_new[k + 1], vs[k + 1],
                            t_next, coeffs=coeffs)
            v_new[k + 1] = step_v_parabolic(grid, rho_new[k + 1], f_star,
                                            v_new[k], dt, problem.viscosity)

        sup_diff = max(float(np.max(np.abs(q_new - qs))),
                       float(np.max(np.abs(v_new - vs))))
        energy = contraction_energy((qs, rho_prev, vs), (q_new, rho_new, v_new),
                                    grid, dt, config.window, config.k0, config.p0)
        ratio = (energy / prev_energy) if prev_energy and prev_energy > 0.0 else None
        v_sur, blow = _sweep_diagnostics(q_new, v_new, rho_new, grid, dt)
        trace.sweeps.append(SweepRecord(
            sweep=sweep, sup_diff=sup_diff, energy=energy, energy_ratio=ratio,
            v_surrogate=v_sur, blowup=blow, rho_min=rho_min,
            rho_max=float(np.max(rho_new)),
        ))
        if config.keep_iterates:
            trace.iterates.append(Trajectory(times, q_new.copy(), rho_new.copy(),
                                             v_new.copy()))
        prev_energy = energy
        qs, vs, rho_prev = q_new, v_new, rho_new
        if sup_diff <= config.fp_tol:
            converged = True
            break

    trace.converged = converged
    trajectory = Trajectory(times=times, q=qs, varrho=rho_prev, v=vs)
    trace.residuals = nonlinear_residuals(problem, trajectory, config)
    mass = integrate(rho_prev.T, grid)  # (K+1,) total mass per time level
    trace.mass_drift = float(np.max(np.abs(mass - mass[0])))
    return trajectory, trace


def nonlinear_residuals(problem: MixtureProblem, traj: Trajectory,
                        config: SolverConfig):
    """Sup-norm residuals of the coupled nonlinear system on a trajectory.

    Assembled directly from the snapshots with the solver's discrete
    operators (backward time differences, flux-form diffusion, upwind
    continuity); at a converged fixed point these are at the level of the
    fixed-point tolerance times the coefficient Lipschitz constants.
    """
    grid, dt = problem.grid, config.dt
    res_q = res_c = res_v = 0.0
    guess_rho = None
    for k in range(traj.n_steps):
        t_next = traj.times[k + 1]
        q1, rho1, v1 = traj.q[k + 1], traj.varrho[k + 1], traj.v[k + 1]
        coeffs = changevar.state_coefficients(problem.model, problem.basis,
                                              rho1, q1, guess_rho=guess_rho)
        guess_rho = coeffs.rho
        Mt = reduced_mobility_from_rho(problem.onsager, problem.basis, coeffs.rho)
        mob = None
        if problem.forcing.has_btilde:
            mob = mobility.reduced_mobility_bundle(
                problem.onsager, problem.basis, problem.model, rho1, q1,
                guess_rho=coeffs.rho)
        g = eval_g(problem, q1, rho1, v1, t_next, coeffs=coeffs, mob=mob)
        dq_dt = np.einsum("jkl,jl->jk", coeffs.R_q, (q1 - traj.q[k]) / dt)
        res_q = max(res_q, float(np.max(np.abs(
            dq_dt - diffusion_apply(grid, Mt, q1) - g))))
        rho_pred = upwind_transport_step(grid, traj.varrho[k], traj.v[k], dt,
                                         config.cfl_max, config.max_substeps)
        res_c = max(res_c, float(np.max(np.abs((rho1 - rho_pred) / dt))))
        f = eval_f(problem, q1, rho1, v1, t_next, coeffs=coeffs)
        res_v = max(res_v, float(np.max(np.abs(
            rho1 * (v1 - traj.v[k]) / dt
            - problem.viscosity * d2(v1, grid, BC.DIRICHLET_ZERO) - f))))
    return {"q": res_q, "continuity": res_c, "v": res_v}


# ---------------------------------------------------------------------------
# the perturbation map T1 around an equilibrium
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EquilibriumState:
    """A spatially constant resting equilibrium (v = 0, no forcing)."""

    q: np.ndarray
    varrho: float

    def __post_init__(self):
        q = np.atleast_1d(np.asarray(self.q, dtype=float))
        object.__setattr__(self, "q", q)
        if not self.varrho > 0.0:
            raise UsageError("equilibrium density must be positive")


def fixed_point_T1(problem: MixtureProblem, equilibrium: EquilibriumState,
                   q0, rho0, v0, config: SolverConfig):
    """Iterate the linearised perturbation map around extended initial data.

    The extensions are constant in time for q and v (they satisfy the same
    wall compatibilities as the data), while the density extension
    transports the initial density with the extended velocity.  Heat-kernel
    liftings would serve equally; the constant extension is the desk-scale
    choice and is exact at an equilibrium.
    """
    if not problem.forcing.is_zero or problem.reaction.rate is not None:
        raise UsageError(
            "the perturbation solver ships for resting states: "
            "no forcing and no reactions"
        )
    grid, dt = problem.grid, config.dt
    q0, rho0, v0 = validate_initial_state(problem, q0, rho0, v0)
    if equilibrium.q.shape != (problem.n_q,):
        raise UsageError("equilibrium q has the wrong number of components")
    K = config.n_steps
    times = np.arange(K + 1) * dt

    # extensions of the initial data
    q_hat = np.repeat(q0[None], K + 1, axis=0)
    v_hat = np.repeat(v0[None], K + 1, axis=0)
    rho_hat = solve_continuity(grid, rho0, v_hat, dt, config.cfl_max,
                               config.max_substeps)
    vhat_faces = face_velocity(v0)
    ghat = np.empty((K, grid.n, problem.n_q))
    fhat = np.empty((K, grid.n))
    guess_rho = None
    for k in range(K):
        c0 = changevar.state_coefficients(problem.model, problem.basis,
                                          rho_hat[k + 1], q_hat[k + 1],
                                          guess_rho=guess_rho)
        guess_rho = c0.rho
        Mt0 = reduced_mobility_from_rho(problem.onsager, problem.basis, c0.rho)
        g0 = eval_g(problem, q_hat[k + 1], rho_hat[k + 1], v_hat[k + 1],
                    times[k + 1], coeffs=c0)
        ghat[k] = g0 + diffusion_apply(grid, Mt0, q_hat[k + 1])
        f0 = eval_f(problem, q_hat[k + 1], rho_hat[k + 1], v_hat[k + 1],
                    times[k + 1], coeffs=c0)
        fhat[k] = f0 + problem.viscosity * d2(v_hat[k + 1], grid,
                                              BC.DIRICHLET_ZERO)

    ext = linearization.ExtensionFields(
        qhat_x=d1(q0, grid, BC.NEUMANN_ZERO),
        qhat_lap=d2(q0, grid, BC.NEUMANN_ZERO),
    )

    r_s = np.zeros((K + 1, grid.n, problem.n_q))
    w_s = np.zeros((K + 1, grid.n))
    sigma_s = np.zeros((K + 1, grid.n))

    trace = IterationTrace(mode="perturbation")
    trace.equilibrium_distance = float(
        np.max(np.abs(q0 - equilibrium.q))
        + np.max(np.abs(rho0 - equilibrium.varrho))
        + np.max(np.abs(v0)))
    if config.keep_iterates:
        trace.iterates = []
    prev_energy = None
    converged = False

    for sweep in range(1, config.fp_max_sweeps + 1):
        q_star = q_hat + r_s
        v_star = v_hat + w_s
        rho_star = solve_continuity(grid, rho0, v_star, dt, config.cfl_max,
                                    config.max_substeps)
        if np.min(rho_star) <= 0.0:
            raise PositivityError(
                f"density positivity lost in perturbation sweep {sweep}"
            )
        r_new = np.zeros_like(r_s)
        w_new = np.zeros_like(w_s)
        sigma_new = np.zeros_like(sigma_s)
        guess_rho = None
        for k in range(K):
            c_star = changevar.state_coefficients(
                problem.model, problem.basis, rho_star[k + 1], q_star[k + 1],
                guess_rho=guess_rho)
            guess_rho = c_star.rho
            Mt_star = reduced_mobility_from_rho(problem.onsager, problem.basis,
                                                c_star.rho)
            u_hat = (q_hat[k + 1], rho_hat[k + 1], v_hat[k + 1])
            u_star = (q_star[k + 1], rho_star[k + 1], v_star[k + 1])
            gp, fp = linearization.segment_prime_operators(
                problem, u_hat, u_star, times[k + 1], extension=ext)
            rhs_r = ghat[k] + gp.apply(grid, r_new[k], sigma_new[k], w_new[k])
            r_new[k + 1] = step_q_parabolic(grid, c_star.R_q, Mt_star, rhs_r,
                                            r_new[k], dt)
            rhs_w = fhat[k] + fp.apply(grid, r_new[k], sigma_new[k], w_new[k])
            w_new[k + 1] = step_v_parabolic(grid, rho_star[k + 1], rhs_w,
                                            w_new[k], dt, problem.viscosity)
            # sigma: d sigma/dt + div(sigma v*) = -div(rhohat0 w), all fluxes
            # conservative, so the discrete mean of sigma stays exactly zero
            src_flux = (upwind_flux(rho_hat[k], face_velocity(v0 + w_new[k]))
                        - upwind_flux(rho_hat[k], vhat_faces))
            sigma_new[k + 1] = upwind_transport_step(
                grid, sigma_new[k], v_star[k], dt, config.cfl_max,
                config.max_substeps, extra_face_flux=src_flux)

        sup_diff = max(float(np.max(np.abs(r_new - r_s))),
                       float(np.max(np.abs(w_new - w_s))))
        energy = contraction_energy((r_s, sigma_s, w_s),
                                    (r_new, sigma_new, w_new),
                                    grid, dt, config.window, config.k0, config.p0)
        ratio = (energy / prev_energy) if prev_energy and prev_energy > 0.0 else None
        rho_full = rho_hat + sigma_new
        if np.min(rho_full) <= 0.0:
            raise PositivityError(
                f"reconstructed density lost positivity in perturbation "
                f"sweep {sweep} (min {np.min(rho_full):.3e})"
            )
        v_sur, blow = _sweep_diagnostics(q_hat + r_new, v_hat + w_new,
                                         rho_full, grid, dt)
        trace.sweeps.append(SweepRecord(
            sweep=sweep, sup_diff=sup_diff, energy=energy, energy_ratio=ratio,
            v_surrogate=v_sur, blowup=blow, rho_min=float(np.min(rho_full)),
            rho_max=float(np.max(rho_full)),
        ))
        if config.keep_iterates:
            trace.iterates.append(Trajectory(times, (q_hat + r_new).copy(),
                                             rho_full.copy(),
                                             (v_hat + w_new).copy()))
        prev_energy = energy
        r_s, w_s, sigma_s = r_new, w_new, sigma_new
        if sup_diff <= config.fp_tol:
            converged = True
            break

    trace.converged = converged
    trajectory = Trajectory(times=times, q=q_hat + r_s, varrho=rho_hat + sigma_s,
                            v=v_hat + w_s)
    sigma_means = integrate(sigma_s.T, grid)
    trace.sigma_mean_max = float(np.max(np.abs(sigma_means)))
    mass = integrate(trajectory.varrho.T, grid)
    trace.mass_drift = float(np.max(np.abs(mass - mass[0])))
    trace.residuals = nonlinear_residuals(problem, trajectory, config)
    return trajectory, trace
