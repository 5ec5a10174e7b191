"""Discrete norm surrogates, Hölder seminorms and run certificates.

These are the computable shadows of the a-priori machinery: a parabolic
norm surrogate V(t), anisotropic Hölder seminorms on the space-time
cylinder, the blow-up monitor N(t) whose boundedness signals that a run
can be continued, and the density-bound certificate of the transported
total mass density.

The parabolic norm surrogate replaces the fractional trace norm by the
full spatial W^{1,p} norm: it is computable on grid data and controls the
same quantities at desk scale.  It is reported as a surrogate, not as the
fractional norm itself.

All statistics are exact maxima/sums over grid points, so they are
deterministic and independent of any quadrature library.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .discretization import BC, Grid1D, d1, d2
from .errors import DomainError, UsageError


def _magnitude(series):
    """Pointwise Euclidean magnitude over a trailing component axis, if any."""
    series = np.asarray(series, dtype=float)
    if series.ndim == 3:
        return np.linalg.norm(series, axis=-1)
    if series.ndim == 2:
        return np.abs(series)
    raise UsageError("expected a (K+1, n) or (K+1, n, m) series")


def _cumulative_time_lp(values_p, dt):
    """Trapezoid-in-time cumulative integral of snapshot values (already ^p)."""
    out = np.zeros(values_p.shape[0])
    if values_p.shape[0] > 1:
        inc = 0.5 * dt * (values_p[1:] + values_p[:-1])
        out[1:] = np.cumsum(inc)
    return out


@dataclass
class NormReport:
    """Cumulative L^p norms of a field and its first two differences.

    ``v_series`` is the running surrogate V(t_k): the W^{2,1}_p-type sum of
    the four cumulative space-time L^p norms plus the running sup of the
    spatial W^{1,p} norm.  It is nondecreasing by construction.
    """

    times: np.ndarray
    p: float
    lp_f: np.ndarray
    lp_fx: np.ndarray
    lp_fxx: np.ndarray
    lp_ft: Optional[np.ndarray]
    sup_w1p: np.ndarray
    v_series: np.ndarray

    @property
    def has_time_derivative(self) -> bool:
        return self.lp_ft is not None


def v_norm_surrogate(series, grid: Grid1D, dt, p, bc=BC.NEUMANN_ZERO) -> NormReport:
    """Running parabolic norm surrogate of a snapshot series.

    For a single snapshot the time derivative is unavailable and reported
    as absent; the surrogate then carries only the spatial content.
    """
    series = np.asarray(series, dtype=float)
    if not p >= 1.0:
        raise DomainError("p must be at least 1")
    K = series.shape[0] - 1
    times = np.arange(K + 1) * dt

    f_mag = _magnitude(series)
    fx = np.stack([_magnitude(d1(series[k], grid, bc)[None])[0]
                   for k in range(K + 1)])
    fxx = np.stack([_magnitude(d2(series[k], grid, bc)[None])[0]
                    for k in range(K + 1)])

    def space_lp_p(mag):
        return np.sum(mag**p, axis=1) * grid.dx

    lp_f = _cumulative_time_lp(space_lp_p(f_mag), dt) ** (1.0 / p)
    lp_fx = _cumulative_time_lp(space_lp_p(fx), dt) ** (1.0 / p)
    lp_fxx = _cumulative_time_lp(space_lp_p(fxx), dt) ** (1.0 / p)

    if K >= 1:
        ft = _magnitude(np.diff(series, axis=0) / dt)
        inc = dt * np.sum(ft**p, axis=1) * grid.dx
        lp_ft = np.zeros(K + 1)
        lp_ft[1:] = np.cumsum(inc)
        lp_ft = lp_ft ** (1.0 / p)
    else:
        lp_ft = None

    w1p = (space_lp_p(f_mag) + space_lp_p(fx)) ** (1.0 / p)
    sup_w1p = np.maximum.accumulate(w1p)

    v_series = lp_f + lp_fx + lp_fxx + sup_w1p
    if lp_ft is not None:
        v_series = v_series + lp_ft
    return NormReport(times=times, p=float(p), lp_f=lp_f, lp_fx=lp_fx,
                      lp_fxx=lp_fxx, lp_ft=lp_ft, sup_w1p=sup_w1p,
                      v_series=v_series)


def _spatial_seminorm(snapshot_mag, x, alpha):
    """Exact max over grid pairs of |f_i - f_j| / |x_i - x_j|^alpha."""
    if alpha == 0.0:
        weights = np.ones((x.size, x.size))
    else:
        dist = np.abs(x[:, None] - x[None, :])
        with np.errstate(divide="ignore"):
            weights = np.where(dist > 0.0, dist**-alpha, 0.0)
    diff = np.abs(snapshot_mag[:, None] - snapshot_mag[None, :])
    return float(np.max(diff * weights))


def holder_seminorm(series, grid: Grid1D, dt, alpha, beta) -> float:
    """Anisotropic Hölder seminorm: sup_t [f(., t)]_alpha + sup_x [f(x, .)]_beta.

    Both parts are exact maxima of difference quotients over grid pairs;
    component-valued fields are reduced to their pointwise magnitude.
    """
    if not (0.0 <= alpha <= 1.0 and 0.0 <= beta <= 1.0):
        raise DomainError("Hölder exponents must lie in [0, 1]")
    mag = _magnitude(series)
    K = mag.shape[0] - 1
    x = grid.centers
    space = max(_spatial_seminorm(mag[k], x, alpha) for k in range(K + 1))
    if K == 0:
        return space
    t = np.arange(K + 1) * dt
    tdist = np.abs(t[:, None] - t[None, :])
    with np.errstate(divide="ignore"):
        tweights = np.where(tdist > 0.0, tdist**-beta, 0.0)
    tdiff = np.abs(mag[:, None, :] - mag[None, :, :])
    time_part = float(np.max(tdiff * tweights[:, :, None]))
    return space + time_part


def exponent_z(p: float) -> float:
    """Integrability exponent z(p) of the velocity term in the monitor."""
    if p <= 3.0:
        raise DomainError("the blow-up monitor requires p > 3")
    if p < 5.0:
        return 3.0 / (p - 2.0)
    if p == 5.0:
        return 1.01
    return 1.0


def blowup_functional(q_series, v_series, grid: Grid1D, dt, alpha=0.5, p=4.0):
    """Running blow-up monitor N(t_k), nondecreasing in k.

    N(t) = ||q||_{C^{alpha, alpha/2}(Q_t)} + ||grad q||_{L^{inf,p}(Q_t)}
           + ||v||_{L^{zp,p}(Q_t)} + int_0^t [grad v(s)]_{C^alpha} ds

    with z = z(p) as in :func:`exponent_z`.  Space index first: the mixed
    norms integrate the spatial norm in time with exponent p.
    """
    if p <= 3.0:
        raise DomainError("the blow-up monitor requires p > 3")
    if not 0.0 < alpha <= 1.0:
        raise DomainError("alpha must lie in (0, 1]")
    q_series = np.asarray(q_series, dtype=float)
    v_series = np.asarray(v_series, dtype=float)
    K = q_series.shape[0] - 1
    x = grid.centers
    z = exponent_z(p)

    q_mag = _magnitude(q_series)
    qx = np.stack([_magnitude(d1(q_series[k], grid, BC.NEUMANN_ZERO)[None])[0]
                   for k in range(K + 1)])
    vx = np.stack([d1(v_series[k], grid, BC.DIRICHLET_ZERO)
                   for k in range(K + 1)])

    # Hölder norm of q over growing windows: running sup-norm and spatial
    # seminorm, plus an incrementally grown temporal seminorm
    space_semi = np.array([_spatial_seminorm(q_mag[k], x, alpha)
                           for k in range(K + 1)])
    run_space = np.maximum.accumulate(space_semi)
    run_sup = np.maximum.accumulate(np.max(q_mag, axis=1))
    time_semi = np.zeros(K + 1)
    if K >= 1:
        t = np.arange(K + 1) * dt
        best = 0.0
        for k in range(1, K + 1):
            gaps = (t[k] - t[:k]) ** (alpha / 2.0)
            new_pairs = np.max(np.abs(q_mag[k][None] - q_mag[:k]) / gaps[:, None])
            best = max(best, float(new_pairs))
            time_semi[k] = best
    holder_q = run_sup + run_space + time_semi

    sup_qx_p = np.max(qx, axis=1) ** p
    grad_q_term = _cumulative_time_lp(sup_qx_p, dt) ** (1.0 / p)

    v_lzp = (np.sum(np.abs(v_series) ** (z * p), axis=1) * grid.dx) ** (1.0 / z)
    v_term = _cumulative_time_lp(v_lzp, dt) ** (1.0 / p)

    vx_semi = np.array([_spatial_seminorm(vx[k], x, alpha) for k in range(K + 1)])
    vx_term = np.zeros(K + 1)
    if K >= 1:
        inc = 0.5 * dt * (vx_semi[1:] + vx_semi[:-1])
        vx_term[1:] = np.cumsum(inc)

    return holder_q + grad_q_term + v_term + vx_term


@dataclass
class DensityCertificate:
    """Outcome of the transported-density bound check."""

    passed: bool
    lower_margin: float
    upper_margin: float
    phi: np.ndarray
    m0: float
    M0: float


def density_bound_certificate(rho_series, v_series, grid: Grid1D, dt,
                              m0=None, M0=None, slack=1e-9) -> DensityCertificate:
    """Check m0 / phi(t) <= varrho(x, t) <= M0 phi(t) cellwise.

    phi(t) = exp(sqrt(3) ||v_x||_{L^{inf,1}(Q_t)}) with the time integral
    accumulated by the left-endpoint rule, matching the start-of-step
    velocities that actually transported the density.  ``m0``/``M0``
    default to the extremes of the initial snapshot.  Margins are the worst
    cellwise distances to the bounds (nonnegative means satisfied).
    """
    rho_series = np.asarray(rho_series, dtype=float)
    v_series = np.asarray(v_series, dtype=float)
    if rho_series.shape != v_series.shape:
        raise UsageError("density and velocity series must share a shape")
    K = rho_series.shape[0] - 1
    m0 = float(np.min(rho_series[0])) if m0 is None else float(m0)
    M0 = float(np.max(rho_series[0])) if M0 is None else float(M0)

    vx_max = np.array([np.max(np.abs(d1(v_series[k], grid, BC.DIRICHLET_ZERO)))
                       for k in range(K + 1)])
    integral = np.zeros(K + 1)
    if K >= 1:
        integral[1:] = np.cumsum(dt * vx_max[:-1])
    phi = np.exp(np.sqrt(3.0) * integral)

    lower = rho_series - (m0 / phi)[:, None]
    upper = (M0 * phi)[:, None] - rho_series
    lower_margin = float(np.min(lower))
    upper_margin = float(np.min(upper))
    scale = max(1.0, abs(M0))
    passed = lower_margin >= -slack * scale and upper_margin >= -slack * scale
    return DensityCertificate(passed=passed, lower_margin=lower_margin,
                              upper_margin=upper_margin, phi=phi, m0=m0, M0=M0)
