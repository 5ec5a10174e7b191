"""Segment-averaged linearisations of the lower-order terms g and f.

For two states u* and u the right-hand sides expand exactly as

    g(u) = g(u*) + g'(u, u*) (u - u*),
    g'(u, u*) = int_0^1 Dg( (1 - theta) u* + theta u ) dtheta,

and the averaged derivative acts on a perturbation through six coefficient
fields (partial derivatives with respect to q, varrho, v and their spatial
gradients).  The closed forms, with all coefficients evaluated at the
blended state, are in one space dimension

    g_varrho = R_rr * varrho * div v - v (dR_q/dr) q_x
               - (dMt_r/dr) bt * r_x - (dMt_r/dq) q_x bt - Mt_r div bt + rt_r
    g_q      = (dR_r/dq * varrho - R_q) div v - v (dR_q/dq) q_x
               - (dMt_r/dq) bt r_x - (dMt_q/dq) q_x bt - Mt_q div bt + rt_q
    g_v      = -R_q q_x            g_{r_x} = -Mt_r bt
    g_{q_x}  = -R_q v - Mt_q bt    g_{v_x} = R_r varrho - R

    f_varrho = -P_rr r_x - (dP_q/dr) q_x - v v_x + R_r bt + bbar
    f_q      = -(dP_q/dr) r_x - (dP_q/dq) q_x + R_q^T bt
    f_v      = -varrho v_x         f_{r_x} = -P_r
    f_{q_x}  = -P_q                f_{v_x} = -varrho v

(r shorthand for varrho).  First derivatives of R and P come from the exact
implicit-function formulas; the second derivatives of R, P, Mt and the
reaction are formed by central differences of those analytic bundles.  The
theta-integral is approximated with three-point Gauss quadrature; the
integrand is smooth, so the residual quadrature error is far below the
spatial discretisation error.

The ``extension`` hook adds the terms that turn g into the shifted
right-hand side g^1 of the perturbation formulation: with a constant-in-
time lifting qhat of the initial data, g^1 = g + div(Mt grad qhat), whose
derivative contributes Mt_r/Mt_q contractions with grad qhat and the
Laplacian of qhat.  (The divergence is expanded by the chain rule, so the
signs of the gradient products follow the product rule.)
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import changevar, mobility
from .discretization import BC, d1
from .errors import UsageError

# 3-point Gauss-Legendre nodes/weights on [0, 1]
_GAUSS_NODES = np.array([0.5 - np.sqrt(15.0) / 10.0, 0.5,
                         0.5 + np.sqrt(15.0) / 10.0])
_GAUSS_WEIGHTS = np.array([5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0])

_FD_REL_STEP = 1e-5


@dataclass(frozen=True)
class ExtensionFields:
    """Spatial derivatives of the constant-in-time q lifting."""

    qhat_x: np.ndarray     # (n, m)
    qhat_lap: np.ndarray   # (n, m)


@dataclass
class SecondOrderBundles:
    """First and second derivatives of the reduced coefficient fields.

    Index conventions (m = N - 1 components, leading cell axis suppressed):
    ``R_qq[j, k, i]`` is d^2 R_k / d q_j d q_i, ``Mt_q[i, k, l]`` is
    d Mt_{k l} / d q_i, ``Mt_qq[j, i, k, l]`` the corresponding second
    derivative, and the reaction fields are the reduced rtilde derivatives.
    """

    coeffs: changevar.StateCoefficients
    Mt: np.ndarray
    Mt_rho: np.ndarray
    Mt_q: np.ndarray
    R_rhorho: np.ndarray
    R_qrho: np.ndarray
    R_qq: np.ndarray
    P_rhorho: np.ndarray
    P_qrho: np.ndarray
    P_qq: np.ndarray
    Mt_rhorho: np.ndarray
    Mt_rhoq: np.ndarray
    Mt_qq: np.ndarray
    rt_rho: np.ndarray
    rt_q: np.ndarray


def _reduced_mt(problem, rho):
    return mobility.reduced_mobility_from_rho(problem.onsager, problem.basis, rho)


def _reduced_rt(problem, rho):
    if problem.reaction.rate is None:
        return None
    return problem.reaction.species_rate(rho) @ problem.basis.Q


def second_order_bundles(problem, varrho, q, need_mt_second=False,
                         guess_rho=None) -> SecondOrderBundles:
    """All derivative fields of R, P, Mt, rtilde at a batch of states."""
    model, basis = problem.model, problem.basis
    varrho = np.asarray(varrho, dtype=float)
    q = np.asarray(q, dtype=float)
    m = q.shape[-1]
    batch = varrho.shape

    c0 = changevar.state_coefficients(model, basis, varrho, q, guess_rho=guess_rho)
    h = _FD_REL_STEP * np.maximum(
        1.0, np.maximum(np.abs(varrho), np.max(np.abs(q), axis=-1)))
    h2 = 2.0 * h

    cp = changevar.state_coefficients(model, basis, varrho + h, q, guess_rho=c0.rho)
    cm = changevar.state_coefficients(model, basis, varrho - h, q, guess_rho=c0.rho)
    cqp, cqm = [], []
    for i in range(m):
        dq = np.zeros_like(q)
        dq[..., i] = h
        cqp.append(changevar.state_coefficients(model, basis, varrho, q + dq,
                                                guess_rho=c0.rho))
        cqm.append(changevar.state_coefficients(model, basis, varrho, q - dq,
                                                guess_rho=c0.rho))

    R_rhorho = (cp.R_rho - cm.R_rho) / h2[..., None]
    R_qrho = (cp.R_q - cm.R_q) / h2[..., None, None]
    P_rhorho = (cp.P_rho - cm.P_rho) / h2
    P_qrho = (cp.P_q - cm.P_q) / h2[..., None]
    R_qq = np.stack([(cqp[j].R_q - cqm[j].R_q) / h2[..., None, None]
                     for j in range(m)], axis=-3)
    P_qq = np.stack([(cqp[j].P_q - cqm[j].P_q) / h2[..., None]
                     for j in range(m)], axis=-2)

    Mt0 = _reduced_mt(problem, c0.rho)
    Mt_p, Mt_m = _reduced_mt(problem, cp.rho), _reduced_mt(problem, cm.rho)
    Mt_qp = [_reduced_mt(problem, cqp[i].rho) for i in range(m)]
    Mt_qm = [_reduced_mt(problem, cqm[i].rho) for i in range(m)]
    Mt_rho = (Mt_p - Mt_m) / h2[..., None, None]
    Mt_q = np.stack([(Mt_qp[i] - Mt_qm[i]) / h2[..., None, None]
                     for i in range(m)], axis=-3)

    hh = (h * h)[..., None, None]
    if need_mt_second:
        Mt_rhorho = (Mt_p - 2.0 * Mt0 + Mt_m) / hh
        Mt_rhoq = np.empty(batch + (m, m, m))
        Mt_qq = np.empty(batch + (m, m, m, m))
        for i in range(m):
            dq = np.zeros_like(q)
            dq[..., i] = h
            pp = _reduced_mt(problem, changevar.reconstruct_rho(
                model, basis, varrho + h, q + dq, guess_rho=c0.rho))
            pm = _reduced_mt(problem, changevar.reconstruct_rho(
                model, basis, varrho + h, q - dq, guess_rho=c0.rho))
            mp = _reduced_mt(problem, changevar.reconstruct_rho(
                model, basis, varrho - h, q + dq, guess_rho=c0.rho))
            mm = _reduced_mt(problem, changevar.reconstruct_rho(
                model, basis, varrho - h, q - dq, guess_rho=c0.rho))
            Mt_rhoq[..., i, :, :] = (pp - pm - mp + mm) / (4.0 * hh)
            Mt_qq[..., i, i, :, :] = (Mt_qp[i] - 2.0 * Mt0 + Mt_qm[i]) / hh
            for j in range(i + 1, m):
                dqj = np.zeros_like(q)
                dqj[..., j] = h
                pp = _reduced_mt(problem, changevar.reconstruct_rho(
                    model, basis, varrho, q + dq + dqj, guess_rho=c0.rho))
                pm = _reduced_mt(problem, changevar.reconstruct_rho(
                    model, basis, varrho, q + dq - dqj, guess_rho=c0.rho))
                mp = _reduced_mt(problem, changevar.reconstruct_rho(
                    model, basis, varrho, q - dq + dqj, guess_rho=c0.rho))
                mm = _reduced_mt(problem, changevar.reconstruct_rho(
                    model, basis, varrho, q - dq - dqj, guess_rho=c0.rho))
                mixed = (pp - pm - mp + mm) / (4.0 * hh)
                Mt_qq[..., j, i, :, :] = mixed
                Mt_qq[..., i, j, :, :] = mixed
    else:
        Mt_rhorho = np.zeros(batch + (m, m))
        Mt_rhoq = np.zeros(batch + (m, m, m))
        Mt_qq = np.zeros(batch + (m, m, m, m))

    if problem.reaction.rate is None:
        rt_rho = np.zeros(batch + (m,))
        rt_q = np.zeros(batch + (m, m))
    else:
        rt_rho = (_reduced_rt(problem, cp.rho)
                  - _reduced_rt(problem, cm.rho)) / h2[..., None]
        rt_q = np.stack([(_reduced_rt(problem, cqp[i].rho)
                          - _reduced_rt(problem, cqm[i].rho)) / h2[..., None]
                         for i in range(m)], axis=-1)

    return SecondOrderBundles(
        coeffs=c0, Mt=Mt0, Mt_rho=Mt_rho, Mt_q=Mt_q,
        R_rhorho=R_rhorho, R_qrho=R_qrho, R_qq=R_qq,
        P_rhorho=P_rhorho, P_qrho=P_qrho, P_qq=P_qq,
        Mt_rhorho=Mt_rhorho, Mt_rhoq=Mt_rhoq, Mt_qq=Mt_qq,
        rt_rho=rt_rho, rt_q=rt_q,
    )


@dataclass
class GPrime:
    """Coefficient fields of the averaged derivative of g (or g^1)."""

    g_q: np.ndarray      # (n, k, i)
    g_rho: np.ndarray    # (n, k)
    g_v: np.ndarray      # (n, k)
    g_qx: np.ndarray     # (n, k, i)
    g_rhox: np.ndarray   # (n, k)
    g_vx: np.ndarray     # (n, k)

    def apply(self, grid, rbar, sigmabar, wbar):
        rbar = np.asarray(rbar, dtype=float)
        sigmabar = np.asarray(sigmabar, dtype=float)
        wbar = np.asarray(wbar, dtype=float)
        rx = d1(rbar, grid, BC.NEUMANN_ZERO)
        sx = d1(sigmabar, grid, BC.NONE)
        wx = d1(wbar, grid, BC.DIRICHLET_ZERO)
        out = np.einsum("jki,ji->jk", self.g_q, rbar)
        out += self.g_rho * sigmabar[:, None]
        out += self.g_v * wbar[:, None]
        out += np.einsum("jki,ji->jk", self.g_qx, rx)
        out += self.g_rhox * sx[:, None]
        out += self.g_vx * wx[:, None]
        return out


@dataclass
class FPrime:
    """Coefficient fields of the averaged derivative of f (or f^1)."""

    f_q: np.ndarray      # (n, i)
    f_rho: np.ndarray    # (n,)
    f_v: np.ndarray      # (n,)
    f_qx: np.ndarray     # (n, i)
    f_rhox: np.ndarray   # (n,)
    f_vx: np.ndarray     # (n,)

    def apply(self, grid, rbar, sigmabar, wbar):
        rbar = np.asarray(rbar, dtype=float)
        sigmabar = np.asarray(sigmabar, dtype=float)
        wbar = np.asarray(wbar, dtype=float)
        rx = d1(rbar, grid, BC.NEUMANN_ZERO)
        sx = d1(sigmabar, grid, BC.NONE)
        wx = d1(wbar, grid, BC.DIRICHLET_ZERO)
        out = np.einsum("ji,ji->j", self.f_q, rbar)
        out += self.f_rho * sigmabar
        out += self.f_v * wbar
        out += np.einsum("ji,ji->j", self.f_qx, rx)
        out += self.f_rhox * sx
        out += self.f_vx * wx
        return out


def _zero_gprime(n, m):
    return GPrime(g_q=np.zeros((n, m, m)), g_rho=np.zeros((n, m)),
                  g_v=np.zeros((n, m)), g_qx=np.zeros((n, m, m)),
                  g_rhox=np.zeros((n, m)), g_vx=np.zeros((n, m)))


def _zero_fprime(n, m):
    return FPrime(f_q=np.zeros((n, m)), f_rho=np.zeros(n), f_v=np.zeros(n),
                  f_qx=np.zeros((n, m)), f_rhox=np.zeros(n), f_vx=np.zeros(n))


def _derivative_fields_at(problem, q, varrho, v, qx, rhox, vx, t,
                          extension: Optional[ExtensionFields]):
    """Pointwise derivative fields of g (plus extension terms) and f."""
    grid = problem.grid
    n, m = q.shape
    div_v = vx
    has_bt = problem.forcing.has_btilde
    has_ext = extension is not None and (
        np.any(extension.qhat_x != 0.0) or np.any(extension.qhat_lap != 0.0))
    need_mt_second = has_bt or has_ext
    b = second_order_bundles(problem, varrho, q, need_mt_second=need_mt_second)
    c = b.coeffs

    gp = _zero_gprime(n, m)
    fp = _zero_fprime(n, m)

    # convection blocks of g
    gp.g_rho += b.R_rhorho * (varrho * div_v)[:, None]
    gp.g_rho -= v[:, None] * np.einsum("jki,ji->jk", b.R_qrho, qx)
    gp.g_q += (b.R_qrho * varrho[:, None, None] - c.R_q) * div_v[:, None, None]
    gp.g_q -= v[:, None, None] * np.einsum("jaki,ja->jki", b.R_qq, qx)
    gp.g_v -= np.einsum("jkl,jl->jk", c.R_q, qx)
    gp.g_qx -= c.R_q * v[:, None, None]
    gp.g_vx += c.R_rho * varrho[:, None] - c.R

    if problem.reaction.rate is not None:
        gp.g_rho += b.rt_rho
        gp.g_q += b.rt_q

    if has_bt:
        x = grid.centers
        bt = problem.forcing.btilde_at(x, t)
        btx = problem.forcing.btilde_div_at(x, t)
        gp.g_rho -= rhox[:, None] * np.einsum("jkl,jl->jk", b.Mt_rhorho, bt)
        gp.g_rho -= np.einsum("jakl,ja,jl->jk", b.Mt_rhoq, qx, bt)
        gp.g_rho -= np.einsum("jkl,jl->jk", b.Mt_rho, btx)
        gp.g_q -= rhox[:, None, None] * np.einsum("jikl,jl->jki", b.Mt_rhoq, bt)
        gp.g_q -= np.einsum("jaikl,ja,jl->jki", b.Mt_qq, qx, bt)
        gp.g_q -= np.einsum("jikl,jl->jki", b.Mt_q, btx)
        gp.g_rhox -= np.einsum("jkl,jl->jk", b.Mt_rho, bt)
        gp.g_qx -= np.einsum("jikl,jl->jki", b.Mt_q, bt)

    if has_ext:
        lap, qhx = extension.qhat_lap, extension.qhat_x
        gp.g_rho += np.einsum("jkl,jl->jk", b.Mt_rho, lap)
        gp.g_rho += rhox[:, None] * np.einsum("jkl,jl->jk", b.Mt_rhorho, qhx)
        gp.g_rho += np.einsum("jakl,ja,jl->jk", b.Mt_rhoq, qx, qhx)
        gp.g_q += np.einsum("jikl,jl->jki", b.Mt_q, lap)
        gp.g_q += rhox[:, None, None] * np.einsum("jikl,jl->jki", b.Mt_rhoq, qhx)
        gp.g_q += np.einsum("jaikl,ja,jl->jki", b.Mt_qq, qx, qhx)
        gp.g_rhox += np.einsum("jkl,jl->jk", b.Mt_rho, qhx)
        gp.g_qx += np.einsum("jikl,jl->jki", b.Mt_q, qhx)

    # momentum block
    fp.f_rho += -b.P_rhorho * rhox - np.einsum("ji,ji->j", b.P_qrho, qx) - v * vx
    fp.f_q += -b.P_qrho * rhox[:, None] - np.einsum("jai,ja->ji", b.P_qq, qx)
    fp.f_v += -varrho * vx
    fp.f_rhox += -c.P_rho
    fp.f_qx += -c.P_q
    fp.f_vx += -varrho * v

    if has_bt:
        bt = problem.forcing.btilde_at(grid.centers, t)
        fp.f_rho += np.einsum("jk,jk->j", c.R_rho, bt)
        fp.f_q += np.einsum("jki,jk->ji", c.R_q, bt)
    if not problem.forcing.is_zero:
        fp.f_rho += problem.forcing.bbar_at(grid.centers, t)

    return gp, fp


def segment_prime_operators(problem, u_base, u_target, t, n_theta=3,
                            extension: Optional[ExtensionFields] = None):
    """Gauss-averaged derivative operators of g and f along a state segment.

    ``u_base`` and ``u_target`` are (q, varrho, v) field triples at one time
    level; the averaged derivative satisfies
    g(u_target) = g(u_base) + g'(u_target, u_base)(u_target - u_base)
    up to the quadrature error of the theta-integral.
    """
    if n_theta != 3:
        raise UsageError("only the 3-point Gauss rule is wired in")
    grid = problem.grid
    q_a, rho_a, v_a = (np.asarray(z, dtype=float) for z in u_base)
    q_b, rho_b, v_b = (np.asarray(z, dtype=float) for z in u_target)
    qx_a, qx_b = d1(q_a, grid, BC.NEUMANN_ZERO), d1(q_b, grid, BC.NEUMANN_ZERO)
    rx_a, rx_b = d1(rho_a, grid, BC.NONE), d1(rho_b, grid, BC.NONE)
    vx_a, vx_b = (d1(v_a, grid, BC.DIRICHLET_ZERO),
                  d1(v_b, grid, BC.DIRICHLET_ZERO))

    n, m = q_a.shape
    gp_sum, fp_sum = _zero_gprime(n, m), _zero_fprime(n, m)
    for theta, weight in zip(_GAUSS_NODES, _GAUSS_WEIGHTS):
        gp, fp = _derivative_fields_at(
            problem,
            q_a + theta * (q_b - q_a),
            rho_a + theta * (rho_b - rho_a),
            v_a + theta * (v_b - v_a),
            qx_a + theta * (qx_b - qx_a),
            rx_a + theta * (rx_b - rx_a),
            vx_a + theta * (vx_b - vx_a),
            t, extension)
        for name in ("g_q", "g_rho", "g_v", "g_qx", "g_rhox", "g_vx"):
            setattr(gp_sum, name, getattr(gp_sum, name) + weight * getattr(gp, name))
        for name in ("f_q", "f_rho", "f_v", "f_qx", "f_rhox", "f_vx"):
            setattr(fp_sum, name, getattr(fp_sum, name) + weight * getattr(fp, name))
    return gp_sum, fp_sum


def eval_g_prime(problem, u, ustar, t, extension=None) -> GPrime:
    """Averaged derivative of g along the segment from ustar to u."""
    return segment_prime_operators(problem, ustar, u, t, extension=extension)[0]


def eval_f_prime(problem, u, ustar, t, extension=None) -> FPrime:
    """Averaged derivative of f along the segment from ustar to u."""
    return segment_prime_operators(problem, ustar, u, t, extension=extension)[1]
