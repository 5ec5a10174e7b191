"""Change of variables (rho_1, ..., rho_N) <-> (varrho, q_1, ..., q_{N-1}).

A basis xi^1, ..., xi^N of R^N with xi^N = (1, ..., 1) and its dual basis
eta^1, ..., eta^N split the chemical-potential vector into N-1 relative
chemical potentials q_l = eta^l . mu and one mean component along 1^N.  For
a given total mass density varrho > 0 that mean component is fixed
implicitly by

    1^N . grad h*( sum_l q_l xi^l + M * 1^N ) = varrho,

which has a unique solution M(varrho, q) because the conjugate Hessian is
positive definite.  Composing with grad h* reconstructs a strictly positive
composition from any (varrho > 0, q in R^{N-1}): positivity constraints are
eliminated by construction.

The reduced fields

    R_k(varrho, q) = xi^k . rho,      P(varrho, q) = h*(mu)

carry the transport system in the new variables; their exact first
derivatives follow from the implicit-function theorem with
D^2 h*(mu) = [D^2 h(rho)]^{-1}:

    dM/dvarrho = 1 / (B 1 . 1),    dM/dq_k = -(B 1 . xi^k) / (B 1 . 1),
    R_q  = Q^T B Q - (Q^T B 1) (Q^T B 1)^T / (B 1 . 1),   (SPD)
    R_varrho = Q^T B 1 / (B 1 . 1),
    P_varrho = varrho / (B 1 . 1),  P_q = R - varrho (Q^T B 1) / (B 1 . 1),

where B = D^2 h*(mu) and Q stacks xi^1 ... xi^{N-1} columnwise.

All functions broadcast over leading axes of (varrho, q).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BasisError, ConvergenceError, DomainError, UsageError

SCRIPT_M_TOL = 1e-12
_MAX_ITER = 100
_MAX_HALVINGS = 60
_DUALITY_TOL = 1e-12
_COND_LIMIT = 1e12


@dataclass(frozen=True)
class BasisPair:
    """Primal columns xi (with xi^N = 1^N), dual columns eta, Q and P.

    ``Q`` is the N x (N-1) matrix Q[j, l] = xi^l_j; ``proj`` is the
    symmetric idempotent projector P = Id - (1/N) 1 x 1 with P 1 = 0.
    """

    xi: np.ndarray
    eta: np.ndarray
    Q: np.ndarray
    proj: np.ndarray

    @property
    def n_species(self) -> int:
        return self.xi.shape[0]


def make_basis(n_species: int, xi_reduced=None) -> BasisPair:
    """Build a dual basis pair with xi^N = 1^N.

    ``xi_reduced`` may give the first N-1 columns explicitly (they must be
    linearly independent together with 1^N).  The default choice pairs
    xi^l = e^l - (1/N) 1^N with the dual eta^l = e^l - e^N, so that
    q_l = mu_l - mu_N are the familiar potential differences.
    """
    if n_species < 2:
        raise UsageError("need at least two species")
    N = n_species
    if xi_reduced is None:
        cols = np.eye(N)[:, : N - 1] - 1.0 / N
    else:
        cols = np.asarray(xi_reduced, dtype=float)
        if cols.shape == (N - 1, N):
            cols = cols.T
        if cols.shape != (N, N - 1):
            raise UsageError(
                f"custom basis columns have shape {cols.shape}, expected ({N}, {N - 1})"
            )
    xi = np.concatenate([cols, np.ones((N, 1))], axis=1)
    cond = np.linalg.cond(xi)
    if not np.isfinite(cond) or cond > _COND_LIMIT:
        raise BasisError(
            f"basis columns together with 1^N are (numerically) dependent; "
            f"condition number {cond:.3e}"
        )
    eta = np.linalg.solve(xi.T, np.eye(N))
    defect = np.max(np.abs(xi.T @ eta - np.eye(N)))
    if defect > _DUALITY_TOL:
        raise BasisError(f"duality defect {defect:.3e} exceeds {_DUALITY_TOL:g}")
    proj = np.eye(N) - np.full((N, N), 1.0 / N)
    return BasisPair(xi=xi, eta=eta, Q=xi[:, : N - 1].copy(), proj=proj)


def decompose_mu(basis: BasisPair, mu):
    """Split mu into relative potentials q_l = eta^l . mu and the mean part.

    Returns ``(q, mN)`` with mu = sum_l q_l xi^l + mN * 1^N.
    """
    mu = np.asarray(mu, dtype=float)
    if mu.shape[-1] != basis.n_species:
        raise UsageError("mu has wrong species count for this basis")
    coeffs = mu @ basis.eta
    return coeffs[..., :-1], coeffs[..., -1]


def _check_reduced(varrho, q, n_species):
    varrho = np.asarray(varrho, dtype=float)
    q = np.asarray(q, dtype=float)
    if q.shape[-1] != n_species - 1:
        raise UsageError(
            f"q has shape {q.shape}, expected last axis {n_species - 1}"
        )
    if varrho.shape != q.shape[:-1]:
        varrho = np.broadcast_to(varrho, q.shape[:-1]).copy()
    if np.any(varrho <= 0.0) or not np.all(np.isfinite(varrho)):
        raise DomainError("total mass density varrho must be strictly positive")
    if not np.all(np.isfinite(q)):
        raise DomainError("relative chemical potentials must be finite")
    return varrho, q


def _solve_state(model, basis, varrho, q, guess_rho=None, tol=SCRIPT_M_TOL,
                 max_iter=_MAX_ITER):
    """Newton solve of the bordered system grad h(rho) = Q q + M 1, sum rho = varrho.

    Solving for (rho, M) jointly avoids nesting two Newton loops; damping by
    step halving keeps rho in the open orthant.  Returns (rho, M, mu).
    """
    varrho, q = _check_reduced(varrho, q, basis.n_species)
    N = basis.n_species
    batch = varrho.shape
    mu_reduced = q @ basis.Q.T

    if guess_rho is None:
        rho = (varrho[..., None] / N) * np.ones(batch + (N,))
    else:
        rho = np.broadcast_to(guess_rho, batch + (N,)).astype(float).copy()
        if np.any(rho <= 0.0):
            raise DomainError("guess composition must be strictly positive")
    scriptM = np.mean(model.mu(rho) - mu_reduced, axis=-1)

    ones = np.ones(N)
    residual = None
    for _ in range(max_iter):
        grad = model.mu(rho)
        f1 = grad - mu_reduced - scriptM[..., None]
        f2 = np.sum(rho, axis=-1) - varrho
        residual = max(float(np.max(np.abs(f1))), float(np.max(np.abs(f2))))
        if residual <= tol:
            mu = mu_reduced + scriptM[..., None]
            return rho, scriptM, mu
        hess = model.hessian(rho)
        jac = np.zeros(batch + (N + 1, N + 1))
        jac[..., :N, :N] = hess
        jac[..., :N, N] = -ones
        jac[..., N, :N] = ones
        rhs = np.concatenate([-f1, -f2[..., None]], axis=-1)
        step = np.linalg.solve(jac, rhs[..., None])[..., 0]
        drho, dM = step[..., :N], step[..., N]
        lam = np.ones(batch)
        for _ in range(_MAX_HALVINGS):
            trial = rho + lam[..., None] * drho
            bad = np.any(trial <= 0.0, axis=-1)
            if not np.any(bad):
                break
            lam = np.where(bad, 0.5 * lam, lam)
        else:
            raise ConvergenceError(
                "damping could not keep the reconstruction iterate positive",
                residual=residual,
            )
        rho = rho + lam[..., None] * drho
        scriptM = scriptM + lam * dM
    raise ConvergenceError(
        f"state reconstruction did not reach tol={tol:g} in {max_iter} steps",
        residual=residual,
    )


def mean_potential(model, basis, varrho, q, guess_rho=None, tol=SCRIPT_M_TOL):
    """The implicit mean chemical-potential component M(varrho, q)."""
    _, scriptM, _ = _solve_state(model, basis, varrho, q, guess_rho, tol)
    return scriptM


def reconstruct_rho(model, basis, varrho, q, guess_rho=None, tol=SCRIPT_M_TOL):
    """Strictly positive composition with xi-coordinates (R(varrho,q), varrho)."""
    rho, _, _ = _solve_state(model, basis, varrho, q, guess_rho, tol)
    return rho


def reduce_rho(model, basis, rho):
    """Forward transform rho -> (varrho, q); inverse of ``reconstruct_rho``."""
    rho = np.asarray(rho, dtype=float)
    q, _ = decompose_mu(basis, model.mu(rho))
    return np.sum(rho, axis=-1), q


@dataclass(frozen=True)
class StateCoefficients:
    """Everything the reformulated system needs at one reduced state.

    Bundles the reconstruction and the exact derivative formulas; ``B`` is
    the conjugate Hessian D^2 h*(mu) = [D^2 h(rho)]^{-1}.
    """

    rho: np.ndarray
    mu: np.ndarray
    scriptM: np.ndarray
    scriptM_rho: np.ndarray
    scriptM_q: np.ndarray
    R: np.ndarray
    R_q: np.ndarray
    R_rho: np.ndarray
    P: np.ndarray
    P_rho: np.ndarray
    P_q: np.ndarray


def state_coefficients(model, basis, varrho, q, guess_rho=None,
                       tol=SCRIPT_M_TOL) -> StateCoefficients:
    """Reduced fields R, P, M and their exact first derivatives."""
    varrho, q = _check_reduced(varrho, q, basis.n_species)
    rho, scriptM, mu = _solve_state(model, basis, varrho, q, guess_rho, tol)
    hess = model.hessian(rho)
    B = np.linalg.inv(hess)
    w = np.sum(B, axis=-1)                       # B 1
    denom = np.sum(w, axis=-1)                   # B 1 . 1  (> 0 by SPD)
    u = w @ basis.Q                              # Q^T B 1
    QBQ = np.einsum("ja,...jk,kb->...ab", basis.Q, B, basis.Q)
    R = rho @ basis.Q
    R_q = QBQ - np.einsum("...a,...b->...ab", u, u) / denom[..., None, None]
    R_rho = u / denom[..., None]
    P = np.einsum("...i,...i->...", rho, mu) - model.h(rho)
    P_rho = varrho / denom
    P_q = R - varrho[..., None] * u / denom[..., None]
    return StateCoefficients(
        rho=rho, mu=mu, scriptM=scriptM,
        scriptM_rho=1.0 / denom, scriptM_q=-u / denom[..., None],
        R=R, R_q=R_q, R_rho=R_rho, P=P, P_rho=P_rho, P_q=P_q,
    )


def R_bundle(model, basis, varrho, q, guess_rho=None):
    """(R, R_q, R_rho) at a reduced state; R_q is symmetric positive definite."""
    c = state_coefficients(model, basis, varrho, q, guess_rho)
    return c.R, c.R_q, c.R_rho


def P_bundle(model, basis, varrho, q, guess_rho=None):
    """(P, P_rho, P_q): pressure as a function of the reduced state."""
    c = state_coefficients(model, basis, varrho, q, guess_rho)
    return c.P, c.P_rho, c.P_q


def mean_potential_derivatives(model, basis, varrho, q, guess_rho=None):
    """(dM/dvarrho, dM/dq) from the implicit-function formulas."""
    c = state_coefficients(model, basis, varrho, q, guess_rho)
    return c.scriptM_rho, c.scriptM_q
