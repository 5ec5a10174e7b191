"""Onsager mobility matrices, their reduced projections, and reaction terms.

The mobility M(rho) of a Fick-Onsager closure is symmetric positive
semi-definite with kernel exactly span{1^N}; column sums vanish so that
diffusion fluxes add up to zero.  Here M is constructed directly in the
projected form

    M = P^T M0 P,        P = Id - (1/N) 1 x 1,

from a user-supplied symmetric positive definite base matrix M0 (constant,
or a smooth function of rho).  Inverting a Maxwell-Stefan system to obtain
M0 is deliberately out of scope; any admissible closure can be plugged in
through ``OnsagerSpec``.

The reduced mobility Mt(varrho, q) = Q^T M(rho(varrho, q)) Q is symmetric
positive definite whenever rank(M) = N-1; its derivatives in (varrho, q)
are obtained by central finite differences because the rho-dependence of M0
is user-supplied and may lack analytic derivatives.

``spd_product_eigs`` factors a product A B of two SPD matrices through the
symmetric matrix C = A^{1/2} B A^{1/2}: all eigenvalues are real, strictly
positive, and bounded by the products of the extreme eigenvalues of A and
B; the returned eigenvectors are A^{1/2} times an orthonormal eigenbasis of
C.  This is what diagonalises the non-diagonal parabolic block of the
solver.

Reactions enter through a species-level rate r(rho) with 1^N . r = 0 (mass
is conserved); the reduced rate is rtilde_k = xi^k . r evaluated at the
reconstructed composition.  Rates depending on mu instead of rho are noted
but not shipped.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import changevar
from .errors import DomainError, SpecError, UsageError

_FD_SCALE = 1e-6


def deviation_projector(n_species: int) -> np.ndarray:
    """P = Id - (1/N) 1 x 1: symmetric, idempotent, P 1 = 0."""
    return np.eye(n_species) - np.full((n_species, n_species), 1.0 / n_species)


@dataclass(frozen=True)
class OnsagerSpec:
    """Recipe for M(rho) = P^T M0(rho) P.

    ``base`` is either a constant symmetric positive definite matrix or a
    callable rho -> matrix broadcasting over leading axes of rho.
    """

    n_species: int
    base: object  # (N, N) array or callable

    def __post_init__(self):
        if self.n_species < 2:
            raise SpecError("need at least two species")
        if not callable(self.base):
            m0 = np.asarray(self.base, dtype=float)
            if m0.shape != (self.n_species, self.n_species):
                raise SpecError(f"base matrix must be {self.n_species} x {self.n_species}")
            if np.max(np.abs(m0 - m0.T)) > 1e-13 * max(1.0, np.max(np.abs(m0))):
                raise SpecError("base matrix must be symmetric")
            object.__setattr__(self, "base", m0)

    def base_at(self, rho):
        rho = np.asarray(rho, dtype=float)
        if callable(self.base):
            m0 = np.asarray(self.base(rho), dtype=float)
            want = rho.shape[:-1] + (self.n_species, self.n_species)
            if m0.shape != want:
                raise SpecError(f"base callable returned shape {m0.shape}, expected {want}")
            return m0
        return np.broadcast_to(self.base, rho.shape[:-1] + self.base.shape)


def number_weighted_diagonal(species) -> Callable:
    """Built-in density-dependent family M0(rho) = diag(n_i) = diag(rho_i / m_i)."""
    masses = species.masses

    def base(rho):
        rho = np.asarray(rho, dtype=float)
        n = rho / masses
        out = np.zeros(rho.shape + (rho.shape[-1],))
        ii = np.arange(rho.shape[-1])
        out[..., ii, ii] = n
        return out

    return base


def build_onsager(spec: OnsagerSpec, rho) -> np.ndarray:
    """M = P^T M0 P: symmetric PSD with kernel span{1^N} and rank N-1."""
    rho = np.asarray(rho, dtype=float)
    if rho.shape[-1] != spec.n_species:
        raise UsageError("rho has wrong species count for this spec")
    m0 = spec.base_at(rho)
    eigs = np.linalg.eigvalsh(m0)
    if np.min(eigs) <= 0.0:
        raise SpecError(
            f"base matrix is not positive definite (min eigenvalue {np.min(eigs):.3e})"
        )
    proj = deviation_projector(spec.n_species)
    return proj @ m0 @ proj


def reduced_mobility_from_rho(spec: OnsagerSpec, basis, rho):
    """Mt = Q^T M(rho) Q when the composition is already reconstructed."""
    M = build_onsager(spec, rho)
    return np.einsum("ja,...jk,kb->...ab", basis.Q, M, basis.Q)


def reduced_mobility(spec: OnsagerSpec, basis, model, varrho, q, guess_rho=None):
    """Mt(varrho, q) = Q^T M(rho(varrho, q)) Q, symmetric positive definite."""
    rho = changevar.reconstruct_rho(model, basis, varrho, q, guess_rho=guess_rho)
    return reduced_mobility_from_rho(spec, basis, rho)


def reduced_mobility_bundle(spec: OnsagerSpec, basis, model, varrho, q,
                            step: Optional[float] = None, guess_rho=None):
    """(Mt, Mt_rho, Mt_q) with derivatives by central differences.

    ``Mt_q`` has shape (..., N-1, N-1, N-1) indexed [m, k, l] =
    d Mt_{k,l} / d q_m.  The step is scaled per sample by max(1, |state|).
    """
    varrho = np.asarray(varrho, dtype=float)
    q = np.asarray(q, dtype=float)
    nq = q.shape[-1]
    Mt = reduced_mobility(spec, basis, model, varrho, q, guess_rho=guess_rho)
    scale = np.maximum(1.0, np.maximum(np.abs(varrho), np.max(np.abs(q), axis=-1)))
    h = (_FD_SCALE if step is None else step) * scale
    Mt_rho = (reduced_mobility(spec, basis, model, varrho + h, q, guess_rho=guess_rho)
              - reduced_mobility(spec, basis, model, varrho - h, q, guess_rho=guess_rho)
              ) / (2.0 * h)[..., None, None]
    Mt_q = np.empty(q.shape[:-1] + (nq, nq, nq))
    for m in range(nq):
        dq = np.zeros_like(q)
        dq[..., m] = h
        plus = reduced_mobility(spec, basis, model, varrho, q + dq, guess_rho=guess_rho)
        minus = reduced_mobility(spec, basis, model, varrho, q - dq, guess_rho=guess_rho)
        Mt_q[..., m, :, :] = (plus - minus) / (2.0 * h)[..., None, None]
    return Mt, Mt_rho, Mt_q


def spd_product_eigs(A, B):
    """Eigenvalues (ascending) and eigenvectors of A B for SPD A, B.

    Uses C = A^{1/2} B A^{1/2}: the spectrum of A B equals the spectrum of
    the symmetric positive definite C, hence is real and strictly positive
    with

        lmin(A) lmin(B) <= lambda <= lmax(A) lmax(B),

    and the columns xi^i = A^{1/2} v^i (v^i orthonormal eigenvectors of C)
    form an eigenbasis of A B.  Both bounds are asserted on the result.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape != B.shape or A.shape[-1] != A.shape[-2]:
        raise UsageError("A and B must be square matrices of equal shape")

    for name, mat in (("A", A), ("B", B)):
        sym_defect = np.max(np.abs(mat - np.swapaxes(mat, -1, -2)))
        if sym_defect > 1e-12 * max(1.0, np.max(np.abs(mat))):
            raise DomainError(f"{name} is not symmetric (defect {sym_defect:.3e})")
        emin = np.min(np.linalg.eigvalsh(mat))
        if emin <= 0.0:
            raise DomainError(
                f"{name} is not positive definite (min eigenvalue {emin:.6e})"
            )

    wa, va = np.linalg.eigh(A)
    sqrt_a = (va * np.sqrt(wa)[..., None, :]) @ np.swapaxes(va, -1, -2)
    C = sqrt_a @ B @ sqrt_a
    C = 0.5 * (C + np.swapaxes(C, -1, -2))
    eigvals, vecs = np.linalg.eigh(C)
    eigvecs = sqrt_a @ vecs

    wb = np.linalg.eigvalsh(B)
    lo = wa[..., 0] * wb[..., 0]
    hi = wa[..., -1] * wb[..., -1]
    slack = 1e-10
    if np.any(eigvals[..., 0] < lo * (1.0 - slack) - slack) or np.any(
            eigvals[..., -1] > hi * (1.0 + slack) + slack):
        raise AssertionError("product eigenvalue bounds violated")
    return eigvals, eigvecs


@dataclass(frozen=True)
class ReactionSpec:
    """Species-level reaction rate r(rho) with 1^N . r = 0.

    ``rate`` is a callable rho -> (..., N); ``None`` means no reactions.
    The reduced rate feeding the q-system is rtilde_k = xi^k . r at the
    reconstructed composition.
    """

    n_species: int
    rate: Optional[Callable] = None

    def species_rate(self, rho):
        rho = np.asarray(rho, dtype=float)
        if self.rate is None:
            return np.zeros_like(rho)
        r = np.asarray(self.rate(rho), dtype=float)
        if r.shape != rho.shape:
            raise SpecError(f"rate returned shape {r.shape}, expected {rho.shape}")
        return r

    def rtilde(self, model, basis, varrho, q, guess_rho=None, rho=None):
        if self.rate is None:
            q = np.asarray(q, dtype=float)
            return np.zeros(q.shape)
        if rho is None:
            rho = changevar.reconstruct_rho(model, basis, varrho, q,
                                            guess_rho=guess_rho)
        return self.species_rate(rho) @ basis.Q


def pairwise_exchange_rate(kappa) -> Callable:
    """r_i = sum_j kappa_ij (rho_j - rho_i) with symmetric kappa >= 0.

    Symmetry of kappa makes 1^N . r vanish identically.
    """
    kappa = np.asarray(kappa, dtype=float)
    if np.max(np.abs(kappa - kappa.T)) > 1e-13 * max(1.0, np.max(np.abs(kappa))):
        raise SpecError("exchange-rate matrix must be symmetric")

    def rate(rho):
        rho = np.asarray(rho, dtype=float)
        return rho @ kappa.T - rho * np.sum(kappa, axis=1)

    return rate
