"""Convex free-energy models and exact conjugate thermodynamics.

A mixture of N species is described by a free-energy density h(rho) that is
strictly convex and essentially smooth on the open positive orthant, with
gradient (the chemical potentials mu) mapping onto all of R^N.  Under these
hypotheses the gradient map is invertible and the convex conjugate h* is
smooth on R^N; inverting grad h by a positivity-damped Newton iteration
therefore realises grad h* exactly, and the Euler identity

    p = -h(rho) + rho . mu = h*(mu)

gives the thermodynamic pressure two independent ways.

Three model families are provided:

* ``IdealGasMixture``   -- h = ktheta * sum n_i log(n_i / n_ref)
* ``ElasticMixture``    -- h = K * F(sum n_i vref_i) + ktheta * sum n_i log(n_i / n)
* ``PowerLawMixture``   -- per-species power-law terms plus the mixing entropy

with number densities n_i = rho_i / m_i and n = sum n_i.  The constant
``ktheta`` is the product of Boltzmann constant and absolute temperature;
only this product enters in the isothermal setting.

All evaluators broadcast over leading axes: ``rho`` may be shaped
``(..., N)`` so a whole grid of compositions is processed in one call.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, DomainError, UsageError

NEWTON_TOL = 1e-12
NEWTON_MAX_ITER = 100
_MAX_HALVINGS = 60


@dataclass(frozen=True)
class SpeciesSystem:
    """Species count, molecular masses and the temperature scale ktheta."""

    masses: np.ndarray
    ktheta: float = 1.0

    def __post_init__(self):
        masses = np.atleast_1d(np.asarray(self.masses, dtype=float))
        if masses.ndim != 1 or masses.size < 2:
            raise ValueError("need at least two species")
        if np.any(masses <= 0.0):
            raise ValueError("molecular masses must be strictly positive")
        if not self.ktheta > 0.0:
            raise ValueError("ktheta must be strictly positive")
        object.__setattr__(self, "masses", masses)

    @property
    def n_species(self) -> int:
        return self.masses.size


def _check_composition(rho: np.ndarray, n_species: int) -> np.ndarray:
    rho = np.asarray(rho, dtype=float)
    if rho.ndim == 0 or rho.shape[-1] != n_species:
        raise UsageError(
            f"composition has shape {rho.shape}, expected last axis {n_species}"
        )
    if not np.all(np.isfinite(rho)):
        raise DomainError("composition contains non-finite entries")
    if np.any(rho <= 0.0):
        bad = np.argwhere(rho <= 0.0)
        idx = int(bad[0][-1])
        raise DomainError(
            f"composition component {idx} is non-positive "
            f"(value {rho[tuple(bad[0])]:g}); the free energy lives on the "
            "open positive orthant"
        )
    return rho


class FreeEnergyModel:
    """Base class: analytic h, mu, Hessian plus Newton-based conjugation."""

    species: SpeciesSystem

    # -- analytic pieces supplied by the concrete families -------------------

    def h(self, rho):
        """Free-energy density at a strictly positive composition."""
        raise NotImplementedError

    def mu(self, rho):
        """Chemical potentials grad h(rho)."""
        raise NotImplementedError

    def hessian(self, rho):
        """Symmetric positive definite Hessian of h, shape (..., N, N)."""
        raise NotImplementedError

    # -- conjugation ----------------------------------------------------------

    def default_guess(self, mu):
        """Unit number densities, broadcast to the batch shape of mu."""
        mu = np.asarray(mu, dtype=float)
        return np.broadcast_to(self.species.masses, mu.shape).copy()

    def rho_of_mu(self, mu, guess=None, tol=NEWTON_TOL, max_iter=NEWTON_MAX_ITER):
        """Invert grad h(rho) = mu; this realises grad h*.

        Newton steps are damped by halving until the iterate stays inside the
        open positive orthant (the solution is interior because h is
        essentially smooth).  ``guess`` enables warm starts; the default is
        unit number densities.
        """
        mu = np.asarray(mu, dtype=float)
        if guess is None:
            rho = self.default_guess(mu)
        else:
            rho = _check_composition(np.broadcast_to(guess, mu.shape).copy(),
                                     self.species.n_species)
        residual = None
        for _ in range(max_iter):
            residual = self.mu(rho) - mu
            if np.max(np.abs(residual)) <= tol:
                return rho
            step = -np.linalg.solve(self.hessian(rho), residual[..., None])[..., 0]
            lam = np.ones(rho.shape[:-1])
            for _ in range(_MAX_HALVINGS):
                trial = rho + lam[..., None] * step
                bad = np.any(trial <= 0.0, axis=-1)
                if not np.any(bad):
                    break
                lam = np.where(bad, 0.5 * lam, lam)
            else:
                raise ConvergenceError(
                    "damping could not keep the Newton iterate positive",
                    residual=float(np.max(np.abs(residual))),
                )
            rho = rho + lam[..., None] * step
        raise ConvergenceError(
            f"gradient inversion did not reach tol={tol:g} in {max_iter} steps",
            residual=float(np.max(np.abs(residual))),
        )

    def hstar(self, mu, guess=None, tol=NEWTON_TOL, max_iter=NEWTON_MAX_ITER):
        """Convex conjugate h*(mu) = rho . mu - h(rho) at rho = grad h*(mu)."""
        mu = np.asarray(mu, dtype=float)
        rho = self.rho_of_mu(mu, guess=guess, tol=tol, max_iter=max_iter)
        return np.einsum("...i,...i->...", rho, mu) - self.h(rho)

    def pressure(self, rho):
        """Thermodynamic pressure from the Euler identity p = -h + rho . mu."""
        rho = _check_composition(rho, self.species.n_species)
        return np.einsum("...i,...i->...", rho, self.mu(rho)) - self.h(rho)

    # -- shared helpers -------------------------------------------------------

    def _number_densities(self, rho):
        return rho / self.species.masses

    def _mixing_entropy(self, rho):
        """ktheta * sum n_i log(n_i / n) and its gradient / Hessian blocks."""
        n = self._number_densities(rho)
        ntot = np.sum(n, axis=-1, keepdims=True)
        return self.species.ktheta * np.sum(n * np.log(n / ntot), axis=-1)

    def _mixing_entropy_mu(self, rho):
        n = self._number_densities(rho)
        ntot = np.sum(n, axis=-1, keepdims=True)
        return self.species.ktheta * np.log(n / ntot) / self.species.masses

    def _mixing_entropy_hessian(self, rho):
        m = self.species.masses
        n = self._number_densities(rho)
        ntot = np.sum(n, axis=-1)
        diag = np.zeros(rho.shape + (self.species.n_species,))
        ii = np.arange(self.species.n_species)
        diag[..., ii, ii] = 1.0 / n
        mm = np.multiply.outer(m, m)
        return self.species.ktheta * (diag - 1.0 / ntot[..., None, None]) / mm


@dataclass(frozen=True)
class IdealGasMixture(FreeEnergyModel):
    """h = ktheta * sum n_i log(n_i / n_ref)."""

    species: SpeciesSystem
    n_ref: float = 1.0

    def __post_init__(self):
        if not self.n_ref > 0.0:
            raise ValueError("n_ref must be strictly positive")

    def h(self, rho):
        rho = _check_composition(rho, self.species.n_species)
        n = self._number_densities(rho)
        return self.species.ktheta * np.sum(n * np.log(n / self.n_ref), axis=-1)

    def mu(self, rho):
        rho = _check_composition(rho, self.species.n_species)
        n = self._number_densities(rho)
        kt = self.species.ktheta
        return kt * (1.0 + np.log(n / self.n_ref)) / self.species.masses

    def hessian(self, rho):
        rho = _check_composition(rho, self.species.n_species)
        kt = self.species.ktheta
        out = np.zeros(rho.shape + (self.species.n_species,))
        ii = np.arange(self.species.n_species)
        out[..., ii, ii] = kt / (self.species.masses * rho)
        return out

    def rho_closed_form(self, mu):
        """Exact inverse rho_i = m_i n_ref exp(m_i mu_i / ktheta - 1)."""
        mu = np.asarray(mu, dtype=float)
        m, kt = self.species.masses, self.species.ktheta
        return m * self.n_ref * np.exp(m * mu / kt - 1.0)


class TLogT:
    """F(t) = t log t, the entropic prototype volume-extension function."""

    def value(self, t):
        return t * np.log(t)

    def deriv(self, t):
        return np.log(t) + 1.0

    def deriv2(self, t):
        return 1.0 / t


@dataclass(frozen=True)
class StiffenedTLogT:
    """F(t) = stiffness * (t - log t - 1) + t log t.

    The barrier term keeps F' surjective onto R and adds compressive
    stiffness; F'' = stiffness / t^2 + 1 / t > 0.
    """

    stiffness: float = 1.0

    def __post_init__(self):
        if not self.stiffness > 0.0:
            raise ValueError("stiffness must be strictly positive")

    def value(self, t):
        return self.stiffness * (t - np.log(t) - 1.0) + t * np.log(t)

    def deriv(self, t):
        return self.stiffness * (1.0 - 1.0 / t) + np.log(t) + 1.0

    def deriv2(self, t):
        return self.stiffness / t**2 + 1.0 / t


@dataclass(frozen=True)
class ElasticMixture(FreeEnergyModel):
    """h = K * F(sum n_i vref_i) + ktheta * sum n_i log(n_i / n).

    ``volume_fn`` supplies F with first and second derivatives; admissible
    choices are strictly convex with F'(0+) = -inf and F(t)/t -> +inf.
    """

    species: SpeciesSystem
    compression_modulus: float = 1.0
    v_ref: np.ndarray = None
    volume_fn: object = field(default_factory=TLogT)

    def __post_init__(self):
        if not self.compression_modulus > 0.0:
            raise ValueError("compression modulus must be strictly positive")
        v_ref = (np.ones(self.species.n_species) if self.v_ref is None
                 else np.atleast_1d(np.asarray(self.v_ref, dtype=float)))
        if v_ref.shape != (self.species.n_species,) or np.any(v_ref <= 0.0):
            raise ValueError("v_ref must be strictly positive, one per species")
        object.__setattr__(self, "v_ref", v_ref)

    @property
    def _vol(self):
        # specific volumes per unit mass: h depends on rho through vol . rho
        return self.v_ref / self.species.masses

    def h(self, rho):
        rho = _check_composition(rho, self.species.n_species)
        s = np.einsum("...i,i->...", rho, self._vol)
        return (self.compression_modulus * self.volume_fn.value(s)
                + self._mixing_entropy(rho))

    def mu(self, rho):
        rho = _check_composition(rho, self.species.n_species)
        s = np.einsum("...i,i->...", rho, self._vol)
        fprime = self.compression_modulus * self.volume_fn.deriv(s)
        return fprime[..., None] * self._vol + self._mixing_entropy_mu(rho)

    def hessian(self, rho):
        rho = _check_composition(rho, self.species.n_species)
        s = np.einsum("...i,i->...", rho, self._vol)
        f2 = self.compression_modulus * self.volume_fn.deriv2(s)
        rank_one = f2[..., None, None] * np.multiply.outer(self._vol, self._vol)
        return rank_one + self._mixing_entropy_hessian(rho)


@dataclass(frozen=True)
class PowerLawMixture(FreeEnergyModel):
    """Per-species power-law terms plus the mixing entropy.

    h = sum_i K_i (s_i^alpha_i + s_i log s_i) + ktheta * sum n_i log(n_i / n)
    with s_i = n_i vref_i and exponents alpha_i >= 1.
    """

    species: SpeciesSystem
    moduli: np.ndarray = None
    exponents: np.ndarray = None
    v_ref: np.ndarray = None

    def __post_init__(self):
        N = self.species.n_species

        def _vec(x, default, name, ok):
            v = (np.full(N, default) if x is None
                 else np.atleast_1d(np.asarray(x, dtype=float)))
            if v.shape != (N,) or not np.all(ok(v)):
                raise ValueError(f"{name} must be one admissible value per species")
            return v

        object.__setattr__(self, "moduli",
                           _vec(self.moduli, 1.0, "moduli (> 0)", lambda v: v > 0))
        object.__setattr__(self, "exponents",
                           _vec(self.exponents, 2.0, "exponents (>= 1)", lambda v: v >= 1))
        object.__setattr__(self, "v_ref",
                           _vec(self.v_ref, 1.0, "v_ref (> 0)", lambda v: v > 0))

    def _s(self, rho):
        return rho * self.v_ref / self.species.masses

    def h(self, rho):
        rho = _check_composition(rho, self.species.n_species)
        s = self._s(rho)
        core = np.sum(self.moduli * (s**self.exponents + s * np.log(s)), axis=-1)
        return core + self._mixing_entropy(rho)

    def mu(self, rho):
        rho = _check_composition(rho, self.species.n_species)
        s = self._s(rho)
        a = self.exponents
        dcore = self.moduli * (a * s ** (a - 1.0) + np.log(s) + 1.0)
        return dcore * self.v_ref / self.species.masses + self._mixing_entropy_mu(rho)

    def hessian(self, rho):
        rho = _check_composition(rho, self.species.n_species)
        s = self._s(rho)
        a = self.exponents
        d2core = self.moduli * (a * (a - 1.0) * s ** (a - 2.0) + 1.0 / s)
        diag = d2core * (self.v_ref / self.species.masses) ** 2
        out = self._mixing_entropy_hessian(rho)
        ii = np.arange(self.species.n_species)
        out[..., ii, ii] += diag
        return out
