"""Scenario configuration, run orchestration and persistence.

Scenarios are TOML files with named blocks (species, free_energy, basis,
mobility, reaction, forcing, grid, time, solver, initial, output and, for
the perturbation mode, equilibrium).  Initial data and forcings are named
analytic families with parameters, never arbitrary expressions, so a
scenario can be validated completely before anything runs:

* the no-slip compatibility v0 = 0 at both walls,
* the zero-flux compatibility dq0/dx = 0 at both walls,
* strict positivity of the initial total mass density (m0 > 0),

plus shape and admissibility checks of every block.  Validation collects
all violations instead of stopping at the first.

``run`` writes per-snapshot CSV files (x, varrho, q_1..q_{N-1}, v,
reconstructed rho_1..rho_N, p) and a JSON summary with the iteration
trace, diagnostics series, density certificate and mass drift.  Outputs
are deterministic: no timestamps, sorted keys, floats at full precision.
Exit codes: 0 converged, 2 positivity loss, 3 non-contractive run,
4 solver failure, 1 unusable scenario.

The environment variable ``MIXFLOW_OUT_ROOT`` relocates all outputs.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import changevar, diagnostics, mobility, solver, thermo
from .discretization import Grid1D
from .errors import (ConvergenceError, LinearSolverError, MixflowError,
                     PositivityError, ScenarioError, StepSizeError)

OUT_ROOT_ENV = "MIXFLOW_OUT_ROOT"
# wall-compatibility violations below the scheme's resolution are harmless;
# the tolerance matches the solver's own discrete check
COMPAT_TOL_FACTOR = 5.0
COMPAT_TOL_FLOOR = 1e-12

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_POSITIVITY = 2
EXIT_NON_CONTRACTIVE = 3
EXIT_SOLVER_FAILURE = 4

REGRESSION_SCENARIOS = ("equilibrium", "perturbation", "perturbation_t1",
                        "elastic_n3")


# ---------------------------------------------------------------------------
# analytic profile families
# ---------------------------------------------------------------------------


def _as_vector(value, m, label, errors):
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.shape == (1,) and m > 1:
        arr = np.repeat(arr, m)
    if arr.shape != (m,):
        errors.append(f"{label}: expected {m} components, got shape {arr.shape}")
        arr = np.zeros(m)
    return arr


class Profile:
    """One named analytic profile with values and endpoint derivatives."""

    def __init__(self, kind, params, length, n_comp, label, errors):
        self.kind = kind
        self.length = length
        self.n_comp = n_comp
        self.label = label
        L = length
        if kind == "constant":
            self.base = _as_vector(params.get("value", 0.0), n_comp, label, errors)
            self.amp = np.zeros(n_comp)
            self._shape = lambda x: np.zeros_like(x)
            self._dshape = lambda x: np.zeros_like(x)
        elif kind == "zero":
            self.base = np.zeros(n_comp)
            self.amp = np.zeros(n_comp)
            self._shape = lambda x: np.zeros_like(x)
            self._dshape = lambda x: np.zeros_like(x)
        elif kind == "cosine":
            k = int(params.get("mode", 1))
            self.base = _as_vector(params.get("base", 0.0), n_comp, label, errors)
            self.amp = _as_vector(params.get("amplitude", 0.0), n_comp, label, errors)
            w = k * math.pi / L
            self._shape = lambda x, w=w: np.cos(w * x)
            self._dshape = lambda x, w=w: -w * np.sin(w * x)
        elif kind == "sine":
            k = int(params.get("mode", 1))
            self.base = _as_vector(params.get("base", 0.0), n_comp, label, errors)
            self.amp = _as_vector(params.get("amplitude", 0.0), n_comp, label, errors)
            w = k * math.pi / L
            self._shape = lambda x, w=w: np.sin(w * x)
            self._dshape = lambda x, w=w: w * np.cos(w * x)
        elif kind == "gaussian_bump":
            self.base = _as_vector(params.get("base", 0.0), n_comp, label, errors)
            self.amp = _as_vector(params.get("amplitude", 0.0), n_comp, label, errors)
            center = float(params.get("center", L / 2.0))
            width = float(params.get("width", L / 10.0))
            if width <= 0.0:
                errors.append(f"{label}: gaussian width must be positive")
                width = L / 10.0
            self._shape = lambda x, c=center, w=width: np.exp(-((x - c) ** 2)
                                                              / (2.0 * w * w))
            self._dshape = lambda x, c=center, w=width: (-(x - c) / (w * w)
                                                         * np.exp(-((x - c) ** 2)
                                                                  / (2.0 * w * w)))
        elif kind == "bump":
            self.base = np.zeros(n_comp)
            self.amp = _as_vector(params.get("amplitude", 0.0), n_comp, label, errors)
            self._shape = lambda x, L=L: (4.0 * x * (L - x) / L**2) ** 2
            self._dshape = lambda x, L=L: (2.0 * (4.0 * x * (L - x) / L**2)
                                           * 4.0 * (L - 2.0 * x) / L**2)
        else:
            errors.append(f"{label}: unknown profile kind {kind!r}")
            self.base = np.zeros(n_comp)
            self.amp = np.zeros(n_comp)
            self._shape = lambda x: np.zeros_like(x)
            self._dshape = lambda x: np.zeros_like(x)

    def values(self, x):
        return self.base[None, :] + self.amp[None, :] * self._shape(x)[:, None]

    def endpoint_values(self):
        x = np.array([0.0, self.length])
        return self.base[None, :] + self.amp[None, :] * self._shape(x)[:, None]

    def endpoint_derivatives(self):
        x = np.array([0.0, self.length])
        return self.amp[None, :] * self._dshape(x)[:, None]

    def min_value(self, samples=4096):
        x = np.linspace(0.0, self.length, samples)
        return float(np.min(self.base[None, :]
                            + self.amp[None, :] * self._shape(x)[:, None]))


# ---------------------------------------------------------------------------
# scenario loading and validation
# ---------------------------------------------------------------------------


@dataclass
class Scenario:
    """A fully validated, ready-to-run configuration."""

    name: str
    raw: dict
    problem: solver.MixtureProblem
    config: solver.SolverConfig
    q0: np.ndarray
    rho0: np.ndarray
    v0: np.ndarray
    equilibrium: object = None
    output_dir: str = "out"
    snapshot_stride: int = 1
    m0: float = 0.0
    M0: float = 0.0


def builtin_scenario_path(name: str) -> Path:
    from importlib import resources

    return Path(str(resources.files("mixflow") / "scenarios" / f"{name}.toml"))


def list_builtin_scenarios():
    from importlib import resources

    folder = resources.files("mixflow") / "scenarios"
    return sorted(p.name[:-5] for p in folder.iterdir() if p.name.endswith(".toml"))


def _resolve_path(path: str) -> Path:
    if path.startswith("builtin:"):
        return builtin_scenario_path(path.split(":", 1)[1])
    return Path(path)


def load_scenario(path) -> Scenario:
    """Parse and validate a scenario file; raise with every violation found."""
    path = _resolve_path(str(path))
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ScenarioError(f"scenario file {path} does not exist",
                            [f"{path}: not found"]) from None
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(f"scenario file {path} does not parse: {exc}",
                            [f"parse error: {exc}"]) from None
    return build_scenario(raw, name=path.stem)


def build_scenario(raw: dict, name="scenario") -> Scenario:
    errors = []

    def block(key, required=True):
        value = raw.get(key)
        if value is None and required:
            errors.append(f"missing [{key}] block")
            return {}
        return value or {}

    species_blk = block("species")
    fe_blk = block("free_energy")
    grid_blk = block("grid")
    time_blk = block("time")
    solver_blk = block("solver")
    initial_blk = block("initial")
    basis_blk = block("basis", required=False)
    mobility_blk = block("mobility", required=False)
    reaction_blk = block("reaction", required=False)
    forcing_blk = block("forcing", required=False)
    output_blk = block("output", required=False)

    # species + free energy --------------------------------------------------
    species = None
    masses = np.atleast_1d(np.asarray(species_blk.get("masses", [1.0, 1.0]),
                                      dtype=float))
    N = int(species_blk.get("n", masses.size))
    if masses.size != N:
        errors.append(f"species: {N} species but {masses.size} masses")
    try:
        species = thermo.SpeciesSystem(masses=masses,
                                       ktheta=float(species_blk.get("ktheta", 1.0)))
        N = species.n_species
    except ValueError as exc:
        errors.append(f"species: {exc}")

    model = None
    if species is not None:
        variant = fe_blk.get("variant", "ideal_gas")
        try:
            if variant == "ideal_gas":
                model = thermo.IdealGasMixture(
                    species=species, n_ref=float(fe_blk.get("n_ref", 1.0)))
            elif variant == "elastic_mixture":
                fn_name = fe_blk.get("volume_fn", "t_log_t")
                if fn_name == "t_log_t":
                    volume_fn = thermo.TLogT()
                elif fn_name == "stiffened_t_log_t":
                    volume_fn = thermo.StiffenedTLogT(
                        stiffness=float(fe_blk.get("stiffness", 1.0)))
                else:
                    raise ValueError(f"unknown volume_fn {fn_name!r}")
                model = thermo.ElasticMixture(
                    species=species,
                    compression_modulus=float(fe_blk.get("compression_modulus", 1.0)),
                    v_ref=fe_blk.get("v_ref"),
                    volume_fn=volume_fn)
            elif variant == "power_law":
                model = thermo.PowerLawMixture(
                    species=species, moduli=fe_blk.get("moduli"),
                    exponents=fe_blk.get("exponents"), v_ref=fe_blk.get("v_ref"))
            else:
                raise ValueError(f"unknown free-energy variant {variant!r}")
        except ValueError as exc:
            errors.append(f"free_energy: {exc}")

    # basis -------------------------------------------------------------------
    basis = None
    if species is not None:
        choice = basis_blk.get("choice", "last_species_differences")
        try:
            if choice == "last_species_differences":
                basis = changevar.make_basis(N)
            elif choice == "custom":
                basis = changevar.make_basis(N, xi_reduced=basis_blk.get("xi"))
            else:
                errors.append(f"basis: unknown choice {choice!r}")
        except MixflowError as exc:
            errors.append(f"basis: {exc}")

    # mobility ----------------------------------------------------------------
    onsager = None
    if species is not None:
        kind = mobility_blk.get("kind", "constant")
        try:
            if kind == "constant":
                matrix = np.asarray(mobility_blk.get("matrix", np.eye(N)),
                                    dtype=float)
                onsager = mobility.OnsagerSpec(n_species=N, base=matrix)
                eigs = np.linalg.eigvalsh(onsager.base)
                if np.min(eigs) <= 0.0:
                    errors.append(
                        f"mobility: base matrix not positive definite "
                        f"(min eigenvalue {np.min(eigs):.3e})")
            elif kind == "number_weighted_diagonal":
                onsager = mobility.OnsagerSpec(
                    n_species=N, base=mobility.number_weighted_diagonal(species))
            else:
                errors.append(f"mobility: unknown kind {kind!r}")
        except MixflowError as exc:
            errors.append(f"mobility: {exc}")

    # reaction ----------------------------------------------------------------
    reaction = mobility.ReactionSpec(n_species=N)
    r_kind = reaction_blk.get("kind", "none")
    if r_kind == "pairwise_exchange":
        try:
            rate = mobility.pairwise_exchange_rate(
                np.asarray(reaction_blk.get("rates"), dtype=float))
            reaction = mobility.ReactionSpec(n_species=N, rate=rate)
        except (MixflowError, TypeError, ValueError) as exc:
            errors.append(f"reaction: {exc}")
    elif r_kind != "none":
        errors.append(f"reaction: unknown kind {r_kind!r}")

    # grid and time -----------------------------------------------------------
    grid = None
    try:
        grid = Grid1D(length=float(grid_blk.get("length", 1.0)),
                      n=int(grid_blk.get("n", 64)))
    except MixflowError as exc:
        errors.append(f"grid: {exc}")

    config = None
    try:
        config = solver.SolverConfig(
            dt=float(time_blk.get("dt", 1e-3)),
            t_end=float(time_blk.get("t_end", 0.1)),
            fp_tol=float(solver_blk.get("fp_tol", 1e-10)),
            fp_max_sweeps=int(solver_blk.get("fp_max_sweeps", 40)),
            contraction_window=time_blk.get("contraction_window"),
            k0=float(solver_blk.get("k0", 1.0)),
            p0=float(solver_blk.get("p0", 1.0)),
            mode=("direct" if solver_blk.get("mode", "direct") == "direct"
                  else "perturbation"),
        )
    except MixflowError as exc:
        errors.append(f"time/solver: {exc}")

    mu_shear = float(solver_blk.get("mu_shear", 0.5))
    lambda_bulk = float(solver_blk.get("lambda_bulk", 0.0))
    viscosity = lambda_bulk + 2.0 * mu_shear
    if viscosity <= 0.0:
        errors.append("solver: effective viscosity lambda_bulk + 2 mu_shear "
                      "must be positive")

    # forcing -----------------------------------------------------------------
    forcing = solver.no_forcing(max(N - 1, 1))
    f_kind = forcing_blk.get("kind", "none")
    if f_kind == "sine" and grid is not None:
        try:
            forcing = solver.sine_forcing(
                n_q=N - 1, length=grid.length,
                btilde_amplitude=forcing_blk.get("btilde_amplitude"),
                bbar_amplitude=float(forcing_blk.get("bbar_amplitude", 0.0)),
                mode=int(forcing_blk.get("mode", 1)),
                omega=float(forcing_blk.get("omega", 0.0)))
        except MixflowError as exc:
            errors.append(f"forcing: {exc}")
    elif f_kind != "none":
        errors.append(f"forcing: unknown kind {f_kind!r}")

    # initial data ------------------------------------------------------------
    q0 = rho0 = v0 = None
    m0 = M0 = 0.0
    if grid is not None:
        L, x = grid.length, grid.centers
        q_prof = Profile(initial_blk.get("q", {}).get("kind", "constant"),
                         initial_blk.get("q", {}), L, max(N - 1, 1),
                         "initial.q", errors)
        rho_prof = Profile(initial_blk.get("varrho", {}).get("kind", "constant"),
                           initial_blk.get("varrho", {"value": 1.0}), L, 1,
                           "initial.varrho", errors)
        v_prof = Profile(initial_blk.get("v", {}).get("kind", "zero"),
                         initial_blk.get("v", {}), L, 1, "initial.v", errors)

        compat_tol = max(COMPAT_TOL_FLOOR, COMPAT_TOL_FACTOR * grid.dx**2)
        dq_ends = np.max(np.abs(q_prof.endpoint_derivatives()))
        qscale = max(1.0, float(np.max(np.abs(q_prof.amp))))
        if dq_ends > compat_tol * qscale:
            errors.append(
                "initial.q: violates the wall compatibility condition "
                f"grad q0 = 0 (endpoint slope {dq_ends:.3e})")
        v_ends = np.max(np.abs(v_prof.endpoint_values()))
        vscale = max(1.0, float(np.max(np.abs(v_prof.amp))
                                + np.max(np.abs(v_prof.base))))
        if v_ends > compat_tol * vscale:
            errors.append(
                "initial.v: violates the no-slip compatibility condition "
                f"v0 = 0 at the walls (endpoint value {v_ends:.3e})")
        m0 = rho_prof.min_value()
        if not m0 > 0.0:
            errors.append(
                f"initial.varrho: must stay strictly positive, m0 > 0 "
                f"(sampled minimum {m0:.3e})")
        q0 = q_prof.values(x)
        rho0 = rho_prof.values(x)[:, 0]
        v0 = v_prof.values(x)[:, 0]
        M0 = float(np.max(rho0)) if rho0 is not None else 0.0

    # equilibrium (perturbation mode) ------------------------------------------
    equilibrium = None
    if config is not None and config.mode == "perturbation":
        eq_blk = raw.get("equilibrium")
        if eq_blk is None:
            errors.append("perturbation mode needs an [equilibrium] block")
        else:
            try:
                equilibrium = solver.EquilibriumState(
                    q=np.asarray(eq_blk.get("q", [0.0] * max(N - 1, 1)),
                                 dtype=float),
                    varrho=float(eq_blk.get("varrho", 1.0)))
            except MixflowError as exc:
                errors.append(f"equilibrium: {exc}")
        if forcing is not None and not forcing.is_zero:
            errors.append("perturbation mode requires zero forcing")
        if reaction.rate is not None:
            errors.append("perturbation mode requires zero reactions")

    output_dir = output_blk.get("directory", f"out/{name}")
    stride = int(output_blk.get("snapshot_stride", 1))
    if stride < 1:
        errors.append("output: snapshot_stride must be at least 1")

    problem = None
    if not errors:
        try:
            problem = solver.MixtureProblem(
                model=model, basis=basis, grid=grid, onsager=onsager,
                reaction=reaction, forcing=forcing, viscosity=viscosity)
        except MixflowError as exc:
            errors.append(str(exc))

    if errors:
        raise ScenarioError(
            f"scenario {name!r} failed validation with {len(errors)} "
            "violation(s)", errors)

    return Scenario(name=name, raw=raw, problem=problem, config=config,
                    q0=q0, rho0=rho0, v0=v0, equilibrium=equilibrium,
                    output_dir=output_dir, snapshot_stride=stride, m0=m0, M0=M0)


# ---------------------------------------------------------------------------
# running and persistence
# ---------------------------------------------------------------------------


def _out_root() -> Path:
    return Path(os.environ.get(OUT_ROOT_ENV, "."))


def _format_float(x: float) -> str:
    return f"{x:.17g}"


def _write_snapshot(path: Path, problem, q, varrho, v):
    model, basis = problem.model, problem.basis
    x = problem.grid.centers
    rho = changevar.reconstruct_rho(model, basis, varrho, q)
    p = model.pressure(rho)
    m = q.shape[1]
    N = rho.shape[1]
    header = (["x", "varrho"] + [f"q_{i + 1}" for i in range(m)] + ["v"]
              + [f"rho_{i + 1}" for i in range(N)] + ["p"])
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for j in range(x.size):
            row = ([x[j], varrho[j]] + list(q[j]) + [v[j]] + list(rho[j])
                   + [p[j]])
            fh.write(",".join(_format_float(val) for val in row) + "\n")


def _summarise(scenario: Scenario, trajectory, trace, status, exit_code,
               snapshot_names):
    grid, config = scenario.problem.grid, scenario.config
    blow = diagnostics.blowup_functional(trajectory.q, trajectory.v, grid,
                                         config.dt)
    rep_q = diagnostics.v_norm_surrogate(trajectory.q, grid, config.dt, p=4.0)
    cert = diagnostics.density_bound_certificate(
        trajectory.varrho, trajectory.v, grid, config.dt,
        m0=scenario.m0, M0=scenario.M0)
    summary = {
        "scenario": scenario.name,
        "mode": config.mode,
        "status": status,
        "exit_code": exit_code,
        "converged": trace.converged,
        "grid": {"n": grid.n, "length": grid.length},
        "time": {"dt": config.dt, "t_end": config.t_end},
        "sweeps": [asdict(s) for s in trace.sweeps],
        "residuals": trace.residuals,
        "mass_drift": trace.mass_drift,
        "sigma_mean_max": trace.sigma_mean_max,
        "equilibrium_distance": trace.equilibrium_distance,
        "blowup_series": list(map(float, blow)),
        "v_surrogate_series": list(map(float, rep_q.v_series)),
        "density_certificate": {
            "passed": cert.passed,
            "lower_margin": cert.lower_margin,
            "upper_margin": cert.upper_margin,
            "m0": cert.m0,
            "M0": cert.M0,
        },
        "snapshots": snapshot_names,
    }
    return summary


def _execute(scenario: Scenario):
    """Run the configured solver; classify the outcome."""
    status, exit_code = "converged", EXIT_OK
    trajectory = trace = failure_message = None
    try:
        if scenario.config.mode == "perturbation":
            trajectory, trace = solver.fixed_point_T1(
                scenario.problem, scenario.equilibrium, scenario.q0,
                scenario.rho0, scenario.v0, scenario.config)
        else:
            trajectory, trace = solver.fixed_point_T(
                scenario.problem, scenario.q0, scenario.rho0, scenario.v0,
                scenario.config)
        if not trace.converged:
            status, exit_code = "non_contractive", EXIT_NON_CONTRACTIVE
    except PositivityError as exc:
        status, exit_code, failure_message = ("positivity_lost",
                                              EXIT_POSITIVITY, str(exc))
    except (ConvergenceError, LinearSolverError, StepSizeError) as exc:
        status, exit_code, failure_message = ("solver_failure",
                                              EXIT_SOLVER_FAILURE, str(exc))
    return status, exit_code, trajectory, trace, failure_message


def run_scenario(scenario: Scenario, out_root=None, _collect=None):
    """Execute one scenario; returns (exit_code, summary, output_dir)."""
    root = Path(out_root) if out_root is not None else _out_root()
    out_dir = root / scenario.output_dir
    out_dir.mkdir(parents=True, exist_ok=True)

    status, exit_code, trajectory, trace, failure_message = _execute(scenario)
    if _collect is not None:
        _collect["trajectory"] = trajectory

    if trajectory is None:
        summary = {
            "scenario": scenario.name,
            "mode": scenario.config.mode,
            "status": status,
            "exit_code": exit_code,
            "error": failure_message,
        }
    else:
        K = trajectory.n_steps
        indices = sorted(set(range(0, K + 1, scenario.snapshot_stride)) | {K})
        names = []
        for k in indices:
            fname = f"snapshot_{k:06d}.csv"
            _write_snapshot(out_dir / fname, scenario.problem,
                            trajectory.q[k], trajectory.varrho[k],
                            trajectory.v[k])
            names.append(fname)
        summary = _summarise(scenario, trajectory, trace, status, exit_code,
                             names)
        if failure_message:
            summary["error"] = failure_message
    with open(out_dir / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return exit_code, summary, out_dir


# ---------------------------------------------------------------------------
# parameter sweeps
# ---------------------------------------------------------------------------


def _parse_grid_spec(spec: str):
    if "=" not in spec:
        raise ScenarioError(f"grid spec {spec!r} must look like key=v1,v2,...")
    key, _, values = spec.partition("=")
    parsed = []
    for tok in values.split(","):
        tok = tok.strip()
        if not tok:
            continue
        try:
            parsed.append(int(tok))
        except ValueError:
            parsed.append(float(tok))
    return key.strip(), parsed


def _override(raw: dict, dotted_key: str, value):
    out = json.loads(json.dumps(raw))  # deep copy of plain data
    node = out
    parts = dotted_key.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
    node[parts[-1]] = value
    return out


def _restrict(field, factor):
    """Block-average a fine cell field onto a coarser grid (factor cells)."""
    if field.ndim == 1:
        return field.reshape(-1, factor).mean(axis=1)
    return field.reshape(-1, factor, field.shape[1]).mean(axis=1)


def _observed_orders(runs, key):
    """Richardson observed orders from consecutive-resolution differences.

    For a scheme of order p and a fixed refinement ratio, the difference of
    two consecutive solutions scales like h^p, so consecutive differences
    give unbiased order estimates (unlike differences against one finest
    reference).
    """
    axis = [r["value"] for r in runs]
    if key == "grid.n":
        h = [1.0 / v for v in axis]
    elif key == "time.dt":
        h = list(map(float, axis))
    else:
        return None
    order = np.argsort(h)[::-1]  # coarse -> fine
    runs = [runs[i] for i in order]
    h = [h[i] for i in order]
    diffs = []
    for coarse, fine in zip(runs[:-1], runs[1:]):
        if coarse["final"] is None or fine["final"] is None:
            diffs.append(None)
            continue
        qf, rf, vf = fine["final"]
        qc, rc, vc = coarse["final"]
        if key == "grid.n":
            factor = rf.shape[0] // rc.shape[0]
            if factor * rc.shape[0] != rf.shape[0]:
                return None
            qf, rf, vf = (_restrict(qf, factor), _restrict(rf, factor),
                          _restrict(vf, factor))
        diffs.append(float(max(np.max(np.abs(qf - qc)), np.max(np.abs(rf - rc)),
                               np.max(np.abs(vf - vc)))))
    orders = []
    for i in range(len(diffs) - 1):
        if diffs[i] and diffs[i + 1]:
            orders.append(float(np.log(diffs[i] / diffs[i + 1])
                                / np.log(h[i] / h[i + 1])))
        else:
            orders.append(None)
    return {"h": h[:-1], "differences": diffs, "orders": orders}


def run_sweep(base_path, grid_specs, out_root=None):
    """Run the cartesian product of the grid specs; aggregate one report."""
    root = Path(out_root) if out_root is not None else _out_root()
    base = _resolve_path(str(base_path))
    with open(base, "rb") as fh:
        raw = tomllib.load(fh)
    name = base.stem

    axes = [_parse_grid_spec(s) for s in grid_specs]
    report = {"scenario": name, "axes": [{"key": k, "values": v} for k, v in axes],
              "runs": [], "orders": None}
    sweep_dir = root / f"sweep_{name}"
    sweep_dir.mkdir(parents=True, exist_ok=True)

    if not axes or any(len(v) == 0 for _, v in axes):
        with open(sweep_dir / "sweep.json", "w", encoding="utf-8") as fh:
            json.dump(report, fh, sort_keys=True, indent=2)
            fh.write("\n")
        return EXIT_OK, report, sweep_dir

    combos = [[]]
    for key, values in axes:
        combos = [prev + [(key, v)] for prev in combos for v in values]

    finals = []
    for i, combo in enumerate(combos):
        modified = raw
        for key, value in combo:
            modified = _override(modified, key, value)
        modified.setdefault("output", {})
        modified["output"]["directory"] = f"sweep_{name}/run_{i:03d}"
        record = {"index": i, "params": {k: v for k, v in combo}}
        try:
            scen = build_scenario(modified, name=f"{name}_run{i:03d}")
            collect = {}
            code, summary, _ = run_scenario(scen, out_root=root,
                                            _collect=collect)
            record["exit_code"] = code
            record["status"] = summary.get("status")
            record["sup_diffs"] = [s["sup_diff"] for s in summary.get("sweeps", [])]
            record["energy_ratios"] = [s["energy_ratio"]
                                       for s in summary.get("sweeps", [])]
            traj = collect.get("trajectory")
            if code == EXIT_OK and traj is not None:
                finals.append({"value": combo[0][1],
                               "final": (traj.q[-1], traj.varrho[-1], traj.v[-1])})
            else:
                finals.append({"value": combo[0][1], "final": None})
        except ScenarioError as exc:
            record["exit_code"] = EXIT_INVALID
            record["status"] = "invalid"
            record["violations"] = exc.violations
            finals.append({"value": combo[0][1], "final": None})
        except MixflowError as exc:
            record["exit_code"] = EXIT_SOLVER_FAILURE
            record["status"] = "error"
            record["error"] = str(exc)
            finals.append({"value": combo[0][1], "final": None})
        report["runs"].append(record)

    if len(axes) == 1 and axes[0][0] in ("grid.n", "time.dt") and len(finals) >= 2:
        report["orders"] = _observed_orders(finals, axes[0][0])

    with open(sweep_dir / "sweep.json", "w", encoding="utf-8") as fh:
        json.dump(_jsonable(report), fh, sort_keys=True, indent=2)
        fh.write("\n")
    return EXIT_OK, report, sweep_dir


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mixflow",
        description="Config-driven runs of the multicomponent mixture solver")
    sub = parser.add_subparsers(dest="command", required=True)

    p_val = sub.add_parser("validate", help="validate a scenario file")
    p_val.add_argument("config")

    p_run = sub.add_parser("run", help="run one scenario")
    p_run.add_argument("config")
    p_run.add_argument("--out-root", default=None)

    p_sweep = sub.add_parser("sweep", help="run a parameter sweep")
    p_sweep.add_argument("config")
    p_sweep.add_argument("--grid", action="append", default=[],
                         metavar="key=v1,v2,...",
                         help="sweep axis, e.g. time.dt=2e-3,1e-3")
    p_sweep.add_argument("--out-root", default=None)

    sub.add_parser("scenarios", help="list built-in scenarios")

    args = parser.parse_args(argv)

    if args.command == "scenarios":
        for name in list_builtin_scenarios():
            print(name)
        return EXIT_OK

    if args.command == "validate":
        try:
            scenario = load_scenario(args.config)
        except ScenarioError as exc:
            print(f"invalid: {exc}")
            for violation in exc.violations:
                print(f"  - {violation}")
            return EXIT_INVALID
        print(f"ok: scenario {scenario.name!r} "
              f"(N={scenario.problem.basis.n_species}, n={scenario.problem.grid.n}, "
              f"mode={scenario.config.mode})")
        return EXIT_OK

    if args.command == "run":
        try:
            scenario = load_scenario(args.config)
        except ScenarioError as exc:
            print(f"invalid: {exc}")
            for violation in exc.violations:
                print(f"  - {violation}")
            return EXIT_INVALID
        try:
            code, summary, out_dir = run_scenario(scenario,
                                                  out_root=args.out_root)
        except MixflowError as exc:
            print(f"failed: {exc}")
            return EXIT_SOLVER_FAILURE
        print(f"{summary['status']}: outputs in {out_dir}")
        return code

    if args.command == "sweep":
        try:
            code, report, out_dir = run_sweep(args.config, args.grid,
                                              out_root=args.out_root)
        except (ScenarioError, MixflowError) as exc:
            print(f"failed: {exc}")
            return EXIT_INVALID
        print(f"sweep complete: {len(report['runs'])} runs, report in {out_dir}")
        return code

    return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
