"""Experiment runner: strict TOML configs, deterministic CSV/JSON artifacts.

Usage: ``stochwave run <config.toml> [--paths P] [--seed S] [--out DIR]
[--workers K] [--override-gate]``.

The config is strict: unknown keys are rejected so mistyped mathematical
constants cannot silently fall back to defaults, and the step-size gate
``lambda * tau < 1`` is enforced at validation time (``--override-gate``
exists only to demonstrate failure modes outside that regime). Identical
config and seed produce byte-identical CSV bodies; the manifest carries the
only timestamps. All CSV floats use 17 significant digits.

Exit codes: 0 success, 2 config error, 3 solver non-convergence,
4 audit violation, 1 anything else. Non-success runs leave a machine
readable ``failure.json`` in the output directory.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from . import __version__
from .analysis import (
    audit_apriori,
    audit_energy,
    convergence_study,
    run_apriori_ensemble,
    uniqueness_experiment,
)
from .mesh_fem import build_mesh, interpolate
from .noise import generate_path
from .operators import (
    ElasticOperator,
    LinearDamping,
    ProblemSpec,
    RhoDamping,
    SpectralNoise,
    ZeroNoise,
    check_assumptions,
    mesh_problem,
)
from .stepper import (
    NonConvergence,
    SchemeParams,
    SineForcing,
    ZeroForcing,
    build_forcing_grid,
    integrate,
    scheme_params,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NONCONVERGENCE = 3
EXIT_AUDIT = 4

_GATE_BAND = 4.0
_UNIQUENESS_FACTOR = 10.0


class ConfigError(ValueError):
    pass


@dataclass
class ProblemConfig:
    operator: str = "rho"
    mu: float = 1.0
    b: float = 1.0
    alpha: float = 0.0
    beta: float = 0.0
    gamma: float = 0.0
    decay: float = 1.0
    noise_modes: int = 0
    initial_u_amplitude: float = 0.0
    initial_u_mode: int = 1
    initial_v_amplitude: float = 0.0
    initial_v_mode: int = 1
    forcing: str = "zero"
    forcing_amplitude: float = 1.0
    forcing_mode: int = 1
    forcing_omega: float = 0.0
    forcing_phase: float = 0.0


@dataclass
class DiscretizationConfig:
    n_steps: int = 64
    m: int = 31
    r: int = 1
    horizon: float = 1.0


@dataclass
class SolverConfig:
    tol: float = 1e-10
    max_iters: int = 200
    relaxation: float = 0.7


@dataclass
class ExperimentConfig:
    kind: str = "single"
    paths: int = 1
    base_seed: int = 0
    workers: int = 1
    samples: int = 10000
    energy_tolerance: float = 1e-8
    levels: list = field(default_factory=list)


@dataclass
class OutputConfig:
    directory: str = "out"
    write_trajectories: int = 0


@dataclass
class RunConfig:
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    discretization: DiscretizationConfig = field(default_factory=DiscretizationConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)
    output: OutputConfig = field(default_factory=OutputConfig)


_SECTIONS = {
    "problem": ProblemConfig,
    "discretization": DiscretizationConfig,
    "solver": SolverConfig,
    "experiment": ExperimentConfig,
    "output": OutputConfig,
}

_KINDS = ("single", "energy", "apriori", "uniqueness", "convergence", "assumptions")


def derived_constants(p: ProblemConfig) -> dict:
    """Gate constants in closed form; both shipped damping operators have
    zero monotonicity and coercivity shifts, so only the noise contributes."""
    from scipy.special import zeta

    lambda4 = 2.0 * p.beta**2
    lambda3 = 2.0 * p.alpha**2 / (p.b * np.pi**2)
    kappa = p.gamma**2 * float(zeta(2.0 * p.decay)) if p.gamma != 0.0 else 0.0
    lambda_a = lambda4
    lambda_b = lambda3
    lam = 2.0 * max(lambda_a, lambda_b, kappa)
    return {"lambda_a": lambda_a, "lambda_b": lambda_b, "kappa": kappa,
            "lam": lam, "mu_b": p.b}


def _coerce(section: str, key: str, value, target_type):
    if target_type is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if target_type is int and isinstance(value, int) and not isinstance(value, bool):
        return value
    if target_type is str and isinstance(value, str):
        return value
    if target_type is list and isinstance(value, list):
        return value
    raise ConfigError(f"key {section}.{key} has the wrong type")


def parse_config(text: str) -> RunConfig:
    """Parse a TOML document into a RunConfig, rejecting unknown keys."""
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as err:
        raise ConfigError(f"config parse error: {err}") from err
    for section in raw:
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
    config = RunConfig()
    for section, cls in _SECTIONS.items():
        block = raw.get(section, {})
        if not isinstance(block, dict):
            raise ConfigError(f"section [{section}] must be a table")
        target = getattr(config, section)
        fields = {f.name: f for f in dataclasses.fields(cls)}
        for key, value in block.items():
            if key not in fields:
                raise ConfigError(f"unknown key {section}.{key}")
            target_type = {"levels": list}.get(key, type(getattr(target, key)))
            setattr(target, key, _coerce(section, key, value, target_type))
    return config


def validate_config(config: RunConfig, override_gate: bool = False) -> dict:
    """Check invariants; returns the derived constants on success."""
    p, d, s, e = config.problem, config.discretization, config.solver, config.experiment
    if p.operator not in ("rho", "linear"):
        raise ConfigError(f"problem.operator must be 'rho' or 'linear', got '{p.operator}'")
    if p.forcing not in ("zero", "sine"):
        raise ConfigError(f"problem.forcing must be 'zero' or 'sine', got '{p.forcing}'")
    if p.b <= 0:
        raise ConfigError("problem.b must be positive")
    if p.operator == "linear" and p.mu <= 0:
        raise ConfigError("problem.mu must be positive")
    if p.decay <= 0.5:
        raise ConfigError("problem.decay must exceed 0.5")
    if d.horizon <= 0:
        raise ConfigError("discretization.horizon must be positive")
    if d.n_steps < 1 or d.m < 1 or d.r < 1:
        raise ConfigError("discretization.n_steps, m and r must be at least 1")
    available = p.noise_modes if p.noise_modes > 0 else d.m
    has_noise = p.alpha != 0.0 or p.beta != 0.0 or p.gamma != 0.0
    if has_noise and d.r > available:
        raise ConfigError(f"discretization.r = {d.r} exceeds available noise modes {available}")
    if p.noise_modes > d.m:
        raise ConfigError("problem.noise_modes exceeds the space dimension m")
    if s.tol <= 0 or s.max_iters < 1 or not 0 < s.relaxation <= 1:
        raise ConfigError("invalid [solver] settings")
    if e.kind not in _KINDS:
        raise ConfigError(f"experiment.kind must be one of {_KINDS}, got '{e.kind}'")
    if e.paths < 1 or e.workers < 1 or e.samples < 1:
        raise ConfigError("experiment.paths, workers and samples must be at least 1")
    if e.kind == "convergence":
        if not e.levels:
            raise ConfigError("experiment.levels is required for the convergence experiment")
        for lvl in e.levels:
            if not (isinstance(lvl, list) and len(lvl) == 3
                    and all(isinstance(x, int) for x in lvl)):
                raise ConfigError("experiment.levels entries must be [N, m, r] integer triples")
    derived = derived_constants(p)
    tau = d.horizon / d.n_steps
    if not override_gate and derived["lam"] * tau >= 1.0:
        raise ConfigError(
            f"step-size gate violated: lambda*tau = {derived['lam'] * tau:.6g} >= 1 "
            f"(lambda = {derived['lam']:.6g}, tau = {tau:.6g})")
    return derived


def parse_and_validate(text: str, override_gate: bool = False) -> RunConfig:
    config = parse_config(text)
    validate_config(config, override_gate)
    return config


def _toml_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, list):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    raise TypeError(f"cannot emit {type(value)} to TOML")


def config_to_toml(config: RunConfig) -> str:
    """Echo the fully defaulted config; re-parsing yields an equal RunConfig."""
    lines = []
    for section, _ in _SECTIONS.items():
        lines.append(f"[{section}]")
        block = getattr(config, section)
        for f in dataclasses.fields(block):
            lines.append(f"{f.name} = {_toml_value(getattr(block, f.name))}")
        lines.append("")
    return "\n".join(lines)


def _initial_field(mesh, amplitude: float, mode: int) -> np.ndarray:
    if amplitude == 0.0:
        return np.zeros(mesh.m)
    return interpolate(mesh, lambda x: amplitude * np.sin(mode * np.pi * x))


def build_problem(problem: ProblemConfig, disc: DiscretizationConfig) -> ProblemSpec:
    mesh = build_mesh(disc.m)
    if problem.operator == "rho":
        damping = RhoDamping(mesh)
    else:
        damping = LinearDamping.from_mesh(mesh, problem.mu)
    elastic = ElasticOperator.from_mesh(mesh, problem.b)
    if problem.alpha == 0.0 and problem.beta == 0.0 and problem.gamma == 0.0:
        noise = ZeroNoise(dim=mesh.m)
    else:
        modes = problem.noise_modes if problem.noise_modes > 0 else mesh.m
        noise = SpectralNoise(mesh, problem.alpha, problem.beta, problem.gamma,
                              decay=problem.decay, modes=modes)
    if problem.forcing == "sine":
        forcing = SineForcing(amplitude=problem.forcing_amplitude,
                              mode=problem.forcing_mode,
                              omega=problem.forcing_omega,
                              phase=problem.forcing_phase)
    else:
        forcing = ZeroForcing()
    u0 = _initial_field(mesh, problem.initial_u_amplitude, problem.initial_u_mode)
    v0 = _initial_field(mesh, problem.initial_v_amplitude, problem.initial_v_mode)
    return mesh_problem(mesh, damping, elastic, noise, forcing, u0, v0)


def build_params(config: RunConfig, spec: ProblemSpec,
                 override_gate: bool = False) -> SchemeParams:
    d, s = config.discretization, config.solver
    return scheme_params(d.n_steps, d.horizon, spec.lam, solver_tol=s.tol,
                         max_iters=s.max_iters, relaxation=s.relaxation,
                         enforce_gate=not override_gate)


def _fmt(x) -> str:
    return format(float(x), ".17g")


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(str(c) if isinstance(c, (int, str)) else _fmt(c) for c in row))
    path.write_text("\n".join(lines) + "\n")


def _write_trajectory(path: Path, traj, spec) -> None:
    rows = []
    for n in range(traj.n_steps + 1):
        v_norm = float(np.sqrt(spec.norm_h_sq(traj.v[n])))
        u_bnorm = float(np.sqrt(spec.elastic.norm_sq(traj.u[n])))
        iters = int(traj.iterations[n - 1]) if n >= 1 else 0
        res = float(traj.residuals[n - 1]) if n >= 1 else 0.0
        rows.append([n, n * traj.tau, v_norm, u_bnorm, iters, res])
    _write_csv(path, ["n", "t_n", "v_norm_h", "u_norm_b", "newton_iters", "residual"], rows)


class _LevelBuilder:
    """Picklable problem family over meshes for the convergence study."""

    def __init__(self, problem: ProblemConfig):
        self.problem = problem

    def __call__(self, mesh):
        disc = DiscretizationConfig(m=mesh.m)
        return build_problem(self.problem, disc)


def run_experiment(config: RunConfig, override_gate: bool = False) -> int:
    """Dispatch the configured experiment; write artifacts; return exit code."""
    derived = validate_config(config, override_gate)
    out = Path(config.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    started = time.time()
    e = config.experiment
    summary: dict = {"experiment": e.kind}
    code = EXIT_OK
    failure = None

    try:
        if e.kind == "convergence":
            report = convergence_study(_LevelBuilder(config.problem), e.levels,
                                       config.discretization.horizon, e.paths,
                                       e.base_seed, solver_tol=config.solver.tol,
                                       workers=e.workers)
            rows = []
            for k, (n, m, r) in enumerate(report.levels[:-1]):
                rows.append([k, n, m, r,
                             report.error_mean[k, 0], report.error_se[k, 0],
                             report.error_mean[k, 1], report.error_se[k, 1],
                             report.error_mean[k, 2], report.error_se[k, 2]])
            _write_csv(out / "convergence.csv",
                       ["level", "n_steps", "m", "r", "v_end_sq", "v_end_sq_se",
                        "u_end_bsq", "u_end_bsq_se", "v_energy_integral",
                        "v_energy_integral_se"], rows)
            decreasing = report.strictly_decreasing(0) and report.strictly_decreasing(1)
            if config.problem.operator == "linear":
                decreasing = decreasing and report.strictly_decreasing(2)
            summary["strictly_decreasing"] = decreasing
            summary["levels"] = report.levels
            if not decreasing:
                code, failure = EXIT_AUDIT, {"kind": "audit", "check": "convergence"}
        else:
            spec = build_problem(config.problem, config.discretization)
            params = build_params(config, spec, override_gate)
            if e.kind == "assumptions":
                report = check_assumptions(spec, samples=e.samples, seed=e.base_seed)
                rows = [[rec.name, rec.worst_margin, int(rec.violated)]
                        for rec in report.records.values()]
                _write_csv(out / "assumptions.csv",
                           ["inequality", "worst_margin", "violated"], rows)
                summary["violations"] = [rec.name for rec in report.violations]
                if not report.ok:
                    code, failure = EXIT_AUDIT, {"kind": "audit", "check": "assumptions",
                                                 "violations": summary["violations"]}
            elif e.kind == "apriori":
                stats = run_apriori_ensemble(spec, params, e.paths, e.base_seed,
                                             config.discretization.r, workers=e.workers)
                report = audit_apriori(stats, spec, params, band=_GATE_BAND)
                rows = []
                for n in range(params.n_steps + 1):
                    rows.append([n, n * params.tau, stats.lhs_mean[n], stats.lhs_se[n],
                                 stats.rhs_mean[n], stats.rhs_se[n],
                                 stats.margin_mean[n], stats.margin_se[n]])
                _write_csv(out / "apriori.csv",
                           ["n", "t_n", "lhs_mean", "lhs_se", "rhs_mean", "rhs_se",
                            "margin_mean", "margin_se"], rows)
                summary["ok"] = report.ok
                summary["worst_step"] = report.worst_step
                summary["sup_v_sq"] = stats.sup_v_sq
                summary["sup_u_bsq"] = stats.sup_u_bsq
                summary["va_integral_mean"] = stats.va_integral_mean
                if not report.ok:
                    code, failure = EXIT_AUDIT, {"kind": "audit", "check": "apriori",
                                                 "worst_step": report.worst_step}
            elif e.kind == "uniqueness":
                forcing_grid = build_forcing_grid(spec, params)
                rows = []
                worst = 0.0
                for i in range(e.paths):
                    path = generate_path(params.n_steps, config.discretization.r,
                                         params.horizon, e.base_seed, path_index=i)
                    result = uniqueness_experiment(spec, params, path, forcing_grid)
                    worst = max(worst, result.max_dv)
                    rows.append([i, result.max_dv, result.max_du_b])
                _write_csv(out / "uniqueness.csv", ["path", "max_dv", "max_du_b"], rows)
                bound = _UNIQUENESS_FACTOR * config.solver.tol
                summary["worst_max_dv"] = worst
                summary["bound"] = bound
                if worst > bound:
                    code, failure = EXIT_AUDIT, {"kind": "audit", "check": "uniqueness",
                                                 "worst_max_dv": worst, "bound": bound}
            else:  # single or energy
                n_runs = 1 if e.kind == "single" else e.paths
                forcing_grid = build_forcing_grid(spec, params)
                rows = []
                worst_rel = 0.0
                dumps = max(1, config.output.write_trajectories) if e.kind == "single" \
                    else config.output.write_trajectories
                for i in range(n_runs):
                    path = generate_path(params.n_steps, config.discretization.r,
                                         params.horizon, e.base_seed, path_index=i)
                    traj = integrate(spec, params, path, forcing_grid)
                    ledger = audit_energy(traj, path, forcing_grid, spec)
                    worst_rel = max(worst_rel, ledger.relative_defect)
                    for n in range(params.n_steps + 1):
                        rows.append([i, n, n * params.tau, ledger.lhs[n], ledger.rhs[n],
                                     abs(ledger.lhs[n] - ledger.rhs[n])])
                    if i < dumps:
                        _write_trajectory(out / f"trajectory_{i}.csv", traj, spec)
                _write_csv(out / "energy.csv",
                           ["path", "n", "t_n", "lhs", "rhs", "defect"], rows)
                summary["max_relative_defect"] = worst_rel
                if e.kind == "energy" and worst_rel > e.energy_tolerance:
                    code, failure = EXIT_AUDIT, {"kind": "audit", "check": "energy",
                                                 "max_relative_defect": worst_rel,
                                                 "tolerance": e.energy_tolerance}
    except NonConvergence as err:
        code = EXIT_NONCONVERGENCE
        failure = {"kind": "non_convergence", "step": err.step,
                   "message": str(err), "residual_history": list(err.history)}
        summary["non_convergence_step"] = err.step

    (out / "config_echo.toml").write_text(config_to_toml(config))
    manifest = {
        "experiment": e.kind,
        "config": dataclasses.asdict(config),
        "derived": derived,
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "stochwave": __version__,
            "gaussian_sampler": "philox-counter-substreams/ziggurat",
        },
        "seeds": {"base_seed": e.base_seed, "paths": e.paths},
        "timing_seconds": time.time() - started,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "summary": summary,
        "exit_code": code,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    if failure is not None:
        (out / "failure.json").write_text(json.dumps(failure, indent=2, sort_keys=True))
    return code


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="stochwave",
                                     description="solver experiments for damped "
                                                 "second-order stochastic evolution equations")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run the experiment described by a config file")
    run.add_argument("config", type=Path)
    run.add_argument("--paths", type=int, default=None)
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--out", type=Path, default=None)
    run.add_argument("--workers", type=int, default=None)
    run.add_argument("--override-gate", action="store_true",
                     help="disable the lambda*tau < 1 validation (failure demos only)")
    args = parser.parse_args(argv)

    try:
        text = args.config.read_text()
    except OSError as err:
        print(f"cannot read config: {err}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        config = parse_config(text)
        if args.paths is not None:
            config.experiment.paths = args.paths
        if args.seed is not None:
            config.experiment.base_seed = args.seed
        if args.out is not None:
            config.output.directory = str(args.out)
        if args.workers is not None:
            config.experiment.workers = args.workers
        validate_config(config, args.override_gate)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return run_experiment(config, args.override_gate)
    except OSError as err:
        print(f"i/o error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
