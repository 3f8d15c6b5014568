"""Verification harness: energy ledger, a priori audits, uniqueness, convergence.

Everything here re-derives its quantities from trajectories and paths rather
than trusting solver internals, so the audits are independent checks of the
stepper:

* the pathwise energy ledger recomputes every term of the discrete energy
  balance; for exact step solutions the balance is an algebraic identity, so
  the ledger defect is bounded by the accumulated solver residuals,
* the a priori audit estimates both sides of the expectation inequality that
  the scheme satisfies under the step-size gate, with Monte Carlo standard
  errors; in the noise-free sub-case the margin is pathwise nonnegative,
* the uniqueness experiment integrates the same data twice under perturbed
  solver policies and measures trajectory agreement,
* the convergence study couples all refinement levels through one fine noise
  realization per sample (coarse increments are sums of fine ones) and
  measures errors against the finest level, the standard self-convergence
  setup when no closed-form solution exists. A manufactured deterministic
  problem with a known smooth solution validates the same machinery against
  true errors first.

Ensembles are embarrassingly parallel over paths; reductions always run in
path-index order so results do not depend on the worker count.
"""

from __future__ import annotations

import functools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .mesh_fem import Mesh1D, build_mesh, interpolate, norm_h, prolong
from .noise import WienerPath, coarsen_to, generate_path
from .operators import (
    ElasticOperator,
    LinearDamping,
    ProblemSpec,
    ZeroNoise,
    mesh_problem,
)
from .prolongation import displacement_gap_integral
from .stepper import (
    ForcingGrid,
    SchemeParams,
    SineForcing,
    SolverVariant,
    Trajectory,
    build_forcing_grid,
    integrate,
    scheme_params,
)


def _map_paths(worker, n_paths: int, workers: int) -> list:
    if workers <= 1:
        return [worker(i) for i in range(n_paths)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        chunk = max(1, n_paths // (4 * workers))
        return list(pool.map(worker, range(n_paths), chunksize=chunk))


def _mean_se(samples: np.ndarray, axis: int = 0) -> tuple[np.ndarray, np.ndarray]:
    samples = np.asarray(samples, dtype=float)
    mean = samples.mean(axis=axis)
    count = samples.shape[axis]
    if count < 2:
        return mean, np.zeros_like(mean)
    return mean, samples.std(axis=axis, ddof=1) / np.sqrt(count)


@dataclass
class EnergyLedger:
    """Cumulative terms of the discrete energy balance, per step.

    Index n holds the sums up to step n. The balance states

        lhs[n] := |v_n|^2 + sum |dv|^2 + |u_n|_B^2 + sum |du|_B^2
                  + 2 tau sum <A v_j, v_j>
        rhs[n] := |v_0|^2 + |u_0|_B^2 + 2 tau sum <f_j, v_j>
                  + 2 sum (noise_j, v_j)

    and holds exactly for exact step solutions.
    """

    v_sq: np.ndarray
    dv_cum: np.ndarray
    u_bsq: np.ndarray
    du_cum: np.ndarray
    damping_cum: np.ndarray
    forcing_cum: np.ndarray
    noise_cum: np.ndarray

    @property
    def lhs(self) -> np.ndarray:
        return self.v_sq + self.dv_cum + self.u_bsq + self.du_cum + self.damping_cum

    @property
    def rhs(self) -> np.ndarray:
        return self.v_sq[0] + self.u_bsq[0] + self.forcing_cum + self.noise_cum

    @property
    def defect(self) -> float:
        return float(abs(self.lhs[-1] - self.rhs[-1]))

    @property
    def relative_defect(self) -> float:
        scale = max(abs(self.lhs[-1]), abs(self.rhs[-1]))
        return self.defect / scale if scale > 0 else self.defect


def audit_energy(traj: Trajectory, path: WienerPath, forcing_grid: ForcingGrid,
                 spec: ProblemSpec) -> EnergyLedger:
    """Recompute every ledger term from the trajectory and the noise path."""
    n = traj.n_steps
    tau = traj.tau
    v, u = traj.v, traj.u
    v_sq = np.array([spec.norm_h_sq(v[j]) for j in range(n + 1)])
    u_bsq = np.array([spec.elastic.norm_sq(u[j]) for j in range(n + 1)])
    dv = np.zeros(n + 1)
    du = np.zeros(n + 1)
    damping = np.zeros(n + 1)
    forcing = np.zeros(n + 1)
    noise = np.zeros(n + 1)
    for j in range(1, n + 1):
        dv[j] = dv[j - 1] + spec.norm_h_sq(v[j] - v[j - 1])
        du[j] = du[j - 1] + spec.elastic.norm_sq(u[j] - u[j - 1])
        damping[j] = damping[j - 1] + 2.0 * tau * float(np.dot(spec.damping.apply(v[j]), v[j]))
        forcing[j] = forcing[j - 1] + 2.0 * tau * float(np.dot(forcing_grid.values[j - 1], v[j]))
        noise_j = spec.noise.weighted_sum(u[j - 1], v[j - 1], path.increments[j - 1])
        noise[j] = noise[j - 1] + 2.0 * float(np.dot(spec.mass.matvec(noise_j), v[j]))
    return EnergyLedger(v_sq=v_sq, dv_cum=dv, u_bsq=u_bsq, du_cum=du,
                        damping_cum=damping, forcing_cum=forcing, noise_cum=noise)


def solver_defect_bound(traj: Trajectory, spec: ProblemSpec) -> float:
    """Upper bound on the ledger defect from the per-step residual norms.

    Step j contributes 2 tau <res_j, v_j> to the imbalance, bounded by
    2 tau ||res_j||_dual |v_j|.
    """
    total = 0.0
    for j in range(1, traj.n_steps + 1):
        total += 2.0 * traj.tau * traj.residuals[j - 1] * norm_sq_root(spec, traj.v[j])
    return total


def norm_sq_root(spec: ProblemSpec, x: np.ndarray) -> float:
    return float(np.sqrt(spec.norm_h_sq(x)))


def _apriori_sides(traj: Trajectory, path: WienerPath, forcing_grid: ForcingGrid,
                   spec: ProblemSpec) -> dict:
    """Both sides of the expectation estimate, cumulatively per step, one path."""
    n = traj.n_steps
    tau = traj.tau
    v, u = traj.v, traj.u
    v_sq = np.array([spec.norm_h_sq(v[j]) for j in range(n + 1)])
    u_bsq = np.array([spec.elastic.norm_sq(u[j]) for j in range(n + 1)])
    lhs = np.zeros(n + 1)
    rhs = np.zeros(n + 1)
    lhs[0] = v_sq[0] + u_bsq[0]
    rhs[0] = v_sq[0] + u_bsq[0]
    du_cum = 0.0
    work_cum = 0.0
    noise_cum = 0.0
    va_integral = 0.0
    for j in range(1, n + 1):
        du_cum += spec.elastic.norm_sq(u[j] - u[j - 1])
        work_cum += 2.0 * tau * (float(np.dot(forcing_grid.values[j - 1], v[j]))
                                 - float(np.dot(spec.damping.apply(v[j]), v[j])))
        noise_cum += tau * spec.noise.l2h_norm_sq(u[j], v[j], path.r)
        va_integral += tau * spec.norm_va_sq(v[j])
        lhs[j] = v_sq[j] + u_bsq[j] + du_cum
        rhs[j] = v_sq[0] + u_bsq[0] + work_cum + noise_cum
    return {"lhs": lhs, "rhs": rhs, "v_sq": v_sq, "u_bsq": u_bsq,
            "va_integral": va_integral, "du_sum": du_cum}


def _apriori_worker(index: int, spec: ProblemSpec, params: SchemeParams,
                    forcing_values: np.ndarray, r: int, base_seed: int) -> dict:
    path = generate_path(params.n_steps, r, params.horizon, base_seed, path_index=index)
    grid = ForcingGrid(values=forcing_values)
    traj = integrate(spec, params, path, grid)
    return _apriori_sides(traj, path, grid, spec)


@dataclass
class EnsembleStats:
    """Monte Carlo summaries of the monitored a priori quantities.

    Per-step arrays carry (mean, standard error) over the ensemble; the
    margin is rhs - lhs of the estimate, which should be nonnegative in
    expectation.
    """

    n_paths: int
    base_seed: int
    r: int
    v_sq_mean: np.ndarray
    v_sq_se: np.ndarray
    u_bsq_mean: np.ndarray
    u_bsq_se: np.ndarray
    lhs_mean: np.ndarray
    lhs_se: np.ndarray
    rhs_mean: np.ndarray
    rhs_se: np.ndarray
    margin_mean: np.ndarray
    margin_se: np.ndarray
    va_integral_mean: float
    va_integral_se: float
    du_sum_mean: float
    du_sum_se: float

    @property
    def sup_v_sq(self) -> float:
        return float(self.v_sq_mean.max())

    @property
    def sup_u_bsq(self) -> float:
        return float(self.u_bsq_mean.max())


def run_apriori_ensemble(spec: ProblemSpec, params: SchemeParams, n_paths: int,
                         base_seed: int, r: int, workers: int = 1) -> EnsembleStats:
    if n_paths < 1:
        raise ValueError("need at least one path")
    forcing_values = build_forcing_grid(spec, params).values
    worker = functools.partial(_apriori_worker, spec=spec, params=params,
                               forcing_values=forcing_values, r=r, base_seed=base_seed)
    results = _map_paths(worker, n_paths, workers)
    lhs = np.stack([res["lhs"] for res in results])
    rhs = np.stack([res["rhs"] for res in results])
    v_sq = np.stack([res["v_sq"] for res in results])
    u_bsq = np.stack([res["u_bsq"] for res in results])
    va = np.array([res["va_integral"] for res in results])
    du = np.array([res["du_sum"] for res in results])
    lhs_m, lhs_s = _mean_se(lhs)
    rhs_m, rhs_s = _mean_se(rhs)
    vm, vs = _mean_se(v_sq)
    um, us = _mean_se(u_bsq)
    mm, ms = _mean_se(rhs - lhs)
    va_m, va_s = _mean_se(va)
    du_m, du_s = _mean_se(du)
    return EnsembleStats(n_paths=n_paths, base_seed=base_seed, r=r,
                         v_sq_mean=vm, v_sq_se=vs, u_bsq_mean=um, u_bsq_se=us,
                         lhs_mean=lhs_m, lhs_se=lhs_s, rhs_mean=rhs_m, rhs_se=rhs_s,
                         margin_mean=mm, margin_se=ms,
                         va_integral_mean=float(va_m), va_integral_se=float(va_s),
                         du_sum_mean=float(du_m), du_sum_se=float(du_s))


@dataclass
class AprioriReport:
    """Margin check of the expectation estimate at a standard-error band."""

    margin_mean: np.ndarray
    margin_se: np.ndarray
    band: float
    worst_step: int
    ok: bool


def audit_apriori(stats: EnsembleStats, spec: ProblemSpec, params: SchemeParams,
                  band: float = 4.0) -> AprioriReport:
    scale = np.maximum(1.0, np.abs(stats.rhs_mean))
    slack = stats.margin_mean + band * stats.margin_se + 1e-12 * scale
    worst = int(np.argmin(slack))
    return AprioriReport(margin_mean=stats.margin_mean, margin_se=stats.margin_se,
                         band=band, worst_step=worst, ok=bool(np.all(slack >= 0.0)))


@dataclass
class UniquenessResult:
    max_dv: float
    max_du_b: float


def uniqueness_experiment(spec: ProblemSpec, params: SchemeParams, path: WienerPath,
                          forcing_grid: ForcingGrid | None = None,
                          perturbation_scale: float = 10.0) -> UniquenessResult:
    """Twin integrations under perturbed solver policies; same data, same path.

    The step map is strictly monotone, so both runs approximate the same
    trajectory; the reported maxima quantify the spread induced purely by
    finishing each solve anywhere inside the residual tolerance.
    """
    if forcing_grid is None:
        forcing_grid = build_forcing_grid(spec, params)
    plain = integrate(spec, params, path, forcing_grid)
    shaken = integrate(spec, params, path, forcing_grid,
                       variant=SolverVariant(initial_guess="perturbed",
                                             perturbation_scale=perturbation_scale,
                                             perturbation_seed=path.seed + 1,
                                             picard_first=2))
    max_dv = 0.0
    max_du = 0.0
    for j in range(params.n_steps + 1):
        max_dv = max(max_dv, np.sqrt(spec.norm_h_sq(plain.v[j] - shaken.v[j])))
        max_du = max(max_du, np.sqrt(spec.elastic.norm_sq(plain.u[j] - shaken.u[j])))
    return UniquenessResult(max_dv=float(max_dv), max_du_b=float(max_du))


def _validate_levels(levels: list[tuple[int, int, int]]) -> None:
    if len(levels) < 2:
        raise ValueError("need at least one coarse level plus the reference")
    n_ref, m_ref, r_ref = levels[-1]
    for n, m, r in levels:
        ratio = n_ref // n
        if n * ratio != n_ref or ratio & (ratio - 1):
            raise ValueError(f"level N={n} does not nest into the reference N={n_ref}")
        mm = m
        while mm < m_ref:
            mm = 2 * mm + 1
        if mm != m_ref:
            raise ValueError(f"level m={m} does not nest into the reference m={m_ref}")
        if not 1 <= r <= r_ref:
            raise ValueError(f"level r={r} exceeds the reference r={r_ref}")
    for (n0, m0, _), (n1, m1, _) in zip(levels, levels[1:]):
        if n1 <= n0 or m1 < m0:
            raise ValueError("levels must refine strictly in N and weakly in m")


def _convergence_worker(index: int, builders_state: tuple, base_seed: int) -> np.ndarray:
    from .stepper import NonConvergence

    specs, all_params, forcings, levels = builders_state
    n_ref, m_ref, r_ref = levels[-1]
    ref_spec = specs[-1]
    ref_params = all_params[-1]
    fine_path = generate_path(n_ref, r_ref, ref_params.horizon, base_seed, path_index=index)
    try:
        ref_traj = integrate(ref_spec, ref_params, fine_path, forcings[-1])
    except NonConvergence as err:
        raise NonConvergence(f"path {index}, reference level: {err}",
                             err.history, err.step) from err
    ref_mesh = ref_spec.mesh
    out = np.zeros((len(levels) - 1, 3))
    for k, (n, m, r) in enumerate(levels[:-1]):
        path = coarsen_to(fine_path, n).truncated(r)
        try:
            traj = integrate(specs[k], all_params[k], path, forcings[k])
        except NonConvergence as err:
            raise NonConvergence(f"path {index}, level {k}: {err}",
                                 err.history, err.step) from err
        lifted = np.stack([prolong(specs[k].mesh, ref_mesh, traj.v[j])
                           for j in range(n + 1)])
        lifted_u_end = prolong(specs[k].mesh, ref_mesh, traj.u[n])
        out[k, 0] = ref_spec.norm_h_sq(lifted[n] - ref_traj.v[n_ref])
        out[k, 1] = ref_spec.elastic.norm_sq(lifted_u_end - ref_traj.u[n_ref])
        ratio = n_ref // n
        acc = 0.0
        for fine_step in range(1, n_ref + 1):
            coarse_step = (fine_step - 1) // ratio + 1
            acc += ref_params.tau * ref_spec.norm_va_sq(
                lifted[coarse_step] - ref_traj.v[fine_step])
        out[k, 2] = acc
    return out


@dataclass
class ConvergenceReport:
    """Per-level mean squared errors against the finest coupled level.

    Columns of the error arrays: endpoint velocity error |v_l(T) - v_ref(T)|^2,
    endpoint displacement error in the B-norm, and the time integral of the
    squared energy-space velocity error.
    """

    levels: list[tuple[int, int, int]]
    error_mean: np.ndarray
    error_se: np.ndarray
    n_paths: int
    base_seed: int

    METRICS = ("v_end_sq", "u_end_bsq", "v_energy_integral")

    def strictly_decreasing(self, column: int) -> bool:
        e = self.error_mean[:, column]
        return bool(np.all(np.diff(e) < 0.0))


def convergence_study(builder, levels: list[tuple[int, int, int]], horizon: float,
                      n_paths: int, base_seed: int, solver_tol: float = 1e-10,
                      workers: int = 1) -> ConvergenceReport:
    """Coupled-path self-convergence errors against the finest level.

    ``builder(mesh)`` instantiates the problem on each level's mesh; noise is
    generated once per sample on the finest grid and coarsened by pairwise
    summation (the first-step convention is re-applied per level), so all
    levels see the same underlying realization.
    """
    levels = [tuple(int(x) for x in lvl) for lvl in levels]
    _validate_levels(levels)
    specs = []
    all_params = []
    forcings = []
    for n, m, r in levels:
        spec = builder(build_mesh(m))
        params = scheme_params(n, horizon, spec.lam, solver_tol=solver_tol)
        specs.append(spec)
        all_params.append(params)
        forcings.append(build_forcing_grid(spec, params))
    state = (specs, all_params, forcings, levels)
    worker = functools.partial(_convergence_worker, builders_state=state,
                               base_seed=base_seed)
    results = _map_paths(worker, n_paths, workers)
    stacked = np.stack(results)
    mean, se = _mean_se(stacked)
    return ConvergenceReport(levels=levels, error_mean=mean, error_se=se,
                             n_paths=n_paths, base_seed=base_seed)


def manufactured_problem(mesh: Mesh1D, phase: float = np.pi / 4) -> ProblemSpec:
    """Deterministic linear problem with the known smooth solution
    u(t, x) = sin(pi t + phase) sin(pi x); the forcing below is what the
    continuous equation demands of it.
    """
    forcing = SineForcing(amplitude=np.pi**3, mode=1, omega=np.pi, phase=phase)
    u0 = interpolate(mesh, lambda x: np.sin(phase) * np.sin(np.pi * x))
    v0 = interpolate(mesh, lambda x: np.pi * np.cos(phase) * np.sin(np.pi * x))
    return mesh_problem(mesh, LinearDamping.from_mesh(mesh, 1.0),
                        ElasticOperator.from_mesh(mesh, 1.0), ZeroNoise(dim=mesh.m),
                        forcing, u0, v0)


def manufactured_exact(mesh: Mesh1D, t: float, phase: float = np.pi / 4):
    u = interpolate(mesh, lambda x: np.sin(np.pi * t + phase) * np.sin(np.pi * x))
    v = interpolate(mesh, lambda x: np.pi * np.cos(np.pi * t + phase) * np.sin(np.pi * x))
    return u, v


def manufactured_errors(levels: list[tuple[int, int]], horizon: float = 1.0,
                        phase: float = np.pi / 4,
                        solver_tol: float = 1e-10) -> np.ndarray:
    """True endpoint errors (|v error|_H, |u error|_H) per (N, m) level."""
    out = np.zeros((len(levels), 2))
    for k, (n, m) in enumerate(levels):
        mesh = build_mesh(m)
        spec = manufactured_problem(mesh, phase)
        params = scheme_params(n, horizon, spec.lam, solver_tol=solver_tol)
        path = generate_path(n, 1, horizon, seed=0)
        traj = integrate(spec, params, path)
        u_exact, v_exact = manufactured_exact(mesh, horizon, phase)
        out[k, 0] = norm_h(mesh, traj.v[n] - v_exact)
        out[k, 1] = norm_h(mesh, traj.u[n] - u_exact)
    return out


def displacement_increment_crosscheck(traj: Trajectory, spec: ProblemSpec) -> tuple[float, float]:
    """Ledger displacement-increment sum vs the prolongation gap integral.

    Returns (tau * sum |du|_B^2, int |u - u_minus|_B^2 dt); the two are the
    same finite sum computed through different code paths.
    """
    tau = traj.tau
    du = 0.0
    for j in range(1, traj.n_steps + 1):
        du += spec.elastic.norm_sq(traj.u[j] - traj.u[j - 1])
    return tau * du, displacement_gap_integral(traj, spec)
