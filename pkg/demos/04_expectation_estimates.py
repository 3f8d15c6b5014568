"""Monte Carlo audit of the expectation estimate behind the scheme.

Runs an ensemble of trajectories and checks, step by step, that the sample
mean of

    |v_n|^2 + |u_n|_B^2 + sum |du|_B^2

stays below its data-and-noise bound within a 4-standard-error band; also
prints the uniformly monitored statistics.
"""

import numpy as np

from stochwave.analysis import audit_apriori, run_apriori_ensemble
from stochwave.mesh_fem import build_mesh, interpolate
from stochwave.noise import generate_path
from stochwave.operators import (
    ElasticOperator,
    RhoDamping,
    SpectralNoise,
    mesh_problem,
)
from stochwave.stepper import SineForcing, scheme_params

mesh = build_mesh(31)
spec = mesh_problem(
    mesh,
    RhoDamping(mesh),
    ElasticOperator.from_mesh(mesh, 1.0),
    SpectralNoise(mesh, alpha=0.5, beta=0.5, gamma=0.25, decay=1.0),
    SineForcing(amplitude=1.0, mode=1, omega=2.0),
    interpolate(mesh, lambda x: 0.5 * np.sin(np.pi * x)),
    interpolate(mesh, lambda x: np.sin(2 * np.pi * x)),
)
params = scheme_params(64, 1.0, spec.lam, solver_tol=1e-10)

stats = run_apriori_ensemble(spec, params, n_paths=200, base_seed=11, r=4)
report = audit_apriori(stats, spec, params, band=4.0)

print(f"{'n':>4} {'lhs mean':>12} {'rhs mean':>12} {'margin':>12} {'4*SE':>10}")
for n in range(0, params.n_steps + 1, 8):
    print(f"{n:>4} {stats.lhs_mean[n]:>12.6f} {stats.rhs_mean[n]:>12.6f} "
          f"{stats.margin_mean[n]:>12.6f} {4 * stats.margin_se[n]:>10.6f}")

print(f"\nestimate holds within the band at every step: {report.ok}")
print(f"sup_n E|v_n|^2        = {stats.sup_v_sq:.6f}")
print(f"sup_n E|u_n|_B^2      = {stats.sup_u_bsq:.6f}")
print(f"E[tau sum ||v||^2]    = {stats.va_integral_mean:.6f} "
      f"+- {stats.va_integral_se:.1e}")
print(f"E[sum |du|_B^2]       = {stats.du_sum_mean:.6f} +- {stats.du_sum_se:.1e}")
