"""Discrete spaces and operator instances.

Builds the P1 spaces the solver works in, shows the assembled matrices on a
tiny mesh, and runs the randomized audit of the structural assumptions
(monotonicity-like, coercivity-like, noise growth and Lipschitz bounds) that
the time stepper and its a priori estimates rely on.
"""

import numpy as np

from stochwave.mesh_fem import build_mesh, dirichlet_eigenpairs, interpolate
from stochwave.operators import (
    ElasticOperator,
    RhoDamping,
    SpectralNoise,
    check_assumptions,
    mesh_problem,
    rho,
)
from stochwave.stepper import ZeroForcing

mesh = build_mesh(3)
print("mesh with m = 3 interior nodes, h =", mesh.h)
print("mass matrix:\n", mesh.mass.to_dense())
print("stiffness matrix:\n", mesh.stiffness.to_dense())

values, _ = dirichlet_eigenpairs(mesh, 3)
print("generalized eigenvalues:", values, " (all above pi^2 =", np.pi**2, ")")

print("\ndamping profile rho at a few points:")
for z in (0.0, 0.0625, 0.25, 1.0, 3.0):
    print(f"  rho({z}) = {float(rho(z))}")

mesh = build_mesh(31)
damping = RhoDamping(mesh)
v = interpolate(mesh, lambda x: np.sin(2 * np.pi * x))
print("\n<Av, v> =", float(np.dot(damping.apply(v), v)),
      ">= ||v||_VA^2 =", mesh.stiffness.quad(v) and mesh.stiffness.quad(v))

noise = SpectralNoise(mesh, alpha=0.5, beta=0.5, gamma=0.25, decay=1.0)
spec = mesh_problem(mesh, damping, ElasticOperator.from_mesh(mesh, 1.0), noise,
                    ZeroForcing(), np.zeros(31), np.zeros(31))
print("\nderived gate constants:",
      f"lambda_a={spec.lambda_a:.4f} lambda_b={spec.lambda_b:.4f} "
      f"kappa={spec.kappa:.4f} lambda={spec.lam:.4f}")

report = check_assumptions(spec, samples=2000, seed=1)
print("\nassumption audit over 2000 tuples:")
for line in report.summary_lines():
    print(" ", line)
