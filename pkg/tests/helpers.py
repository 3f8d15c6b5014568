"""Shared problem builders for the test suite."""

import numpy as np

from stochwave.mesh_fem import build_mesh, interpolate
from stochwave.operators import (
    ElasticOperator,
    LinearDamping,
    RhoDamping,
    SpectralNoise,
    ZeroNoise,
    mesh_problem,
)
from stochwave.stepper import SineForcing, ZeroForcing


def standard_problem(mesh, operator="rho", alpha=0.5, beta=0.5, gamma=0.25,
                     decay=1.0, b=1.0, mu=1.0, forcing_amplitude=1.0,
                     forcing_omega=2.0, u_amp=0.5, v_amp=1.0, **overrides):
    """The workhorse instance: sine initial data, sine forcing, spectral noise."""
    if operator == "rho":
        damping = RhoDamping(mesh)
    else:
        damping = LinearDamping.from_mesh(mesh, mu)
    elastic = ElasticOperator.from_mesh(mesh, b)
    if alpha == beta == gamma == 0.0:
        noise = ZeroNoise(dim=mesh.m)
    else:
        noise = SpectralNoise(mesh, alpha, beta, gamma, decay=decay)
    if forcing_amplitude == 0.0:
        forcing = ZeroForcing()
    else:
        forcing = SineForcing(amplitude=forcing_amplitude, mode=1, omega=forcing_omega)
    u0 = interpolate(mesh, lambda x: u_amp * np.sin(np.pi * x))
    v0 = interpolate(mesh, lambda x: v_amp * np.sin(2 * np.pi * x))
    return mesh_problem(mesh, damping, elastic, noise, forcing, u0, v0, **overrides)


def standard_builder(mesh):
    return standard_problem(mesh)


def standard_linear_builder(mesh):
    return standard_problem(mesh, operator="linear")


def zero_builder(mesh):
    return standard_problem(mesh, alpha=0.0, beta=0.0, gamma=0.0,
                            forcing_amplitude=0.0, u_amp=0.0, v_amp=0.0)


def make(m):
    return standard_problem(build_mesh(m))
