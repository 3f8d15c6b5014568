import numpy as np
import pytest

from stochwave.mesh_fem import build_mesh, interpolate
from stochwave.noise import generate_path
from stochwave.operators import (
    ElasticOperator,
    RhoDamping,
    SpectralNoise,
    mesh_problem,
)
from stochwave.prolongation import (
    PiecewiseConstantProcess,
    displacement_gap_integral,
    displacement_minus,
    displacement_process,
    evaluate,
    steklov_average,
    theta_plus,
    velocity_gap_integral,
    velocity_minus,
    velocity_process,
    verify_steklov_identity,
)
from stochwave.stepper import SineForcing, integrate, scheme_params


def run_trajectory(m=9, n=8, seed=1):
    mesh = build_mesh(m)
    spec = mesh_problem(mesh, RhoDamping(mesh), ElasticOperator.from_mesh(mesh, 1.0),
                        SpectralNoise(mesh, 0.4, 0.4, 0.2), SineForcing(1.0, 1, 1.5),
                        interpolate(mesh, lambda x: 0.3 * np.sin(np.pi * x)),
                        interpolate(mesh, lambda x: np.sin(2 * np.pi * x)))
    params = scheme_params(n, 1.0, spec.lam, solver_tol=1e-11)
    traj = integrate(spec, params, generate_path(n, 4, 1.0, seed=seed))
    return spec, traj


def random_process(n, dim, tau, rng):
    return PiecewiseConstantProcess(values=rng.normal(size=(n + 1, dim)), tau=tau,
                                    convention="right")


def test_theta_plus_values():
    assert theta_plus(0.0, 0.25, 1.0) == 0.0
    np.testing.assert_allclose(theta_plus(0.3, 0.25, 1.0), 0.5)
    for n in range(5):
        np.testing.assert_allclose(theta_plus(n * 0.25, 0.25, 1.0), n * 0.25)
    with pytest.raises(ValueError):
        theta_plus(1.1, 0.25, 1.0)
    with pytest.raises(ValueError):
        theta_plus(-0.1, 0.25, 1.0)


def test_evaluate_conventions():
    spec, traj = run_trajectory()
    tau = traj.tau
    right = velocity_process(traj)
    left = velocity_minus(traj)
    # the delayed version vanishes on [0, tau)
    np.testing.assert_array_equal(evaluate(left, tau / 2), np.zeros(spec.dim))
    np.testing.assert_array_equal(evaluate(left, 0.0), np.zeros(spec.dim))
    # both conventions agree at interior grid points
    for n in range(1, traj.n_steps + 1):
        np.testing.assert_array_equal(evaluate(right, n * tau), traj.v[n])
        np.testing.assert_array_equal(evaluate(left, n * tau), traj.v[n])
    # inside a cell: right-anchored value ahead, left-anchored value behind
    t = 1.5 * tau
    np.testing.assert_array_equal(evaluate(right, t), traj.v[2])
    np.testing.assert_array_equal(evaluate(left, t), traj.v[1])
    # the delayed displacement starts from the initial displacement
    u_left = displacement_minus(traj)
    np.testing.assert_array_equal(evaluate(u_left, tau / 2), traj.u[0])
    np.testing.assert_array_equal(evaluate(displacement_process(traj), 0.0), traj.u[1])


def test_evaluate_out_of_range():
    spec, traj = run_trajectory()
    with pytest.raises(ValueError):
        evaluate(velocity_process(traj), 1.5)
    with pytest.raises(ValueError):
        evaluate(velocity_minus(traj), -0.2)


def test_steklov_average_of_constant():
    n, dim, tau = 8, 3, 0.125
    c = np.arange(1.0, dim + 1.0)
    proc = PiecewiseConstantProcess(values=np.tile(c, (n + 1, 1)), tau=tau,
                                    convention="right")
    avg = steklov_average(proc)
    for cell in range(1, n):
        np.testing.assert_array_equal(avg.cell_value(cell), c)
    np.testing.assert_array_equal(avg.cell_value(n), np.zeros(dim))


def test_steklov_average_shifts_one_cell():
    rng = np.random.default_rng(3)
    proc = random_process(6, 4, 0.25, rng)
    avg = steklov_average(proc)
    for cell in range(1, 6):
        np.testing.assert_array_equal(avg.cell_value(cell), proc.cell_value(cell + 1))


def test_steklov_identity_random_pairs():
    rng = np.random.default_rng(5)
    for n in (2, 8, 64):
        tau = 1.0 / n
        y = random_process(n, 5, tau, rng)
        x_levels = rng.normal(size=(n + 1, 5))
        defect = verify_steklov_identity(y, x_levels)
        scale = np.abs(x_levels).max() * np.abs(y.values).max() * n * tau
        assert defect <= 1e-12 * max(scale, 1.0)


def test_steklov_identity_zero_and_degenerate():
    rng = np.random.default_rng(6)
    y = random_process(8, 3, 0.125, rng)
    assert verify_steklov_identity(y, np.zeros((9, 3))) == 0.0
    y1 = random_process(1, 3, 1.0, rng)
    assert verify_steklov_identity(y1, rng.normal(size=(2, 3))) == 0.0


def test_convention_gap_formulas():
    spec, traj = run_trajectory(n=16)
    tau = traj.tau
    v, u = traj.v, traj.u
    # velocity: tau |v^1|^2 + tau sum_{n >= 2} |v^n - v^{n-1}|^2
    expected_v = tau * spec.norm_h_sq(v[1])
    expected_v += tau * sum(spec.norm_h_sq(v[n] - v[n - 1])
                            for n in range(2, traj.n_steps + 1))
    np.testing.assert_allclose(velocity_gap_integral(traj, spec), expected_v, rtol=1e-12)
    # displacement: tau sum_{k >= 1} |u^k - u^{k-1}|_B^2
    expected_u = tau * sum(spec.elastic.norm_sq(u[k] - u[k - 1])
                           for k in range(1, traj.n_steps + 1))
    np.testing.assert_allclose(displacement_gap_integral(traj, spec), expected_u,
                               rtol=1e-12)


def test_process_views_share_storage():
    spec, traj = run_trajectory()
    proc = velocity_process(traj)
    assert proc.values is traj.v
