import numpy as np
import pytest

from stochwave.mesh_fem import build_mesh, interpolate
from stochwave.noise import generate_path
from stochwave.operators import (
    ElasticOperator,
    LinearDamping,
    RhoDamping,
    SpectralNoise,
    ZeroNoise,
    mesh_problem,
    scalar_surrogate,
)
from stochwave.stepper import (
    NonConvergence,
    SineForcing,
    SolverVariant,
    ZeroForcing,
    build_forcing_grid,
    integrate,
    residual_dual_norm,
    scheme_params,
    solve_step,
    step_residual,
)


def surrogate_setup():
    spec = scalar_surrogate(1.0, 1.0, initial_v=1.0, initial_u=0.0)
    params = scheme_params(1, 0.5, spec.lam, solver_tol=1e-13)
    return spec, params


def nonlinear_setup(m=15, n=32, beta=0.5, tol=1e-10):
    mesh = build_mesh(m)
    noise = SpectralNoise(mesh, alpha=0.5, beta=beta, gamma=0.25, decay=1.0)
    spec = mesh_problem(mesh, RhoDamping(mesh), ElasticOperator.from_mesh(mesh, 1.0),
                        noise, SineForcing(amplitude=1.0, mode=1, omega=2.0),
                        interpolate(mesh, lambda x: 0.5 * np.sin(np.pi * x)),
                        interpolate(mesh, lambda x: np.sin(2 * np.pi * x)))
    params = scheme_params(n, 1.0, spec.lam, solver_tol=tol)
    return spec, params


def test_scalar_surrogate_residual_root():
    # hand solve of 2(v-1) + v + 0.5 v = 0
    spec, params = surrogate_setup()
    zero = np.zeros(1)
    res = step_residual(np.array([4.0 / 7.0]), spec.initial_v, spec.initial_u,
                        zero, zero, spec, params.tau)
    np.testing.assert_allclose(res, 0.0, atol=1e-15)


def test_residual_stationary_when_everything_vanishes():
    spec = scalar_surrogate(0.0, 0.0, initial_v=1.0, initial_u=0.0)
    # zero operators: residual at v_trial = v_prev is exactly zero
    res = step_residual(np.array([1.0]), np.array([1.0]), np.array([0.0]),
                        np.zeros(1), np.zeros(1), spec, 0.5)
    np.testing.assert_allclose(res, 0.0, atol=0.0)


def test_residual_affine_in_forcing():
    spec, params = surrogate_setup()
    rng = np.random.default_rng(0)
    v_t, v_p, u_p = rng.normal(size=(3, 1))
    f1, f2 = rng.normal(size=(2, 1))
    zero = np.zeros(1)
    r1 = step_residual(v_t, v_p, u_p, f1, zero, spec, params.tau)
    r12 = step_residual(v_t, v_p, u_p, f1 + f2, zero, spec, params.tau)
    np.testing.assert_allclose(r12, r1 - f2, rtol=1e-12)


def test_solve_step_scalar_surrogate():
    spec, params = surrogate_setup()
    v, stats = solve_step(spec, params, spec.initial_v, spec.initial_u,
                          np.zeros(1), np.zeros(1))
    np.testing.assert_allclose(v, 4.0 / 7.0, rtol=1e-12)
    assert stats.residual_norm <= params.solver_tol


def test_solve_step_zero_data_fixed_point():
    spec, params = nonlinear_setup()
    zero = np.zeros(spec.dim)
    v, _ = solve_step(spec, params, zero, zero, zero, zero)
    np.testing.assert_allclose(v, 0.0, atol=1e-12)


def test_solve_step_guess_independence():
    # uniqueness of the step solution: wildly different initial guesses land
    # within 2 tol tau / (1 - lambda_a tau) of each other
    spec, params = nonlinear_setup(tol=1e-11)
    rng = np.random.default_rng(1)
    v_prev = rng.normal(size=spec.dim)
    u_prev = rng.normal(size=spec.dim)
    f = rng.normal(size=spec.dim)
    noise = 0.01 * rng.normal(size=spec.dim)
    va, _ = solve_step(spec, params, v_prev, u_prev, f, noise,
                       initial_guess=np.zeros(spec.dim))
    vb, _ = solve_step(spec, params, v_prev, u_prev, f, noise,
                       initial_guess=1e3 * rng.normal(size=spec.dim))
    gap = np.sqrt(spec.norm_h_sq(va - vb))
    bound = 2 * params.solver_tol / (1 - spec.lambda_a * params.tau)
    assert gap <= bound


def test_integrate_zero_data_zero_trajectory():
    mesh = build_mesh(9)
    spec = mesh_problem(mesh, RhoDamping(mesh), ElasticOperator.from_mesh(mesh, 1.0),
                        SpectralNoise(mesh, 0.5, 0.5, 0.0), ZeroForcing(),
                        np.zeros(9), np.zeros(9))
    params = scheme_params(8, 1.0, spec.lam, solver_tol=1e-12)
    traj = integrate(spec, params, generate_path(8, 3, 1.0, seed=3))
    np.testing.assert_allclose(traj.v, 0.0, atol=1e-11)
    np.testing.assert_allclose(traj.u, 0.0, atol=1e-11)


def test_integrate_scalar_surrogate_one_step():
    spec, params = surrogate_setup()
    traj = integrate(spec, params, generate_path(1, 1, 0.5, seed=0))
    np.testing.assert_allclose(traj.v[1], 4.0 / 7.0, rtol=1e-12)
    np.testing.assert_allclose(traj.u[1], 2.0 / 7.0, rtol=1e-12)


def test_causality_future_increments_do_not_matter():
    # perturbing increments beyond step k leaves steps <= k bitwise unchanged
    spec, params = nonlinear_setup(n=16)
    path = generate_path(16, 4, 1.0, seed=5)
    traj = integrate(spec, params, path)
    tampered = path.increments.copy()
    tampered[8:] += 5.0
    path2 = type(path)(n_steps=16, tau=path.tau, r=4, horizon=1.0,
                       increments=tampered, seed=path.seed)
    traj2 = integrate(spec, params, path2)
    np.testing.assert_array_equal(traj.v[:9], traj2.v[:9])
    np.testing.assert_array_equal(traj.u[:9], traj2.u[:9])
    assert not np.array_equal(traj.v[9:], traj2.v[9:])


def test_first_step_insensitive_to_seed():
    # the first increment is zero by convention, so step 1 agrees across seeds
    spec, params = nonlinear_setup(n=8)
    t1 = integrate(spec, params, generate_path(8, 4, 1.0, seed=100))
    t2 = integrate(spec, params, generate_path(8, 4, 1.0, seed=200))
    np.testing.assert_array_equal(t1.v[1], t2.v[1])
    assert not np.array_equal(t1.v[2], t2.v[2])


def test_incremental_displacement_consistency():
    spec, params = nonlinear_setup(n=64)
    traj = integrate(spec, params, generate_path(64, 4, 1.0, seed=7))
    direct = spec.initial_u + params.tau * np.cumsum(traj.v[1:], axis=0)
    gap = np.abs(traj.u[1:] - direct).max()
    assert gap <= 1e-12 * max(np.abs(traj.u).max(), 1.0)


def test_gate_violation_rejected():
    spec, _ = nonlinear_setup()
    lam = spec.lam
    assert lam > 0
    with pytest.raises(ValueError, match="gate"):
        scheme_params(1, 2.0 / lam, lam)
    # explicit opt-out for failure demonstrations
    params = scheme_params(1, 2.0 / lam, lam, enforce_gate=False)
    assert params.tau * lam >= 1.0


def test_nonconvergence_carries_step_and_history():
    spec, _ = nonlinear_setup()
    params = scheme_params(4, 1.0, spec.lam, solver_tol=1e-16, max_iters=2)
    with pytest.raises(NonConvergence) as err:
        integrate(spec, params, generate_path(4, 4, 1.0, seed=11))
    assert err.value.step == 1
    assert len(err.value.history) >= 1


def test_warm_start_reduces_iterations():
    spec, params = nonlinear_setup(n=32)
    path = generate_path(32, 4, 1.0, seed=13)
    warm = integrate(spec, params, path)
    cold = integrate(spec, params, path, variant=SolverVariant(initial_guess="zero"))
    assert warm.iterations.sum() <= cold.iterations.sum()
    np.testing.assert_allclose(warm.v[-1], cold.v[-1], atol=1e-9)


def test_three_level_displacement_form_crosscheck():
    # the trajectory satisfies the equivalent second-difference form in u with
    # u^{-1} := u^0 - tau v^0, up to solver tolerance and roundoff
    spec, params = nonlinear_setup(n=16, tol=1e-11)
    path = generate_path(16, 4, 1.0, seed=17)
    grid = build_forcing_grid(spec, params)
    traj = integrate(spec, params, path, grid)
    tau = params.tau
    u = np.vstack([spec.initial_u - tau * spec.initial_v, traj.u])
    for n in range(1, params.n_steps + 1):
        vel = (u[n + 1] - u[n]) / tau
        prev_vel = (u[n] - u[n - 1]) / tau
        res = spec.mass.matvec((u[n + 1] - 2 * u[n] + u[n - 1]) / tau**2)
        res += spec.damping.apply(vel)
        res += spec.elastic.apply(u[n + 1])
        res -= grid.values[n - 1]
        res -= spec.mass.matvec(
            spec.noise.weighted_sum(u[n], prev_vel, path.increments[n - 1])) / tau
        assert residual_dual_norm(spec, res) <= 1e-7


def test_forcing_grid_matches_quadrature_oracle():
    # independent oracle: generic 2d quadrature of f(t,x) phi_i(x) / tau over
    # one time cell and the hat support, against the closed-form grid values
    from scipy.integrate import quad

    mesh = build_mesh(5)
    forcing = SineForcing(amplitude=1.7, mode=2, omega=3.1, phase=0.4)
    spec = mesh_problem(mesh, LinearDamping.from_mesh(mesh, 1.0),
                        ElasticOperator.from_mesh(mesh, 1.0), ZeroNoise(dim=5),
                        forcing, np.zeros(5), np.zeros(5))
    params = scheme_params(4, 1.0, spec.lam)
    grid = build_forcing_grid(spec, params)
    h, tau = mesh.h, params.tau
    for n in (0, 3):
        for i in (0, 2, 4):
            xi = mesh.nodes[i]

            def hat(x):
                return max(0.0, 1.0 - abs(x - xi) / h)

            def space_pairing(t):
                val, _ = quad(lambda x: forcing.value(t, x) * hat(x),
                              xi - h, xi + h, limit=100)
                return val

            expected, _ = quad(space_pairing, n * tau, (n + 1) * tau, limit=100)
            np.testing.assert_allclose(grid.values[n, i], expected / tau,
                                       rtol=1e-9, atol=1e-12)


def test_zero_forcing_grid():
    spec, params = nonlinear_setup(n=8)
    grid = build_forcing_grid(spec, params, forcing=ZeroForcing())
    np.testing.assert_array_equal(grid.values, 0.0)


def test_integrate_validates_shapes():
    spec, params = nonlinear_setup(n=8)
    with pytest.raises(ValueError):
        integrate(spec, params, generate_path(4, 4, 1.0, seed=0))
    with pytest.raises(ValueError):
        integrate(spec, params, generate_path(8, 64, 1.0, seed=0))
