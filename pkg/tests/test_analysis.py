import numpy as np
import pytest

from helpers import standard_builder, standard_problem, zero_builder
from stochwave.analysis import (
    _apriori_sides,
    audit_apriori,
    audit_energy,
    convergence_study,
    displacement_increment_crosscheck,
    manufactured_errors,
    run_apriori_ensemble,
    solver_defect_bound,
    uniqueness_experiment,
)
from stochwave.mesh_fem import build_mesh
from stochwave.noise import generate_path
from stochwave.operators import scalar_surrogate
from stochwave.stepper import build_forcing_grid, integrate, scheme_params


def run_standard(m=15, n=32, seed=1, tol=1e-10, **kwargs):
    spec = standard_problem(build_mesh(m), **kwargs)
    params = scheme_params(n, 1.0, spec.lam, solver_tol=tol)
    path = generate_path(n, 4, 1.0, seed=seed)
    grid = build_forcing_grid(spec, params)
    traj = integrate(spec, params, path, grid)
    return spec, params, path, grid, traj


def test_energy_ledger_scalar_surrogate_exact_fractions():
    spec = scalar_surrogate(1.0, 1.0, initial_v=1.0, initial_u=0.0)
    params = scheme_params(1, 0.5, spec.lam, solver_tol=1e-14)
    path = generate_path(1, 1, 0.5, seed=0)
    grid = build_forcing_grid(spec, params)
    traj = integrate(spec, params, path, grid)
    ledger = audit_energy(traj, path, grid, spec)
    np.testing.assert_allclose(ledger.v_sq[1], 16.0 / 49.0, rtol=1e-12)
    np.testing.assert_allclose(ledger.dv_cum[1], 9.0 / 49.0, rtol=1e-12)
    np.testing.assert_allclose(ledger.u_bsq[1], 4.0 / 49.0, rtol=1e-12)
    np.testing.assert_allclose(ledger.du_cum[1], 4.0 / 49.0, rtol=1e-12)
    np.testing.assert_allclose(ledger.damping_cum[1], 16.0 / 49.0, rtol=1e-12)
    np.testing.assert_allclose(ledger.lhs[1], 1.0, rtol=1e-14)
    assert ledger.relative_defect <= 1e-14


def test_energy_ledger_zero_trajectory():
    spec, params, path, grid, traj = run_standard(u_amp=0.0, v_amp=0.0,
                                                  forcing_amplitude=0.0,
                                                  alpha=0.0, beta=0.0, gamma=0.0)
    ledger = audit_energy(traj, path, grid, spec)
    assert ledger.defect == 0.0
    np.testing.assert_array_equal(ledger.lhs, 0.0)
    np.testing.assert_array_equal(ledger.rhs, 0.0)


def test_energy_identity_exact_linear_noise_free():
    # linear damping, no noise, no forcing: the balance holds to 1e-10 relative
    spec, params, path, grid, traj = run_standard(
        operator="linear", alpha=0.0, beta=0.0, gamma=0.0, forcing_amplitude=0.0)
    ledger = audit_energy(traj, path, grid, spec)
    assert ledger.relative_defect <= 1e-10
    assert ledger.lhs[-1] > 0.0


def test_energy_defect_bounded_by_solver_residuals():
    spec, params, path, grid, traj = run_standard(m=31, n=64, seed=2)
    ledger = audit_energy(traj, path, grid, spec)
    bound = solver_defect_bound(traj, spec)
    scale = max(abs(ledger.lhs[-1]), abs(ledger.rhs[-1]))
    assert ledger.defect <= bound + 1e-13 * scale
    assert ledger.relative_defect <= 1e-8


def test_energy_defect_scales_with_solver_tolerance():
    # log-log regression of ledger defect against tolerance: slope in [0.5, 2]
    tols = (1e-6, 1e-8, 1e-10)
    defects = []
    spec = standard_problem(build_mesh(31))
    path = generate_path(64, 4, 1.0, seed=2)
    for tol in tols:
        params = scheme_params(64, 1.0, spec.lam, solver_tol=tol)
        grid = build_forcing_grid(spec, params)
        traj = integrate(spec, params, path, grid)
        defects.append(audit_energy(traj, path, grid, spec).defect)
    slope = np.polyfit(np.log10(tols), np.log10(defects), 1)[0]
    assert 0.5 <= slope <= 2.0


def test_apriori_margin_nonnegative_pathwise_without_noise():
    # with C = 0 the margin reduces to the accumulated velocity increments,
    # which are nonnegative pathwise up to solver tolerance
    spec, params, path, grid, traj = run_standard(alpha=0.0, beta=0.0, gamma=0.0)
    sides = _apriori_sides(traj, path, grid, spec)
    margin = sides["rhs"] - sides["lhs"]
    scale = np.maximum(1.0, np.abs(sides["rhs"]))
    assert np.all(margin >= -1e-10 * scale)
    # and the margin is exactly the cumulative |dv|^2 up to solver error
    dv = np.zeros(params.n_steps + 1)
    for j in range(1, params.n_steps + 1):
        dv[j] = dv[j - 1] + spec.norm_h_sq(traj.v[j] - traj.v[j - 1])
    np.testing.assert_allclose(margin, dv, atol=1e-9)


def test_apriori_ensemble_margin_within_band():
    spec = standard_problem(build_mesh(15))
    params = scheme_params(32, 1.0, spec.lam, solver_tol=1e-10)
    stats = run_apriori_ensemble(spec, params, n_paths=200, base_seed=10, r=4)
    report = audit_apriori(stats, spec, params)
    assert report.ok
    assert stats.sup_v_sq > 0 and stats.va_integral_mean > 0


def test_apriori_ensemble_reproducible_and_parallel_invariant():
    spec = standard_problem(build_mesh(9))
    params = scheme_params(16, 1.0, spec.lam, solver_tol=1e-10)
    a = run_apriori_ensemble(spec, params, n_paths=24, base_seed=3, r=3, workers=1)
    b = run_apriori_ensemble(spec, params, n_paths=24, base_seed=3, r=3, workers=2)
    np.testing.assert_array_equal(a.margin_mean, b.margin_mean)
    np.testing.assert_array_equal(a.lhs_mean, b.lhs_mean)
    assert a.va_integral_mean == b.va_integral_mean


def test_displacement_increment_crosscheck():
    spec, params, path, grid, traj = run_standard()
    ledger_side, prolong_side = displacement_increment_crosscheck(traj, spec)
    np.testing.assert_allclose(ledger_side, prolong_side, rtol=1e-12)


def test_uniqueness_nonlinear_within_tolerance_bound():
    spec, params, path, grid, traj = run_standard(m=15, n=32, seed=5)
    result = uniqueness_experiment(spec, params, path, grid)
    assert result.max_dv <= 10 * params.solver_tol
    assert result.max_du_b <= 10 * params.solver_tol


def test_uniqueness_linear_deterministic_case():
    spec, params, path, grid, traj = run_standard(operator="linear", alpha=0.0,
                                                  beta=0.0, gamma=0.0)
    result = uniqueness_experiment(spec, params, path, grid)
    assert result.max_dv <= 1e-12


def test_identical_variants_bitwise_equal():
    spec, params, path, grid, _ = run_standard(m=9, n=16)
    t1 = integrate(spec, params, path, grid)
    t2 = integrate(spec, params, path, grid)
    np.testing.assert_array_equal(t1.v, t2.v)
    np.testing.assert_array_equal(t1.u, t2.u)


def test_manufactured_errors_decrease():
    errors = manufactured_errors([(16, 15), (32, 31), (64, 63)], horizon=1.0)
    total = errors.sum(axis=1)
    assert np.all(np.diff(total) < 0)
    assert total[0] / total[-1] >= 3.0


def test_convergence_study_zero_data_exact_zero():
    report = convergence_study(zero_builder, [(4, 3, 2), (8, 7, 2), (16, 15, 2)],
                               horizon=1.0, n_paths=3, base_seed=1)
    np.testing.assert_array_equal(report.error_mean, 0.0)


def test_convergence_study_reproducible():
    levels = [(8, 7, 3), (16, 15, 3), (32, 31, 3)]
    a = convergence_study(standard_builder, levels, 1.0, n_paths=6, base_seed=9)
    b = convergence_study(standard_builder, levels, 1.0, n_paths=6, base_seed=9)
    np.testing.assert_array_equal(a.error_mean, b.error_mean)
    np.testing.assert_array_equal(a.error_se, b.error_se)


def test_convergence_study_parallel_matches_serial():
    levels = [(8, 7, 3), (16, 15, 3)]
    a = convergence_study(standard_builder, levels, 1.0, n_paths=8, base_seed=2,
                          workers=1)
    b = convergence_study(standard_builder, levels, 1.0, n_paths=8, base_seed=2,
                          workers=2)
    np.testing.assert_array_equal(a.error_mean, b.error_mean)


def test_convergence_study_rejects_bad_levels():
    with pytest.raises(ValueError):
        convergence_study(standard_builder, [(8, 7, 3), (12, 15, 3)], 1.0, 2, 0)
    with pytest.raises(ValueError):
        convergence_study(standard_builder, [(8, 9, 3), (16, 15, 3)], 1.0, 2, 0)
    with pytest.raises(ValueError):
        convergence_study(standard_builder, [(8, 7, 3)], 1.0, 2, 0)
