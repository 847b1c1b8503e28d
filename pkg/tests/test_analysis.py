"""Error statistics, decay fitting, and the numerical verification oracles."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from illposed.analysis import (
    bias_variance,
    check_pathwise_contraction,
    enumerate_mean_error,
    fit_decay,
    pathwise_step_constants,
    phi_bound_check,
    rho_radius,
    stability_sweep,
    stochastic_noise_moments,
    theoretical_decay_exponent,
)
from illposed.operators import (
    AssumptionConstants,
    ForwardOp,
    measure_constants,
    truncate_svd,
)
from illposed.problems import Problem, add_noise, squared_variant
from illposed.solvers import (
    APriori,
    MaxEpochs,
    RecordSpec,
    Schedule,
    default_eta0,
    dsgd_run,
    run_ensemble,
)

import _shared


# ---------------------------------------------------------------------------
# decay exponents and fitting
# ---------------------------------------------------------------------------


def test_theoretical_decay_exponent_piecewise_min():
    assert theoretical_decay_exponent(0.25, 0.1) == 0.1
    assert theoretical_decay_exponent(0.4, 0.5) == 0.4
    assert theoretical_decay_exponent(0.1, 0.9) == pytest.approx(0.02)


def test_fit_decay_recovers_exact_power_law():
    ks = np.arange(1, 101, dtype=float)
    series = np.column_stack([ks, 3.0 * ks**-0.7])
    fit = fit_decay(series)
    assert fit.slope == pytest.approx(-0.7, abs=1e-12)
    assert fit.intercept == pytest.approx(math.log(3.0), abs=1e-12)
    assert fit.r_squared == pytest.approx(1.0, abs=1e-12)
    assert fit.window == (50.0, 100.0)


def test_fit_decay_default_window_skips_transient():
    ks = np.arange(1, 101, dtype=float)
    vs = 2.0 * ks**-0.4
    vs[:40] *= np.exp(np.sin(ks[:40]))  # corrupt the transient only
    fit = fit_decay(np.column_stack([ks, vs]))
    assert fit.slope == pytest.approx(-0.4, abs=1e-10)
    early = fit_decay(np.column_stack([ks, vs]), window=(1.0, 40.0))
    assert abs(early.slope + 0.4) > 1e-3


def test_fit_decay_validation():
    ks = np.arange(1, 11, dtype=float)
    good = np.column_stack([ks, ks**-1.0])
    with pytest.raises(ValueError):
        fit_decay(good, window=(9.0, 10.0))  # two points only
    bad = good.copy()
    bad[7, 1] = 0.0
    with pytest.raises(ValueError):
        fit_decay(bad)
    with pytest.raises(ValueError):
        fit_decay(np.ones((4, 3)))


@given(
    slope=st.floats(-3.0, 3.0, allow_nan=False),
    scale=st.floats(0.1, 10.0, allow_nan=False),
)
def test_fit_decay_exact_recovery_property(slope: float, scale: float):
    ks = np.arange(1, 41, dtype=float)
    fit = fit_decay(np.column_stack([ks, scale * ks**slope]))
    assert abs(fit.slope - slope) < 1e-8
    if abs(slope) > 1e-3:  # r^2 degenerates on a (near-)constant series
        assert fit.r_squared > 0.999999


# ---------------------------------------------------------------------------
# bias-variance split
# ---------------------------------------------------------------------------


def test_bias_variance_identity_small_ensemble():
    p = _shared.phillips(30)
    s = Schedule(eta0=default_eta0(p), alpha=0.1)
    ens = run_ensemble(p, 1e-2, method="sgd", schedule=s, stop=MaxEpochs(3),
                       M=4, base_seed=0,
                       record=RecordSpec(keep_iterates=True))
    for epoch in ens.epochs:
        bias_sq, variance, total = bias_variance(ens, float(epoch), p.x_dag)
        assert bias_sq >= 0.0 and variance >= 0.0
        assert total == pytest.approx(bias_sq + variance, rel=1e-12)


def test_bias_variance_requires_recorded_inputs():
    p = _shared.phillips(30)
    s = Schedule(eta0=default_eta0(p), alpha=0.1)
    with_iterates = run_ensemble(p, 1e-2, method="sgd", schedule=s,
                                 stop=MaxEpochs(2), M=2, base_seed=0,
                                 record=RecordSpec(keep_iterates=True))
    with pytest.raises(ValueError, match="not recorded"):
        bias_variance(with_iterates, 0.5, p.x_dag)
    without = run_ensemble(p, 1e-2, method="sgd", schedule=s,
                           stop=MaxEpochs(2), M=2, base_seed=0)
    with pytest.raises(ValueError, match="keep_iterates"):
        bias_variance(without, 1.0, p.x_dag)


def test_bias_variance_zero_variance_for_identical_trials():
    p = _shared.phillips(30)
    s = Schedule(eta0=1.0)
    # M=2: the mean of two identical trials is bitwise the trial itself,
    # so the spread term vanishes exactly.
    ens = run_ensemble(p, 1e-2, method="lm", schedule=s, stop=MaxEpochs(5),
                       M=2, base_seed=0,
                       record=RecordSpec(keep_iterates=True))
    bias_sq, variance, total = bias_variance(ens, 5.0, p.x_dag)
    assert variance == 0.0
    assert total == pytest.approx(bias_sq, rel=1e-14)


# ---------------------------------------------------------------------------
# mean-error enumeration
# ---------------------------------------------------------------------------


def _tiny_instance(trial: int):
    rng = np.random.default_rng(12345)
    for _ in range(trial + 1):
        A = rng.standard_normal((3, 3))
        x_dag = rng.standard_normal(3)
    p = Problem(name=f"rand{trial}", op=ForwardOp(A), x_dag=x_dag,
                y_dag=A @ x_dag, grid=np.linspace(0.0, 1.0, 3))
    return p


def test_enumerate_mean_error_k0_is_initial_error():
    p = _tiny_instance(0)
    data = add_noise(p, 0.05, seed=0)
    rep = enumerate_mean_error(p, data, None, Schedule(eta0=0.01), 0)
    assert rep.k_checked == 0
    assert rep.max_abs_gap == 0.0
    assert np.array_equal(rep.closed_form_mean, -p.x_dag)
    assert np.array_equal(rep.enumerated_mean, -p.x_dag)


def test_enumerate_mean_error_matches_closed_form():
    p = _tiny_instance(0)
    data = add_noise(p, 0.05, seed=0)
    eta0 = 0.05 / max(float(np.max(np.abs(p.op.A))) ** 2, 1e-12)
    s = Schedule(eta0=eta0, alpha=0.1, lambda0=0.7, alpha_prime=0.2)
    G = truncate_svd(p.op.A, 2)
    for surrogate in (None, G):
        rep = enumerate_mean_error(p, data, surrogate, s, 3)
        assert rep.k_checked == 3
        assert rep.max_abs_gap < 1e-13


def test_enumerate_mean_error_with_offset_start():
    p = _tiny_instance(1)
    data = add_noise(p, 0.05, seed=1)
    s = Schedule(eta0=0.01, alpha=0.3)
    x1 = np.array([0.2, -0.1, 0.4])
    rep = enumerate_mean_error(p, data, None, s, 3, x1=x1)
    assert rep.max_abs_gap < 1e-13


def test_enumerate_mean_error_guards():
    p = _shared.phillips(50)
    data = add_noise(p, 1e-2, seed=0)
    s = Schedule(eta0=1e-3)
    with pytest.raises(ValueError, match="budget"):
        enumerate_mean_error(p, data, None, s, 4)  # 50**4 paths
    with pytest.raises(ValueError):
        enumerate_mean_error(p, data, None, s, -1)
    sq = squared_variant(_tiny_instance(0))
    sq_data = add_noise(sq, 0.05, seed=0)
    with pytest.raises(ValueError, match="linear"):
        enumerate_mean_error(sq, sq_data, None, s, 2)


# ---------------------------------------------------------------------------
# spectral envelope
# ---------------------------------------------------------------------------


def test_phi_bound_identity_hand_computation():
    A = np.eye(2)
    s = Schedule(eta0=1.0)
    lhs, rhs, ok = phi_bound_check(A, None, s, 0, 2, 1.0)
    # both scaled modes sit at 1/2: lhs = 0.5 * (1 - 0.5)**2
    assert lhs == 0.125
    assert rhs == pytest.approx(1.0 / (2.0 * math.e), rel=1e-15)
    assert ok


def test_phi_bound_zero_exponent_unit_envelope():
    rng = np.random.default_rng(4)
    A = rng.standard_normal((5, 5))
    scale = float(np.linalg.norm(A, 2)) ** 2 / 5.0
    s = Schedule(eta0=0.5 / scale, alpha=0.2)
    lhs, rhs, ok = phi_bound_check(A, None, s, 1, 8, 0.0)
    assert rhs == 1.0
    assert lhs <= 1.0
    assert ok


def test_phi_bound_preconditions():
    A = np.eye(2)
    s = Schedule(eta0=1.0)
    with pytest.raises(ValueError):
        phi_bound_check(A, None, s, 2, 2, 1.0)
    with pytest.raises(ValueError):
        phi_bound_check(A, None, s, 0, 2, -1.0)
    with pytest.raises(ValueError, match="normalization"):
        phi_bound_check(A, None, Schedule(eta0=5.0), 0, 2, 1.0)


def test_phi_bound_with_surrogate_weighting():
    rng = np.random.default_rng(6)
    A = rng.standard_normal((6, 6))
    G = truncate_svd(A, 3)
    scale = float(np.linalg.norm(A, 2)) ** 2 * 2.0 / 6.0
    s = Schedule(eta0=0.9 / scale, alpha=0.1, lambda0=1.0, alpha_prime=0.3)
    lhs, rhs, ok = phi_bound_check(A, G, s, 2, 40, 0.5)
    assert ok
    assert 0.0 <= lhs <= rhs + 1e-12


# ---------------------------------------------------------------------------
# pathwise contraction
# ---------------------------------------------------------------------------


def test_pathwise_step_constants_hand_computation():
    c = AssumptionConstants(L_F=1.0, L_G=2.0, eta_F=0.0, c_F=0.0, c_G=0.0,
                            c_R=1.0, C_min=0.0, C_max=0.0)
    s = Schedule(eta0=0.1, lambda0=0.5)
    c_k, d_k = pathwise_step_constants(c, s, 1)
    assert c_k == pytest.approx(0.76, rel=1e-14)
    assert d_k == pytest.approx(0.1 / 1.8, rel=1e-14)


def test_pathwise_step_constants_step_size_condition():
    c = AssumptionConstants(L_F=1.0, L_G=0.0, eta_F=0.0, c_F=0.0, c_G=0.0,
                            c_R=0.0, C_min=0.0, C_max=0.0)
    with pytest.raises(ValueError, match="step-size"):
        pathwise_step_constants(c, Schedule(eta0=1.0), 1)


def test_pathwise_contraction_holds_on_small_run():
    p = _shared.phillips(20)
    G = truncate_svd(p.op.A, 5)
    data = add_noise(p, 1e-2, seed=1_000_000)
    s = Schedule(eta0=default_eta0(p), alpha=0.0, lambda0=1.0)
    traj = dsgd_run(p, data, G, schedule=s, stop=MaxEpochs(2), seed=0,
                    record=RecordSpec(per_iteration=True))
    const = measure_constants(p.op, G, p.x_dag)
    rep = check_pathwise_contraction(traj, const, s, p.n, data.delta)
    assert rep.passed
    assert rep.checked == 40
    assert rep.worst_slack >= 0.0


def test_pathwise_contraction_needs_per_iteration_snapshots():
    p = _shared.phillips(20)
    data = add_noise(p, 1e-2, seed=0)
    s = Schedule(eta0=default_eta0(p), alpha=0.1)
    traj = dsgd_run(p, data, schedule=s, stop=MaxEpochs(3), seed=0)
    const = measure_constants(p.op, None, p.x_dag)
    with pytest.raises(ValueError, match="per iteration"):
        check_pathwise_contraction(traj, const, s, p.n, data.delta)


# ---------------------------------------------------------------------------
# trapping radius
# ---------------------------------------------------------------------------


def test_rho_radius_without_regularization_is_exact():
    c = AssumptionConstants(L_F=0.5, L_G=0.0, eta_F=0.0, c_F=0.0, c_G=0.0,
                            c_R=0.0, C_min=0.0, C_max=0.0)
    s = Schedule(eta0=0.1)  # lambda0 = 0 makes every c_j vanish
    assert rho_radius(c, s, 10, 2.0, 0.0, 100) == 2.0


def test_rho_radius_grows_with_noise():
    c = AssumptionConstants(L_F=0.5, L_G=0.5, eta_F=0.0, c_F=0.0, c_G=0.0,
                            c_R=1.0, C_min=0.01, C_max=0.01)
    s = Schedule(eta0=0.1, lambda0=0.1, alpha_prime=0.1)
    quiet = rho_radius(c, s, 5, 1.0, 0.0, 20)
    noisy = rho_radius(c, s, 5, 1.0, 0.1, 20)
    assert noisy > quiet > 0.0


def test_rho_radius_overflow_returns_inf():
    c = AssumptionConstants(L_F=0.1, L_G=10.0, eta_F=0.0, c_F=0.0, c_G=0.0,
                            c_R=1.0, C_min=0.0, C_max=0.0)
    s = Schedule(eta0=0.5, lambda0=1.0)
    assert rho_radius(c, s, 100, 1.0, 0.01, 1000) == math.inf


def test_rho_radius_validation():
    c = AssumptionConstants(L_F=0.5, L_G=0.0, eta_F=0.0, c_F=0.0, c_G=0.0,
                            c_R=0.0, C_min=0.0, C_max=0.0)
    with pytest.raises(ValueError):
        rho_radius(c, Schedule(eta0=0.1), 0, 1.0, 0.0, 10)


def test_rho_radius_contains_short_run():
    p = _shared.phillips(200)
    G = truncate_svd(p.op.A, 10)
    data = add_noise(p, 1e-2, seed=1_000_000)
    s = Schedule(eta0=default_eta0(p, 0.5), alpha=0.1, lambda0=0.1,
                 alpha_prime=0.1)
    traj = dsgd_run(p, data, G, schedule=s, stop=APriori(8), seed=0,
                    record=RecordSpec(per_iteration=True))
    const = measure_constants(p.op, G, p.x_dag)
    rho = rho_radius(const, s, 8, float(np.linalg.norm(p.x_dag)),
                     data.delta, p.n)
    assert math.isfinite(rho)
    assert float(np.max(np.sqrt(traj.sq_error))) <= rho


# ---------------------------------------------------------------------------
# stability in the noise level
# ---------------------------------------------------------------------------


def test_stability_sweep_distances_scale_linearly():
    p = _shared.phillips(50)
    G = truncate_svd(p.op.A, 5)
    s = Schedule(eta0=default_eta0(p, 0.01), alpha=0.1, lambda0=1.0)
    levels = [1e-2, 5e-3, 2.5e-3, 1.25e-3]
    dists = stability_sweep(p, G, s, path_seed=0, K_epochs=2,
                            delta0_list=levels)
    assert len(dists) == 4
    assert all(d > 0 for d in dists)
    assert all(a > b for a, b in zip(dists, dists[1:]))
    # along a fixed path the terminal iterate is affine in the data, so the
    # distance to the exact-data run is proportional to the noise level
    ratios = np.asarray(dists) / np.asarray(levels)
    assert np.allclose(ratios, ratios[0], rtol=1e-9)


def test_stability_sweep_seed_controls():
    p = _shared.phillips(50)
    s = Schedule(eta0=default_eta0(p, 0.01), alpha=0.1)
    a = stability_sweep(p, None, s, path_seed=0, K_epochs=1,
                        delta0_list=[1e-2])
    b = stability_sweep(p, None, s, path_seed=0, K_epochs=1,
                        delta0_list=[1e-2])
    assert a == b
    c = stability_sweep(p, None, s, path_seed=0, K_epochs=1,
                        delta0_list=[1e-2], noise_seed=123)
    assert a != c


def test_stability_sweep_rejects_bad_level_lists():
    p = _shared.phillips(50)
    s = Schedule(eta0=default_eta0(p, 0.01), alpha=0.1)
    with pytest.raises(ValueError, match="decreasing"):
        stability_sweep(p, None, s, 0, 1, [1e-3, 1e-2])
    with pytest.raises(ValueError):
        stability_sweep(p, None, s, 0, 1, [1e-2, -1e-3])


# ---------------------------------------------------------------------------
# iteration-noise moments
# ---------------------------------------------------------------------------


def test_noise_moments_vanish_for_single_equation():
    x = np.array([1.0])
    p = Problem(name="scalar", op=ForwardOp(np.array([[2.0]])), x_dag=x,
                y_dag=np.array([2.0]), grid=np.array([0.0]))
    data = add_noise(p, 0.1, seed=4)
    G = truncate_svd(p.op.A, 1)
    s = Schedule(eta0=0.05, lambda0=0.7)
    rep = stochastic_noise_moments(p, data, G, s, k=2, M=16, seed=9)
    assert rep.est_N1_sq == 0.0
    assert rep.est_N2_sq == 0.0


def test_noise_moments_degenerate_zero_solution():
    p = Problem(name="null", op=ForwardOp(np.eye(2)), x_dag=np.zeros(2),
                y_dag=np.zeros(2), grid=np.array([0.0, 1.0]))
    data = add_noise(p, 0.0, seed=0)
    G = truncate_svd(p.op.A, 1)
    s = Schedule(eta0=0.1, lambda0=0.0)
    rep = stochastic_noise_moments(p, data, G, s, k=1, M=8, seed=0)
    assert rep.est_N1_sq == 0.0 and rep.bound_N1_sq == 0.0
    assert rep.est_N2_sq == 0.0 and rep.bound_N2_sq == 0.0


def test_noise_moments_within_bounds():
    rng = np.random.default_rng(99)
    A = rng.standard_normal((4, 4))
    x_dag = rng.standard_normal(4)
    p = Problem(name="rand4", op=ForwardOp(A), x_dag=x_dag, y_dag=A @ x_dag,
                grid=np.linspace(0.0, 1.0, 4))
    data = add_noise(p, 0.05, seed=100)
    G = truncate_svd(A, 2)
    s = Schedule(eta0=default_eta0(p, 0.5), alpha=0.1, lambda0=1.0,
                 alpha_prime=0.2)
    rep = stochastic_noise_moments(p, data, G, s, k=4, M=3000, seed=11)
    assert rep.est_N1_sq <= rep.bound_N1_sq + 3.0 * rep.se_N1_sq
    assert rep.est_N2_sq <= rep.bound_N2_sq + 3.0 * rep.se_N2_sq
    assert rep.k == 4 and rep.M == 3000


def test_noise_moments_deterministic():
    p = _tiny_instance(0)
    data = add_noise(p, 0.05, seed=0)
    G = truncate_svd(p.op.A, 2)
    s = Schedule(eta0=0.01, lambda0=0.5)
    a = stochastic_noise_moments(p, data, G, s, k=3, M=50, seed=7)
    b = stochastic_noise_moments(p, data, G, s, k=3, M=50, seed=7)
    assert a == b


def test_noise_moments_guards():
    p = _shared.phillips(200)
    data = add_noise(p, 1e-2, seed=0)
    G = truncate_svd(p.op.A, 5)
    s = Schedule(eta0=default_eta0(p), lambda0=1.0)
    with pytest.raises(ValueError, match="budget"):
        stochastic_noise_moments(p, data, G, s, k=1, M=250_001, seed=0)
    with pytest.raises(ValueError):
        stochastic_noise_moments(p, data, G, s, k=0, M=10, seed=0)
    sq = squared_variant(_tiny_instance(0))
    sq_data = add_noise(sq, 0.05, seed=0)
    sq_G = truncate_svd(sq.op.A, 2)
    with pytest.raises(ValueError, match="linear"):
        stochastic_noise_moments(sq, sq_data, sq_G, s, k=1, M=10, seed=0)
