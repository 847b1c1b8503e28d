"""Acceptance gate: ten numbered behavioral criteria with runtime budgets.

Each test prints one ``criterion NN [PASS|FAIL]`` line (replayed in the
terminal summary by ``conftest.py``) and fails the test when either the
numeric check or the runtime budget is missed.
"""

from __future__ import annotations

import os
import subprocess
import sys
import time

import numpy as np

from illposed.analysis import (
    bias_variance,
    check_pathwise_contraction,
    enumerate_mean_error,
    phi_bound_check,
    theoretical_decay_exponent,
)
from illposed.operators import (
    ForwardOp,
    measure_constants,
    row_gradient_step,
    row_value,
    truncate_svd,
)
from illposed.problems import Problem, add_noise, squared_variant
from illposed.solvers import (
    MaxEpochs,
    RecordSpec,
    Schedule,
    default_eta0,
    dsgd_run,
)

import _shared
from _shared import report_criterion


def test_criterion_01_enumerated_mean_matches_closed_form():
    """Exhaustive path enumeration agrees with the closed-form mean error."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(12345)
    worst = 0.0
    for trial in range(20):
        A = rng.standard_normal((3, 3))
        x = rng.standard_normal(3)
        x = x / np.max(np.abs(x))
        p = Problem(name=f"rand{trial}", op=ForwardOp(A), x_dag=x, y_dag=A @ x,
                    grid=np.linspace(0.0, 1.0, 3))
        data = add_noise(p, 1e-2, seed=trial)
        G = truncate_svd(A, 2) if trial % 2 else None
        maxrow = float(np.max(np.linalg.norm(A, axis=1)))
        s = Schedule(eta0=0.05 / max(maxrow**2, 1e-12), alpha=0.1,
                     lambda0=0.7, alpha_prime=0.2)
        rep = enumerate_mean_error(p, data, G, s, 4)
        worst = max(worst, rep.max_abs_gap)
    elapsed = time.perf_counter() - t0
    report_criterion(
        1, "mean-recursion-enumeration", worst < 1e-12,
        f"worst gap {worst:.3e} over 20 random instances (tol 1e-12)",
        elapsed, 5.0,
    )


def test_criterion_02_bias_variance_identity():
    """bias^2 + variance recombines to the ensemble mean squared error."""
    p, ens, elapsed = _shared.dsgd_ensemble_with_iterates()
    t0 = time.perf_counter()
    worst = 0.0
    for j, epoch in enumerate(ens.epochs):
        b, v, total = bias_variance(ens, float(epoch), p.x_dag)
        ref = float(ens.mean_sq_error[j])
        worst = max(worst, abs(b + v - ref) / ref, abs(total - ref) / ref)
    elapsed += time.perf_counter() - t0
    report_criterion(
        2, "bias-variance-identity", worst < 1e-10,
        f"worst relative gap {worst:.3e} over {ens.epochs.size} epochs (tol 1e-10)",
        elapsed, 10.0,
    )


def test_criterion_03_pathwise_growth_inequality():
    """Every recorded transition satisfies the per-step growth inequality."""
    t0 = time.perf_counter()
    p = _shared.phillips(200)
    G = truncate_svd(p.op.A, 10)
    consts = measure_constants(p.op, G, p.x_dag)
    data = add_noise(p, 1e-2, seed=1_000_000)
    s = Schedule(eta0=default_eta0(p, 0.5), alpha=0.1, lambda0=1.0,
                 alpha_prime=0.1)
    checked = violations = 0
    worst = np.inf
    for seed in range(10):
        traj = dsgd_run(p, data, G, schedule=s, stop=MaxEpochs(20), seed=seed,
                        record=RecordSpec(per_iteration=True))
        rep = check_pathwise_contraction(traj, consts, s, p.n, data.delta)
        checked += rep.checked
        violations += rep.violations
        worst = min(worst, rep.worst_slack)
    elapsed = time.perf_counter() - t0
    report_criterion(
        3, "pathwise-growth-inequality", violations == 0 and checked == 40_000,
        f"{violations} violations over {checked} transitions "
        f"(worst slack {worst:.3e})",
        elapsed, 10.0,
    )


def test_criterion_04_spectral_product_envelope():
    """The spectral decay product never exceeds its closed-form envelope."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(777)
    min_slack = np.inf
    for _ in range(100):
        n = int(rng.integers(2, 9))
        A = rng.standard_normal((n, n))
        G = truncate_svd(A, int(rng.integers(1, n + 1))) if rng.random() < 0.5 else None
        lam0 = float(rng.uniform(0.0, 1.5))
        sig_max2 = float(np.linalg.norm(A, 2)) ** 2 / n
        eta0 = float(rng.uniform(0.05, 0.95)) / (sig_max2 * (1.0 + lam0))
        s = Schedule(eta0=eta0, alpha=float(rng.uniform(0.0, 0.5)),
                     lambda0=lam0, alpha_prime=float(rng.uniform(0.0, 0.5)))
        j = int(rng.integers(0, 5))
        k = j + 1 + int(rng.integers(0, 60))
        s_val = float(rng.choice([0.0, 0.25, 0.5, 1.0]))
        lhs, rhs, ok = phi_bound_check(A, G, s, j, k, s_val)
        assert ok
        min_slack = min(min_slack, rhs - lhs)
    elapsed = time.perf_counter() - t0
    report_criterion(
        4, "spectral-product-envelope", min_slack >= -1e-12,
        f"min slack {min_slack:.3e} over 100 random configurations (tol -1e-12)",
        elapsed, 2.0,
    )


def test_criterion_05_exact_data_decay_rate():
    """SGD on exact data decays at the predicted power-law rate."""
    slope, elapsed = _shared.exact_data_decay()
    target = -theoretical_decay_exponent(0.25, 0.1)
    ok = abs(slope - target) <= 0.3 * abs(target)
    report_criterion(
        5, "exact-data-decay-rate", ok,
        f"fitted slope {slope:.4f} vs predicted {target:.2f} (+/-30%)",
        elapsed, 30.0,
    )


def test_criterion_06_stability_in_noise_level():
    """Terminal iterates converge as the noise level is halved repeatedly."""
    dists, elapsed = _shared.noise_stability_distances()
    d = np.asarray(dists)
    ok = bool(np.all(np.diff(d) < 0.0)) and d[-1] < 1e-6
    report_criterion(
        6, "stability-in-noise-level", ok,
        f"13 halving levels, strictly decreasing={bool(np.all(np.diff(d) < 0))}, "
        f"final distance {d[-1]:.3e} (tol 1e-6)",
        elapsed, 5.0,
    )


def test_criterion_07_benchmark_error_levels():
    """Stochastic and full-gradient baselines land at reference error levels."""
    out = _shared.benchmark_sgd_lm_runs()
    sgd_best, sgd_epoch, t_sgd = out["sgd"]
    lm_best, lm_epoch, t_lm = out["lm"]
    ok = (
        2.40e-1 / 3 <= sgd_best <= 2.40e-1 * 3
        and sgd_epoch < 20
        and 1.28e-1 / 3 <= lm_best <= 1.28e-1 * 3
        and 249 / 3 <= lm_epoch <= 249 * 3
    )
    report_criterion(
        7, "benchmark-error-levels", ok,
        f"sgd best {sgd_best:.3e} @ epoch {sgd_epoch:g} (ref 2.40e-1 @ <20), "
        f"lm best {lm_best:.3e} @ epoch {lm_epoch:g} (ref 1.28e-1 @ 249, x3)",
        t_sgd + t_lm, 60.0,
    )


def test_criterion_08_data_driven_beats_plain_sgd():
    """The rank-limited surrogate term lowers the best mean squared error."""
    out = _shared.ordering_runs()
    d_ph, s_ph, t_ph = out["phillips"]
    d_sh, s_sh, t_sh = out["shaw"]
    ok = d_ph < s_ph and d_sh < s_sh
    report_criterion(
        8, "data-driven-beats-plain-sgd", ok,
        f"phillips {d_ph:.4e} < {s_ph:.4e} ({(s_ph / d_ph - 1) * 100:+.1f}%), "
        f"shaw {d_sh:.4e} < {s_sh:.4e} ({(s_sh / d_sh - 1) * 100:+.1f}%)",
        t_ph + t_sh, 120.0,
    )


def test_criterion_09_deterministic_cli_output(tmp_path):
    """CLI runs are byte-identical regardless of the worker thread count."""
    t0 = time.perf_counter()
    blobs = []
    for tag, threads in (("a", "1"), ("b", "4"), ("c", "1")):
        out = tmp_path / f"{tag}.csv"
        cmd = [
            sys.executable, "-m", "illposed.cli", "run",
            "--problem", "phillips", "--n", "100", "--delta0", "1e-2",
            "--method", "dsgd", "--rank", "10", "--lambda0", "1",
            "--trials", "4", "--max-epochs", "10", "--seed", "5",
            "-o", str(out), "--no-figure",
        ]
        env = dict(os.environ, ILLPOSED_THREADS=threads)
        proc = subprocess.run(cmd, env=env, capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        blobs.append(out.read_bytes())
    elapsed = time.perf_counter() - t0
    ok = blobs[0] == blobs[1] == blobs[2]
    report_criterion(
        9, "deterministic-cli-output", ok,
        f"3 runs, {len(blobs[0])} CSV bytes, thread counts 1/4/1, "
        f"byte-identical={ok}",
        elapsed, 10.0,
    )


def test_criterion_10_nonlinear_gradient_consistency():
    """Componentwise-squared row gradients match central finite differences."""
    t0 = time.perf_counter()
    p = squared_variant(_shared.phillips(50))
    rng = np.random.default_rng(2024)
    n = p.n
    h = 1e-6
    worst = 0.0
    for _ in range(50):
        x = rng.standard_normal(n)
        i = int(rng.integers(n))
        g = row_gradient_step(p.op, i, x, 1.0)
        fd = np.empty(n)
        for j in range(n):
            e = np.zeros(n)
            e[j] = h
            fd[j] = (row_value(p.op, i, x + e) - row_value(p.op, i, x - e)) / (2 * h)
        rel = float(np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1.0))
        worst = max(worst, rel)
    elapsed = time.perf_counter() - t0
    report_criterion(
        10, "nonlinear-gradient-consistency", worst < 1e-6,
        f"worst relative gap {worst:.3e} over 50 random points (tol 1e-6)",
        elapsed, 2.0,
    )
