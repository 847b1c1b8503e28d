"""Self-contained verification suites runnable from the CLI.

Three themed suites plus ``all``:

``oracles``
    Brute-force ground truth: exhaustive path enumeration of the mean
    iterate against the closed-form recursion, and Monte Carlo second
    moments of the iteration noise against their theoretical bounds.
``invariants``
    Structural identities that must hold on every run: the bias-variance
    split, the per-step growth inequality, the spectral product envelope,
    reduction of the data-driven method to plain SGD at lambda0 = 0,
    linearity of the noise construction, and the trapping radius.
``rates``
    Decay-rate behaviour: the power-law fitter on synthetic data, the
    observed error decay of SGD under a smoothness fixture, and continuity
    of the terminal iterate in the noise level.

Each check prints one ``PASS``/``FAIL`` line; a suite run ends with a
``RESULT passed=<n> failed=<m>`` line.  All checks are seeded and
deterministic for a fixed seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, List, Tuple

import numpy as np

from .analysis import (
    bias_variance,
    check_pathwise_contraction,
    enumerate_mean_error,
    fit_decay,
    phi_bound_check,
    rho_radius,
    stability_sweep,
    stochastic_noise_moments,
    theoretical_decay_exponent,
)
from .operators import ForwardOp, measure_constants, truncate_svd
from .problems import (
    Problem,
    add_noise,
    apply_source_fixture,
    make_gravity,
    make_phillips,
    make_source_fixture,
    _noise_from_xi,
)
from .solvers import (
    APriori,
    MaxEpochs,
    RecordSpec,
    Schedule,
    default_eta0,
    dsgd_run,
    run_ensemble,
)

__all__ = ["SUITES", "VerifyResult", "run_suite"]

SUITES = ("oracles", "invariants", "rates", "all")


@dataclass
class VerifyResult:
    """Aggregate outcome of a verification suite."""

    suite: str
    passed: int = 0
    failed: int = 0
    lines: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.failed == 0


Check = Tuple[str, Callable[[int], Tuple[bool, str]]]


# ---------------------------------------------------------------------------
# oracle checks
# ---------------------------------------------------------------------------

def _check_mean_recursion(seed: int) -> Tuple[bool, str]:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for trial in range(20):
        n, k = 3, 4
        A = rng.standard_normal((n, n))
        x = rng.standard_normal(n)
        p = Problem(name="rand", op=ForwardOp(A), x_dag=x, y_dag=A @ x,
                    grid=np.linspace(0.0, 1.0, n))
        data = add_noise(p, 1e-2, seed=seed + 100 + trial)
        use_g = trial % 2 == 0
        G = truncate_svd(A, 2) if use_g else None
        s = Schedule(
            eta0=default_eta0(p, c0=float(rng.uniform(0.2, 1.0))),
            alpha=float(rng.uniform(0.0, 0.5)),
            lambda0=0.5 if use_g else 0.0,
            alpha_prime=float(rng.uniform(0.0, 0.5)),
        )
        rep = enumerate_mean_error(p, data, G, s, k)
        worst = max(worst, rep.max_abs_gap)
    return worst < 1e-12, f"max |closed - enumerated| = {worst:.3e} over 20 instances"


def _check_mean_recursion_trivial(seed: int) -> Tuple[bool, str]:
    p = make_phillips(6)
    data = add_noise(p, 1e-2, seed=seed)
    s = Schedule(eta0=default_eta0(p), lambda0=0.0)
    rep = enumerate_mean_error(p, data, None, s, 0)
    ok = rep.max_abs_gap == 0.0 and np.array_equal(rep.closed_form_mean, -p.x_dag)
    return ok, f"k=0 gap = {rep.max_abs_gap!r}"


def _check_noise_moments(seed: int) -> Tuple[bool, str]:
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((12, 12))
    x = rng.standard_normal(12)
    p = Problem(name="rand", op=ForwardOp(A), x_dag=x, y_dag=A @ x,
                grid=np.linspace(0.0, 1.0, 12))
    data = add_noise(p, 1e-2, seed=seed + 1)
    G = truncate_svd(A, 4)
    s = Schedule(eta0=default_eta0(p, c0=0.5), alpha=0.1, lambda0=1.0, alpha_prime=0.2)
    rep = stochastic_noise_moments(p, data, G, s, k=5, M=4000, seed=seed)
    ok1 = rep.est_N1_sq <= rep.bound_N1_sq + 3.0 * rep.se_N1_sq
    ok2 = rep.est_N2_sq <= rep.bound_N2_sq + 3.0 * rep.se_N2_sq
    detail = (
        f"N1 {rep.est_N1_sq:.4e} <= {rep.bound_N1_sq:.4e}, "
        f"N2 {rep.est_N2_sq:.4e} <= {rep.bound_N2_sq:.4e} (M={rep.M})"
    )
    return ok1 and ok2, detail


def _check_noise_moments_degenerate(seed: int) -> Tuple[bool, str]:
    # zero solution, exact data, lambda = 0: both noise terms vanish exactly
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((4, 4))
    p = Problem(name="null", op=ForwardOp(A), x_dag=np.zeros(4), y_dag=np.zeros(4),
                grid=np.linspace(0.0, 1.0, 4))
    data = add_noise(p, 0.0, seed=seed)
    s = Schedule(eta0=default_eta0(p), lambda0=0.0)
    rep = stochastic_noise_moments(p, data, truncate_svd(A, 2), s, k=1, M=64, seed=seed)
    ok = rep.est_N1_sq == 0.0 and rep.est_N2_sq == 0.0
    return ok, f"est_N1_sq = {rep.est_N1_sq!r}, est_N2_sq = {rep.est_N2_sq!r}"


# ---------------------------------------------------------------------------
# invariant checks
# ---------------------------------------------------------------------------

def _check_bias_variance(seed: int) -> Tuple[bool, str]:
    p = make_phillips(30)
    ens = run_ensemble(
        p, 1e-2, method="sgd",
        schedule=Schedule(eta0=default_eta0(p), alpha=0.1),
        stop=MaxEpochs(5), M=5, base_seed=seed,
        record=RecordSpec(keep_iterates=True),
    )
    worst = 0.0
    for idx, epoch in enumerate(ens.epochs):
        if epoch == 0:
            continue
        b, v, tot = bias_variance(ens, float(epoch), p.x_dag)
        worst = max(worst, abs(b + v - tot) / max(tot, 1e-300))
        worst = max(worst, abs(tot - ens.mean_sq_error[idx]) / max(tot, 1e-300))
    return worst < 1e-10, f"max relative identity gap = {worst:.3e}"


def _check_pathwise(seed: int) -> Tuple[bool, str]:
    p = make_phillips(30)
    G = truncate_svd(p.op.A, 5)
    data = add_noise(p, 1e-2, seed=seed)
    s = Schedule(eta0=default_eta0(p, c0=1.0), alpha=0.1, lambda0=1.0, alpha_prime=0.1)
    traj = dsgd_run(p, data, G, schedule=s, stop=MaxEpochs(3), seed=seed,
                    record=RecordSpec(per_iteration=True))
    constants = measure_constants(p.op, G, p.x_dag)
    rep = check_pathwise_contraction(traj, constants, s, p.n, data.delta)
    return rep.passed, (
        f"{rep.checked} transitions, {rep.violations} violations, "
        f"worst slack = {rep.worst_slack:.3e}"
    )


def _check_phi_bound(seed: int) -> Tuple[bool, str]:
    rng = np.random.default_rng(seed)
    worst = -math.inf
    for _ in range(25):
        n = int(rng.integers(2, 9))
        A = rng.standard_normal((n, n))
        N = int(rng.integers(1, n + 1))
        G = truncate_svd(A, N) if rng.uniform() < 0.7 else None
        lam0 = float(rng.uniform(0.0, 1.0))
        smax_sq = float(np.max(np.linalg.svd(A, compute_uv=False)) ** 2) / n
        eta0 = float(rng.uniform(0.1, 0.999)) / (smax_sq * (1.0 + lam0))
        s = Schedule(eta0=eta0, alpha=float(rng.uniform(0.0, 0.6)),
                     lambda0=lam0, alpha_prime=float(rng.uniform(0.0, 0.6)))
        k = int(rng.integers(2, 40))
        j = int(rng.integers(0, k))
        s_val = float(rng.choice([0.0, 0.25, 0.5, 1.0, 1.5]))
        lhs, rhs, ok = phi_bound_check(A, G, s, j, k, s_val)
        worst = max(worst, lhs - rhs)
        if not ok:
            return False, f"violation: lhs={lhs:.6e} > rhs={rhs:.6e} (s={s_val}, j={j}, k={k})"
    return True, f"25 random configurations, worst lhs-rhs = {worst:.3e}"


def _check_sgd_reduction(seed: int) -> Tuple[bool, str]:
    p = make_phillips(25)
    data = add_noise(p, 1e-2, seed=seed)
    G = truncate_svd(p.op.A, 5)
    s = Schedule(eta0=default_eta0(p), alpha=0.1, lambda0=0.0, alpha_prime=0.3)
    stop = MaxEpochs(4)
    plain = dsgd_run(p, data, None, schedule=s, stop=stop, seed=seed)
    with_g = dsgd_run(p, data, G, schedule=s, stop=stop, seed=seed)
    ok = (
        np.array_equal(plain.sq_error, with_g.sq_error)
        and np.array_equal(plain.iterate_final, with_g.iterate_final)
    )
    return ok, "lambda0 = 0 run with surrogate is bitwise identical to plain SGD"


def _check_noise_linearity(seed: int) -> Tuple[bool, str]:
    p = make_gravity(16)
    xi = np.random.default_rng(seed).standard_normal(p.n)
    d1 = _noise_from_xi(p, 5e-3, xi, seed=-1)
    d2 = _noise_from_xi(p, 1e-2, xi, seed=-1)
    ok = np.array_equal(2.0 * d1.noise, d2.noise)
    return ok, "doubling delta0 doubles the stored perturbation bitwise"


def _check_rho_containment(seed: int) -> Tuple[bool, str]:
    # short horizon: the Gronwall-style radius grows like exp(n sum c_j)
    # and is only informative (finite) for small iteration counts
    p = make_phillips(30)
    G = truncate_svd(p.op.A, 5)
    data = add_noise(p, 1e-2, seed=seed)
    s = Schedule(eta0=default_eta0(p, c0=1.0), alpha=0.1, lambda0=1.0, alpha_prime=0.1)
    traj = dsgd_run(p, data, G, schedule=s, stop=APriori(8), seed=seed,
                    record=RecordSpec(per_iteration=True))
    constants = measure_constants(p.op, G, p.x_dag)
    rho = rho_radius(constants, s, traj.iterations_run,
                     float(np.linalg.norm(p.x_dag)), data.delta, n=p.n)
    max_err = float(np.sqrt(np.max(traj.sq_error)))
    ok = math.isfinite(rho) and max_err <= rho * (1.0 + 1e-12)
    return ok, f"max ||e_k|| = {max_err:.4e} <= rho = {rho:.4e}"


def _check_rho_degenerate(seed: int) -> Tuple[bool, str]:
    p = make_phillips(30)
    G = truncate_svd(p.op.A, 5)
    constants = measure_constants(p.op, G, p.x_dag)
    s = Schedule(eta0=default_eta0(p), alpha=0.1, lambda0=0.0)
    e1 = float(np.linalg.norm(p.x_dag))
    rho = rho_radius(constants, s, 50, e1, 0.0, n=p.n)
    return rho == e1, f"lambda0 = 0, delta = 0: rho = {rho!r} vs e1 = {e1!r}"


# ---------------------------------------------------------------------------
# rate checks
# ---------------------------------------------------------------------------

def _check_fit_synthetic(seed: int) -> Tuple[bool, str]:
    ks = np.arange(1, 401, dtype=float)
    series = np.column_stack([ks, 3.7 * ks**-0.62])
    fit = fit_decay(series)
    ok = abs(fit.slope + 0.62) < 1e-10 and fit.r_squared > 1.0 - 1e-12
    return ok, f"slope = {fit.slope:.12f} (want -0.62), r^2 = {fit.r_squared:.12f}"


def _check_sgd_rate(seed: int) -> Tuple[bool, str]:
    # the source element is pinned (not derived from the suite seed): the
    # finite-horizon slope depends on which spectral shelf the fit window
    # lands on, so a generic draw can sit in a transient; the trial index
    # seeds still follow the suite seed
    base = make_gravity(50)
    fixture = make_source_fixture(
        base.op, nu=0.25, w=np.random.default_rng(3).standard_normal(base.n)
    )
    p = apply_source_fixture(base, fixture)
    alpha = 0.1
    ens = run_ensemble(
        p, 0.0, method="sgd",
        schedule=Schedule(eta0=default_eta0(p, c0=1.0), alpha=alpha),
        stop=MaxEpochs(500), M=5, base_seed=seed,
    )
    pts = [(e * p.n, v) for e, v in zip(ens.epochs, ens.mean_sq_error) if e > 0]
    fit = fit_decay(pts)
    want = -theoretical_decay_exponent(0.25, alpha)
    ok = abs(fit.slope - want) <= 0.5 * abs(want)
    return ok, f"fitted slope = {fit.slope:.4f}, predicted = {want:.4f} (+-50%)"


def _check_stability(seed: int) -> Tuple[bool, str]:
    p = make_phillips(30)
    G = truncate_svd(p.op.A, 5)
    s = Schedule(eta0=default_eta0(p, c0=0.5), alpha=0.1, lambda0=1.0, alpha_prime=0.1)
    deltas = [1e-2 * 0.5**i for i in range(8)]
    dists = stability_sweep(p, G, s, path_seed=seed, K_epochs=3, delta0_list=deltas)
    finite = all(math.isfinite(d) for d in dists)
    monotone = all(b <= a * (1.0 + 1e-12) for a, b in zip(dists, dists[1:]))
    shrinks = dists[-1] < dists[0]
    ok = finite and monotone and shrinks
    return ok, f"distances {dists[0]:.3e} -> {dists[-1]:.3e}, nonincreasing = {monotone}"


# ---------------------------------------------------------------------------
# suite runner
# ---------------------------------------------------------------------------

_ORACLES: List[Check] = [
    ("oracles.mean-recursion-enumeration", _check_mean_recursion),
    ("oracles.mean-recursion-trivial", _check_mean_recursion_trivial),
    ("oracles.noise-moment-bounds", _check_noise_moments),
    ("oracles.noise-moment-degenerate", _check_noise_moments_degenerate),
]

_INVARIANTS: List[Check] = [
    ("invariants.bias-variance-identity", _check_bias_variance),
    ("invariants.pathwise-contraction", _check_pathwise),
    ("invariants.spectral-product-envelope", _check_phi_bound),
    ("invariants.sgd-reduction-bitwise", _check_sgd_reduction),
    ("invariants.noise-linearity", _check_noise_linearity),
    ("invariants.trapping-radius", _check_rho_containment),
    ("invariants.trapping-radius-degenerate", _check_rho_degenerate),
]

_RATES: List[Check] = [
    ("rates.fit-synthetic-power-law", _check_fit_synthetic),
    ("rates.sgd-exact-data-decay", _check_sgd_rate),
    ("rates.stability-in-noise-level", _check_stability),
]


def _checks_for(suite: str) -> List[Check]:
    table = {
        "oracles": _ORACLES,
        "invariants": _INVARIANTS,
        "rates": _RATES,
        "all": _ORACLES + _INVARIANTS + _RATES,
    }
    if suite not in table:
        raise ValueError(f"unknown suite {suite!r}; choose from {', '.join(SUITES)}")
    return table[suite]


def run_suite(suite: str, seed: int = 0, echo: Callable[[str], None] = print) -> VerifyResult:
    """Run one verification suite, printing a PASS/FAIL line per check."""
    result = VerifyResult(suite=suite)
    for offset, (name, fn) in enumerate(_checks_for(suite)):
        try:
            ok, detail = fn(seed + offset)
        except Exception as exc:  # a crashing check is a failing check
            ok, detail = False, f"raised {type(exc).__name__}: {exc}"
        line = f"{'PASS' if ok else 'FAIL'} {name}: {detail}"
        result.lines.append(line)
        echo(line)
        if ok:
            result.passed += 1
        else:
            result.failed += 1
    summary = f"RESULT passed={result.passed} failed={result.failed}"
    result.lines.append(summary)
    echo(summary)
    return result
