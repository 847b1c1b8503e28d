"""Error metrics, decay fitting, and brute-force verification oracles.

Everything here treats a solver run as an experiment and asks whether the
numbers behave the way the theory of the method says they must: the mean
iterate obeys a closed-form recursion, per-step growth obeys a contraction
inequality with measurable constants, spectral products obey an operator-norm
envelope, iterates depend continuously on the noise level along a fixed index
path, and error curves decay at a predictable polynomial rate.

Norm conventions match the solver layer: squared errors are Euclidean in
solution space, residuals/noise are RMS in data space, and the spectral
picture uses the scaled singular values ``sigma(A)**2 / n``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .operators import (
    AssumptionConstants,
    DataDrivenOp,
    Nonlinearity,
    rms_norm,
    verify_assumption_v,
)
from .problems import NoisyData, Problem, _noise_from_xi
from .solvers import (
    APriori,
    DivergenceError,
    MaxEpochs,
    Ensemble,
    RecordSpec,
    Schedule,
    Trajectory,
    dsgd_run,
    eta_at,
    lambda_at,
)

__all__ = [
    "DecayFit",
    "MeanRecursionReport",
    "PathwiseReport",
    "NoiseMomentReport",
    "bias_variance",
    "fit_decay",
    "enumerate_mean_error",
    "phi_bound_check",
    "pathwise_step_constants",
    "check_pathwise_contraction",
    "rho_radius",
    "stability_sweep",
    "stochastic_noise_moments",
    "theoretical_decay_exponent",
]


@dataclass(frozen=True)
class DecayFit:
    """Least-squares power-law fit ``value ~ C * k**slope`` on a log-log grid."""

    slope: float
    intercept: float
    window: Tuple[float, float]
    r_squared: float


@dataclass(frozen=True)
class MeanRecursionReport:
    """Exhaustive path enumeration vs. the closed-form mean error."""

    k_checked: int
    closed_form_mean: np.ndarray
    enumerated_mean: np.ndarray
    max_abs_gap: float


@dataclass(frozen=True)
class PathwiseReport:
    """Outcome of the per-iteration contraction-inequality check."""

    checked: int
    violations: int
    worst_slack: float  # min over transitions of (rhs - lhs); negative = violation

    @property
    def passed(self) -> bool:
        return self.violations == 0


@dataclass(frozen=True)
class NoiseMomentReport:
    """Monte Carlo second moments of the iteration noise terms vs. bounds.

    The bounds hold for the true (conditional) expectations, so compare
    ``est <= bound + 3 * se`` rather than hard-asserting the raw estimate.
    """

    k: int
    M: int
    est_N1_sq: float
    est_N2_sq: float
    bound_N1_sq: float
    bound_N2_sq: float
    se_N1_sq: float
    se_N2_sq: float


def theoretical_decay_exponent(nu: float, alpha: float) -> float:
    """Predicted decay exponent of the mean squared error, min(2 nu (1-alpha), alpha)."""
    return min(2.0 * nu * (1.0 - alpha), alpha)


def bias_variance(e: Ensemble, epoch: float, x_dag: np.ndarray) -> Tuple[float, float, float]:
    """Empirical bias-variance split of the ensemble at a recorded epoch.

    Returns ``(bias_sq, variance, total)`` where ``bias_sq`` is the squared
    error of the empirical mean iterate, ``variance`` the mean squared spread
    around it, and ``total`` the mean squared error; algebraically
    ``total = bias_sq + variance``.
    """
    hits = np.nonzero(np.isclose(e.epochs, epoch, rtol=0.0, atol=1e-9))[0]
    if hits.size == 0:
        raise ValueError(f"epoch {epoch} is not recorded")
    idx = int(hits[0])
    if any(t.iterates is None for t in e.trials):
        raise ValueError("iterate snapshots were not recorded (keep_iterates=False)")
    X = np.stack([t.iterates[idx] for t in e.trials])
    x_dag = np.asarray(x_dag, dtype=float)
    xbar = X.mean(axis=0)
    bias_sq = float(np.sum((xbar - x_dag) ** 2))
    variance = float(np.mean(np.sum((X - xbar) ** 2, axis=1)))
    total = float(np.mean(np.sum((X - x_dag) ** 2, axis=1)))
    return bias_sq, variance, total


def fit_decay(
    series: Union[Sequence[Tuple[float, float]], np.ndarray],
    window: Optional[Tuple[float, float]] = None,
) -> DecayFit:
    """Fit the decay exponent of a positive series by OLS on (log k, log value).

    ``series`` is a sequence of (k, value) pairs.  ``window = (k_min, k_max)``
    restricts the fit; the default is the last half of the k-range (skipping
    the transient).  Requires at least 5 positive points in the window.
    """
    arr = np.asarray(list(series), dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError("series must be a list of (k, value) pairs")
    ks, vs = arr[:, 0], arr[:, 1]
    if window is None:
        k_max = float(np.max(ks))
        window = (k_max / 2.0, k_max)
    k_lo, k_hi = float(window[0]), float(window[1])
    mask = (ks >= k_lo) & (ks <= k_hi) & (ks > 0)
    if np.count_nonzero(mask) < 5:
        raise ValueError("need at least 5 points inside the window")
    if np.any(vs[mask] <= 0):
        raise ValueError("series values must be positive inside the window")
    lk, lv = np.log(ks[mask]), np.log(vs[mask])
    slope, intercept = np.polyfit(lk, lv, 1)
    resid = lv - (slope * lk + intercept)
    ss_res = float(resid @ resid)
    centered = lv - lv.mean()
    ss_tot = float(centered @ centered)
    r2 = 1.0 if ss_tot <= 1e-300 else max(0.0, min(1.0, 1.0 - ss_res / ss_tot))
    return DecayFit(slope=float(slope), intercept=float(intercept),
                    window=(k_lo, k_hi), r_squared=r2)


def _shared_spectrum(A: np.ndarray, G: Optional[DataDrivenOp]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Full SVD of A plus the surrogate spectrum aligned to A's modes.

    Returns (sigma, V, sigma_tilde) with V's columns the right singular
    vectors.  Requires the surrogate (when given) to share A's leading right
    singular vectors, which holds by construction for truncated SVDs.
    """
    _, s, Vt = np.linalg.svd(A)
    n = A.shape[0]
    tilde = np.zeros(n)
    if G is not None:
        VF = Vt[: G.N].T
        cos = np.abs(np.sum(VF * G.right_vectors, axis=0))
        if np.any(cos < 1.0 - 1e-8):
            raise ValueError("surrogate does not share the singular basis of A")
        tilde[: G.N] = G.sigma
    return s, Vt.T, tilde


def enumerate_mean_error(
    p: Problem,
    data: NoisyData,
    G: Optional[DataDrivenOp],
    s: Schedule,
    k: int,
    x1: Optional[np.ndarray] = None,
) -> MeanRecursionReport:
    """Mean error after k stochastic steps: all n**k paths vs. closed form.

    The enumerated side averages the exact update over every equally weighted
    index path.  The closed-form side evaluates, in the shared singular basis,

        E[e_{k+1}] = P(1,k) e_1 - sum_j eta_j P(j+1,k)
                     (A.T v_F / n + lambda_j * Atil.T v_G / n)

    with ``P(a,b)`` the product of ``I - eta_i (B_F + lambda_i B_G)``,
    ``v_F = -xi`` and ``v_G = G(x_dag) - y_dag - xi`` (constants for linear
    problems, xi being the effective noise ``y_delta - y_dag``).  Only linear
    problems are supported and the path count n**k must not exceed 2e6.
    """
    if p.op.nonlinearity is not Nonlinearity.IDENTITY:
        raise ValueError("enumeration applies to linear problems only")
    if k < 0:
        raise ValueError("k must be nonnegative")
    n = p.n
    if n**k > 2e6:
        raise ValueError(f"enumeration budget exceeded: n**k = {n**k:.3g} > 2e6")
    A = p.op.A
    x0 = np.zeros(n) if x1 is None else np.asarray(x1, dtype=float)
    e1 = x0 - p.x_dag
    if k == 0:
        return MeanRecursionReport(0, e1.copy(), e1.copy(), 0.0)

    yd = data.y_delta
    Gm = G.matrix if G is not None else None
    etas = np.array([eta_at(s, j) for j in range(1, k + 1)])
    lams = np.array([lambda_at(s, j) for j in range(1, k + 1)])

    # --- exhaustive enumeration ------------------------------------------
    acc = np.zeros(n)
    for path in itertools.product(range(n), repeat=k):
        x = x0.copy()
        for j, i in enumerate(path):
            a = A[i]
            step = (float(a @ x) - yd[i]) * a
            if Gm is not None and lams[j] != 0.0:
                g = Gm[i]
                step = step + lams[j] * (float(g @ x) - yd[i]) * g
            x = x - etas[j] * step
        acc += x
    enumerated = acc / float(n**k) - p.x_dag

    # --- closed form in the shared singular basis ------------------------
    sig, V, tilde = _shared_spectrum(A, G)
    sig2, tilde2 = sig * sig / n, tilde * tilde / n
    # factors[t, j] = 1 - eta_j (sigma_t^2 + lambda_j sigma_tilde_t^2) / n-scaled
    factors = 1.0 - etas[None, :] * (sig2[:, None] + lams[None, :] * tilde2[:, None])
    # tail[t, j] = prod_{i > j} factors[t, i], with tail[:, k-1] = 1
    tail = np.ones((n, k))
    for j in range(k - 2, -1, -1):
        tail[:, j] = tail[:, j + 1] * factors[:, j + 1]
    full = tail[:, 0] * factors[:, 0]

    xi = yd - p.y_dag
    u_F = -(A.T @ xi) / n
    coords = full * (V.T @ e1)
    if Gm is not None:
        v_G = (Gm @ p.x_dag) - p.y_dag - xi
        u_G = (Gm.T @ v_G) / n
        for j in range(k):
            coords -= etas[j] * tail[:, j] * (V.T @ (u_F + lams[j] * u_G))
    else:
        cF = V.T @ u_F
        for j in range(k):
            coords -= etas[j] * tail[:, j] * cF
    closed = V @ coords
    gap = float(np.max(np.abs(closed - enumerated)))
    return MeanRecursionReport(k, closed, enumerated, gap)


def phi_bound_check(
    A: np.ndarray,
    G: Optional[DataDrivenOp],
    s: Schedule,
    j: int,
    k: int,
    s_val: float,
) -> Tuple[float, float, bool]:
    """Spectral operator-norm product vs. its closed-form envelope.

    lhs = max_t sigma_t^(2 s_val) prod_{i=j+1}^k (1 - eta_i (sigma_t^2 +
    lambda_i sigma_tilde_t^2)) over the scaled spectrum; rhs = (s_val / (e *
    sum eta_i))**s_val (1 for s_val = 0).  Requires j < k, s_val >= 0, and the
    normalization eta_i (sigma_t^2 + lambda_i sigma_tilde_t^2) <= 1 for every
    i and t.  Returns (lhs, rhs, lhs <= rhs + 1e-12).
    """
    if not 0 <= j < k:
        raise ValueError("need 0 <= j < k")
    if s_val < 0:
        raise ValueError("s_val must be nonnegative")
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    sig, _, tilde = _shared_spectrum(A, G)
    sig2, tilde2 = sig * sig / n, tilde * tilde / n
    i = np.arange(j + 1, k + 1, dtype=float)
    etas = s.eta0 * i ** (-s.alpha)
    lams = s.lambda0 * i ** (-s.alpha_prime)
    rates = etas[None, :] * (sig2[:, None] + lams[None, :] * tilde2[:, None])
    if np.any(rates > 1.0 + 1e-12):
        raise ValueError("normalization precondition violated: eta_i * spectrum > 1")
    with np.errstate(divide="ignore"):
        weights = sig2**s_val  # 0**0 == 1 by numpy convention, wanted here
    lhs = float(np.max(weights * np.prod(1.0 - rates, axis=1)))
    rhs = 1.0 if s_val == 0.0 else float((s_val / (math.e * np.sum(etas))) ** s_val)
    return lhs, rhs, lhs <= rhs + 1e-12


def pathwise_step_constants(
    constants: AssumptionConstants,
    s: Schedule,
    k: int,
) -> Tuple[float, float]:
    """Per-step contraction constants (c_k, d_k) of the growth inequality.

    ``c_k = 2 eta_k lambda_k max(1, L_G^2) (3/2 + 2 eta_k lambda_k L_G^2)`` and
    ``d_k = (1 + eta_F)^2 / (2 (1 - L_F^2 eta_k - eta_F)) * eta_k``; the latter
    requires the step-size condition ``1 - L_F^2 eta_k - eta_F > 0``.
    """
    eta, lam = eta_at(s, k), lambda_at(s, k)
    lg2 = constants.L_G * constants.L_G
    c_k = 2.0 * eta * lam * max(1.0, lg2) * (1.5 + 2.0 * eta * lam * lg2)
    denom = 1.0 - constants.L_F**2 * eta - constants.eta_F
    if denom <= 0.0:
        raise ValueError(
            f"step-size condition violated at k={k}: 1 - L_F^2 eta_k - eta_F = {denom:.3e}"
        )
    d_k = (1.0 + constants.eta_F) ** 2 / (2.0 * denom) * eta
    return c_k, d_k


def check_pathwise_contraction(
    traj: Trajectory,
    constants: AssumptionConstants,
    s: Schedule,
    n: int,
    delta: float,
) -> PathwiseReport:
    """Check every recorded transition against the growth inequality.

    For consecutive per-iteration squared errors ``E_k = sq_error[k]`` the
    inequality reads

        E_{k+1} <= (1 + n c_k) E_k + n c_k (C_max + delta)^2 + n d_k delta^2

    with (c_k, d_k) from :func:`pathwise_step_constants` (1-based step index).
    The trajectory must be recorded per iteration so snapshots are adjacent
    iterates.
    """
    eps = np.diff(traj.epochs)
    if traj.epochs.size < 2 or not np.allclose(eps, eps[0]) or not np.isclose(
        eps[0] * n, 1.0
    ):
        raise ValueError("trajectory must be recorded per iteration")
    cd = (constants.C_max + delta) ** 2
    checked = 0
    violations = 0
    worst = math.inf
    for m in range(traj.epochs.size - 1):
        c_k, d_k = pathwise_step_constants(constants, s, m + 1)
        lhs = traj.sq_error[m + 1]
        rhs = (1.0 + n * c_k) * traj.sq_error[m] + n * c_k * cd + n * d_k * delta**2
        slack = rhs - lhs
        checked += 1
        if slack < 0:
            violations += 1
        worst = min(worst, slack)
    return PathwiseReport(checked=checked, violations=violations, worst_slack=worst)


def rho_radius(
    constants: AssumptionConstants,
    s: Schedule,
    k_delta: int,
    e1_norm: float,
    delta: float,
    n: int,
) -> float:
    """Radius of the ball around the reference solution that traps the iterates.

    rho**2 = exp(n sum_j c_j) (e1_norm**2 + (C_max + delta)**2 +
    n delta**2 sum_j d_j) - (C_max + delta)**2, summing j = 1..k_delta with
    the per-step constants of :func:`pathwise_step_constants`.
    """
    if k_delta < 1:
        raise ValueError("k_delta must be at least 1")
    sum_c = 0.0
    sum_d = 0.0
    for j in range(1, k_delta + 1):
        c_j, d_j = pathwise_step_constants(constants, s, j)
        sum_c += c_j
        sum_d += d_j
    cd = (constants.C_max + delta) ** 2
    if sum_c == 0.0:
        # exp factor is exactly 1, so the cd terms cancel algebraically;
        # evaluating the cancelled form keeps e.g. delta = 0 exact.
        rho_sq = e1_norm**2 + n * delta**2 * sum_d
    else:
        log_rho_sq = n * sum_c + math.log(e1_norm**2 + cd + n * delta**2 * sum_d)
        if log_rho_sq > 700.0:  # exp would overflow a double; bound is vacuous
            return math.inf
        rho_sq = math.exp(log_rho_sq) - cd
    return math.sqrt(max(0.0, rho_sq))


def stability_sweep(
    p: Problem,
    G: Optional[DataDrivenOp],
    s: Schedule,
    path_seed: int,
    K_epochs: float,
    delta0_list: Sequence[float],
    noise_seed: Optional[int] = None,
) -> List[float]:
    """Terminal-iterate distance to the exact-data run along a fixed path.

    All runs share the index-draw seed (``path_seed``) and one standard-normal
    noise direction (seed ``noise_seed``, default ``path_seed + 1_000_000``)
    scaled by each entry of the decreasing ``delta0_list``; the reference run
    uses exact data.  Returns the Euclidean distances ``norm(x_K^delta - x_K)``
    in list order (``inf`` for entries whose run diverged).
    """
    d0s = [float(d) for d in delta0_list]
    if any(b > a for a, b in zip(d0s, d0s[1:])):
        raise ValueError("delta0_list must be sorted in decreasing order")
    if any(d < 0 for d in d0s):
        raise ValueError("noise levels must be nonnegative")
    xi = np.random.default_rng(
        path_seed + 1_000_000 if noise_seed is None else noise_seed
    ).standard_normal(p.n)
    stop = MaxEpochs(K_epochs)

    def terminal(delta0: float) -> np.ndarray:
        data = _noise_from_xi(p, delta0, xi, seed=-1)
        return dsgd_run(p, data, G, schedule=s, stop=stop, seed=path_seed).iterate_final

    ref = terminal(0.0)
    out: List[float] = []
    for d0 in d0s:
        try:
            out.append(float(np.linalg.norm(terminal(d0) - ref)))
        except DivergenceError:
            out.append(math.inf)
    return out


def stochastic_noise_moments(
    p: Problem,
    data: NoisyData,
    G: DataDrivenOp,
    s: Schedule,
    k: int,
    M: int,
    seed: int,
) -> NoiseMomentReport:
    """Monte Carlo second moments of the two iteration-noise terms at step k.

    The iterate ``x_k`` is produced by k-1 stochastic steps with the given
    seed; then M fresh index draws i sample, in the scaled data space (where
    the Euclidean norm equals the RMS norm of raw components and
    ``phi_i = sqrt(n) e_i``),

        N_1 = (K_F e - <a_i, e> phi_i) + lambda_k P (K_G e - <g_i, e> phi_i)
        N_2 = (v_F - v_F[i] phi_i)     + lambda_k P (v_G - v_G[i] phi_i)

    with ``e = x_k - x_dag``, ``v_F = -xi``, ``v_G = G(x_dag) - y_dag - xi``
    and ``P`` the projector onto the surrogate's left singular vectors (the
    transfer operator of a truncated SVD).  Estimates are reported next to the
    theoretical second-moment bounds, which hold for true expectations; judge
    with ``est <= bound + 3 se``.  Linear problems only.
    """
    if p.op.nonlinearity is not Nonlinearity.IDENTITY:
        raise ValueError("noise moments are implemented for linear problems only")
    if k < 1 or M < 1:
        raise ValueError("need k >= 1 and M >= 1")
    n = p.n
    if M * n > 5e7:
        raise ValueError("sampling budget exceeded")
    A = p.op.A
    Gm = G.matrix
    if k > 1:
        x_k = dsgd_run(
            p, data, G, schedule=s, stop=APriori(k - 1), seed=seed,
            record=RecordSpec(every_epochs=10**9),
        ).iterate_final
    else:
        x_k = np.zeros(n)
    e = x_k - p.x_dag
    lam = lambda_at(s, k)
    sqrt_n = math.sqrt(n)

    xi = data.y_delta - p.y_dag
    KFe = (A @ e) / sqrt_n
    KGe = (Gm @ e) / sqrt_n
    row_F = A @ e          # <a_i, e> per row
    row_G = Gm @ e
    w_G = (Gm @ p.x_dag) - p.y_dag - xi
    vF_vec, vF_row = -xi / sqrt_n, -xi
    vG_vec, vG_row = w_G / sqrt_n, w_G
    psi = G.left_vectors

    def project(v: np.ndarray) -> np.ndarray:
        return psi @ (psi.T @ v)

    rng = np.random.default_rng(seed + 1_000_003)
    draws = rng.integers(0, n, size=M)
    n1_sq = np.empty(M)
    n2_sq = np.empty(M)
    for m in range(M):
        i = int(draws[m])
        d_F = KFe.copy()
        d_F[i] -= sqrt_n * row_F[i]
        d_G = KGe.copy()
        d_G[i] -= sqrt_n * row_G[i]
        N1 = d_F + lam * project(d_G)
        t_F = vF_vec.copy()
        t_F[i] -= sqrt_n * vF_row[i]
        t_G = vG_vec.copy()
        t_G[i] -= sqrt_n * vG_row[i]
        N2 = t_F + lam * project(t_G)
        n1_sq[m] = N1 @ N1
        n2_sq[m] = N2 @ N2

    c_R = verify_assumption_v(p.op, G).c_R
    delta = rms_norm(xi)
    C_max = rms_norm((Gm @ p.x_dag) - p.y_dag)
    b_half_e_sq = float(KFe @ KFe)  # = ||B_F^(1/2) e||^2
    bound1 = n * (1.0 + c_R**2 * lam) ** 2 * b_half_e_sq
    bound2 = n * (c_R * lam * C_max + (1.0 + c_R * lam) * delta) ** 2

    def se(v: np.ndarray) -> float:
        return float(np.std(v, ddof=1) / math.sqrt(M)) if M > 1 else math.inf

    return NoiseMomentReport(
        k=k, M=M,
        est_N1_sq=float(np.mean(n1_sq)),
        est_N2_sq=float(np.mean(n2_sq)),
        bound_N1_sq=bound1,
        bound_N2_sq=bound2,
        se_N1_sq=se(n1_sq),
        se_N2_sq=se(n2_sq),
    )
