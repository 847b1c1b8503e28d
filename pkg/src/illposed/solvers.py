"""Iteration kernels: SGD and Landweber, each with a data-driven variant.

Four methods share two kernels.  The stochastic kernel (:func:`dsgd_run`)
draws one equation index per iteration and applies

    x_{k+1} = x_k - eta_k * ( F_i'(x_k)*(F_i(x_k) - y_i)
                              + lambda_k * G_i'(x_k)*(G_i(x_k) - y_i) )

where ``G`` is a surrogate operator (typically a truncated SVD of the forward
matrix) and ``lambda_k`` a decaying regularization weight.  With ``G`` absent
or ``lambda0 == 0`` the regularization term vanishes exactly and the kernel is
plain SGD, bit for bit.  The deterministic kernel (:func:`landweber_run`) is
the full-gradient analog (classical Landweber without ``G``).

Conventions
-----------
* iteration counter k is 1-based: the first update uses ``eta_1 = eta0``;
* one epoch is n stochastic iterations or one full-gradient iteration, so
  stochastic epochs are fractional (k/n);
* squared errors use the Euclidean solution-space norm, residuals the RMS
  data norm;
* all randomness comes from seeded ``numpy.random.default_rng`` generators;
  identical inputs and seeds reproduce trajectories bitwise (within one build).
"""

from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Tuple, Union

import numpy as np

from .operators import DataDrivenOp, Nonlinearity
from .problems import NoisyData, Problem, add_noise

__all__ = [
    "Schedule",
    "MaxEpochs",
    "APriori",
    "OracleBest",
    "StoppingRule",
    "RecordSpec",
    "Trajectory",
    "Ensemble",
    "DivergenceError",
    "eta_at",
    "lambda_at",
    "default_eta0",
    "paper_landweber_step",
    "dsgd_run",
    "landweber_run",
    "apriori_k_star",
    "run_ensemble",
]

_DIVERGE_NORM = 1e12


@dataclass(frozen=True)
class Schedule:
    """Polynomially decaying step and regularization sequences.

    ``eta_k = eta0 * k**(-alpha)`` and ``lambda_k = lambda0 * k**(-alpha_prime)``
    for 1-based iteration index k; both are positive/nonnegative and
    nonincreasing.
    """

    eta0: float
    alpha: float = 0.0
    lambda0: float = 0.0
    alpha_prime: float = 0.0

    def __post_init__(self) -> None:
        if self.eta0 <= 0:
            raise ValueError("eta0 must be positive")
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError("alpha must lie in [0, 1)")
        if self.lambda0 < 0:
            raise ValueError("lambda0 must be nonnegative")
        if self.alpha_prime < 0:
            raise ValueError("alpha_prime must be nonnegative")


def eta_at(s: Schedule, k: int) -> float:
    """Step size at 1-based iteration k."""
    if k < 1:
        raise ValueError("iteration index k starts at 1")
    return s.eta0 * k ** (-s.alpha)


def lambda_at(s: Schedule, k: int) -> float:
    """Regularization weight at 1-based iteration k."""
    if k < 1:
        raise ValueError("iteration index k starts at 1")
    return s.lambda0 * k ** (-s.alpha_prime)


def default_eta0(p: Problem, c0: float = 1.0) -> float:
    """Initial step size ``c0 / (2 max_i norm(row gradient)**2)``.

    Linear problems use the rows themselves (``max_i norm(a_i)**2``); squared
    problems use the row derivatives at the reference solution,
    ``norm(F_i'(x_dag)) = 2 |<a_i, x_dag>| norm(a_i)``.
    """
    if c0 <= 0:
        raise ValueError("c0 must be positive")
    row_norms = np.linalg.norm(p.op.A, axis=1)
    if p.op.nonlinearity is Nonlinearity.SQUARE:
        row_norms = 2.0 * np.abs(p.op.A @ p.x_dag) * row_norms
    m = float(np.max(row_norms))
    if m == 0.0:
        raise ValueError("all row gradients vanish; cannot scale the step size")
    return c0 / (2.0 * m * m)


def paper_landweber_step(p: Problem, c: float = 1.0) -> float:
    """Constant Landweber step ``c / ||J||_F**2`` on the stacked gradient.

    ``J`` is the Jacobian at the reference solution (the matrix itself for
    linear problems).  :func:`landweber_run` applies the *mean* gradient
    (which carries a 1/n factor), so the returned value is ``c * n /
    ||J||_F**2``.
    """
    if p.op.nonlinearity is Nonlinearity.SQUARE:
        J = 2.0 * (p.op.A @ p.x_dag)[:, None] * p.op.A
    else:
        J = p.op.A
    fro2 = float(np.sum(J * J))
    if fro2 == 0.0:
        raise ValueError("zero operator")
    return c * p.n / fro2


@dataclass(frozen=True)
class MaxEpochs:
    """Run for a fixed epoch budget; the final iterate is the last one."""

    limit: float

    def __post_init__(self) -> None:
        if self.limit < 1:
            raise ValueError("epoch limit must be at least 1")


@dataclass(frozen=True)
class APriori:
    """Run exactly ``k_star`` iterations (an a-priori stopping index)."""

    k_star: int

    def __post_init__(self) -> None:
        if self.k_star < 1:
            raise ValueError("k_star must be at least 1")


@dataclass(frozen=True)
class OracleBest:
    """Run for an epoch budget and return the best iterate seen.

    "Best" means smallest true squared error, which requires knowing the
    reference solution; this is an experimental device, not a practical rule.
    """

    max_epochs: float

    def __post_init__(self) -> None:
        if self.max_epochs < 1:
            raise ValueError("epoch budget must be at least 1")


StoppingRule = Union[MaxEpochs, APriori, OracleBest]


@dataclass(frozen=True)
class RecordSpec:
    """Snapshot granularity of a run.

    ``per_iteration`` records after every iteration (tiny problems only);
    otherwise snapshots land on every ``every_epochs``-th epoch boundary.
    ``keep_iterates`` additionally stores the iterate at each snapshot (needed
    for bias/variance statistics).  Best-error tracking is always per
    iteration regardless of granularity.
    """

    per_iteration: bool = False
    every_epochs: int = 1
    keep_iterates: bool = False

    def __post_init__(self) -> None:
        if self.every_epochs < 1:
            raise ValueError("every_epochs must be at least 1")


@dataclass(frozen=True)
class Trajectory:
    """One seeded solver run.

    Arrays are aligned: ``sq_error[j]`` is the squared Euclidean error at
    ``epochs[j]`` (fractional for stochastic runs), and the residual columns
    hold squared RMS data misfits of the forward/surrogate operators
    (``sq_residual_G`` is NaN when no surrogate was supplied).  ``best_*``
    track the minimum over *every* iteration, not just snapshots.
    """

    seed: int
    epochs: np.ndarray
    sq_error: np.ndarray
    sq_residual_F: np.ndarray
    sq_residual_G: np.ndarray
    iterates: Optional[np.ndarray]
    iterate_final: np.ndarray
    best_sq_error: float
    best_epoch: float
    iterations_run: int


@dataclass(frozen=True)
class Ensemble:
    """M independent trajectories plus their per-epoch mean statistics.

    ``mean_*[j]`` is the arithmetic mean over trials at snapshot j (a
    deterministic reduce in trial order).  ``mean_iterate`` is present when
    the trials kept iterate snapshots.
    """

    trials: Tuple[Trajectory, ...]
    epochs: np.ndarray
    mean_sq_error: np.ndarray
    mean_sq_residual_F: np.ndarray
    mean_sq_residual_G: np.ndarray
    mean_iterate: Optional[np.ndarray]

    @property
    def best(self) -> Tuple[float, float]:
        """(min over snapshots of the mean squared error, epoch of the min)."""
        j = int(np.argmin(self.mean_sq_error))
        return float(self.mean_sq_error[j]), float(self.epochs[j])


class DivergenceError(RuntimeError):
    """Iterate norm exceeded 1e12 or became non-finite."""

    def __init__(self, iteration: int, epoch: float, trial: Optional[int] = None):
        self.iteration = iteration
        self.epoch = epoch
        self.trial = trial
        where = f" (trial {trial})" if trial is not None else ""
        super().__init__(
            f"iterate diverged at iteration {iteration}, epoch {epoch:g}{where}"
        )


def _budget(stop: StoppingRule, n: int, stochastic: bool) -> Tuple[int, bool]:
    """Total iteration count and whether the final iterate is the best one."""
    per_epoch = n if stochastic else 1
    if isinstance(stop, MaxEpochs):
        return max(1, int(round(stop.limit * per_epoch))), False
    if isinstance(stop, OracleBest):
        return max(1, int(round(stop.max_epochs * per_epoch))), True
    if isinstance(stop, APriori):
        return stop.k_star, False
    raise TypeError(f"unknown stopping rule {stop!r}")


class _Recorder:
    """Accumulates snapshots and per-iteration best tracking for one run."""

    def __init__(
        self,
        p: Problem,
        yd: np.ndarray,
        Gm: Optional[np.ndarray],
        record: RecordSpec,
        n_per_epoch: int,
        oracle: bool,
    ):
        self._A = p.op.A
        self._square = p.op.nonlinearity is Nonlinearity.SQUARE
        self._yd = yd
        self._Gm = Gm
        self._spec = record
        self._n_per_epoch = n_per_epoch
        self._oracle = oracle
        self.epochs: List[float] = []
        self.sq_error: List[float] = []
        self.res_F: List[float] = []
        self.res_G: List[float] = []
        self.iterates: Optional[List[np.ndarray]] = [] if record.keep_iterates else None
        self.best_se = math.inf
        self.best_epoch = 0.0
        self.best_x: Optional[np.ndarray] = None

    def _sq_residuals(self, x: np.ndarray) -> Tuple[float, float]:
        t = self._A @ x
        fx = t * t if self._square else t
        r = fx - self._yd
        rF = float(np.mean(r * r))
        if self._Gm is None:
            return rF, math.nan
        tg = self._Gm @ x
        gx = tg * tg if self._square else tg
        rg = gx - self._yd
        return rF, float(np.mean(rg * rg))

    def wants(self, k: int) -> bool:
        """Is iteration k (0 = initial point) a snapshot time?"""
        if self._spec.per_iteration:
            return True
        return k % (self._n_per_epoch * self._spec.every_epochs) == 0

    def snapshot(self, k: int, x: np.ndarray, se: float) -> None:
        rF, rG = self._sq_residuals(x)
        self.epochs.append(k / self._n_per_epoch)
        self.sq_error.append(se)
        self.res_F.append(rF)
        self.res_G.append(rG)
        if self.iterates is not None:
            self.iterates.append(x.copy())

    def track_best(self, k: int, x: np.ndarray, se: float) -> None:
        if se < self.best_se:
            self.best_se = se
            self.best_epoch = k / self._n_per_epoch
            if self._oracle:
                self.best_x = x.copy()

    def finish(self, seed: int, x: np.ndarray, iterations: int) -> Trajectory:
        final = self.best_x if (self._oracle and self.best_x is not None) else x
        return Trajectory(
            seed=seed,
            epochs=np.asarray(self.epochs),
            sq_error=np.asarray(self.sq_error),
            sq_residual_F=np.asarray(self.res_F),
            sq_residual_G=np.asarray(self.res_G),
            iterates=np.asarray(self.iterates) if self.iterates is not None else None,
            iterate_final=final.copy(),
            best_sq_error=self.best_se,
            best_epoch=self.best_epoch,
            iterations_run=iterations,
        )


def _check_divergence(x: np.ndarray, k: int, epoch: float, trial: Optional[int]) -> None:
    if not np.all(np.isfinite(x)) or float(np.linalg.norm(x)) > _DIVERGE_NORM:
        raise DivergenceError(iteration=k, epoch=epoch, trial=trial)


def dsgd_run(
    p: Problem,
    data: NoisyData,
    G: Optional[DataDrivenOp] = None,
    *,
    schedule: Schedule,
    stop: StoppingRule,
    seed: int = 0,
    record: RecordSpec = RecordSpec(),
    x1: Optional[np.ndarray] = None,
    _trial: Optional[int] = None,
) -> Trajectory:
    """Stochastic run: one uniformly drawn equation per iteration.

    With ``G`` present and ``schedule.lambda0 > 0`` each step adds the
    surrogate's regularization term; otherwise the trajectory is plain SGD
    (bitwise identical whether ``G`` is supplied or not).  The initial guess
    defaults to zero.  Raises :class:`DivergenceError` when the iterate norm
    passes 1e12 or goes non-finite.
    """
    n = p.n
    A = p.op.A
    square = p.op.nonlinearity is Nonlinearity.SQUARE
    yd = data.y_delta
    if yd.shape != (n,):
        raise ValueError("data size does not match the problem")
    Gm = G.matrix if G is not None else None
    if Gm is not None and Gm.shape != (n, n):
        raise ValueError("surrogate size does not match the problem")
    use_g = Gm is not None and schedule.lambda0 > 0.0
    x = np.zeros(n) if x1 is None else np.array(x1, dtype=float)
    if x.shape != (n,):
        raise ValueError(f"x1 has shape {x.shape}, expected ({n},)")
    xdag = p.x_dag
    eta0, alpha = schedule.eta0, schedule.alpha
    lam0, alpha_p = schedule.lambda0, schedule.alpha_prime

    total, oracle = _budget(stop, n, stochastic=True)
    rec = _Recorder(p, yd, Gm, record, n_per_epoch=n, oracle=oracle)

    e = x - xdag
    se = float(e @ e)
    rec.track_best(0, x, se)
    if rec.wants(0):
        rec.snapshot(0, x, se)

    rng = np.random.default_rng(seed)
    ebuf = np.empty(n)
    chunk = 8192
    k = 0
    while k < total:
        m = min(chunk, total - k)
        idx = rng.integers(0, n, size=m)
        for j in range(m):
            i = idx[j]
            k += 1
            eta = eta0 if alpha == 0.0 else eta0 * k ** (-alpha)
            a = A[i]
            t = a @ x
            if square:
                c1 = 2.0 * t * (t * t - yd[i])
            else:
                c1 = t - yd[i]
            if use_g:
                g = Gm[i]
                tg = g @ x
                if square:
                    c2 = 2.0 * tg * (tg * tg - yd[i])
                else:
                    c2 = tg - yd[i]
                lam = lam0 if alpha_p == 0.0 else lam0 * k ** (-alpha_p)
                x -= eta * (c1 * a + (lam * c2) * g)
            else:
                x -= (eta * c1) * a
            np.subtract(x, xdag, out=ebuf)
            se = float(ebuf @ ebuf)
            if not se <= 1e24:
                _check_divergence(x, k, k / n, _trial)
            rec.track_best(k, x, se)
            if rec.wants(k):
                rec.snapshot(k, x, se)
    if not rec.wants(total):
        rec.snapshot(total, x, se)
    return rec.finish(seed, x, total)


def landweber_run(
    p: Problem,
    data: NoisyData,
    G: Optional[DataDrivenOp] = None,
    *,
    step_size: Union[float, Schedule],
    lam: Optional[Schedule] = None,
    stop: StoppingRule,
    record: RecordSpec = RecordSpec(),
    x1: Optional[np.ndarray] = None,
    _trial: Optional[int] = None,
) -> Trajectory:
    """Deterministic full-gradient run (one iteration = one epoch).

    Each step applies the mean gradient (RMS scaling, 1/n factor) of the
    forward misfit plus, when ``G`` is present with a positive weight, the
    surrogate misfit:

        x_{k+1} = x_k - eta_k * ( F'(x_k)*(F(x_k) - y)/n
                                  + lambda_k * G'(x_k)*(G(x_k) - y)/n ).

    ``step_size`` may be a constant or a :class:`Schedule` (its eta fields).
    The regularization weights come from ``lam`` when given, else from
    ``step_size`` when that is a Schedule, else zero.  Without ``G`` (or with
    zero weight) this is the classical Landweber iteration.
    """
    n = p.n
    A = p.op.A
    square = p.op.nonlinearity is Nonlinearity.SQUARE
    yd = data.y_delta
    if yd.shape != (n,):
        raise ValueError("data size does not match the problem")
    Gm = G.matrix if G is not None else None
    if isinstance(step_size, Schedule):
        eta0, alpha = step_size.eta0, step_size.alpha
        if lam is None:
            lam = step_size
    else:
        eta0, alpha = float(step_size), 0.0
        if eta0 <= 0:
            raise ValueError("step_size must be positive")
    lam0 = lam.lambda0 if lam is not None else 0.0
    alpha_p = lam.alpha_prime if lam is not None else 0.0
    use_g = Gm is not None and lam0 > 0.0

    x = np.zeros(n) if x1 is None else np.array(x1, dtype=float)
    if x.shape != (n,):
        raise ValueError(f"x1 has shape {x.shape}, expected ({n},)")
    xdag = p.x_dag

    total, oracle = _budget(stop, n, stochastic=False)
    rec = _Recorder(p, yd, Gm, record, n_per_epoch=1, oracle=oracle)

    se = float(np.sum((x - xdag) ** 2))
    rec.track_best(0, x, se)
    if rec.wants(0):
        rec.snapshot(0, x, se)

    for k in range(1, total + 1):
        eta = eta0 if alpha == 0.0 else eta0 * k ** (-alpha)
        t = A @ x
        resid = 2.0 * t * (t * t - yd) if square else t - yd
        grad = (A.T @ resid) / n
        if use_g:
            tg = Gm @ x
            residg = 2.0 * tg * (tg * tg - yd) if square else tg - yd
            lamk = lam0 if alpha_p == 0.0 else lam0 * k ** (-alpha_p)
            grad = grad + (lamk / n) * (Gm.T @ residg)
        x -= eta * grad
        d = x - xdag
        se = float(d @ d)
        if not se <= 1e24:
            _check_divergence(x, k, float(k), _trial)
        rec.track_best(k, x, se)
        if rec.wants(k):
            rec.snapshot(k, x, se)
    if not rec.wants(total):
        rec.snapshot(total, x, se)
    return rec.finish(0, x, total)


def apriori_k_star(
    delta: float,
    w_norm: float,
    nu: float,
    alpha: float,
    epsilon: float,
) -> int:
    """A-priori stopping index from the noise level and source strength.

    Computes ``floor((delta/w_norm) ** (-2 / (min((1+2*nu)*(1-alpha), 1) +
    epsilon)))``, clamped below at 1 (with a warning).  The floor is taken
    after a 1e-9 relative upward nudge so that arguments whose exact value is
    an integer (e.g. delta/w_norm = 1e-2 with exponent -2) are not knocked
    down by floating-point rounding.
    """
    if delta <= 0 or w_norm <= 0:
        raise ValueError("delta and w_norm must be positive")
    if not 0.0 < nu < 0.5:
        raise ValueError("nu must lie in (0, 1/2)")
    if not 0.0 <= alpha < 1.0:
        raise ValueError("alpha must lie in [0, 1)")
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    expo = min((1.0 + 2.0 * nu) * (1.0 - alpha), 1.0) + epsilon
    log_v = (-2.0 / expo) * math.log(delta / w_norm)
    if log_v > math.log(1e18):
        raise ValueError("stopping index exceeds 1e18; refusing to compute")
    v = (delta / w_norm) ** (-2.0 / expo)
    k = math.floor(v * (1.0 + 1e-9))
    if k < 1:
        warnings.warn("a-priori stopping index clamped to 1", stacklevel=2)
        return 1
    return k


def _thread_count(threads: Optional[int]) -> int:
    if threads is not None:
        return max(1, threads)
    env = os.environ.get("ILLPOSED_THREADS", "").strip()
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ValueError(f"ILLPOSED_THREADS must be an integer, got {env!r}") from exc
    return os.cpu_count() or 1


def run_ensemble(
    p: Problem,
    data_or_delta0: Union[NoisyData, float],
    *,
    method: str = "sgd",
    G: Optional[DataDrivenOp] = None,
    schedule: Schedule,
    stop: StoppingRule,
    M: int = 10,
    base_seed: int = 0,
    redraw_noise: bool = False,
    record: RecordSpec = RecordSpec(),
    x1: Optional[np.ndarray] = None,
    step_size: Optional[Union[float, Schedule]] = None,
    threads: Optional[int] = None,
) -> Ensemble:
    """Run M independent trials and aggregate per-epoch mean statistics.

    Trial m draws its equation indices with seed ``base_seed + m``.  Noise is
    shared across trials by default: either the :class:`NoisyData` passed in,
    or one realization generated with seed ``base_seed + 1_000_000`` when a
    noise level is passed.  With ``redraw_noise=True`` trial m instead gets
    its own realization (seed ``base_seed + 1_000_000 + m``).

    ``method`` is one of ``sgd``/``dsgd`` (stochastic kernel) or ``lm``/``dlm``
    (full-gradient kernel; ``step_size`` defaults to
    :func:`paper_landweber_step`).  The data-driven variants require ``G``.
    Trials may run on a thread pool (capped by ``threads`` or the
    ILLPOSED_THREADS environment variable); aggregation is a sequential
    reduce in trial order, so results do not depend on the pool size.
    """
    if M < 1:
        raise ValueError("M must be at least 1")
    method = method.lower()
    if method not in ("sgd", "dsgd", "lm", "dlm"):
        raise ValueError(f"unknown method {method!r}")
    if method in ("dsgd", "dlm") and G is None:
        raise ValueError(f"method {method!r} requires a data-driven operator G")
    stochastic = method in ("sgd", "dsgd")
    G_used = G if method in ("dsgd", "dlm") else None

    if isinstance(data_or_delta0, NoisyData):
        shared: Optional[NoisyData] = data_or_delta0
        delta0 = data_or_delta0.delta0
    else:
        delta0 = float(data_or_delta0)
        shared = None if redraw_noise else add_noise(p, delta0, base_seed + 1_000_000)

    def data_for(m: int) -> NoisyData:
        if redraw_noise:
            return add_noise(p, delta0, base_seed + 1_000_000 + m)
        assert shared is not None
        return shared

    def one(m: int) -> Trajectory:
        if stochastic:
            return dsgd_run(
                p, data_for(m), G_used, schedule=schedule, stop=stop,
                seed=base_seed + m, record=record, x1=x1, _trial=m,
            )
        step = step_size if step_size is not None else paper_landweber_step(p)
        return landweber_run(
            p, data_for(m), G_used, step_size=step, lam=schedule, stop=stop,
            record=record, x1=x1, _trial=m,
        )

    if not stochastic and not redraw_noise:
        trials = (one(0),) * M  # deterministic kernel, shared data: all identical
    elif _thread_count(threads) > 1 and M > 1:
        with ThreadPoolExecutor(max_workers=_thread_count(threads)) as ex:
            trials = tuple(ex.map(one, range(M)))
    else:
        trials = tuple(one(m) for m in range(M))

    epochs = trials[0].epochs
    for t in trials[1:]:
        if t.epochs.shape != epochs.shape or not np.array_equal(t.epochs, epochs):
            raise RuntimeError("trial snapshot grids diverged; cannot aggregate")

    def mean_of(attr: str) -> np.ndarray:
        acc = np.zeros_like(getattr(trials[0], attr))
        for t in trials:
            acc += getattr(t, attr)
        return acc / M

    mean_iterate = None
    if record.keep_iterates:
        acc = np.zeros_like(trials[0].iterates)
        for t in trials:
            acc += t.iterates
        mean_iterate = acc / M

    return Ensemble(
        trials=trials,
        epochs=epochs.copy(),
        mean_sq_error=mean_of("sq_error"),
        mean_sq_residual_F=mean_of("sq_residual_F"),
        mean_sq_residual_G=mean_of("sq_residual_G"),
        mean_iterate=mean_iterate,
    )
