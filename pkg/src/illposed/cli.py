"""Command-line interface: ``run``, ``table``, ``verify``, ``problems``.

The CLI is a thin orchestration layer over the library.  It owns all I/O:
configuration parsing (flags plus an optional ``key=value`` config file,
flags winning), CSV emission with deterministic formatting, and PNG figure
rendering next to each CSV.

Exit codes: 0 success, 1 usage/configuration error, 2 divergence during a
run, 3 verification-suite failure.  The ILLPOSED_THREADS environment
variable caps the trial worker pool (default: logical cores).
"""

from __future__ import annotations

import argparse
import math
import os
import sys
import time
from dataclasses import dataclass, fields, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .figures import save_spectrum_figure, save_table_figure, save_trajectory_figure
from .operators import DataDrivenOp, Nonlinearity, truncate_svd
from .problems import (
    Problem,
    add_noise,
    make_gravity,
    make_phillips,
    make_shaw,
    squared_variant,
)
from .solvers import (
    DivergenceError,
    Ensemble,
    MaxEpochs,
    RecordSpec,
    Schedule,
    default_eta0,
    paper_landweber_step,
    run_ensemble,
)
from .verify import SUITES, run_suite

__all__ = [
    "EXIT_OK",
    "EXIT_USAGE",
    "EXIT_DIVERGED",
    "EXIT_VERIFY",
    "TRAJECTORY_HEADER",
    "ExperimentConfig",
    "ResultRow",
    "UsageError",
    "build_problem",
    "cmd_run",
    "cmd_table",
    "cmd_verify",
    "cmd_problems",
    "main",
]

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DIVERGED = 2
EXIT_VERIFY = 3

TRAJECTORY_HEADER = (
    "epoch,mean_sq_error,mean_sq_residual_F,mean_sq_residual_G,bias_sq,variance"
)

PROBLEMS = ("phillips", "gravity", "shaw", "squared-phillips", "squared-shaw")
METHODS = ("lm", "dlm", "sgd", "dsgd")

_TABLE_DELTA0S = (1e-3, 5e-3, 1e-2, 5e-2)
_TABLE_ALPHAS = (0.0, 0.1, 0.3)

# keep_iterates memory ceiling (bytes) before bias/variance columns degrade to nan
_ITERATE_BYTES_CAP = 2e8


class UsageError(Exception):
    """Invalid configuration; maps to exit code 1 with the offending field named."""


class _Parser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors exit with code 1 (not argparse's 2)."""

    def error(self, message):  # noqa: A003 - argparse API
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: problem, method, schedule, and execution settings.

    ``None`` fields are resolved by :func:`finalize_config`: ``n`` and
    ``max_epochs`` from desk/paper scale, ``lambda0`` to 1 for the
    data-driven methods and 0 otherwise, ``output`` to a derived file name.
    """

    problem: str = "phillips"
    n: Optional[int] = None
    delta0: float = 1e-2
    method: str = "sgd"
    c0: float = 1.0
    alpha: float = 0.0
    alpha_prime: float = 0.0
    lambda0: Optional[float] = None
    rank: int = 0
    trials: int = 10
    max_epochs: Optional[float] = None
    base_seed: int = 0
    record: str = "epoch"  # "epoch" or "iteration"
    every: int = 1
    output: Optional[str] = None


@dataclass(frozen=True)
class ResultRow:
    """Summary of one ensemble run.

    ``best_error`` is the smallest mean squared error along the trial-averaged
    trajectory and ``best_epoch`` the (possibly fractional) epoch where it is
    attained; ``final_error`` is the mean squared error at the last recorded
    epoch.
    """

    config: ExperimentConfig
    best_error: float
    best_epoch: float
    final_error: float
    diverged: bool
    wall_time: float
    csv_path: Optional[str] = None
    figure_path: Optional[str] = None


_CONFIG_TYPES = {
    "problem": str,
    "n": int,
    "delta0": float,
    "method": str,
    "c0": float,
    "alpha": float,
    "alpha_prime": float,
    "lambda0": float,
    "rank": int,
    "trials": int,
    "max_epochs": float,
    "base_seed": int,
    "record": str,
    "every": int,
    "output": str,
}


def load_config_file(path: str) -> Dict[str, object]:
    """Parse a ``key=value`` config file (one pair per line, ``#`` comments)."""
    values: Dict[str, object] = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path!r}: {exc}") from exc
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if not sep or not key:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {raw.strip()!r}")
        if key not in _CONFIG_TYPES:
            raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
        try:
            values[key] = _CONFIG_TYPES[key](val)
        except ValueError as exc:
            raise UsageError(f"{path}:{lineno}: bad value for {key}: {val!r}") from exc
    return values


def finalize_config(cfg: ExperimentConfig, paper_scale: bool = False) -> ExperimentConfig:
    """Resolve the None fields to concrete desk- or paper-scale values."""
    n = cfg.n if cfg.n is not None else (1000 if paper_scale else 200)
    if cfg.max_epochs is not None:
        max_epochs = cfg.max_epochs
    elif paper_scale:
        max_epochs = 1e6 if cfg.method in ("lm", "dlm") else 1e5
    else:
        max_epochs = 2000.0
    if cfg.lambda0 is not None:
        lambda0 = cfg.lambda0
    else:
        lambda0 = 1.0 if cfg.method in ("dsgd", "dlm") else 0.0
    output = cfg.output if cfg.output is not None else f"illposed_{cfg.problem}_{cfg.method}.csv"
    return replace(cfg, n=n, max_epochs=max_epochs, lambda0=lambda0, output=output)


def validate_config(cfg: ExperimentConfig) -> None:
    """Raise :class:`UsageError` naming the first offending field."""
    if cfg.problem not in PROBLEMS:
        raise UsageError(f"problem: unknown problem {cfg.problem!r}; choose from {', '.join(PROBLEMS)}")
    if cfg.method not in METHODS:
        raise UsageError(f"method: unknown method {cfg.method!r}; choose from {', '.join(METHODS)}")
    if cfg.n is None or cfg.n < 2:
        raise UsageError("n: need n >= 2")
    if cfg.delta0 < 0:
        raise UsageError("delta0: relative noise level must be nonnegative")
    if cfg.c0 <= 0:
        raise UsageError("c0: step-size constant must be positive")
    if not 0.0 <= cfg.alpha < 1.0:
        raise UsageError("alpha: step-decay exponent must lie in [0, 1)")
    if not 0.0 <= cfg.alpha_prime < 1.0:
        raise UsageError("alpha_prime: weight-decay exponent must lie in [0, 1)")
    if cfg.lambda0 is None or cfg.lambda0 < 0:
        raise UsageError("lambda0: regularization weight must be nonnegative")
    if cfg.rank < 0:
        raise UsageError("rank: must be nonnegative")
    if cfg.method in ("dsgd", "dlm") and cfg.rank < 1:
        raise UsageError(f"rank: method {cfg.method} requires a data-driven rank N >= 1 (--rank)")
    if cfg.method in ("lm", "sgd") and cfg.lambda0 != 0.0:
        raise UsageError(f"lambda0: method {cfg.method} forces lambda0 = 0")
    if cfg.trials < 1:
        raise UsageError("trials: need at least 1 trial")
    if cfg.max_epochs is None or cfg.max_epochs <= 0:
        raise UsageError("max_epochs: must be positive")
    if cfg.record not in ("epoch", "iteration"):
        raise UsageError(f"record: unknown granularity {cfg.record!r}; choose epoch or iteration")
    if cfg.every < 1:
        raise UsageError("every: snapshot stride must be >= 1")


def build_problem(name: str, n: int) -> Problem:
    """Instantiate a benchmark problem (or its squared variant) by name."""
    base = name[len("squared-"):] if name.startswith("squared-") else name
    makers = {"phillips": make_phillips, "gravity": make_gravity, "shaw": make_shaw}
    if base not in makers:
        raise UsageError(f"problem: unknown problem {name!r}")
    p = makers[base](n)
    return squared_variant(p) if name.startswith("squared-") else p


# ---------------------------------------------------------------------------
# CSV helpers
# ---------------------------------------------------------------------------


def _fmt(v: object) -> str:
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))  # shortest round-trip decimal


def write_csv(path: str, header: Sequence[str], rows: Sequence[Sequence[object]]) -> str:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(c) for c in row) + "\n")
    return path


def _figure_path(csv_path: str) -> str:
    stem, ext = os.path.splitext(csv_path)
    return (stem if ext else csv_path) + ".png"


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------


def _schedule_for(p: Problem, cfg: ExperimentConfig) -> Tuple[Schedule, Optional[Schedule]]:
    """(schedule, step_size) pair: stochastic methods scale by the worst row,
    full-gradient methods use the classical ``c0 * n / ||J||_F**2`` step."""
    if cfg.method in ("sgd", "dsgd"):
        sched = Schedule(
            eta0=default_eta0(p, cfg.c0), alpha=cfg.alpha,
            lambda0=cfg.lambda0, alpha_prime=cfg.alpha_prime,
        )
        return sched, None
    sched = Schedule(
        eta0=paper_landweber_step(p, cfg.c0), alpha=cfg.alpha,
        lambda0=cfg.lambda0, alpha_prime=cfg.alpha_prime,
    )
    return sched, sched


def _bias_variance_columns(
    ens: Ensemble, x_dag: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """Per-snapshot bias^2 and variance columns (nan when iterates not kept)."""
    if any(t.iterates is None for t in ens.trials):
        nan = np.full(ens.epochs.size, np.nan)
        return nan, nan.copy()
    X = np.stack([t.iterates for t in ens.trials])  # (M, snapshots, n)
    xbar = X.mean(axis=0)
    bias = np.sum((xbar - x_dag) ** 2, axis=1)
    var = np.mean(np.sum((X - xbar) ** 2, axis=2), axis=0)
    return bias, var


def cmd_run(
    cfg: ExperimentConfig,
    *,
    paper_scale: bool = False,
    figure: bool = True,
    iterates: bool = True,
    redraw_noise: bool = False,
    threads: Optional[int] = None,
    echo=print,
) -> ResultRow:
    """Execute one ensemble experiment; write the trajectory CSV (+ figure).

    Prints a ``key=value`` summary row.  On divergence the row carries
    ``diverged=true`` and no CSV is written (callers map this to exit 2).
    """
    cfg = finalize_config(cfg, paper_scale)
    validate_config(cfg)
    t0 = time.perf_counter()
    p = build_problem(cfg.problem, cfg.n)
    G = (
        truncate_svd(p.op.A, min(cfg.rank, p.n), p.op.nonlinearity)
        if cfg.method in ("dsgd", "dlm")
        else None
    )
    sched, step = _schedule_for(p, cfg)
    stochastic = cfg.method in ("sgd", "dsgd")
    per_epoch = p.n if stochastic else 1
    snapshots = (
        int(cfg.max_epochs * per_epoch) + 2
        if cfg.record == "iteration"
        else int(cfg.max_epochs / cfg.every) + 2
    )
    keep = iterates and snapshots * cfg.trials * p.n * 8 <= _ITERATE_BYTES_CAP
    record = RecordSpec(
        per_iteration=cfg.record == "iteration",
        every_epochs=cfg.every,
        keep_iterates=keep,
    )
    try:
        ens = run_ensemble(
            p,
            cfg.delta0,
            method=cfg.method,
            G=G,
            schedule=sched,
            stop=MaxEpochs(cfg.max_epochs),
            M=cfg.trials,
            base_seed=cfg.base_seed,
            redraw_noise=redraw_noise,
            record=record,
            step_size=step,
            threads=threads,
        )
    except DivergenceError as exc:
        row = ResultRow(cfg, math.inf, math.inf, math.inf, True,
                        time.perf_counter() - t0)
        echo(_row_line(row) + f" divergence_iteration={exc.iteration} divergence_epoch={_fmt(exc.epoch)}")
        return row

    best_sq, best_epoch = ens.best
    bias, var = _bias_variance_columns(ens, p.x_dag)
    csv_rows = [
        [ens.epochs[i], ens.mean_sq_error[i], ens.mean_sq_residual_F[i],
         ens.mean_sq_residual_G[i], bias[i], var[i]]
        for i in range(ens.epochs.size)
    ]
    csv_path = write_csv(cfg.output, TRAJECTORY_HEADER.split(","), csv_rows)
    fig_path = None
    if figure:
        fig_path = save_trajectory_figure(
            _figure_path(csv_path),
            ens.epochs,
            {
                "mean_sq_error": ens.mean_sq_error,
                "mean_sq_residual_F": ens.mean_sq_residual_F,
                "mean_sq_residual_G": ens.mean_sq_residual_G,
                "bias_sq": bias,
                "variance": var,
            },
            title=(
                f"{cfg.problem} {cfg.method} n={cfg.n} delta0={cfg.delta0:g} "
                f"alpha={cfg.alpha:g} alpha'={cfg.alpha_prime:g} lambda0={cfg.lambda0:g}"
            ),
        )
    row = ResultRow(
        config=cfg,
        best_error=best_sq,
        best_epoch=best_epoch,
        final_error=float(ens.mean_sq_error[-1]),
        diverged=False,
        wall_time=time.perf_counter() - t0,
        csv_path=csv_path,
        figure_path=fig_path,
    )
    echo(_row_line(row))
    return row


def _row_line(row: ResultRow) -> str:
    parts = ["run"]
    for f in fields(ExperimentConfig):
        parts.append(f"{f.name}={getattr(row.config, f.name)}")
    parts += [
        f"best_error={_fmt(row.best_error)}",
        f"best_epoch={_fmt(row.best_epoch)}",
        f"final_error={_fmt(row.final_error)}",
        f"diverged={'true' if row.diverged else 'false'}",
        f"wall_time={row.wall_time:.3f}",
    ]
    if row.csv_path:
        parts.append(f"csv={row.csv_path}")
    if row.figure_path:
        parts.append(f"figure={row.figure_path}")
    return " ".join(parts)


# ---------------------------------------------------------------------------
# table
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _Variant:
    label: str
    method: str
    c0: float
    alpha_prime: float = 0.0
    lambda0: float = 0.0
    rank: int = 0


@dataclass(frozen=True)
class _TablePreset:
    problem: str
    variants: Tuple[_Variant, ...]


def _table_presets() -> Dict[int, _TablePreset]:
    def dsgd(label: str, c0: float, rank: int, ap: float = 0.0) -> _Variant:
        return _Variant(label, "dsgd", c0, alpha_prime=ap, lambda0=1.0, rank=rank)

    def sgd(c0: float) -> _Variant:
        return _Variant("sgd", "sgd", c0)

    def lm() -> _Variant:
        return _Variant("lm", "lm", 1.0)

    sweep_ap = (0.0, 0.1, 0.3, 0.5)
    sweep_rank = (3, 5, 10, 1000)
    return {
        1: _TablePreset("phillips", (dsgd("dsgd", 1.0, 10), sgd(1.0), lm())),
        2: _TablePreset("gravity", (dsgd("dsgd", 1.0, 10), sgd(1.0), lm())),
        3: _TablePreset("shaw", (dsgd("dsgd", 2.0, 6), sgd(2.0), lm())),
        4: _TablePreset(
            "phillips",
            tuple(dsgd(f"dsgd_ap{a:g}", 1.0, 10, a) for a in sweep_ap) + (sgd(1.0),),
        ),
        5: _TablePreset(
            "gravity",
            tuple(dsgd(f"dsgd_ap{a:g}", 1.0, 10, a) for a in sweep_ap) + (sgd(1.0),),
        ),
        6: _TablePreset(
            "shaw",
            tuple(dsgd(f"dsgd_ap{a:g}", 2.0, 6, a) for a in sweep_ap) + (sgd(2.0),),
        ),
        7: _TablePreset(
            "phillips",
            tuple(dsgd(f"dsgd_N{r}", 1.0, r) for r in sweep_rank) + (sgd(1.0),),
        ),
        8: _TablePreset(
            "gravity",
            tuple(dsgd(f"dsgd_N{r}", 1.0, r) for r in sweep_rank) + (sgd(1.0),),
        ),
    }


def _table_cell(
    p: Problem,
    data,
    v: _Variant,
    alpha: float,
    trials: int,
    seed: int,
    epochs: float,
    lm_epochs: float,
    g_cache: Dict[int, DataDrivenOp],
    threads: Optional[int],
) -> Tuple[float, float]:
    """Best (error norm, epoch) of one table cell; (inf, inf) on divergence."""
    stochastic = v.method in ("sgd", "dsgd")
    G = None
    if v.method in ("dsgd", "dlm"):
        r = min(v.rank, p.n)
        if r not in g_cache:
            g_cache[r] = truncate_svd(p.op.A, r, p.op.nonlinearity)
        G = g_cache[r]
    if stochastic:
        sched = Schedule(eta0=default_eta0(p, v.c0), alpha=alpha,
                         lambda0=v.lambda0, alpha_prime=v.alpha_prime)
        step: Optional[Schedule] = None
        stop = MaxEpochs(epochs)
    else:
        sched = Schedule(eta0=paper_landweber_step(p, v.c0), alpha=alpha,
                         lambda0=v.lambda0, alpha_prime=v.alpha_prime)
        step = sched
        stop = MaxEpochs(lm_epochs)
    try:
        ens = run_ensemble(
            p, data, method=v.method, G=G, schedule=sched, stop=stop,
            M=trials, base_seed=seed, record=RecordSpec(), step_size=step,
            threads=threads,
        )
    except DivergenceError:
        return math.inf, math.inf
    best_sq, best_epoch = ens.best
    return best_sq, best_epoch


def cmd_table(
    table_id: int,
    n: Optional[int] = None,
    trials: int = 10,
    seed: int = 0,
    *,
    out: Optional[str] = None,
    epochs: Optional[float] = None,
    lm_epochs: Optional[float] = None,
    paper_scale: bool = False,
    figure: bool = True,
    threads: Optional[int] = None,
    echo=print,
) -> str:
    """Reproduce one benchmark table as a CSV (and a grouped-bar figure).

    Rows iterate delta0 in {1e-3, 5e-3, 1e-2, 5e-2} (outer) and alpha in
    {0, 0.1, 0.3} (inner); columns are delta0, alpha, then (err, epoch) per
    method variant, then the ``excluded`` flag.  Full-gradient cells exist
    only on alpha=0 rows (empty cells elsewhere).  Noise is drawn once per
    delta0 (seed ``seed + 1_000_000 + index``) and shared across the row's
    methods; trial m uses index seed ``seed + m``.
    """
    presets = _table_presets()
    if table_id not in presets:
        raise UsageError(f"table_id: unknown table id {table_id!r}; choose 1..8")
    if trials < 1:
        raise UsageError("trials: need at least 1 trial")
    pre = presets[table_id]
    n = n if n is not None else (1000 if paper_scale else 200)
    if n < 2:
        raise UsageError("n: need n >= 2")
    epochs = epochs if epochs is not None else (1e5 if paper_scale else 300.0)
    lm_epochs = lm_epochs if lm_epochs is not None else (1e6 if paper_scale else 5000.0)
    out = out if out is not None else f"table{table_id}.csv"

    p = build_problem(pre.problem, n)
    g_cache: Dict[int, DataDrivenOp] = {}
    header = ["delta0", "alpha"]
    for v in pre.variants:
        header += [f"err_{v.label}", f"epoch_{v.label}"]
    header.append("excluded")

    rows: List[List[object]] = []
    row_labels: List[str] = []
    method_errors: Dict[str, List[float]] = {v.label: [] for v in pre.variants}

    for di, delta0 in enumerate(_TABLE_DELTA0S):
        data = add_noise(p, delta0, seed + 1_000_000 + di)
        for alpha in _TABLE_ALPHAS:
            excluded = pre.problem == "shaw" and delta0 == 1e-3 and alpha == 0.3
            cells: List[object] = []
            for v in pre.variants:
                if v.method in ("lm", "dlm") and alpha != 0.0:
                    cells += [None, None]
                    method_errors[v.label].append(math.nan)
                    continue
                err, ep = _table_cell(
                    p, data, v, alpha, trials, seed, epochs, lm_epochs,
                    g_cache, threads,
                )
                cells += [err, ep]
                method_errors[v.label].append(err)
            rows.append([delta0, alpha, *cells, "true" if excluded else "false"])
            row_labels.append(f"d0={delta0:g} a={alpha:g}")

    csv_path = write_csv(out, header, rows)
    fig_path = None
    if figure:
        fig_path = save_table_figure(
            _figure_path(csv_path), row_labels, method_errors,
            title=f"table {table_id}: {pre.problem} n={n} trials={trials}",
        )
    echo(
        f"table id={table_id} problem={pre.problem} n={n} trials={trials} "
        f"seed={seed} rows={len(rows)} csv={csv_path}"
        + (f" figure={fig_path}" if fig_path else "")
    )
    return csv_path


# ---------------------------------------------------------------------------
# verify / problems
# ---------------------------------------------------------------------------


def cmd_verify(suite: str, seed: int = 0, echo=print) -> int:
    """Run a verification suite; return 0 when green, EXIT_VERIFY otherwise."""
    try:
        result = run_suite(suite, seed, echo)
    except ValueError as exc:
        raise UsageError(f"suite: {exc}") from exc
    return EXIT_OK if result.ok else EXIT_VERIFY


def cmd_problems(n: int = 200, figure_dir: Optional[str] = None, echo=print) -> int:
    """List the benchmark generators with their (Jacobian) spectra."""
    if n < 2:
        raise UsageError("n: need n >= 2")
    for name in PROBLEMS:
        p = build_problem(name, n)
        if p.op.nonlinearity is Nonlinearity.SQUARE:
            J = 2.0 * (p.op.A @ p.x_dag)[:, None] * p.op.A
        else:
            J = p.op.A
        sig = np.linalg.svd(J, compute_uv=False)
        smin = float(sig[-1])
        cond = float(sig[0]) / smin if smin > 0 else math.inf
        echo(
            f"problem={name} n={n} kind={p.op.nonlinearity.value} "
            f"sigma_max={float(sig[0]):.6e} sigma_min={smin:.6e} "
            f"condition={cond:.6e}"
        )
        if figure_dir:
            os.makedirs(figure_dir, exist_ok=True)
            fig = os.path.join(figure_dir, f"{name.replace('-', '_')}_spectrum.png")
            save_spectrum_figure(fig, name, sig)
            echo(f"figure problem={name} path={fig}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _add_run_parser(sub) -> None:
    rp = sub.add_parser("run", help="run one ensemble experiment and write its trajectory CSV")
    rp.add_argument("--config", help="key=value config file; flags override it")
    rp.add_argument("--problem", choices=PROBLEMS)
    rp.add_argument("--n", type=int)
    rp.add_argument("--delta0", type=float)
    rp.add_argument("--method", choices=METHODS)
    rp.add_argument("--c0", type=float)
    rp.add_argument("--alpha", type=float)
    rp.add_argument("--alpha-prime", type=float, dest="alpha_prime")
    rp.add_argument("--lambda0", type=float)
    rp.add_argument("--rank", type=int, help="data-driven rank N (0 = none)")
    rp.add_argument("--trials", type=int, help="ensemble size M")
    rp.add_argument("--max-epochs", type=float, dest="max_epochs")
    rp.add_argument("--seed", type=int, dest="base_seed")
    rp.add_argument("--record", choices=("epoch", "iteration"))
    rp.add_argument("--every", type=int, help="snapshot stride in epochs")
    rp.add_argument("-o", "--output", help="trajectory CSV path")
    rp.add_argument("--paper-scale", action="store_true",
                    help="n=1000 defaults with 1e6 (full-gradient) / 1e5 (stochastic) epoch limits")
    rp.add_argument("--redraw-noise", action="store_true",
                    help="fresh noise per trial instead of one shared realization")
    rp.add_argument("--no-figure", action="store_true", help="skip PNG rendering")
    rp.add_argument("--no-iterates", action="store_true",
                    help="never keep per-trial iterates (bias/variance columns become nan)")
    rp.set_defaults(func=_handle_run)


def _handle_run(args) -> int:
    file_values = load_config_file(args.config) if args.config else {}
    merged: Dict[str, object] = dict(file_values)
    for f in fields(ExperimentConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            merged[f.name] = v
    cfg = ExperimentConfig(**merged)
    row = cmd_run(
        cfg,
        paper_scale=args.paper_scale,
        figure=not args.no_figure,
        iterates=not args.no_iterates,
        redraw_noise=args.redraw_noise,
    )
    return EXIT_DIVERGED if row.diverged else EXIT_OK


def _add_table_parser(sub) -> None:
    tp = sub.add_parser("table", help="reproduce a benchmark table as CSV")
    tp.add_argument("table_id", type=int, help="table number, 1-8")
    tp.add_argument("--n", type=int)
    tp.add_argument("--trials", type=int, default=10)
    tp.add_argument("--seed", type=int, default=0)
    tp.add_argument("--out", help="output CSV path (default table<id>.csv)")
    tp.add_argument("--epochs", type=float, help="stochastic epoch budget per cell")
    tp.add_argument("--lm-epochs", type=float, dest="lm_epochs",
                    help="full-gradient epoch budget per cell")
    tp.add_argument("--paper-scale", action="store_true")
    tp.add_argument("--no-figure", action="store_true")
    tp.set_defaults(func=_handle_table)


def _handle_table(args) -> int:
    cmd_table(
        args.table_id,
        n=args.n,
        trials=args.trials,
        seed=args.seed,
        out=args.out,
        epochs=args.epochs,
        lm_epochs=args.lm_epochs,
        paper_scale=args.paper_scale,
        figure=not args.no_figure,
    )
    return EXIT_OK


def _add_verify_parser(sub) -> None:
    vp = sub.add_parser("verify", help="run a built-in verification suite")
    vp.add_argument("suite", choices=SUITES)
    vp.add_argument("--seed", type=int, default=0)
    vp.set_defaults(func=_handle_verify)


def _handle_verify(args) -> int:
    return cmd_verify(args.suite, args.seed)


def _add_problems_parser(sub) -> None:
    pp = sub.add_parser("problems", help="list benchmark generators and their spectra")
    pp.add_argument("--n", type=int, default=200)
    pp.add_argument("--figure-dir", dest="figure_dir",
                    help="also render one spectrum PNG per problem into this directory")
    pp.set_defaults(func=_handle_problems)


def _handle_problems(args) -> int:
    return cmd_problems(args.n, args.figure_dir)


def build_parser() -> _Parser:
    ap = _Parser(
        prog="illposed",
        description="Solvers and experiments for discretized ill-posed inverse problems.",
    )
    sub = ap.add_subparsers(dest="command", required=True,
                            metavar="{run,table,verify,problems}")
    _add_run_parser(sub)
    _add_table_parser(sub)
    _add_verify_parser(sub)
    _add_problems_parser(sub)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        sys.stderr.write(f"{parser.prog}: error: {exc}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
