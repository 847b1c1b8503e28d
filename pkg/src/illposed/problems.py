"""Benchmark problem generators, the noise model, and problem serialization.

Three classic first-kind Fredholm test problems are discretized by midpoint
quadrature on n nodes: ``phillips`` (mildly ill-posed), ``gravity``
(moderately ill-posed) and ``shaw`` (severely ill-posed).  Each generator
normalizes the sampled reference solution to unit max-norm *before* computing
the exact data, so ``max(abs(x_dag)) == 1`` and ``y_dag = apply(op, x_dag)``
hold by construction.

Squared variants replace ``F(x) = Ax`` by the component-wise square
``F(x) = (Ax)**2``, keeping ``A`` and ``x_dag`` and recomputing the data.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .operators import ForwardOp, Nonlinearity, apply, rms_norm

__all__ = [
    "Problem",
    "NoisyData",
    "SourceFixture",
    "make_shaw",
    "make_gravity",
    "make_phillips",
    "squared_variant",
    "add_noise",
    "make_source_fixture",
    "apply_source_fixture",
    "save_problem",
    "load_problem",
]


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Problem:
    """A discretized inverse problem instance.

    Fields: generator ``name``, forward operator ``op``, reference solution
    ``x_dag`` (unit max-norm), exact data ``y_dag`` (unscaled components
    ``F_i(x_dag)``), and the ``grid`` of abscissae.
    """

    name: str
    op: ForwardOp
    x_dag: np.ndarray
    y_dag: np.ndarray
    grid: np.ndarray

    def __post_init__(self) -> None:
        for field in ("x_dag", "y_dag", "grid"):
            v = np.asarray(getattr(self, field), dtype=float)
            if v.shape != (self.op.n,):
                raise ValueError(f"{field} has shape {v.shape}, expected ({self.op.n},)")
            object.__setattr__(self, field, _frozen(v))
        resid = np.max(np.abs(apply(self.op, self.x_dag) - self.y_dag))
        if resid > 1e-12 * max(1.0, float(np.max(np.abs(self.y_dag)))):
            raise ValueError(f"y_dag is not the image of x_dag (max residual {resid:.3e})")

    @property
    def n(self) -> int:
        return self.op.n


@dataclass(frozen=True)
class NoisyData:
    """One noise realization ``y_delta = y_dag + noise``.

    ``noise`` is the exact perturbation vector that was added (kept so that
    scaling identities hold bitwise; recomputing ``y_delta - y_dag`` rounds).
    ``delta`` is the realized RMS norm of the perturbation and ``delta0`` the
    relative noise level that produced it.
    """

    y_delta: np.ndarray
    noise: np.ndarray
    delta0: float
    delta: float
    seed: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "y_delta", _frozen(self.y_delta))
        object.__setattr__(self, "noise", _frozen(self.noise))

    @property
    def n(self) -> int:
        return self.y_delta.shape[0]


@dataclass(frozen=True)
class SourceFixture:
    """A reference solution manufactured to have known smoothness.

    ``x_dag = x1 + B**nu @ w`` computed spectrally, where ``B = A.T A / n`` is
    the normal operator under the RMS data norm.  ``nu`` in (0, 1/2) controls
    the smoothness and ``w_norm`` is the Euclidean norm of the source element.
    """

    nu: float
    w: np.ndarray
    x1: np.ndarray
    x_dag: np.ndarray
    w_norm: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "w", _frozen(self.w))
        object.__setattr__(self, "x1", _frozen(self.x1))
        object.__setattr__(self, "x_dag", _frozen(self.x_dag))


def _finish(name: str, A: np.ndarray, x_raw: np.ndarray, grid: np.ndarray) -> Problem:
    x_dag = x_raw / np.max(np.abs(x_raw))
    op = ForwardOp(A, Nonlinearity.IDENTITY)
    return Problem(name=name, op=op, x_dag=x_dag, y_dag=op.A @ x_dag, grid=grid)


def make_shaw(n: int) -> Problem:
    """Severely ill-posed 1-D image-restoration kernel on [-pi/2, pi/2].

    Midpoint grid ``t_i = (i + 1/2) pi / n - pi/2`` (0-based i), kernel
    ``K(s,t) = (cos s + cos t)**2 (sin u / u)**2`` with ``u = pi (sin s +
    sin t)`` and limit value 1 at the removable singularity (|u| < 1e-8),
    entries ``A_ij = (pi/n) K(s_i, t_j)``.  Reference solution: two Gaussian
    humps ``2 exp(-6(t-0.8)**2) + exp(-2(t+0.5)**2)``, max-normalized.
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    t = (np.arange(1, n + 1) - 0.5) * np.pi / n - np.pi / 2
    S, T = np.meshgrid(t, t, indexing="ij")
    u = np.pi * (np.sin(S) + np.sin(T))
    small = np.abs(u) < 1e-8
    ratio = np.where(small, 1.0, np.sin(np.where(small, 1.0, u)) / np.where(small, 1.0, u))
    K = (np.cos(S) + np.cos(T)) ** 2 * ratio**2
    A = (np.pi / n) * K
    x_raw = 2.0 * np.exp(-6.0 * (t - 0.8) ** 2) + np.exp(-2.0 * (t + 0.5) ** 2)
    return _finish("shaw", A, x_raw, t)


def make_gravity(n: int, d: float = 0.25) -> Problem:
    """Moderately ill-posed gravity-surveying kernel on [0, 1].

    Midpoint grid ``t_i = (i + 1/2)/n`` (0-based i), kernel
    ``K(s,t) = d (d**2 + (s-t)**2)**(-3/2)`` at source depth ``d``
    (default 0.25), entries ``A_ij = K(s_i, t_j)/n``.  Reference solution
    ``sin(pi t) + 0.5 sin(2 pi t)``, max-normalized.
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    if d <= 0:
        raise ValueError("depth d must be positive")
    t = (np.arange(1, n + 1) - 0.5) / n
    S, T = np.meshgrid(t, t, indexing="ij")
    K = d * (d * d + (S - T) ** 2) ** (-1.5)
    A = K / n
    x_raw = np.sin(np.pi * t) + 0.5 * np.sin(2.0 * np.pi * t)
    return _finish("gravity", A, x_raw, t)


def make_phillips(n: int) -> Problem:
    """Mildly ill-posed convolution test problem on [-6, 6].

    Midpoint grid ``t_i = -6 + (i + 1/2) * 12/n`` (0-based i), convolution
    kernel ``phi(s - t)`` with ``phi(x) = 1 + cos(pi x / 3)`` for |x| < 3 and
    0 otherwise, entries ``A_ij = (12/n) phi(s_i - t_j)``.  The reference
    solution is ``phi`` itself, max-normalized (its max value 2 becomes 1).
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    t = -6.0 + (np.arange(1, n + 1) - 0.5) * 12.0 / n

    def phi(x: np.ndarray) -> np.ndarray:
        return np.where(np.abs(x) < 3.0, 1.0 + np.cos(np.pi * x / 3.0), 0.0)

    S, T = np.meshgrid(t, t, indexing="ij")
    A = (12.0 / n) * phi(S - T)
    return _finish("phillips", A, phi(t), t)


def squared_variant(p: Problem) -> Problem:
    """Component-wise squared variant: same A and x_dag, data ``y_dag**2``."""
    if p.op.nonlinearity is not Nonlinearity.IDENTITY:
        raise ValueError("problem already has Square nonlinearity")
    op = ForwardOp(p.op.A, Nonlinearity.SQUARE)
    return Problem(
        name="squared-" + p.name,
        op=op,
        x_dag=p.x_dag,
        y_dag=p.y_dag * p.y_dag,
        grid=p.grid,
    )


def _noise_from_xi(p: Problem, delta0: float, xi: np.ndarray, seed: int) -> NoisyData:
    """Assemble NoisyData from a fixed standard-normal direction ``xi``."""
    if delta0 == 0.0:
        z = np.zeros(p.n)
        return NoisyData(y_delta=p.y_dag.copy(), noise=z, delta0=0.0, delta=0.0, seed=seed)
    scale = delta0 * float(np.max(np.abs(p.y_dag)))
    noise = scale * xi
    return NoisyData(
        y_delta=p.y_dag + noise,
        noise=noise,
        delta0=delta0,
        delta=rms_norm(noise),
        seed=seed,
    )


def add_noise(p: Problem, delta0: float, seed: int) -> NoisyData:
    """Additive Gaussian noise ``y_delta = y_dag + delta0 * max|y_dag| * xi``.

    ``xi`` has i.i.d. standard-normal components from the seeded generator;
    ``delta`` records the realized RMS norm of the perturbation.  With
    ``delta0 == 0`` the exact data is returned bitwise.
    """
    if delta0 < 0:
        raise ValueError("delta0 must be nonnegative")
    xi = np.random.default_rng(seed).standard_normal(p.n)
    return _noise_from_xi(p, delta0, xi, seed)


def make_source_fixture(
    op: ForwardOp,
    nu: float,
    w: np.ndarray,
    x1: Optional[np.ndarray] = None,
) -> SourceFixture:
    """Manufacture ``x_dag = x1 + B**nu @ w`` spectrally, ``B = A.T A / n``.

    With singular values ``s_j`` of A and right singular vectors ``phi_j``,
    ``B**nu @ w = sum_j (s_j**2/n)**nu <phi_j, w> phi_j``.  Requires a linear
    operator and ``0 < nu < 1/2``.
    """
    if op.nonlinearity is not Nonlinearity.IDENTITY:
        raise ValueError("source fixtures require a linear operator")
    if not 0.0 < nu < 0.5:
        raise ValueError("nu must lie in (0, 1/2)")
    n = op.n
    w = np.asarray(w, dtype=float)
    if w.shape != (n,):
        raise ValueError(f"w has shape {w.shape}, expected ({n},)")
    x1 = np.zeros(n) if x1 is None else np.asarray(x1, dtype=float)
    if x1.shape != (n,):
        raise ValueError(f"x1 has shape {x1.shape}, expected ({n},)")
    _, s, Vt = np.linalg.svd(op.A)
    weights = (s * s / n) ** nu
    x_dag = x1 + Vt.T @ (weights * (Vt @ w))
    return SourceFixture(nu=nu, w=w, x1=x1, x_dag=x_dag, w_norm=float(np.linalg.norm(w)))


def apply_source_fixture(p: Problem, fixture: SourceFixture) -> Problem:
    """Return ``p`` with the reference solution replaced and data recomputed."""
    return Problem(
        name=p.name,
        op=p.op,
        x_dag=fixture.x_dag,
        y_dag=apply(p.op, fixture.x_dag),
        grid=p.grid,
    )


_FORMAT_VERSION = 1
_NONLINEARITY_TAGS = {Nonlinearity.IDENTITY: 0, Nonlinearity.SQUARE: 1}
_TAGS_NONLINEARITY = {v: k for k, v in _NONLINEARITY_TAGS.items()}


def save_problem(p: Problem, path: str) -> None:
    """Serialize to the flat binary container (little-endian throughout).

    Layout: version byte (=1); u32 name length + UTF-8 name; u32 n; one
    nonlinearity tag byte (0 identity, 1 square); then row-major A, x_dag,
    y_dag as f64.  The grid is not stored; :func:`load_problem` rebuilds it
    from the name.
    """
    name_bytes = p.name.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<B", _FORMAT_VERSION))
        fh.write(struct.pack("<I", len(name_bytes)))
        fh.write(name_bytes)
        fh.write(struct.pack("<I", p.n))
        fh.write(struct.pack("<B", _NONLINEARITY_TAGS[p.op.nonlinearity]))
        fh.write(np.ascontiguousarray(p.op.A, dtype="<f8").tobytes())
        fh.write(np.asarray(p.x_dag, dtype="<f8").tobytes())
        fh.write(np.asarray(p.y_dag, dtype="<f8").tobytes())


def _grid_for(name: str, n: int) -> np.ndarray:
    base = name[len("squared-"):] if name.startswith("squared-") else name
    i = np.arange(1, n + 1) - 0.5
    if base == "shaw":
        return i * np.pi / n - np.pi / 2
    if base == "gravity":
        return i / n
    if base == "phillips":
        return -6.0 + i * 12.0 / n
    return i / n  # unknown generator: midpoint grid on [0, 1]


def load_problem(path: str) -> Problem:
    """Read a problem written by :func:`save_problem`."""
    with open(path, "rb") as fh:
        raw = fh.read()
    off = 0

    def take(fmt: str) -> Tuple:
        nonlocal off
        size = struct.calcsize(fmt)
        if off + size > len(raw):
            raise ValueError("truncated problem file")
        out = struct.unpack_from(fmt, raw, off)
        off += size
        return out

    (version,) = take("<B")
    if version != _FORMAT_VERSION:
        raise ValueError(f"unsupported format version {version}")
    (name_len,) = take("<I")
    name = raw[off:off + name_len].decode("utf-8")
    off += name_len
    (n,) = take("<I")
    (tag,) = take("<B")
    if tag not in _TAGS_NONLINEARITY:
        raise ValueError(f"unknown nonlinearity tag {tag}")
    need = 8 * (n * n + 2 * n)
    if len(raw) - off != need:
        raise ValueError("payload size mismatch")
    flat = np.frombuffer(raw, dtype="<f8", count=n * n + 2 * n, offset=off)
    A = flat[: n * n].reshape(n, n)
    x_dag = flat[n * n: n * n + n]
    y_dag = flat[n * n + n:]
    op = ForwardOp(A, _TAGS_NONLINEARITY[tag])
    return Problem(name=name, op=op, x_dag=x_dag, y_dag=y_dag, grid=_grid_for(name, n))
