"""Forward operators, data-driven surrogates, and structural diagnostics.

The discretized forward map is a dense square matrix ``A`` whose rows play the
role of the individual equations ``F_i``.  Two component-wise nonlinearities
are supported: ``Identity`` (``F_i(x) = <a_i, x>``) and ``Square``
(``F_i(x) = <a_i, x>**2``).

Scaling convention
------------------
Rows are stored *unscaled*; the 1/sqrt(n) stacking of the n equations lives
only in norms.  Data-space norms are RMS norms,
``rms_norm(v) = sqrt(mean(v**2))``, while solution-space norms are Euclidean.
Consequently ``full_gradient`` carries a 1/n factor (it is the arithmetic mean
of the row gradients), the normal operator is ``B_F = A.T @ A / n``, and the
scaled operator's singular values are ``sigma(A) / sqrt(n)``.  Every function
below documents which norm it uses; mixing the two is the main silent-bug
hazard in this codebase.

Row indices are 0-based throughout.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Union

import numpy as np

__all__ = [
    "Nonlinearity",
    "ForwardOp",
    "DataDrivenOp",
    "AssumptionConstants",
    "BasisReport",
    "rms_norm",
    "apply",
    "row_value",
    "row_gradient_step",
    "full_gradient",
    "truncate_svd",
    "verify_assumption_v",
    "cone_ratio",
    "estimate_cone_constant",
    "range_invariance_gap",
    "measure_constants",
]


class Nonlinearity(Enum):
    """Component-wise nonlinearity applied to each row value."""

    IDENTITY = "identity"
    SQUARE = "square"


def rms_norm(v: np.ndarray) -> float:
    """Root-mean-square norm ``sqrt(mean(v**2))`` (the data-space norm)."""
    v = np.asarray(v, dtype=float)
    return float(np.sqrt(np.mean(v * v)))


def _freeze(a: np.ndarray) -> np.ndarray:
    """Return a read-only float64 copy (operators are immutable once built)."""
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ForwardOp:
    """Dense discretized forward operator.

    Parameters
    ----------
    A : ndarray, shape (n, n)
        Row ``i`` holds the functional ``a_i`` of equation ``i``.
    nonlinearity : Nonlinearity
        ``IDENTITY`` gives ``F_i(x) = <a_i, x>``; ``SQUARE`` gives
        ``F_i(x) = <a_i, x>**2``.
    """

    A: np.ndarray
    nonlinearity: Nonlinearity = Nonlinearity.IDENTITY

    def __post_init__(self) -> None:
        A = np.asarray(self.A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError(f"A must be square, got shape {A.shape}")
        if not np.all(np.isfinite(A)):
            raise ValueError("A contains non-finite entries")
        object.__setattr__(self, "A", _freeze(A))

    @property
    def n(self) -> int:
        return self.A.shape[0]


@dataclass(frozen=True)
class DataDrivenOp:
    """Rank-N surrogate operator built from a truncated SVD.

    The induced matrix is ``sum_j sigma[j] * left[:, j] @ right[:, j].T``; it
    shares the source operator's singular vectors, so the surrogate's range
    lies inside the span of the leading left singular vectors.

    Parameters
    ----------
    sigma : ndarray, shape (N,)
        Nonincreasing positive singular values.
    left_vectors, right_vectors : ndarray, shape (n, N)
        Orthonormal columns (left/right singular vectors).
    nonlinearity : Nonlinearity
        Matches the paired :class:`ForwardOp`.
    """

    sigma: np.ndarray
    left_vectors: np.ndarray
    right_vectors: np.ndarray
    nonlinearity: Nonlinearity = Nonlinearity.IDENTITY

    def __post_init__(self) -> None:
        sigma = np.asarray(self.sigma, dtype=float)
        U = np.asarray(self.left_vectors, dtype=float)
        V = np.asarray(self.right_vectors, dtype=float)
        if sigma.ndim != 1:
            raise ValueError("sigma must be a vector")
        N = sigma.size
        if U.shape[1] != N or V.shape[1] != N or U.shape[0] != V.shape[0]:
            raise ValueError("singular vector shapes inconsistent with sigma")
        if np.any(np.diff(sigma) > 0) or np.any(sigma <= 0):
            raise ValueError("sigma must be positive and nonincreasing")
        for name, Q in (("left_vectors", U), ("right_vectors", V)):
            gram = Q.T @ Q
            if np.max(np.abs(gram - np.eye(N))) > 1e-10:
                raise ValueError(f"{name} are not orthonormal to 1e-10")
        object.__setattr__(self, "sigma", _freeze(sigma))
        object.__setattr__(self, "left_vectors", _freeze(U))
        object.__setattr__(self, "right_vectors", _freeze(V))
        object.__setattr__(self, "_matrix", _freeze((U * sigma) @ V.T))

    @property
    def N(self) -> int:
        return self.sigma.size

    @property
    def n(self) -> int:
        return self.left_vectors.shape[0]

    @property
    def matrix(self) -> np.ndarray:
        """The induced dense rank-N matrix."""
        return self._matrix  # type: ignore[attr-defined]


AnyOp = Union[ForwardOp, DataDrivenOp]


@dataclass
class AssumptionConstants:
    """Measured structural constants of a (problem, surrogate) pair.

    ``L_F``/``L_G`` bound the row-gradient norms; ``eta_F`` is the tangential
    cone constant (0 for linear operators); ``c_F``/``c_G`` are range-invariance
    Lipschitz estimates (0 for linear); ``c_R`` bounds the surrogate transfer
    operator; ``C_min``/``C_max`` bracket the surrogate's RMS data misfit at the
    reference solution.  ``theta`` (stochastic range-invariance exponent) has no
    constructive estimator and may be supplied by the caller.
    """

    L_F: float
    L_G: float
    eta_F: float
    c_F: float
    c_G: float
    c_R: float
    C_min: float
    C_max: float
    theta: Optional[float] = None

    def __post_init__(self) -> None:
        if not (0.0 <= self.C_min <= self.C_max):
            raise ValueError("need 0 <= C_min <= C_max")
        if self.L_F < 0 or self.L_G < 0 or self.c_R < 0:
            raise ValueError("L_F, L_G, c_R must be nonnegative")
        if not (0.0 <= self.eta_F < 1.0):
            raise ValueError("eta_F must lie in [0, 1)")


def _dense(op: AnyOp) -> np.ndarray:
    return op.A if isinstance(op, ForwardOp) else op.matrix


def _check_x(op: AnyOp, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (op.n,):
        raise ValueError(f"x has shape {x.shape}, expected ({op.n},)")
    return x


def apply(op: AnyOp, x: np.ndarray) -> np.ndarray:
    """Evaluate all n equations at ``x``; component i is ``f(<a_i, x>)``."""
    x = _check_x(op, x)
    t = _dense(op) @ x
    if op.nonlinearity is Nonlinearity.SQUARE:
        return t * t
    return t


def row_value(op: AnyOp, i: int, x: np.ndarray) -> float:
    """Value of equation ``i`` at ``x`` (0-based index)."""
    if not 0 <= i < op.n:
        raise IndexError(f"row index {i} out of range for n={op.n}")
    x = _check_x(op, x)
    t = float(_dense(op)[i] @ x)
    if op.nonlinearity is Nonlinearity.SQUARE:
        return t * t
    return t


def row_gradient_step(op: AnyOp, i: int, x: np.ndarray, r: float) -> np.ndarray:
    """Adjoint row gradient ``F_i'(x)* r``.

    For ``Identity`` this is ``r * a_i``; for ``Square`` the row derivative is
    ``2 <a_i, x> a_i``, so the result is ``2 <a_i, x> * r * a_i``.  Stochastic
    solvers use this *unscaled* (the drawn equation is not averaged).
    """
    if not 0 <= i < op.n:
        raise IndexError(f"row index {i} out of range for n={op.n}")
    if not np.isfinite(r):
        raise ValueError("residual r must be finite")
    x = _check_x(op, x)
    a = _dense(op)[i]
    if op.nonlinearity is Nonlinearity.SQUARE:
        return (2.0 * float(a @ x) * r) * a
    return r * a


def full_gradient(op: AnyOp, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Mean gradient ``(1/n) sum_i F_i'(x)*(F_i(x) - y_i)``.

    This is the gradient of ``0.5 * rms_norm(F(x) - y)**2``; the 1/n factor
    realizes the RMS data norm.
    """
    x = _check_x(op, x)
    y = np.asarray(y, dtype=float)
    if y.shape != (op.n,):
        raise ValueError(f"y has shape {y.shape}, expected ({op.n},)")
    M = _dense(op)
    t = M @ x
    if op.nonlinearity is Nonlinearity.SQUARE:
        resid = 2.0 * t * (t * t - y)
    else:
        resid = t - y
    return (M.T @ resid) / op.n


def truncate_svd(A: np.ndarray, N: int, nonlinearity: Nonlinearity = Nonlinearity.IDENTITY) -> DataDrivenOp:
    """Best rank-``N`` surrogate of ``A`` via the truncated SVD.

    The returned operator keeps the leading N singular triplets, so its
    induced matrix is the best rank-N approximation of ``A`` in the spectral
    norm (distance ``sigma_{N+1}``).
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"A must be square, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("A contains non-finite entries")
    n = A.shape[0]
    if not 1 <= N <= n:
        raise ValueError(f"rank N={N} out of range [1, {n}]")
    U, s, Vt = np.linalg.svd(A)
    if s[N - 1] <= 0.0:
        raise ValueError(f"rank {N} exceeds the numerical rank of A")
    return DataDrivenOp(
        sigma=s[:N],
        left_vectors=U[:, :N],
        right_vectors=Vt[:N].T,
        nonlinearity=nonlinearity,
    )


@dataclass(frozen=True)
class BasisReport:
    """Outcome of the shared-singular-basis diagnostic.

    ``c_R`` is ``max_j sigma_tilde_j / sigma_j`` over the surrogate's modes;
    ``max_angle`` is the largest angle (radians, sign-insensitive) between a
    surrogate right vector and the matching right singular vector of the
    forward operator.  ``basis_ok`` requires max_angle < 1e-8; ``c_R_ok``
    requires c_R <= 1 + 1e-10 (both hold exactly for truncated-SVD
    surrogates).  For Square nonlinearity the comparison runs on the
    linearizations at ``x_ref`` and is only approximate, so callers should
    read the angles rather than hard-fail.
    """

    c_R: float
    max_angle: float
    basis_ok: bool
    c_R_ok: bool

    @property
    def passed(self) -> bool:
        return self.basis_ok and self.c_R_ok


def verify_assumption_v(
    F: ForwardOp,
    G: DataDrivenOp,
    x_ref: Optional[np.ndarray] = None,
) -> BasisReport:
    """Check that the surrogate factors through the forward operator.

    The surrogate admits a bounded transfer operator ``R`` with
    ``K_G = R K_F`` exactly when its right singular vectors coincide (up to
    sign) with the forward operator's; then ``norm(R) = max_j
    sigma_tilde_j / sigma_j``.  For Square nonlinearity the check runs on the
    linearizations ``2 diag(A x_ref) A`` and requires ``x_ref``.
    """
    if F.n != G.n:
        raise ValueError("operator sizes differ")
    if F.nonlinearity is not G.nonlinearity:
        raise ValueError("nonlinearity tags differ")
    if F.nonlinearity is Nonlinearity.SQUARE:
        if x_ref is None:
            raise ValueError("x_ref is required for Square nonlinearity")
        x_ref = _check_x(F, x_ref)
        KF = 2.0 * (F.A @ x_ref)[:, None] * F.A
        KG = 2.0 * (G.matrix @ x_ref)[:, None] * G.matrix
        _, sF, VtF = np.linalg.svd(KF)
        _, sG, VtG = np.linalg.svd(KG)
        sG, VG = sG[: G.N], VtG[: G.N].T
    else:
        _, sF, VtF = np.linalg.svd(F.A)
        sG, VG = G.sigma, G.right_vectors
    VF = VtF[: G.N].T
    # angle via the chord length 2 sin(theta/2): accurate near zero, where
    # arccos of a once-rounded dot product would already read ~1.5e-8
    signs = np.where(np.sum(VF * VG, axis=0) < 0.0, -1.0, 1.0)
    chord = np.linalg.norm(VF * signs - VG, axis=0)
    angles = 2.0 * np.arcsin(np.clip(chord / 2.0, 0.0, 1.0))
    max_angle = float(np.max(angles)) if G.N else 0.0
    with np.errstate(divide="ignore"):
        ratios = sG / sF[: G.N]
    c_R = float(np.max(ratios))
    return BasisReport(
        c_R=c_R,
        max_angle=max_angle,
        basis_ok=max_angle < 1e-8,
        c_R_ok=c_R <= 1.0 + 1e-10,
    )


def cone_ratio(op: ForwardOp, x: np.ndarray, x_tilde: np.ndarray) -> float:
    """Worst-row ratio of the linearization remainder to the value change.

    For a pair (x, x_tilde) this is
    ``max_i |F_i(x) - F_i(x_tilde) - F_i'(x_tilde)(x - x_tilde)| /
    |F_i(x) - F_i(x_tilde)|`` over rows with nonzero denominator; it is the
    quantity whose supremum over a ball is the tangential cone constant.
    Returns 0.0 when every denominator vanishes but so does every numerator;
    raises when some remainder is nonzero yet no denominator is usable.
    """
    x = _check_x(op, x)
    x_tilde = _check_x(op, x_tilde)
    A = op.A
    t, t0 = A @ x, A @ x_tilde
    if op.nonlinearity is Nonlinearity.SQUARE:
        fx, f0 = t * t, t0 * t0
        lin = 2.0 * t0 * (t - t0)
    else:
        fx, f0 = t, t0
        lin = t - t0
    num = np.abs(fx - f0 - lin)
    den = np.abs(fx - f0)
    usable = den > 0.0
    if not np.any(usable):
        if np.all(num == 0.0):
            return 0.0
        raise ValueError("cone ratio undefined: all denominators vanish")
    return float(np.max(num[usable] / den[usable]))


def estimate_cone_constant(
    op: ForwardOp,
    center: np.ndarray,
    radius: float,
    samples: int,
    seed: int,
) -> float:
    """Monte Carlo estimate of the tangential cone constant on a ball.

    Samples pairs (x, x_tilde) uniformly from the ball around ``center`` and
    returns the largest :func:`cone_ratio`.  Identity operators are exactly
    linear, so 0.0 is returned without sampling.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    if samples < 2:
        raise ValueError("need at least 2 samples")
    center = _check_x(op, center)
    if op.nonlinearity is Nonlinearity.IDENTITY:
        return 0.0
    rng = np.random.default_rng(seed)
    n = op.n

    def draw() -> np.ndarray:
        d = rng.standard_normal(n)
        d /= np.linalg.norm(d)
        r = radius * rng.uniform() ** (1.0 / n)
        return center + r * d

    best = -1.0
    for _ in range(samples):
        try:
            best = max(best, cone_ratio(op, draw(), draw()))
        except ValueError:
            continue
    if best < 0.0:
        raise ValueError("cone constant undefined: no usable sample pair")
    return best


def range_invariance_gap(op: ForwardOp, x: np.ndarray, x_ref: np.ndarray) -> float:
    """Distance of the derivative transfer factor from the identity.

    For the Square nonlinearity ``F'(x) = R_x F'(x_ref)`` with
    ``R_x = diag((Ax)_i / (Ax_ref)_i)``; the gap is
    ``max_i |(Ax)_i/(Ax_ref)_i - 1|``, to be compared against
    ``c_F * norm(x - x_ref)`` by the caller.
    """
    if op.nonlinearity is not Nonlinearity.SQUARE:
        raise ValueError("range_invariance_gap applies to Square operators")
    x = _check_x(op, x)
    x_ref = _check_x(op, x_ref)
    t_ref = op.A @ x_ref
    if np.any(t_ref == 0.0):
        raise ValueError("reference point maps to a zero component (singular reference)")
    t = op.A @ x
    return float(np.max(np.abs(t / t_ref - 1.0)))


def measure_constants(
    F: ForwardOp,
    G: Optional[DataDrivenOp],
    x_dag: np.ndarray,
    theta: Optional[float] = None,
) -> AssumptionConstants:
    """Measure the structural constants of a linear problem.

    For Identity operators the structure is exact: ``eta_F = c_F = c_G = 0``,
    ``L_F``/``L_G`` are the largest Euclidean row norms, ``c_R`` comes from
    :func:`verify_assumption_v`, and ``C_min = C_max`` is the RMS misfit
    ``rms_norm(G(x_dag) - F(x_dag))`` of the surrogate at the reference
    solution.  Without a surrogate the G-related constants are zero.
    """
    if F.nonlinearity is not Nonlinearity.IDENTITY:
        raise ValueError("measure_constants supports Identity operators only")
    x_dag = _check_x(F, x_dag)
    L_F = float(np.max(np.linalg.norm(F.A, axis=1)))
    if G is None:
        return AssumptionConstants(
            L_F=L_F, L_G=0.0, eta_F=0.0, c_F=0.0, c_G=0.0,
            c_R=0.0, C_min=0.0, C_max=0.0, theta=theta,
        )
    L_G = float(np.max(np.linalg.norm(G.matrix, axis=1)))
    c_R = verify_assumption_v(F, G).c_R
    mis = rms_norm(apply(G, x_dag) - apply(F, x_dag))
    return AssumptionConstants(
        L_F=L_F, L_G=L_G, eta_F=0.0, c_F=0.0, c_G=0.0,
        c_R=c_R, C_min=mis, C_max=mis, theta=theta,
    )
