"""Kernels and the local polynomial weighted-least-squares engine.

Every fit is exposed as explicit linear estimator weights: an n-vector ``w``
such that the estimate equals ``w @ y``.  All operations are pure functions
of their inputs and safe for data-parallel use.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from math import factorial

import numpy as np
import scipy.linalg

from .errors import ConfigError, InsufficientDataError, RankDeficiencyError

#: Relative pivot tolerance for rank detection in the weighted design.
RANK_TOL = 1e-12

#: Local polynomial orders above quartic are outside practical RD use.
MAX_ORDER = 4


class Kernel(str, Enum):
    """Supported kernel shapes, each supported on [-1, 1]."""

    TRIANGULAR = "triangular"
    UNIFORM = "uniform"
    EPANECHNIKOV = "epanechnikov"

    @classmethod
    def parse(cls, name: str) -> "Kernel":
        aliases = {
            "tri": cls.TRIANGULAR,
            "triangular": cls.TRIANGULAR,
            "uni": cls.UNIFORM,
            "uniform": cls.UNIFORM,
            "epa": cls.EPANECHNIKOV,
            "epanechnikov": cls.EPANECHNIKOV,
        }
        try:
            return aliases[name.lower()]
        except KeyError:
            raise ConfigError(f"unknown kernel {name!r}") from None


class Side(str, Enum):
    LEFT = "left"
    RIGHT = "right"
    POOLED = "pooled"


def kernel_weight(kernel: Kernel, u):
    """Evaluate K(u) = 1(u<0) k(-u) + 1(u>=0) k(u).

    Boundary convention: |u| > 1 gives 0; |u| = 1 gives k(1), which is 1 for
    the uniform kernel and 0 for the triangular and Epanechnikov kernels.
    """
    u = np.abs(np.asarray(u, dtype=float))
    if kernel == Kernel.TRIANGULAR:
        out = np.where(u <= 1.0, 1.0 - u, 0.0)
    elif kernel == Kernel.UNIFORM:
        out = np.where(u <= 1.0, 1.0, 0.0)
    elif kernel == Kernel.EPANECHNIKOV:
        out = np.where(u <= 1.0, 0.75 * (1.0 - u * u), 0.0)
    else:  # pragma: no cover - exhaustive enum
        raise ConfigError(f"unknown kernel {kernel!r}")
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class LocalFitSpec:
    """Kernel, polynomial order, bandwidth, and side of a local fit."""

    h: float
    kernel: Kernel = Kernel.TRIANGULAR
    p: int = 1
    side: Side = Side.POOLED

    def __post_init__(self):
        if not np.isfinite(self.h) or self.h <= 0.0:
            raise ConfigError(f"bandwidth must be finite and positive, got {self.h}")
        if not 0 <= self.p <= MAX_ORDER:
            raise ConfigError(f"polynomial order must be in [0, {MAX_ORDER}], got {self.p}")
        object.__setattr__(self, "kernel", Kernel(self.kernel))
        object.__setattr__(self, "side", Side(self.side))

    def replace(self, **changes) -> "LocalFitSpec":
        from dataclasses import replace

        return replace(self, **changes)


@dataclass(frozen=True)
class LinearWeights:
    """An n-vector w such that the estimate equals w @ y."""

    w: np.ndarray
    target: str
    effective_n: int

    def __post_init__(self):
        w = np.ascontiguousarray(np.asarray(self.w, dtype=float))
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    def apply(self, y: np.ndarray) -> float:
        return float(self.w @ np.asarray(y, dtype=float))


def side_mask(x: np.ndarray, side: Side) -> np.ndarray:
    if side == Side.LEFT:
        return x < 0.0
    if side == Side.RIGHT:
        return x >= 0.0
    return np.ones_like(x, dtype=bool)


class WlsFactor:
    """Rank-checked factorization of a weighted least-squares problem.

    Wraps a pivoted QR of the row-weighted, column-scaled design.  Rank
    deficiency below the relative pivot tolerance raises rather than
    silently dropping columns, since dropping would change the estimand.
    """

    def __init__(self, cols: list, w: np.ndarray, names: list):
        A = np.column_stack(cols)
        scale = np.max(np.abs(A), axis=0)
        scale[scale == 0.0] = 1.0
        sw = np.sqrt(w)
        self._A_scaled = A / scale
        self._scale = scale
        self._w = w
        Q, R, piv = scipy.linalg.qr(
            self._A_scaled * sw[:, None], mode="economic", pivoting=True
        )
        diag = np.abs(np.diag(R))
        if diag.size == 0 or diag[0] == 0.0:
            rank = 0
        else:
            rank = int(np.sum(diag >= RANK_TOL * diag[0]))
        k = A.shape[1]
        if rank < k:
            offender = names[piv[rank]] if rank < len(piv) else "design"
            raise RankDeficiencyError(
                f"weighted design is rank deficient (rank {rank} < {k}); "
                f"offending column block: {offender}",
                column=offender,
            )
        self._Q = Q
        self._R = R
        self._piv = piv
        self._sqrt_w = sw

    def solve(self, y: np.ndarray) -> np.ndarray:
        """WLS coefficients for outcome(s) y, on the original column scale."""
        y = np.asarray(y, dtype=float)
        weighted = self._sqrt_w[:, None] * y if y.ndim > 1 else self._sqrt_w * y
        beta_perm = scipy.linalg.solve_triangular(self._R, self._Q.T @ weighted)
        beta = np.empty_like(beta_perm)
        beta[self._piv] = beta_perm
        if beta.ndim == 1:
            return beta / self._scale
        return beta / self._scale[:, None]

    def coefficient_row(self, index: int) -> np.ndarray:
        """Row vector r with r @ y = coefficient ``index`` of the WLS fit."""
        e = np.zeros(self._A_scaled.shape[1])
        e[index] = 1.0
        # (A'WA)^{-1} e via the permuted QR: A'WA = P R'R P'
        z = scipy.linalg.solve_triangular(self._R, e[self._piv], trans="T")
        a_perm = scipy.linalg.solve_triangular(self._R, z)
        a = np.empty_like(a_perm)
        a[self._piv] = a_perm
        return (self._A_scaled @ a) * self._w / self._scale[index]

    def leverage(self) -> np.ndarray:
        """Weighted leverages h_ii = w_i x_i' (X'WX)^{-1} x_i."""
        Rinv_rows = scipy.linalg.solve_triangular(
            self._R, np.eye(self._R.shape[0]), trans="T"
        )
        B = self._A_scaled[:, self._piv] @ Rinv_rows.T
        return np.sum(B * B, axis=1) * self._w


def _poly_weights(
    kernel: Kernel,
    order: int,
    h: float,
    side: Side,
    x: np.ndarray,
    derivative: int,
) -> LinearWeights:
    """One-sided local polynomial weights without the user-facing order cap.

    Internal pilot fits (bandwidth selection, bias estimation) legitimately
    use orders above MAX_ORDER + 1 when p is large.
    """
    if derivative > order:
        raise ConfigError(f"derivative {derivative} exceeds polynomial order {order}")
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ConfigError("score contains non-finite values")
    kern = kernel_weight(kernel, x / h)
    mask = side_mask(x, side) & (kern > 0.0)
    x_in = x[mask]
    if np.unique(x_in).size < order + 1:
        raise InsufficientDataError(
            f"fewer than {order + 1} distinct points with positive kernel weight "
            f"on side {side.value!r} at bandwidth h={h:g}"
        )
    u = x_in / h
    cols = [u**j for j in range(order + 1)]
    names = ["intercept"] + [f"x^{j}" for j in range(1, order + 1)]
    factor = WlsFactor(cols, kern[mask], names)
    row = factor.coefficient_row(derivative) * factorial(derivative) / h**derivative
    w = np.zeros_like(x)
    w[mask] = row
    return LinearWeights(
        w=w,
        target=f"derivative {derivative} at 0, side {side.value}, order {order}, h={h:g}",
        effective_n=int(np.count_nonzero(row)),
    )


def fit_weights(spec: LocalFitSpec, x: np.ndarray, derivative: int = 0) -> LinearWeights:
    """Linear weights extracting a derivative of the regression function at 0.

    Parameters
    ----------
    spec : LocalFitSpec
        Kernel, order p, bandwidth h, and side of the fit.
    x : ndarray, shape (n,)
        Cutoff-normalized scores.
    derivative : int
        Which derivative at 0 to target (0 = the level).  Must be <= p.

    Returns
    -------
    LinearWeights
        Weights satisfying polynomial reproduction:
        ``sum(w * x**m) == derivative! * (m == derivative)`` for m = 0..p.

    Raises
    ------
    InsufficientDataError
        Fewer than p + 1 distinct in-bandwidth points on the side.
    RankDeficiencyError
        The weighted design is numerically rank deficient.
    """
    return _poly_weights(spec.kernel, spec.p, spec.h, spec.side, x, derivative)


def rd_design(x: np.ndarray, p: int) -> tuple:
    """Base sharp-RD design [1, T, x, Tx, ..., x^p, Tx^p] with column names."""
    t = (x >= 0.0).astype(float)
    cols = [np.ones_like(x), t]
    names = ["intercept", "treatment"]
    for j in range(1, p + 1):
        cols.append(x**j)
        names.append(f"x^{j}")
        cols.append(t * x**j)
        names.append(f"T*x^{j}")
    return cols, names


def joint_fit(
    spec: LocalFitSpec,
    x: np.ndarray,
    y: np.ndarray,
    extra_cols: np.ndarray | None = None,
    extra_names: list | None = None,
) -> np.ndarray:
    """Pooled weighted least squares on the stacked sharp-RD design.

    Regresses y on [1, T, x, Tx, ..., x^p, Tx^p, extra_cols] using weights
    K(x/h), restricted to in-bandwidth observations.  The coefficient on T
    (index 1) is the RD jump at the cutoff.

    Returns the full coefficient vector on the raw column scale.
    """
    if spec.side != Side.POOLED:
        raise ConfigError("joint_fit requires a pooled-side spec")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    kern = kernel_weight(spec.kernel, x / spec.h)
    mask = kern > 0.0
    x_in = x[mask]
    for side in (Side.LEFT, Side.RIGHT):
        if np.unique(x_in[side_mask(x_in, side)]).size < spec.p + 1:
            raise InsufficientDataError(
                f"fewer than {spec.p + 1} distinct points with positive kernel "
                f"weight on side {side.value!r} at bandwidth h={spec.h:g}"
            )
    # Polynomial columns are built on the x/h scale for conditioning and the
    # coefficients unwound afterwards.
    u = x_in / spec.h
    cols, names = rd_design(u, spec.p)
    poly_scale = np.ones(len(cols))
    for j in range(1, spec.p + 1):
        poly_scale[2 * j] = spec.h**j
        poly_scale[2 * j + 1] = spec.h**j
    if extra_cols is not None and np.asarray(extra_cols).size:
        extras = np.atleast_2d(np.asarray(extra_cols, dtype=float))
        if extras.shape[0] != x.shape[0]:
            extras = extras.T
        for k in range(extras.shape[1]):
            cols.append(extras[mask, k])
            if extra_names is not None and k < len(extra_names):
                names.append(extra_names[k])
            else:
                names.append(f"covariate block [{k}]")
        poly_scale = np.concatenate([poly_scale, np.ones(extras.shape[1])])
    factor = WlsFactor(cols, kern[mask], names)
    return factor.solve(y[mask]) / poly_scale
