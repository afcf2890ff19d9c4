"""Bias-corrected estimation and robust variance for the RD estimators.

Everything is built from the exact linear-weights representation: given the
frozen covariate coefficient, the bias-corrected estimator is a known linear
functional of the stacked (y, Z) data, and its conditional variance follows
by plugging per-unit residual proxies into that functional.  Two proxy
families are provided (nearest-neighbor and plug-in residuals with HC0-HC3
adjustments) plus a cluster-robust assembly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from math import factorial

import numpy as np
from scipy.stats import norm

from .data import Dataset
from .errors import (
    ConfigError,
    DegenerateVarianceError,
    InsufficientDataError,
)
from .estimators import EstimatorKind, PointEstimate, adjusted_outcome, estimate
from .locfit import (
    LinearWeights,
    LocalFitSpec,
    Side,
    WlsFactor,
    _poly_weights,
    kernel_weight,
    side_mask,
)

DEFAULT_NN_NEIGHBORS = 3


class VarianceMethod(str, Enum):
    NN = "nn"
    HC0 = "hc0"
    HC1 = "hc1"
    HC2 = "hc2"
    HC3 = "hc3"
    CLUSTER = "cluster"

    @classmethod
    def parse(cls, name: str) -> "VarianceMethod":
        try:
            return cls(name.lower())
        except ValueError:
            raise ConfigError(f"unknown variance method {name!r}") from None


@dataclass(frozen=True)
class BiasEstimate:
    """Estimated leading bias coefficient of the point estimator.

    The correction is applied as tau - h**(p+1) * b_tilde, with
    b_tilde = plus - minus and each one-sided term equal to the estimated
    (p+1)-th derivative of the adjusted outcome times the pre-asymptotic
    design constant of the order-p fit.
    """

    b_tilde: float
    b: float
    q: int
    per_side: tuple
    derivative_estimates: tuple


@dataclass(frozen=True)
class BiasCorrectedEstimate:
    """Bias-corrected point estimate with its exact linear representation.

    ``weights_minus`` / ``weights_plus`` are the combined n-vectors applied
    to the adjusted outcome; they reproduce intercepts exactly and
    annihilate polynomials up to order p + 1.
    """

    tau_bc: float
    point: PointEstimate
    bias: BiasEstimate
    weights_minus: LinearWeights
    weights_plus: LinearWeights
    h: float
    b: float
    adjusted: np.ndarray = field(repr=False)

    @property
    def tau(self) -> float:
        return self.point.tau

    @property
    def combined_weights(self) -> np.ndarray:
        return self.weights_plus.w - self.weights_minus.w


@dataclass(frozen=True)
class VarianceEstimate:
    """Variance of the bias-corrected estimator, in Theorem-2 scaling.

    ``v_bc`` is normalized so that the standard error is
    sqrt(v_bc / (n h)); ``absolute`` is the unscaled conditional variance.
    """

    v_bc: float
    method: VarianceMethod
    nn_neighbors: int
    df_note: str
    n: int
    h: float

    @property
    def absolute(self) -> float:
        return self.v_bc / (self.n * self.h)

    @property
    def se(self) -> float:
        return float(np.sqrt(self.absolute))


@dataclass(frozen=True)
class InferenceResult:
    """Robust bias-corrected confidence interval and test."""

    tau_bc: float
    se: float
    ci_low: float
    ci_high: float
    p_value: float
    t_stat: float
    level: float
    h: float
    b: float
    effective_n: tuple
    method: VarianceMethod
    tau: float
    notes: tuple = ()

    @property
    def ci_length(self) -> float:
        return self.ci_high - self.ci_low

    def to_dict(self) -> dict:
        return {
            "point_estimate": self.tau,
            "bias_corrected_estimate": self.tau_bc,
            "se": self.se,
            "robust_ci": [self.ci_low, self.ci_high],
            "ci_length": self.ci_length,
            "robust_p_value": self.p_value,
            "t_stat": self.t_stat,
            "level": self.level,
            "h": self.h,
            "b": self.b,
            "n_left": self.effective_n[0],
            "n_right": self.effective_n[1],
            "vce": self.method.value,
            "notes": list(self.notes),
        }


def normal_interval(tau_bc: float, v_bc: float, nh: float, level: float) -> tuple:
    """Two-sided normal interval tau_bc +/- z * sqrt(v_bc / nh)."""
    if not 0.0 < level < 1.0:
        raise ConfigError(f"level must be in (0, 1), got {level}")
    se = float(np.sqrt(v_bc / nh))
    zq = float(norm.ppf(0.5 + level / 2.0))
    return tau_bc - zq * se, tau_bc + zq * se


# ---------------------------------------------------------------------------
# Residual proxies
# ---------------------------------------------------------------------------

def _nn_pick_exact(xs: np.ndarray, order: np.ndarray, t: int, neighbors: int) -> np.ndarray:
    """Exact J-nearest with (distance, row index) tie-breaking at position t."""
    left, right = t - 1, t + 1
    candidates = []
    # Two-pointer sweep: gather J candidates by distance, then keep absorbing
    # exact distance ties so index tie-breaking is exact.
    while len(candidates) < neighbors:
        d_left = xs[t] - xs[left] if left >= 0 else np.inf
        d_right = xs[right] - xs[t] if right < xs.size else np.inf
        if d_left <= d_right:
            candidates.append((d_left, int(order[left])))
            left -= 1
        else:
            candidates.append((d_right, int(order[right])))
            right += 1
    d_max = max(c[0] for c in candidates)
    while left >= 0 and xs[t] - xs[left] == d_max:
        candidates.append((d_max, int(order[left])))
        left -= 1
    while right < xs.size and xs[right] - xs[t] == d_max:
        candidates.append((d_max, int(order[right])))
        right += 1
    candidates.sort()
    return np.array([idx for _, idx in candidates[:neighbors]])


def nn_residuals(
    x: np.ndarray,
    stacked: np.ndarray,
    pool_mask: np.ndarray,
    query_mask: np.ndarray,
    neighbors: int,
) -> np.ndarray:
    """Nearest-neighbor residual proxies for rows flagged in ``query_mask``.

    For each query unit the J nearest same-pool units by |x_j - x_i| are
    averaged (ties broken by ascending row index) and
    sqrt(J/(J+1)) * (S_i - mean) is returned.  Rows outside the query mask
    are zero.
    """
    if neighbors < 1:
        raise ConfigError("nn_neighbors must be >= 1")
    stacked = np.atleast_2d(stacked.T).T
    out = np.zeros_like(stacked, dtype=float)
    pool = np.flatnonzero(pool_mask)
    if pool.size - 1 < neighbors:
        raise ConfigError(
            f"nn_neighbors={neighbors} exceeds pool size minus one ({pool.size - 1})"
        )
    order = pool[np.lexsort((pool, x[pool]))]
    xs = x[order]
    m = order.size
    posmap = np.empty(x.size, dtype=np.intp)
    posmap[order] = np.arange(m)
    queries = np.flatnonzero(query_mask & pool_mask)
    if queries.size == 0:
        return out
    t = posmap[queries]

    # Vectorized window search: the J nearest in a sorted array live within J
    # positions on either side, so 2J window candidates always suffice.
    offsets = np.concatenate([np.arange(-neighbors, 0), np.arange(1, neighbors + 1)])
    window = t[:, None] + offsets[None, :]
    valid = (window >= 0) & (window < m)
    window_safe = np.clip(window, 0, m - 1)
    dist = np.abs(xs[window_safe] - xs[t][:, None])
    dist[~valid] = np.inf
    picked = np.argpartition(dist, neighbors - 1, axis=1)[:, :neighbors]
    sorted_two = np.partition(dist, (neighbors - 1, neighbors), axis=1)
    d_j = sorted_two[:, neighbors - 1]
    # Ties at the J-th distance (inside the window or spilling past it) need
    # the exact index-ordered selection.
    boundary = np.minimum(dist[:, 0], dist[:, -1])
    needs_exact = (sorted_two[:, neighbors] == d_j) | (boundary <= d_j)

    shrink = np.sqrt(neighbors / (neighbors + 1.0))
    rows = np.take_along_axis(window_safe, picked, axis=1)
    neighbor_ids = order[rows]
    means = stacked[neighbor_ids].mean(axis=1)
    out[queries] = shrink * (stacked[queries] - means)
    for qi in np.flatnonzero(needs_exact):
        chosen = _nn_pick_exact(xs, order, int(t[qi]), neighbors)
        out[queries[qi]] = shrink * (stacked[queries[qi]] - stacked[chosen].mean(axis=0))
    return out


def plugin_residuals(
    x: np.ndarray,
    stacked: np.ndarray,
    kernel,
    order: int,
    bandwidth: float,
    variant: VarianceMethod,
) -> np.ndarray:
    """Side-by-side local WLS residuals with HC0-HC3 adjustments.

    Each column of ``stacked`` is fit by an order-``order`` local polynomial
    at ``bandwidth`` on each side; residuals are leverage-adjusted per the
    requested variant.  Rows with zero kernel weight are zero.
    """
    stacked = np.atleast_2d(stacked.T).T
    out = np.zeros_like(stacked, dtype=float)
    kern = kernel_weight(kernel, x / bandwidth)
    for side in (Side.LEFT, Side.RIGHT):
        mask = side_mask(x, side) & (kern > 0.0)
        m = int(mask.sum())
        if np.unique(x[mask]).size < order + 1:
            raise InsufficientDataError(
                f"fewer than {order + 1} distinct points for residual fit on side "
                f"{side.value!r} at bandwidth {bandwidth:g}"
            )
        u = x[mask] / bandwidth
        cols = [u**j for j in range(order + 1)]
        names = ["intercept"] + [f"x^{j}" for j in range(1, order + 1)]
        factor = WlsFactor(cols, kern[mask], names)
        beta = factor.solve(stacked[mask])
        design = np.column_stack(cols)
        resid = stacked[mask] - design @ beta
        if variant == VarianceMethod.HC1:
            dof = max(m - (order + 1), 1)
            resid = resid * np.sqrt(m / dof)
        elif variant in (VarianceMethod.HC2, VarianceMethod.HC3):
            lev = np.clip(factor.leverage(), 0.0, 1.0 - 1e-12)
            adjust = np.sqrt(1.0 - lev) if variant == VarianceMethod.HC2 else (1.0 - lev)
            resid = resid / adjust[:, None]
        out[mask] = resid
    return out


def _residual_proxies(
    data: Dataset,
    spec: LocalFitSpec,
    reach: float,
    method: VarianceMethod,
    nn_neighbors: int,
    query_mask: np.ndarray,
) -> np.ndarray:
    """Per-unit (1+d) residual proxies for the stacked (y, Z) variables."""
    stacked = np.column_stack([data.y, data.z]) if data.d > 0 else data.y[:, None]
    if method == VarianceMethod.NN:
        out = np.zeros_like(stacked, dtype=float)
        for side in (Side.LEFT, Side.RIGHT):
            pool = side_mask(data.x, side)
            queries = query_mask & pool
            if queries.any():
                out += nn_residuals(data.x, stacked, pool, queries, nn_neighbors)
        return out
    variant = VarianceMethod.HC0 if method == VarianceMethod.CLUSTER else method
    return plugin_residuals(data.x, stacked, spec.kernel, spec.p + 1, reach, variant)


def variance_of_weights(
    w: np.ndarray,
    xi: np.ndarray,
    cluster: np.ndarray | None = None,
    cluster_adjust: bool = False,
) -> tuple:
    """Conditional variance of a linear estimator w @ u given residual proxies.

    Heteroskedastic case: sum of w_i^2 xi_i^2.  Clustered case: sum over
    clusters of squared within-cluster sums of w_i xi_i, optionally scaled
    by G/(G-1).  Returns (variance, note).
    """
    contrib = w * xi
    if cluster is None:
        return float(np.sum(contrib**2)), "heteroskedastic, unit-level"
    active = w != 0.0
    ids, inverse = np.unique(cluster[active], return_inverse=True)
    sums = np.bincount(inverse, weights=contrib[active], minlength=ids.size)
    var = float(np.sum(sums**2))
    g = ids.size
    note = f"cluster-robust, G={g}"
    if cluster_adjust:
        if g < 2:
            raise DegenerateVarianceError("G/(G-1) adjustment needs at least 2 clusters")
        var *= g / (g - 1.0)
        note += ", G/(G-1) adjustment"
    else:
        note += ", no small-G adjustment"
    return var, note


# ---------------------------------------------------------------------------
# Bias correction
# ---------------------------------------------------------------------------

def _one_sided_bc_parts(
    spec: LocalFitSpec, x: np.ndarray, b: float, q: int, side: Side
) -> tuple:
    """Intercept weights, derivative weights, and design constant for a side."""
    level = _poly_weights(spec.kernel, spec.p, spec.h, side, x, derivative=0)
    deriv = _poly_weights(spec.kernel, q, b, side, x, derivative=spec.p + 1)
    psi = float(level.w @ x ** (spec.p + 1))
    return level, deriv, psi


def bias_estimate(
    data: Dataset,
    spec: LocalFitSpec,
    b: float,
    kind: EstimatorKind = EstimatorKind.COVADJ,
    q: int | None = None,
) -> BiasEstimate:
    """Estimate the leading smoothing-bias coefficient of the point estimator.

    Per side, the (p+1)-th derivative of the adjusted outcome at the cutoff
    is estimated from an order-q fit (default q = p + 1) at the preliminary
    bandwidth ``b``, then multiplied by the order-p fit's pre-asymptotic
    design constant at the main bandwidth.  The covariate coefficient is
    frozen from the point fit.
    """
    if not np.isfinite(b) or b <= 0.0:
        raise ConfigError(f"preliminary bandwidth must be positive, got {b}")
    q = spec.p + 1 if q is None else q
    if q < spec.p + 1:
        raise ConfigError(f"bias-estimation order q={q} must be at least p+1={spec.p + 1}")
    _, u = adjusted_outcome(data, kind, spec)
    sides = {}
    derivs = {}
    for side in (Side.LEFT, Side.RIGHT):
        _, deriv_w, psi = _one_sided_bc_parts(spec, data.x, b, q, side)
        m_hat = deriv_w.apply(u)
        derivs[side] = m_hat
        sides[side] = psi / spec.h ** (spec.p + 1) * m_hat / factorial(spec.p + 1)
    return BiasEstimate(
        b_tilde=sides[Side.RIGHT] - sides[Side.LEFT],
        b=float(b),
        q=q,
        per_side=(sides[Side.RIGHT], sides[Side.LEFT]),
        derivative_estimates=(derivs[Side.RIGHT], derivs[Side.LEFT]),
    )


def bias_corrected_estimate(
    data: Dataset,
    kind: EstimatorKind = EstimatorKind.COVADJ,
    spec: LocalFitSpec | None = None,
    b: float | None = None,
    q: int | None = None,
) -> BiasCorrectedEstimate:
    """Bias-corrected RD estimate with its combined linear weights.

    The returned weights satisfy, per side, intercept reproduction and
    annihilation of polynomials up to order p + 1; applying the
    right-minus-left combination to the adjusted outcome reproduces the
    estimate exactly.  Default preliminary bandwidth is b = h.
    """
    if spec is None:
        raise ConfigError("a LocalFitSpec is required")
    b = spec.h if b is None else float(b)
    if not np.isfinite(b) or b <= 0.0:
        raise ConfigError(f"preliminary bandwidth must be positive, got {b}")
    q = spec.p + 1 if q is None else q
    point, u = adjusted_outcome(data, kind, spec)
    combined = {}
    derivs = {}
    sides_bias = {}
    for side in (Side.LEFT, Side.RIGHT):
        level, deriv_w, psi = _one_sided_bc_parts(spec, data.x, b, q, side)
        w_bc = level.w - psi / factorial(spec.p + 1) * deriv_w.w
        combined[side] = LinearWeights(
            w=w_bc,
            target=f"bias-corrected intercept, side {side.value}, p={spec.p}, "
            f"h={spec.h:g}, b={b:g}",
            effective_n=int(np.count_nonzero(w_bc)),
        )
        m_hat = deriv_w.apply(u)
        derivs[side] = m_hat
        sides_bias[side] = (
            psi / spec.h ** (spec.p + 1) * m_hat / factorial(spec.p + 1)
        )
    bias = BiasEstimate(
        b_tilde=sides_bias[Side.RIGHT] - sides_bias[Side.LEFT],
        b=b,
        q=q,
        per_side=(sides_bias[Side.RIGHT], sides_bias[Side.LEFT]),
        derivative_estimates=(derivs[Side.RIGHT], derivs[Side.LEFT]),
    )
    tau_bc = float((combined[Side.RIGHT].w - combined[Side.LEFT].w) @ u)
    return BiasCorrectedEstimate(
        tau_bc=tau_bc,
        point=point,
        bias=bias,
        weights_minus=combined[Side.LEFT],
        weights_plus=combined[Side.RIGHT],
        h=spec.h,
        b=b,
        adjusted=u,
    )


def variance_bc(
    data: Dataset,
    spec: LocalFitSpec,
    b: float | None = None,
    method: VarianceMethod | str = VarianceMethod.NN,
    kind: EstimatorKind = EstimatorKind.COVADJ,
    nn_neighbors: int = DEFAULT_NN_NEIGHBORS,
    cluster_adjust: bool = False,
    q: int | None = None,
    _bc: BiasCorrectedEstimate | None = None,
) -> VarianceEstimate:
    """Variance of the bias-corrected estimator via per-unit residual proxies.

    The estimator is an exact linear functional of the stacked (y, Z) rows
    given the frozen covariate coefficient; its conditional variance is
    assembled from squared weighted residual proxies (or within-cluster
    sums for the cluster-robust method).
    """
    method = VarianceMethod.parse(method) if isinstance(method, str) else method
    if method == VarianceMethod.CLUSTER and data.cluster is None:
        raise ConfigError("cluster-robust variance requested but no cluster ids present")
    bc = _bc if _bc is not None else bias_corrected_estimate(data, kind, spec, b, q)
    w = bc.combined_weights
    query = w != 0.0
    reach = max(bc.h, bc.b)
    proxies = _residual_proxies(data, spec, reach, method, nn_neighbors, query)
    s_hat = bc.point.s_hat
    if s_hat is None:
        raise ConfigError("variance requires a kind with a common covariate coefficient")
    if data.d == 0:
        s_hat = s_hat[:1]
    xi = proxies @ s_hat
    cluster = data.cluster if method == VarianceMethod.CLUSTER else None
    var_abs, note = variance_of_weights(w, xi, cluster, cluster_adjust)
    if method == VarianceMethod.NN:
        note = f"NN proxies, J={nn_neighbors}; {note}"
    elif method != VarianceMethod.CLUSTER:
        note = f"plug-in residuals ({method.value}), order {spec.p + 1} fit at {reach:g}; {note}"
    else:
        note = f"plug-in residuals (hc0), order {spec.p + 1} fit at {reach:g}; {note}"
    return VarianceEstimate(
        v_bc=var_abs * data.n * bc.h,
        method=method,
        nn_neighbors=nn_neighbors,
        df_note=note,
        n=data.n,
        h=bc.h,
    )


def robust_ci(
    data: Dataset,
    spec: LocalFitSpec,
    b: float | None = None,
    method: VarianceMethod | str = VarianceMethod.NN,
    level: float = 0.95,
    kind: EstimatorKind = EstimatorKind.COVADJ,
    nn_neighbors: int = DEFAULT_NN_NEIGHBORS,
    cluster_adjust: bool = False,
    null: float = 0.0,
) -> InferenceResult:
    """Robust bias-corrected confidence interval and two-sided normal test.

    The interval is tau_bc +/- z_{1-alpha/2} * sqrt(v_bc / (n h)); the
    p-value tests tau = ``null`` (default 0) against the standard normal.
    """
    bc = bias_corrected_estimate(data, kind, spec, b)
    variance = variance_bc(
        data, spec, b, method, kind, nn_neighbors, cluster_adjust, _bc=bc
    )
    if variance.absolute <= 0.0:
        raise DegenerateVarianceError(
            "variance estimate is zero; confidence interval is degenerate"
        )
    se = variance.se
    lo, hi = normal_interval(bc.tau_bc, variance.v_bc, data.n * bc.h, level)
    t_stat = (bc.tau_bc - null) / se
    p_value = float(2.0 * norm.sf(abs(t_stat)))
    notes = list(bc.point.notes)
    if bc.b < bc.h / 2.0:
        notes.append(
            f"preliminary bandwidth b={bc.b:g} is below h/2={bc.h / 2:g}; "
            "the bias fit may be unstable"
        )
    return InferenceResult(
        tau_bc=bc.tau_bc,
        se=se,
        ci_low=lo,
        ci_high=hi,
        p_value=p_value,
        t_stat=float(t_stat),
        level=level,
        h=bc.h,
        b=bc.b,
        effective_n=bc.point.effective_n,
        method=variance.method,
        tau=bc.point.tau,
        notes=tuple(notes),
    )


@dataclass(frozen=True)
class PlaceboRow:
    """Balance evidence for one covariate used as the outcome."""

    name: str
    tau_z: float
    ci_low: float
    ci_high: float
    p_value: float
    h: float
    b: float

    def to_dict(self) -> dict:
        return {
            "covariate": self.name,
            "rd_effect": self.tau_z,
            "robust_ci": [self.ci_low, self.ci_high],
            "robust_p_value": self.p_value,
            "h": self.h,
            "b": self.b,
        }


def placebo_tests(
    data: Dataset,
    spec_per_covariate: list | LocalFitSpec | None = None,
    b: float | None = None,
    kernel=None,
    p: int = 1,
    method: VarianceMethod | str = VarianceMethod.NN,
    level: float = 0.95,
) -> list:
    """Run the full no-covariate robust pipeline with each covariate as outcome.

    A nonzero effect on a predetermined covariate signals design invalidity;
    under covariate balance every row should show no effect.  When no fit
    spec is given, an MSE-optimal bandwidth is selected per covariate.
    Returns an empty list when the dataset has no covariates.
    """
    from .bandwidth import select  # local import to avoid a cycle

    from .locfit import Kernel

    kernel = Kernel.TRIANGULAR if kernel is None else kernel
    rows = []
    for k, name in enumerate(data.covariate_names):
        subset = Dataset(
            y=data.z[:, k],
            x=data.x,
            z=np.empty((data.n, 0)),
            cluster=data.cluster,
            cutoff_original=data.cutoff_original,
        )
        if spec_per_covariate is None:
            selection = select(
                subset, kind=EstimatorKind.STANDARD, kernel=kernel, p=p, vce=method
            )
            spec_k = LocalFitSpec(h=selection.h, kernel=kernel, p=p)
            b_k = selection.b
        elif isinstance(spec_per_covariate, (list, tuple)):
            spec_k, b_k = spec_per_covariate[k], b
        else:
            spec_k, b_k = spec_per_covariate, b
        result = robust_ci(
            subset, spec_k, b=b_k, method=method, level=level, kind=EstimatorKind.STANDARD
        )
        rows.append(
            PlaceboRow(
                name=name,
                tau_z=result.tau,
                ci_low=result.ci_low,
                ci_high=result.ci_high,
                p_value=result.p_value,
                h=spec_k.h,
                b=result.b,
            )
        )
    return rows


def efficiency_ratio(
    data: Dataset,
    spec: LocalFitSpec,
    method: VarianceMethod | str = VarianceMethod.NN,
    nn_neighbors: int = DEFAULT_NN_NEIGHBORS,
) -> float:
    """Sample variance ratio of the covariate-adjusted to the standard estimator.

    Both variances use the uncorrected point-estimator weights at the same
    bandwidth; a ratio below 1 indicates the expected precision gain from
    including the covariates.
    """
    method = VarianceMethod.parse(method) if isinstance(method, str) else method
    point, u = adjusted_outcome(data, EstimatorKind.COVADJ, spec)
    minus = _poly_weights(spec.kernel, spec.p, spec.h, Side.LEFT, data.x, 0)
    plus = _poly_weights(spec.kernel, spec.p, spec.h, Side.RIGHT, data.x, 0)
    w = plus.w - minus.w
    query = w != 0.0
    proxies = _residual_proxies(data, spec, spec.h, method, nn_neighbors, query)
    s_hat = point.s_hat if data.d > 0 else np.ones(1)
    xi_adjusted = proxies @ s_hat
    xi_standard = proxies[:, 0]
    var_adjusted, _ = variance_of_weights(w, xi_adjusted)
    var_standard, _ = variance_of_weights(w, xi_standard)
    if var_standard <= 0.0:
        raise DegenerateVarianceError("standard-estimator variance is zero")
    return var_adjusted / var_standard
