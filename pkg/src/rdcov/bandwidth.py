"""Data-driven MSE- and CER-optimal bandwidth selection.

Three-stage plug-in: a normal-reference initializer sets the pilot
bandwidth, the preliminary bandwidth b is chosen as MSE-optimal for the
difference of one-sided (p+1)-th derivatives, and the main bandwidth h
follows from the plug-in bias and variance constants.  Near-zero bias
constants trigger a regularization fallback that adds the sampling variance
of the bias estimate to its square.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from math import factorial

import numpy as np

from .data import Dataset
from .errors import ConfigError, InsufficientDataError, NearZeroBiasError
from .estimators import EstimatorKind, adjusted_outcome
from .inference import (
    DEFAULT_NN_NEIGHBORS,
    VarianceMethod,
    _residual_proxies,
    variance_of_weights,
)
from .locfit import Kernel, LocalFitSpec, Side, WlsFactor, _poly_weights, side_mask

#: Normal-reference constant for the initial pilot bandwidth
#: rho0 = PILOT_CONSTANT * sd(x) * n^(-1/5); configurable via ``select``.
PILOT_CONSTANT = 2.576 / np.sqrt(5.0)

#: Trigger for the near-zero-bias regularization fallback.
REGULARIZATION_EPS = 1e-8


def mse_bandwidth(B: float, V: float, n: int, p: int) -> float:
    """Closed-form MSE-optimal bandwidth from bias and variance constants.

    Minimizes h**(2(p+1)) B**2 + V / (n h), giving
    [ (V/n) / (2 (p+1) B**2) ]**(1/(2p+3)); for p = 1 this is the familiar
    [ (V/n) / (4 B**2) ]**(1/5), decaying as n**(-1/(3+2p)).

    Raises
    ------
    NearZeroBiasError
        B == 0; use the regularization fallback in :func:`select`.
    """
    if n < 1:
        raise ConfigError(f"n must be >= 1, got {n}")
    if not np.isfinite(V) or V <= 0.0:
        raise ConfigError(f"variance constant must be positive, got {V}")
    if B == 0.0 or not np.isfinite(B):
        raise NearZeroBiasError(
            "bias constant is zero; the MSE-optimal bandwidth is unbounded - "
            "use the regularized selector fallback"
        )
    return float(((V / n) / (2.0 * (p + 1) * B * B)) ** (1.0 / (2 * p + 3)))


def cer_bandwidth(h_mse: float, n: int, p: int) -> float:
    """Coverage-error-rate optimal shrinkage of an MSE-optimal bandwidth.

    For p = 1 the factor is n**(-1/20); for generic p it is
    n**(-p / ((3+2p)(3+p))), which reduces to the p = 1 rate.
    """
    if h_mse <= 0.0:
        raise ConfigError(f"h_mse must be positive, got {h_mse}")
    if n < 1:
        raise ConfigError(f"n must be >= 1, got {n}")
    exponent = -p / float((3 + 2 * p) * (3 + p))
    return float(h_mse * n**exponent)


@dataclass(frozen=True)
class PilotRecord:
    """Intermediate pilot bandwidths and estimated constants, for audit."""

    rho_v: float
    rho_b: float
    pilot_constant: float
    sigma_x: float
    b_bias_constant: float
    b_variance_constant: float
    b_regularized: bool
    h_bias_constant: float
    h_variance_constant: float
    h_regularized: bool

    def to_dict(self) -> dict:
        return {
            "variance_pilot": self.rho_v,
            "derivative_pilot": self.rho_b,
            "pilot_constant": self.pilot_constant,
            "sigma_x": self.sigma_x,
            "b_stage": {
                "bias_constant": self.b_bias_constant,
                "variance_constant": self.b_variance_constant,
                "regularized": self.b_regularized,
            },
            "h_stage": {
                "bias_constant": self.h_bias_constant,
                "variance_constant": self.h_variance_constant,
                "regularized": self.h_regularized,
            },
        }


@dataclass(frozen=True)
class BandwidthSelection:
    """Selected main and preliminary bandwidths with the selection trace."""

    h: float
    b: float
    rule: str
    pilot: PilotRecord | None
    kind: EstimatorKind
    kernel: Kernel
    p: int
    vce: VarianceMethod
    notes: tuple = ()

    def to_dict(self) -> dict:
        return {
            "h": self.h,
            "b": self.b,
            "rule": self.rule,
            "kind": self.kind.value,
            "kernel": self.kernel.value,
            "p": self.p,
            "vce": self.vce.value,
            "pilot": self.pilot.to_dict() if self.pilot else None,
            "notes": list(self.notes),
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def _distinct_floor(x: np.ndarray, n_points: int) -> float:
    """Smallest bandwidth giving n_points distinct positive-weight points per side."""
    floors = []
    for side in (Side.LEFT, Side.RIGHT):
        mask = x < 0.0 if side == Side.LEFT else x >= 0.0
        distinct = np.unique(np.abs(x[mask]))
        if distinct.size < n_points:
            raise InsufficientDataError(
                f"side {side.value!r} has only {distinct.size} distinct score values; "
                f"{n_points} are needed"
            )
        floors.append(distinct[n_points - 1])
    floor = max(floors)
    return float(floor * (1.0 + 1e-8) + 1e-300)


def _clamp(value: float, floor: float, ceiling: float, label: str, notes: list) -> float:
    clamped = min(max(value, floor), ceiling)
    if clamped != value:
        notes.append(f"{label} clamped from {value:.6g} to {clamped:.6g}")
    return clamped


def _weight_variance_abs(
    data: Dataset,
    base_spec: LocalFitSpec,
    w: np.ndarray,
    reach: float,
    vce: VarianceMethod,
    nn_neighbors: int,
    s_hat: np.ndarray,
    cluster_adjust: bool,
) -> float:
    query = w != 0.0
    proxies = _residual_proxies(data, base_spec, reach, vce, nn_neighbors, query)
    sh = s_hat if data.d > 0 else s_hat[:1]
    xi = proxies @ sh
    cluster = data.cluster if vce == VarianceMethod.CLUSTER else None
    var_abs, _ = variance_of_weights(w, xi, cluster, cluster_adjust)
    return var_abs


def _regularize(bias_sq: float, var_of_bias: float, v_scaled: float, n: int) -> tuple:
    trigger = bias_sq < REGULARIZATION_EPS * np.sqrt(max(v_scaled / n, 0.0))
    if trigger:
        bias_sq = bias_sq + var_of_bias
    return bias_sq, trigger


def select(
    data: Dataset,
    kind: EstimatorKind = EstimatorKind.COVADJ,
    kernel: Kernel = Kernel.TRIANGULAR,
    p: int = 1,
    vce: VarianceMethod | str = VarianceMethod.NN,
    rule: str = "mse",
    b_equals_h: bool = False,
    pilot_constant: float = PILOT_CONSTANT,
    nn_neighbors: int = DEFAULT_NN_NEIGHBORS,
    cluster_adjust: bool = False,
) -> BandwidthSelection:
    """Data-driven bandwidth selection for the RD point estimator.

    Parameters
    ----------
    data : Dataset
        Two-sided dataset.
    kind : EstimatorKind
        ``covadj`` (default) or ``standard``; determines whether the
        variance constant uses the covariate-adjusted outcome.
    kernel, p : Kernel, int
        Kernel and polynomial order of the eventual point fit.
    vce : VarianceMethod
        Residual-proxy method for the pilot variance constants.
    rule : str
        ``"mse"`` or ``"cer"`` (CER shrinks the MSE-optimal h).
    b_equals_h : bool
        Force the preliminary bandwidth equal to h instead of selecting it.

    Returns
    -------
    BandwidthSelection
        Deterministic given the data; includes the full pilot trace.
    """
    kind = EstimatorKind(kind)
    if kind not in (EstimatorKind.COVADJ, EstimatorKind.STANDARD):
        raise ConfigError("bandwidth selection supports the standard and covadj kinds")
    vce = VarianceMethod.parse(vce) if isinstance(vce, str) else vce
    if rule not in ("mse", "cer"):
        raise ConfigError(f"unknown bandwidth rule {rule!r}")
    if vce == VarianceMethod.CLUSTER and data.cluster is None:
        raise ConfigError("cluster-robust pilot variance requested but no cluster ids")

    notes: list = []
    x = data.x
    n = data.n
    x_max = float(np.max(np.abs(x)))
    floor_pilot = _distinct_floor(x, p + 4)
    floor_b = _distinct_floor(x, p + 3)
    floor_h = _distinct_floor(x, p + 2)

    sigma_x = float(np.std(x))
    # Rate-correct pilots: n^(-1/5) for the level-variance stage, n^(-1/(2p+7))
    # for the derivative stage (the derivative target of order p+1 from an
    # order-(p+1) fit needs a slower-decaying bandwidth to stay consistent).
    rho_v = pilot_constant * sigma_x * n ** (-1.0 / 5.0)
    rho_v = _clamp(rho_v, floor_pilot, x_max, "variance pilot bandwidth", notes)
    rho_b = pilot_constant * sigma_x * n ** (-1.0 / (2 * p + 7))
    rho_b = _clamp(rho_b, floor_pilot, x_max, "derivative pilot bandwidth", notes)

    pilot_spec = LocalFitSpec(h=rho_v, kernel=kernel, p=p, side=Side.POOLED)
    point, u = adjusted_outcome(data, kind, pilot_spec)
    s_hat = point.s_hat

    def deriv_weights(order, nu, bw):
        minus = _poly_weights(kernel, order, bw, Side.LEFT, x, nu)
        plus = _poly_weights(kernel, order, bw, Side.RIGHT, x, nu)
        return minus, plus

    # --- stage 1: preliminary bandwidth b for the (p+1)-th derivative ------
    # The deepest unknown, the (p+2)-th derivative, comes from a global
    # side-by-side polynomial fit of order p+3 (no kernel), which is the
    # stable anchor of the recursive plug-in.
    m3 = {}
    m3_rows = {}
    for side, label in ((Side.LEFT, -1), (Side.RIGHT, +1)):
        mask = side_mask(x, side)
        cols = [x[mask] ** j for j in range(p + 4)]
        names = ["intercept"] + [f"x^{j}" for j in range(1, p + 4)]
        factor = WlsFactor(cols, np.ones(int(mask.sum())), names)
        m3[label] = float(factor.coefficient_row(p + 2) @ u[mask])
        row = np.zeros_like(x)
        row[mask] = factor.coefficient_row(p + 2)
        m3_rows[label] = row
    d_minus, d_plus = deriv_weights(p + 1, p + 1, rho_b)
    const_minus = float(d_minus.w @ x ** (p + 2)) / rho_b
    const_plus = float(d_plus.w @ x ** (p + 2)) / rho_b
    c_b = const_plus * m3[+1] - const_minus * m3[-1]
    w_deriv = d_plus.w - d_minus.w
    var_deriv_abs = _weight_variance_abs(
        data, pilot_spec, w_deriv, rho_b, vce, nn_neighbors, s_hat, cluster_adjust
    )
    v_b = n * rho_b ** (2 * (p + 1) + 1) * var_deriv_abs
    var_cb = _weight_variance_abs(
        data,
        pilot_spec,
        const_plus * m3_rows[+1] - const_minus * m3_rows[-1],
        x_max,
        vce,
        nn_neighbors,
        s_hat,
        cluster_adjust,
    )
    cb_sq, b_regularized = _regularize(c_b * c_b, var_cb, v_b, n)
    if b_regularized:
        notes.append("near-zero derivative-bias constant; regularization fallback used for b")
    if cb_sq == 0.0:
        raise NearZeroBiasError(
            "derivative bias constant is exactly zero even after regularization"
        )
    b_raw = ((2 * p + 3) * v_b / (2.0 * n * cb_sq)) ** (1.0 / (2 * p + 5))
    b = _clamp(float(b_raw), floor_b, x_max, "preliminary bandwidth b", notes)

    # --- stage 2: main bandwidth h ------------------------------------------
    p_minus = _poly_weights(kernel, p, b, Side.LEFT, x, 0)
    p_plus = _poly_weights(kernel, p, b, Side.RIGHT, x, 0)
    kappa_minus = float(p_minus.w @ x ** (p + 1)) / b ** (p + 1)
    kappa_plus = float(p_plus.w @ x ** (p + 1)) / b ** (p + 1)
    e_minus, e_plus = deriv_weights(p + 1, p + 1, b)
    m2_minus = e_minus.apply(u) / factorial(p + 1)
    m2_plus = e_plus.apply(u) / factorial(p + 1)
    b_const = kappa_plus * m2_plus - kappa_minus * m2_minus

    level_minus, level_plus = deriv_weights(p, 0, rho_v)
    w_level = level_plus.w - level_minus.w
    var_level_abs = _weight_variance_abs(
        data, pilot_spec, w_level, rho_v, vce, nn_neighbors, s_hat, cluster_adjust
    )
    v_h = n * rho_v * var_level_abs

    var_bconst = _weight_variance_abs(
        data,
        pilot_spec,
        (e_plus.w * kappa_plus - e_minus.w * kappa_minus) / factorial(p + 1),
        max(b, rho_v),
        vce,
        nn_neighbors,
        s_hat,
        cluster_adjust,
    )
    b_sq, h_regularized = _regularize(b_const * b_const, var_bconst, v_h, n)
    if h_regularized:
        notes.append("near-zero bias constant; regularization fallback used for h")
    if b_sq == 0.0:
        raise NearZeroBiasError("bias constant is exactly zero even after regularization")
    h_raw = mse_bandwidth(float(np.sqrt(b_sq)), v_h, n, p)
    h = _clamp(float(h_raw), floor_h, x_max, "bandwidth h", notes)

    rule_name = f"mse_{kind.value}"
    if rule == "cer":
        h = _clamp(cer_bandwidth(h, n, p), floor_h, x_max, "CER bandwidth h", notes)
        rule_name = f"cer_{kind.value}"
    if b_equals_h:
        b = h
        notes.append("preliminary bandwidth forced to b = h")

    pilot = PilotRecord(
        rho_v=rho_v,
        rho_b=rho_b,
        pilot_constant=pilot_constant,
        sigma_x=sigma_x,
        b_bias_constant=float(c_b),
        b_variance_constant=float(v_b),
        b_regularized=b_regularized,
        h_bias_constant=float(b_const),
        h_variance_constant=float(v_h),
        h_regularized=h_regularized,
    )
    return BandwidthSelection(
        h=h,
        b=b,
        rule=rule_name,
        pilot=pilot,
        kind=kind,
        kernel=kernel,
        p=p,
        vce=vce,
        notes=tuple(notes),
    )
