"""The six sharp-RD point estimators and the partial-out linearization.

All estimators are realized through a single joint weighted least squares
fit on an explicitly constructed design, so the regression each one runs is
auditable column by column.  The recommended estimator adds the covariates
with one common coefficient vector; the interacted and demeaned variants
are retained as diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .data import Dataset
from .errors import ConfigError, InsufficientDataError, OneSidedError
from .locfit import LocalFitSpec, Side, fit_weights, joint_fit


class EstimatorKind(str, Enum):
    """One-to-one with the six regression specifications.

    ``standard`` has no covariates; ``covadj`` (the recommended estimator)
    adds them with a common coefficient; ``interacted`` allows separate
    coefficients per side; the ``demeaned_*`` variants subtract common or
    group in-bandwidth covariate means before entering the regression.
    """

    STANDARD = "standard"
    COVADJ = "covadj"
    INTERACTED = "interacted"
    DEMEANED_COMMON = "demeaned_common"
    DEMEANED_COMMON_INTERACTED = "demeaned_common_interacted"
    DEMEANED_GROUP_INTERACTED = "demeaned_group_interacted"

    @property
    def requires_covariates(self) -> bool:
        return self != EstimatorKind.STANDARD

    @property
    def interacted(self) -> bool:
        return self in (
            EstimatorKind.INTERACTED,
            EstimatorKind.DEMEANED_COMMON_INTERACTED,
            EstimatorKind.DEMEANED_GROUP_INTERACTED,
        )


#: Kinds flagged as diagnostics: demeaning by local covariate averages
#: degrades rates and inflates variability relative to the common-coefficient
#: adjustment, so these are not recommended for primary analysis.
DIAGNOSTIC_KINDS = (
    EstimatorKind.DEMEANED_COMMON,
    EstimatorKind.DEMEANED_COMMON_INTERACTED,
    EstimatorKind.DEMEANED_GROUP_INTERACTED,
)


@dataclass(frozen=True)
class PointEstimate:
    """Result of one RD regression.

    ``gamma`` is the covariate coefficient vector (common kinds) or the
    pair (gamma_minus, gamma_plus) for interacted kinds.  ``tau_z`` holds
    the standard RD effect on each covariate at the same kernel and
    bandwidth.  ``s_hat`` is (1, -gamma')' for the kinds that satisfy the
    exact partial-out identity tau = tau_hat - tau_z' gamma; it is None for
    interacted kinds, where no single linear combination applies.
    """

    tau: float
    gamma: object
    tau_z: np.ndarray
    s_hat: np.ndarray | None
    kind: EstimatorKind
    spec: LocalFitSpec
    effective_n: tuple
    coefficients: np.ndarray
    notes: tuple = ()

    @property
    def gamma_common(self) -> np.ndarray:
        """Common covariate coefficient; zeros for the standard estimator."""
        if self.kind in (EstimatorKind.COVADJ, EstimatorKind.DEMEANED_COMMON):
            return self.gamma
        if self.kind == EstimatorKind.STANDARD:
            return np.zeros(self.tau_z.shape[0])
        raise ConfigError(
            f"estimator kind {self.kind.value!r} has side-specific covariate "
            "coefficients; no common gamma exists"
        )


def _check_ready(data: Dataset, spec: LocalFitSpec) -> None:
    if data.is_one_sided:
        raise OneSidedError(
            "all observations lie on one side of the cutoff; RD estimators refuse to run"
        )
    if spec.side != Side.POOLED:
        raise ConfigError("estimators use pooled fits; pass a spec with side='pooled'")


def _in_band_means(data: Dataset, h: float) -> tuple:
    """In-bandwidth covariate means: pooled, left of 0, and right of 0."""
    in_band = np.abs(data.x) <= h
    left = in_band & (data.x < 0.0)
    right = in_band & (data.x >= 0.0)
    if not left.any() or not right.any():
        raise InsufficientDataError(f"no observations within h={h:g} on one side")
    return (
        data.z[in_band].mean(axis=0),
        data.z[left].mean(axis=0),
        data.z[right].mean(axis=0),
    )


def estimate(data: Dataset, kind: EstimatorKind, spec: LocalFitSpec) -> PointEstimate:
    """Run one of the six RD regressions and return its point estimate.

    Parameters
    ----------
    data : Dataset
        Two-sided RD dataset.
    kind : EstimatorKind
        Which regression to run; with d = 0 covariate-requiring kinds fall
        back to the standard estimator with a note.
    spec : LocalFitSpec
        Kernel, polynomial order, and bandwidth (side must be pooled).

    Returns
    -------
    PointEstimate
        The coefficient on the treatment indicator is ``tau``; the realized
        regression's full coefficient vector is kept for auditing.
    """
    kind = EstimatorKind(kind)
    _check_ready(data, spec)
    notes = []
    if kind.requires_covariates and data.d == 0:
        notes.append(f"no covariates supplied; {kind.value} fell back to standard")
        kind = EstimatorKind.STANDARD

    t = data.treat
    z = data.z
    if kind == EstimatorKind.STANDARD:
        extras, extra_names = None, None
    elif kind == EstimatorKind.COVADJ:
        extras = z
        extra_names = [f"covariate {name}" for name in data.covariate_names]
    elif kind == EstimatorKind.DEMEANED_COMMON:
        z_bar, _, _ = _in_band_means(data, spec.h)
        extras = z - z_bar
        extra_names = [f"covariate {name} (demeaned)" for name in data.covariate_names]
    else:
        if kind == EstimatorKind.INTERACTED:
            z_minus, z_plus = z, z
        elif kind == EstimatorKind.DEMEANED_COMMON_INTERACTED:
            z_bar, _, _ = _in_band_means(data, spec.h)
            z_minus, z_plus = z - z_bar, z - z_bar
        else:  # DEMEANED_GROUP_INTERACTED
            _, z_bar_minus, z_bar_plus = _in_band_means(data, spec.h)
            z_minus, z_plus = z - z_bar_minus, z - z_bar_plus
        extras = np.column_stack([(1.0 - t)[:, None] * z_minus, t[:, None] * z_plus])
        extra_names = [f"covariate {name} (control side)" for name in data.covariate_names]
        extra_names += [f"covariate {name} (treated side)" for name in data.covariate_names]

    beta = joint_fit(spec, data.x, data.y, extras, extra_names)
    tau = float(beta[1])
    base = 2 * (spec.p + 1)
    d = data.d

    if kind == EstimatorKind.STANDARD:
        gamma = np.zeros(d)
    elif kind.interacted:
        gamma = (beta[base:base + d].copy(), beta[base + d:base + 2 * d].copy())
    else:
        gamma = beta[base:base + d].copy()

    tau_z = covariate_rd_effects(data, spec) if d > 0 else np.zeros(0)
    if kind == EstimatorKind.STANDARD:
        s_hat = np.concatenate([[1.0], np.zeros(d)])
    elif kind in (EstimatorKind.COVADJ, EstimatorKind.DEMEANED_COMMON):
        s_hat = np.concatenate([[1.0], -gamma])
    else:
        s_hat = None
        notes.append("partial-out linearization undefined for interacted kinds")

    in_band = np.abs(data.x) <= spec.h
    effective_n = (
        int(np.sum(in_band & (data.x < 0.0))),
        int(np.sum(in_band & (data.x >= 0.0))),
    )
    if kind in DIAGNOSTIC_KINDS:
        notes.append("diagnostic estimator - not recommended for primary analysis")
    return PointEstimate(
        tau=tau,
        gamma=gamma,
        tau_z=tau_z,
        s_hat=s_hat,
        kind=kind,
        spec=spec,
        effective_n=effective_n,
        coefficients=beta,
        notes=tuple(notes),
    )


def covariate_rd_effects(data: Dataset, spec: LocalFitSpec) -> np.ndarray:
    """Standard RD effect on each covariate (each column used as outcome)."""
    _check_ready(data, spec)
    out = np.empty(data.d)
    for k in range(data.d):
        beta = joint_fit(spec, data.x, data.z[:, k])
        out[k] = beta[1]
    return out


def adjusted_outcome(data: Dataset, kind: EstimatorKind, spec: LocalFitSpec) -> tuple:
    """Point estimate plus the linearized outcome y - Z gamma (gamma frozen).

    Only defined for kinds with a common covariate coefficient (standard,
    covadj, demeaned_common); the adjusted outcome is what the one-sided
    bias and variance machinery operates on.
    """
    point = estimate(data, kind, spec)
    gamma = point.gamma_common
    u = data.y - data.z @ gamma if data.d > 0 else data.y.copy()
    return point, u


def side_difference_weights(spec: LocalFitSpec, x: np.ndarray, derivative: int = 0):
    """Right-minus-left weight pair for an RD-type target at the cutoff."""
    minus = fit_weights(spec.replace(side=Side.LEFT), x, derivative)
    plus = fit_weights(spec.replace(side=Side.RIGHT), x, derivative)
    return minus, plus
