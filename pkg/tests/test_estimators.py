"""Tests for the six RD regressions and the partial-out identity."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from conftest import make_dataset
from rdcov import (
    Dataset,
    EstimatorKind,
    Kernel,
    LocalFitSpec,
    OneSidedError,
    covariate_rd_effects,
    estimate,
)
from rdcov.locfit import kernel_weight


def exact_linear_dataset(n=120, seed=0, gamma=0.5, z_jump=0.0):
    """y = 1 + 2T + 3x + gamma*z with smooth-or-jumped z and no noise."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1.0, 1.0, n)
    t = (x >= 0.0).astype(float)
    z = 0.3 + 0.8 * x + rng.normal(0.0, 0.5, n) + z_jump * t
    y = 1.0 + 2.0 * t + 3.0 * x + gamma * z
    return Dataset(y=y, x=x, z=z[:, None])


@pytest.mark.parametrize("h", [0.4, 0.8, 1.5])
@pytest.mark.parametrize("kernel", list(Kernel))
def test_covadj_exact_linear_model(h, kernel):
    data = exact_linear_dataset()
    spec = LocalFitSpec(h=h, kernel=kernel, p=1)
    point = estimate(data, EstimatorKind.COVADJ, spec)
    assert point.tau == pytest.approx(2.0, abs=1e-9)
    assert point.gamma[0] == pytest.approx(0.5, abs=1e-9)


def test_standard_exact_and_kernel_free():
    rng = np.random.default_rng(1)
    x = rng.uniform(-1, 1, 90)
    t = (x >= 0).astype(float)
    y = 1.0 + 2.0 * t + 3.0 * x
    data = Dataset(y=y, x=x, z=np.empty((90, 0)))
    taus = [
        estimate(data, EstimatorKind.STANDARD, LocalFitSpec(h=0.7, kernel=k, p=1)).tau
        for k in Kernel
    ]
    assert_allclose(taus, 2.0, atol=1e-10)


def test_group_demeaned_closed_form():
    # Eq.(6)-style value equals 2 + gamma * (mean_z_right - mean_z_left),
    # with means over in-bandwidth observations only.
    data = exact_linear_dataset(seed=2, z_jump=0.6)
    h = 0.75
    spec = LocalFitSpec(h=h, kernel=Kernel.TRIANGULAR, p=1)
    point = estimate(data, EstimatorKind.DEMEANED_GROUP_INTERACTED, spec)
    in_band = np.abs(data.x) <= h
    z_left = data.z[in_band & (data.x < 0), 0].mean()
    z_right = data.z[in_band & (data.x >= 0), 0].mean()
    assert point.tau == pytest.approx(2.0 + 0.5 * (z_right - z_left), abs=1e-9)


def test_all_kinds_run_and_record_kind(dataset):
    spec = LocalFitSpec(h=0.6, p=1)
    for kind in EstimatorKind:
        point = estimate(dataset, kind, spec)
        assert point.kind == kind
        assert np.isfinite(point.tau)


def test_partial_out_identity_random_data():
    spec = LocalFitSpec(h=0.55, kernel=Kernel.TRIANGULAR, p=1)
    for seed in range(25):
        data = make_dataset(n=150, d=2, seed=seed)
        point = estimate(data, EstimatorKind.COVADJ, spec)
        tau_hat = estimate(data, EstimatorKind.STANDARD, spec).tau
        assert abs(point.tau - (tau_hat - point.tau_z @ point.gamma)) < 1e-10
        # s_hat applied to (tau_hat, tau_z) reproduces tau exactly
        stacked = np.concatenate([[tau_hat], point.tau_z])
        assert point.s_hat @ stacked == pytest.approx(point.tau, abs=1e-10)


def test_covadj_equals_demeaned_common():
    spec = LocalFitSpec(h=0.5, p=1)
    for seed in range(10):
        data = make_dataset(n=120, d=2, seed=seed + 50)
        a = estimate(data, EstimatorKind.COVADJ, spec)
        b = estimate(data, EstimatorKind.DEMEANED_COMMON, spec)
        assert a.tau == pytest.approx(b.tau, abs=1e-10)
        assert_allclose(a.gamma, b.gamma, atol=1e-10)


def test_translation_invariance():
    spec = LocalFitSpec(h=0.6, p=1)
    data = make_dataset(n=200, d=2, seed=9)
    shifted = Dataset(y=data.y, x=data.x, z=data.z + np.array([5.0, -3.0]))
    base = estimate(data, EstimatorKind.COVADJ, spec)
    moved = estimate(shifted, EstimatorKind.COVADJ, spec)
    assert base.tau == pytest.approx(moved.tau, abs=1e-9)
    assert_allclose(base.gamma, moved.gamma, atol=1e-9)


def test_orthogonal_covariate_leaves_tau_unchanged():
    # A column with zero weighted partial correlation with everything in the
    # fit gets a zero coefficient and cannot move tau.
    rng = np.random.default_rng(11)
    data = make_dataset(n=180, d=1, seed=11)
    h = 0.6
    spec = LocalFitSpec(h=h, kernel=Kernel.TRIANGULAR, p=1)
    kern = kernel_weight(Kernel.TRIANGULAR, data.x / h)
    mask = kern > 0
    t = data.treat
    design = np.column_stack(
        [np.ones(data.n), t, data.x, t * data.x, data.z[:, 0], data.y]
    )
    v = rng.normal(size=data.n)
    sw = np.sqrt(kern[mask])
    coef, *_ = np.linalg.lstsq(design[mask] * sw[:, None], v[mask] * sw, rcond=None)
    v_perp = np.zeros(data.n)
    v_perp[mask] = v[mask] - design[mask] @ coef
    augmented = Dataset(y=data.y, x=data.x, z=np.column_stack([data.z, v_perp]))
    base = estimate(data, EstimatorKind.COVADJ, spec)
    more = estimate(augmented, EstimatorKind.COVADJ, spec)
    assert more.tau == pytest.approx(base.tau, abs=1e-9)


def test_covariate_rd_effects_cases():
    rng = np.random.default_rng(12)
    x = rng.uniform(-1, 1, 100)
    t = (x >= 0).astype(float)
    spec = LocalFitSpec(h=0.8, p=1)
    # exactly linear, no jump
    z_linear = 0.2 + 1.1 * x
    data = Dataset(y=np.zeros(100), x=x, z=z_linear[:, None])
    assert covariate_rd_effects(data, spec)[0] == pytest.approx(0.0, abs=1e-10)
    # built-in jump 0.7
    z0 = 0.2 + 1.1 * x + rng.normal(0, 0.2, 100)
    data = Dataset(y=np.zeros(100), x=x, z=(z0 + 0.7 * t)[:, None])
    base = Dataset(y=np.zeros(100), x=x, z=z0[:, None])
    shift = covariate_rd_effects(data, spec)[0] - covariate_rd_effects(base, spec)[0]
    assert shift == pytest.approx(0.7, abs=1e-10)


def test_smooth_covariate_effect_near_zero_large_n():
    rng = np.random.default_rng(13)
    n = 5000
    x = rng.uniform(-1, 1, n)
    z = 0.5 + 0.3 * x + rng.normal(0, 0.4, n)
    data = Dataset(y=np.zeros(n), x=x, z=z[:, None])
    tz = covariate_rd_effects(data, LocalFitSpec(h=0.3, p=1))[0]
    # within ~4 sd of 0 under continuity
    assert abs(tz) < 4.0 * 0.4 * np.sqrt(16.0 / (n * 0.3))


def test_fallback_to_standard_without_covariates():
    rng = np.random.default_rng(14)
    x = rng.uniform(-1, 1, 80)
    data = Dataset(y=rng.normal(size=80), x=x, z=np.empty((80, 0)))
    point = estimate(data, EstimatorKind.COVADJ, LocalFitSpec(h=0.8, p=1))
    assert point.kind == EstimatorKind.STANDARD
    assert any("fell back" in note for note in point.notes)


def test_one_sided_refusal():
    x = np.linspace(0.1, 1.0, 30)
    data = Dataset(y=np.zeros(30), x=x, z=np.empty((30, 0)))
    with pytest.raises(OneSidedError):
        estimate(data, EstimatorKind.STANDARD, LocalFitSpec(h=0.5, p=1))


def test_effective_n_counts_in_band():
    data = make_dataset(n=300, seed=15)
    h = 0.4
    point = estimate(data, EstimatorKind.COVADJ, LocalFitSpec(h=h, p=1))
    in_band = np.abs(data.x) <= h
    assert point.effective_n == (
        int(np.sum(in_band & (data.x < 0))),
        int(np.sum(in_band & (data.x >= 0))),
    )


def test_diagnostic_kinds_carry_note(dataset):
    point = estimate(dataset, EstimatorKind.DEMEANED_GROUP_INTERACTED, LocalFitSpec(h=0.7))
    assert any("diagnostic" in note for note in point.notes)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), h=st.floats(0.45, 1.2))
def test_partial_out_property(seed, h):
    data = make_dataset(n=140, d=1, seed=seed)
    spec = LocalFitSpec(h=h, kernel=Kernel.TRIANGULAR, p=1)
    point = estimate(data, EstimatorKind.COVADJ, spec)
    tau_hat = estimate(data, EstimatorKind.STANDARD, spec).tau
    assert abs(point.tau - (tau_hat - point.tau_z @ point.gamma)) < 1e-9
