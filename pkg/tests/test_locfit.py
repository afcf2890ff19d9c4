"""Kernel and local WLS engine tests, checked against dense oracles."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from rdcov import (
    ConfigError,
    InsufficientDataError,
    Kernel,
    LocalFitSpec,
    RankDeficiencyError,
    Side,
    fit_weights,
    joint_fit,
    kernel_weight,
)
from rdcov.locfit import WlsFactor, rd_design


def dense_weight_row(x, w, order, derivative):
    """Independent oracle: nu! e_nu' (X'WX)^{-1} X'W via explicit inverse."""
    X = np.column_stack([x**j for j in range(order + 1)])
    XtWX = X.T @ (X * w[:, None])
    inv = np.linalg.inv(XtWX)
    from math import factorial

    return factorial(derivative) * (inv[derivative] @ (X.T * w))


@pytest.mark.parametrize(
    "kernel,u,expected",
    [
        (Kernel.TRIANGULAR, 0.0, 1.0),
        (Kernel.TRIANGULAR, 0.5, 0.5),
        (Kernel.TRIANGULAR, -0.5, 0.5),
        (Kernel.TRIANGULAR, 1.0, 0.0),
        (Kernel.UNIFORM, -0.3, 1.0),
        (Kernel.UNIFORM, 1.0, 1.0),
        (Kernel.UNIFORM, 1.2, 0.0),
        (Kernel.EPANECHNIKOV, 0.5, 0.5625),
        (Kernel.EPANECHNIKOV, 1.0, 0.0),
        (Kernel.EPANECHNIKOV, 2.0, 0.0),
    ],
)
def test_kernel_values(kernel, u, expected):
    assert kernel_weight(kernel, u) == pytest.approx(expected, abs=1e-15)


def test_kernel_vectorized():
    u = np.array([-2.0, -1.0, 0.0, 0.25, 1.0, 3.0])
    out = kernel_weight(Kernel.TRIANGULAR, u)
    assert_allclose(out, [0.0, 0.0, 1.0, 0.75, 0.0, 0.0])


def test_kernel_parse_aliases():
    assert Kernel.parse("tri") == Kernel.TRIANGULAR
    assert Kernel.parse("EPA") == Kernel.EPANECHNIKOV
    with pytest.raises(ConfigError):
        Kernel.parse("gauss")


def test_spec_validation():
    with pytest.raises(ConfigError):
        LocalFitSpec(h=0.0)
    with pytest.raises(ConfigError):
        LocalFitSpec(h=-1.0)
    with pytest.raises(ConfigError):
        LocalFitSpec(h=float("inf"))
    with pytest.raises(ConfigError):
        LocalFitSpec(h=1.0, p=5)


def test_single_point_local_constant():
    # right side, p=0, uniform, h=1, x={-0.5, 0.5} -> w = (0, 1)
    x = np.array([-0.5, 0.5])
    spec = LocalFitSpec(h=1.0, kernel=Kernel.UNIFORM, p=0, side=Side.RIGHT)
    lw = fit_weights(spec, x)
    assert_allclose(lw.w, [0.0, 1.0])
    assert lw.effective_n == 1


def test_polynomial_reproduction_intercept():
    rng = np.random.default_rng(1)
    x = rng.uniform(-1, 1, 120)
    for p in (1, 2, 3):
        spec = LocalFitSpec(h=0.8, kernel=Kernel.TRIANGULAR, p=p, side=Side.RIGHT)
        lw = fit_weights(spec, x)
        assert lw.w @ np.ones_like(x) == pytest.approx(1.0, abs=1e-10)
        for j in range(1, p + 1):
            assert lw.w @ x**j == pytest.approx(0.0, abs=1e-10)
        # applying to an exact polynomial returns its intercept
        coef = rng.normal(size=p + 1)
        y = sum(c * x**j for j, c in enumerate(coef))
        assert lw.w @ y == pytest.approx(coef[0], abs=1e-9)


def test_derivative_target_moments():
    rng = np.random.default_rng(2)
    x = rng.uniform(-1, 1, 150)
    from math import factorial

    for p, nu in ((1, 1), (2, 1), (2, 2), (3, 2)):
        spec = LocalFitSpec(h=0.9, kernel=Kernel.EPANECHNIKOV, p=p, side=Side.LEFT)
        lw = fit_weights(spec, x, derivative=nu)
        for m in range(p + 1):
            expected = factorial(nu) if m == nu else 0.0
            assert lw.w @ x**m == pytest.approx(expected, abs=1e-8)


def test_fit_weights_matches_dense_oracle():
    rng = np.random.default_rng(3)
    x = rng.uniform(-1, 1, 50)
    spec = LocalFitSpec(h=0.7, kernel=Kernel.TRIANGULAR, p=2, side=Side.RIGHT)
    lw = fit_weights(spec, x, derivative=0)
    kern = kernel_weight(Kernel.TRIANGULAR, x / 0.7)
    mask = (x >= 0) & (kern > 0)
    oracle = np.zeros_like(x)
    oracle[mask] = dense_weight_row(x[mask], kern[mask], 2, 0)
    assert np.max(np.abs(lw.w - oracle)) < 1e-10


def test_boundary_point_convention():
    x = np.array([0.0, 0.25, 0.5, 0.75, 1.0])
    uniform = fit_weights(LocalFitSpec(h=1.0, kernel=Kernel.UNIFORM, p=1, side=Side.RIGHT), x)
    assert uniform.w[-1] != 0.0  # |x| = h kept under the uniform kernel
    tri = fit_weights(LocalFitSpec(h=1.0, kernel=Kernel.TRIANGULAR, p=1, side=Side.RIGHT), x)
    assert tri.w[-1] == 0.0  # zero kernel weight at the boundary


def test_insufficient_data_error_names_side():
    x = np.array([-0.5, -0.4, 0.3, 0.35])
    spec = LocalFitSpec(h=0.1, kernel=Kernel.TRIANGULAR, p=1, side=Side.RIGHT)
    with pytest.raises(InsufficientDataError, match="right"):
        fit_weights(spec, x)


def test_locality():
    rng = np.random.default_rng(4)
    x = rng.uniform(-1, 1, 80)
    y = rng.normal(size=80)
    spec = LocalFitSpec(h=0.4, kernel=Kernel.TRIANGULAR, p=1, side=Side.RIGHT)
    lw = fit_weights(spec, x)
    j = int(np.flatnonzero(lw.w == 0.0)[0])
    y2 = y.copy()
    y2[j] += 100.0
    assert lw.w @ y == lw.w @ y2


def test_kernel_weight_scale_invariance():
    # multiplying all kernel weights by c > 0 leaves the WLS fit unchanged
    rng = np.random.default_rng(5)
    x = rng.uniform(0, 1, 40)
    w = np.exp(-x)
    y = rng.normal(size=40)
    cols = [np.ones_like(x), x, x**2]
    names = ["intercept", "x", "x^2"]
    beta1 = WlsFactor(cols, w, names).solve(y)
    beta2 = WlsFactor(cols, 7.3 * w, names).solve(y)
    assert_allclose(beta1, beta2, atol=1e-12)


def test_weighted_residual_orthogonality():
    rng = np.random.default_rng(6)
    x = rng.uniform(-1, 1, 200)
    y = rng.normal(size=200) + x
    spec = LocalFitSpec(h=0.8, kernel=Kernel.TRIANGULAR, p=2)
    beta = joint_fit(spec, x, y)
    kern = kernel_weight(Kernel.TRIANGULAR, x / 0.8)
    mask = kern > 0
    cols, _ = rd_design(x[mask], 2)
    X = np.column_stack(cols)
    resid = y[mask] - X @ beta
    moments = X.T @ (kern[mask] * resid)
    assert np.max(np.abs(moments)) / max(np.max(np.abs(X.T @ (kern[mask] * y[mask]))), 1.0) < 1e-9


def test_joint_fit_exact_linear_model():
    rng = np.random.default_rng(7)
    x = rng.uniform(-1, 1, 60)
    t = (x >= 0).astype(float)
    y = 1.0 + 2.0 * t + 3.0 * x
    beta = joint_fit(LocalFitSpec(h=1.5, kernel=Kernel.UNIFORM, p=1), x, y)
    assert_allclose(beta, [1.0, 2.0, 3.0, 0.0], atol=1e-10)


def test_joint_fit_zero_column_rank_error():
    rng = np.random.default_rng(8)
    x = rng.uniform(-1, 1, 50)
    y = rng.normal(size=50)
    extras = np.zeros((50, 1))
    with pytest.raises(RankDeficiencyError, match="covariate"):
        joint_fit(LocalFitSpec(h=1.0, p=1), x, y, extras, ["covariate block"])


def test_joint_fit_matches_dense_oracle():
    rng = np.random.default_rng(9)
    x = rng.uniform(-1, 1, 40)
    y = rng.normal(size=40)
    extras = rng.normal(size=(40, 2))
    spec = LocalFitSpec(h=0.9, kernel=Kernel.TRIANGULAR, p=1)
    beta = joint_fit(spec, x, y, extras)
    kern = kernel_weight(Kernel.TRIANGULAR, x / 0.9)
    mask = kern > 0
    t = (x >= 0).astype(float)
    X = np.column_stack([np.ones_like(x), t, x, t * x, extras[:, 0], extras[:, 1]])[mask]
    oracle = np.linalg.solve(X.T @ (X * kern[mask, None]), X.T @ (kern[mask] * y[mask]))
    assert np.max(np.abs(beta - oracle)) < 1e-10


def test_side_difference_equals_joint_tau():
    # Eq-(1)-style fit equals the difference of two one-sided intercepts.
    rng = np.random.default_rng(10)
    x = rng.uniform(-1, 1, 150)
    y = rng.normal(size=150) + np.sin(x)
    spec = LocalFitSpec(h=0.6, kernel=Kernel.TRIANGULAR, p=1)
    tau_joint = joint_fit(spec, x, y)[1]
    left = fit_weights(spec.replace(side=Side.LEFT), x)
    right = fit_weights(spec.replace(side=Side.RIGHT), x)
    assert tau_joint == pytest.approx(right.w @ y - left.w @ y, abs=1e-12)


def test_joint_fit_requires_pooled():
    x = np.linspace(-1, 1, 30)
    with pytest.raises(ConfigError):
        joint_fit(LocalFitSpec(h=1.0, p=1, side=Side.LEFT), x, x)


def test_derivative_above_order_rejected():
    x = np.linspace(-1, 1, 30)
    with pytest.raises(ConfigError):
        fit_weights(LocalFitSpec(h=1.0, p=1, side=Side.RIGHT), x, derivative=2)


@settings(max_examples=40, deadline=None)
@given(
    seed=st.integers(0, 10_000),
    p=st.integers(1, 3),
    kernel=st.sampled_from(list(Kernel)),
)
def test_polynomial_reproduction_property(seed, p, kernel):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1, 1, 90)
    coef = rng.normal(size=p + 1)
    y = sum(c * x**j for j, c in enumerate(coef))
    spec = LocalFitSpec(h=float(rng.uniform(0.5, 1.0)), kernel=kernel, p=p, side=Side.LEFT)
    lw = fit_weights(spec, x)
    assert lw.w @ y == pytest.approx(coef[0], rel=1e-7, abs=1e-8)
