"""Deterministic Monte Carlo harness with analytically tractable DGPs.

Each data-generating process specifies polynomial conditional means on each
side of the cutoff and a Gaussian residual structure whose population
objects (jump sizes, projection coefficients, residual variances) are
available in closed form, so simulation studies can be checked against
exact limits.  Draws use a counter-based generator keyed by
(seed, replication): results are bit-identical for any worker count.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources

import numpy as np
from numpy.polynomial import polynomial as npoly

from .bandwidth import select
from .data import Dataset
from .errors import ConfigError, RdcovError
from .estimators import EstimatorKind, estimate
from .inference import VarianceMethod, robust_ci
from .locfit import Kernel, LocalFitSpec


@dataclass(frozen=True)
class DgpSpec:
    """Monte Carlo data-generating process with closed-form population objects.

    Conditional means are polynomials in the score (ascending coefficients),
    one per side; residuals are jointly Gaussian with a per-covariate 2x2
    covariance block against the outcome residual.  The multiplier scales
    the outcome-covariate residual covariance (0 shuts the channel, 2
    doubles it); ``covariate_relevant=False`` forces it to zero outright.
    """

    mu_y_minus: tuple
    mu_y_plus: tuple
    mu_z_minus: tuple = ()
    mu_z_plus: tuple = ()
    noise_cov: tuple = ()
    noise_cov_plus: tuple | None = None
    residual_corr_multiplier: float = 1.0
    covariate_relevant: bool = True
    score_dist: str = "beta_shifted"
    beta_params: tuple = (2.0, 4.0)
    seed: int = 0
    clusters: tuple | None = None
    name: str = field(default="", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "mu_y_minus", tuple(float(c) for c in self.mu_y_minus))
        object.__setattr__(self, "mu_y_plus", tuple(float(c) for c in self.mu_y_plus))
        object.__setattr__(
            self, "mu_z_minus", tuple(tuple(float(c) for c in row) for row in self.mu_z_minus)
        )
        object.__setattr__(
            self, "mu_z_plus", tuple(tuple(float(c) for c in row) for row in self.mu_z_plus)
        )
        blocks = tuple(
            tuple(tuple(float(v) for v in row) for row in block) for block in self.noise_cov
        )
        object.__setattr__(self, "noise_cov", blocks)
        if self.noise_cov_plus is not None:
            blocks_p = tuple(
                tuple(tuple(float(v) for v in row) for row in block)
                for block in self.noise_cov_plus
            )
            object.__setattr__(self, "noise_cov_plus", blocks_p)
        if len(self.mu_z_minus) != len(self.mu_z_plus):
            raise ConfigError("mu_z_minus and mu_z_plus must list the same covariates")
        if self.d > 0 and len(self.noise_cov) != self.d:
            raise ConfigError("one 2x2 noise block per covariate is required")
        if self.score_dist not in ("beta_shifted", "uniform"):
            raise ConfigError(f"unknown score distribution {self.score_dist!r}")
        if self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        if self.clusters is not None:
            g, sd = self.clusters
            if int(g) < 2 or sd < 0:
                raise ConfigError("clusters must be (n_clusters >= 2, effect sd >= 0)")
        # Validate both residual factorizations now so bad configs fail early.
        for side in (-1, +1):
            self._residual_factor(side)

    # -- structure ----------------------------------------------------------

    @property
    def d(self) -> int:
        return len(self.mu_z_minus)

    def _blocks(self, side: int) -> tuple:
        if side > 0 and self.noise_cov_plus is not None:
            return self.noise_cov_plus
        return self.noise_cov

    def _effective_cov(self, side: int) -> tuple:
        """Outcome variance, covariate covariances, covariate variances."""
        blocks = self._blocks(side)
        if self.d == 0:
            return 1.0, np.zeros(0), np.zeros(0)
        sy2 = blocks[0][0][0]
        cov = np.empty(self.d)
        var = np.empty(self.d)
        for k, block in enumerate(blocks):
            if abs(block[0][1] - block[1][0]) > 1e-12:
                raise ConfigError(f"noise block {k} is not symmetric")
            if abs(block[0][0] - sy2) > 1e-12:
                raise ConfigError("all noise blocks must share the outcome variance")
            scale = self.residual_corr_multiplier if self.covariate_relevant else 0.0
            cov[k] = block[0][1] * scale
            var[k] = block[1][1]
        if sy2 < 0 or np.any(var < 0):
            raise ConfigError("residual variances must be non-negative")
        return float(sy2), cov, var

    def _residual_factor(self, side: int) -> np.ndarray:
        """Lower-triangular factor A with residuals = A @ iid standard normals."""
        sy2, cov, var = self._effective_cov(side)
        dim = 1 + self.d
        A = np.zeros((dim, dim))
        A[0, 0] = np.sqrt(sy2)
        for k in range(self.d):
            if sy2 == 0.0:
                if cov[k] != 0.0:
                    raise ConfigError("covariance with a zero-variance outcome residual")
                slack = var[k]
            else:
                A[k + 1, 0] = cov[k] / np.sqrt(sy2)
                slack = var[k] - cov[k] ** 2 / sy2
            if slack < -1e-12:
                raise ConfigError(
                    f"noise covariance for covariate {k} is not positive semidefinite "
                    f"(var {var[k]:g} < cov^2/var_y {cov[k] ** 2 / sy2:g})"
                )
            A[k + 1, k + 1] = np.sqrt(max(slack, 0.0))
        return A

    def resid_cov(self, side: int) -> np.ndarray:
        """Full (1+d)x(1+d) residual covariance on one side (+1 right, -1 left)."""
        A = self._residual_factor(side)
        return A @ A.T

    # -- population objects --------------------------------------------------

    @property
    def tau(self) -> float:
        return self.mu_y_plus[0] - self.mu_y_minus[0]

    @property
    def tau_z(self) -> np.ndarray:
        return np.array([zp[0] - zm[0] for zm, zp in zip(self.mu_z_minus, self.mu_z_plus)])

    def sigma2_z(self, side: int) -> np.ndarray:
        return self.resid_cov(side)[1:, 1:]

    def cov_zy(self, side: int) -> np.ndarray:
        return self.resid_cov(side)[1:, 0]

    @property
    def gamma_y(self) -> np.ndarray:
        if self.d == 0:
            return np.zeros(0)
        total = self.sigma2_z(-1) + self.sigma2_z(+1)
        return np.linalg.solve(total, self.cov_zy(-1) + self.cov_zy(+1))

    def gamma_y_side(self, side: int) -> np.ndarray:
        if self.d == 0:
            return np.zeros(0)
        return np.linalg.solve(self.sigma2_z(side), self.cov_zy(side))

    def mu_y_deriv(self, side: int, order: int) -> float:
        coef = self.mu_y_plus if side > 0 else self.mu_y_minus
        return float(npoly.polyval(0.0, npoly.polyder(coef, order))) if order else coef[0]

    def mu_z_at_cutoff(self, side: int) -> np.ndarray:
        rows = self.mu_z_plus if side > 0 else self.mu_z_minus
        return np.array([row[0] for row in rows])

    def adjusted_residual_variance(self, side: int) -> float:
        """Var(y - z' gamma_y | x=0) on one side; drives the efficiency gain."""
        s = np.concatenate([[1.0], -self.gamma_y])
        cov = self.resid_cov(side)
        return float(s @ cov @ s)

    def score_density_at_cutoff(self) -> float:
        if self.score_dist == "uniform":
            return 0.5
        from scipy.stats import beta as beta_dist

        a, b = self.beta_params
        return float(beta_dist.pdf(0.5, a, b) / 2.0)

    def lemma1_limit(self, kind: EstimatorKind) -> float:
        """Probability limit of each estimator under this DGP."""
        kind = EstimatorKind(kind)
        if self.d == 0 or kind == EstimatorKind.STANDARD:
            return self.tau
        if kind in (EstimatorKind.COVADJ, EstimatorKind.DEMEANED_COMMON):
            return self.tau - float(self.tau_z @ self.gamma_y)
        m_minus = self.mu_z_at_cutoff(-1)
        m_plus = self.mu_z_at_cutoff(+1)
        g_minus = self.gamma_y_side(-1)
        g_plus = self.gamma_y_side(+1)
        if kind == EstimatorKind.INTERACTED:
            return self.tau - float(m_plus @ g_plus - m_minus @ g_minus)
        if kind == EstimatorKind.DEMEANED_COMMON_INTERACTED:
            m_bar = (m_plus + m_minus) / 2.0
            return self.tau - float((m_plus - m_bar) @ g_plus - (m_minus - m_bar) @ g_minus)
        return self.tau  # DEMEANED_GROUP_INTERACTED

    # -- (de)serialization ---------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "mu_y_minus": list(self.mu_y_minus),
            "mu_y_plus": list(self.mu_y_plus),
            "mu_z_minus": [list(r) for r in self.mu_z_minus],
            "mu_z_plus": [list(r) for r in self.mu_z_plus],
            "noise_cov": [[list(r) for r in b] for b in self.noise_cov],
            "noise_cov_plus": (
                [[list(r) for r in b] for b in self.noise_cov_plus]
                if self.noise_cov_plus is not None
                else None
            ),
            "residual_corr_multiplier": self.residual_corr_multiplier,
            "covariate_relevant": self.covariate_relevant,
            "score_dist": self.score_dist,
            "beta_params": list(self.beta_params),
            "seed": self.seed,
            "clusters": list(self.clusters) if self.clusters else None,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "DgpSpec":
        kwargs = dict(payload)
        kwargs.pop("version", None)
        for key in ("beta_params", "clusters"):
            if kwargs.get(key) is not None:
                kwargs[key] = tuple(kwargs[key])
        return cls(**{k: v for k, v in kwargs.items() if v is not None or k == "noise_cov_plus"})

    def with_seed(self, seed: int) -> "DgpSpec":
        return replace(self, seed=seed)


def _polyval_sides(x: np.ndarray, right: np.ndarray, minus: tuple, plus: tuple) -> np.ndarray:
    out = np.empty_like(x)
    out[~right] = npoly.polyval(x[~right], minus)
    out[right] = npoly.polyval(x[right], plus)
    return out


def draw(dgp: DgpSpec, n: int, replication: int = 0) -> Dataset:
    """Draw one dataset, bit-identical for a given (seed, replication) pair.

    Uses a counter-based Philox stream keyed by (seed, replication), so
    replications can be generated in any order or on any worker with
    identical results.
    """
    if n < 1:
        raise ConfigError(f"n must be >= 1, got {n}")
    if replication < 0:
        raise ConfigError("replication index must be non-negative")
    key = np.array([dgp.seed, replication], dtype=np.uint64)
    rng = np.random.Generator(np.random.Philox(key=key))

    if dgp.score_dist == "uniform":
        x = rng.uniform(-1.0, 1.0, size=n)
    else:
        a, b = dgp.beta_params
        x = 2.0 * rng.beta(a, b, size=n) - 1.0
    eps = rng.standard_normal((n, 1 + dgp.d))
    right = x >= 0.0
    resid = np.empty_like(eps)
    resid[~right] = eps[~right] @ dgp._residual_factor(-1).T
    resid[right] = eps[right] @ dgp._residual_factor(+1).T

    y = _polyval_sides(x, right, dgp.mu_y_minus, dgp.mu_y_plus) + resid[:, 0]
    z = np.empty((n, dgp.d))
    for k in range(dgp.d):
        z[:, k] = (
            _polyval_sides(x, right, dgp.mu_z_minus[k], dgp.mu_z_plus[k]) + resid[:, k + 1]
        )

    cluster = None
    if dgp.clusters is not None:
        n_clusters, sd = dgp.clusters
        cluster = np.arange(n) % int(n_clusters)
        effects = rng.standard_normal(int(n_clusters)) * sd
        y = y + effects[cluster]
    return Dataset(y=y, x=x, z=z, cluster=cluster)


# ---------------------------------------------------------------------------
# Study harness
# ---------------------------------------------------------------------------

_ROW_FIELDS = ("ok", "tau", "tau_bc", "ci_low", "ci_high", "h", "b")


def _study_batch(args: tuple) -> list:
    dgp, n, rep_indices, methods, cfg = args
    rows = []
    for rep in rep_indices:
        data = draw(dgp, n, rep)
        row = {}
        for method in methods:
            kind = EstimatorKind(method)
            try:
                if cfg["bw_rule"] == "fixed":
                    h = cfg["h"]
                    b = cfg["b"] if cfg["b"] is not None else cfg["h"]
                else:
                    sel = select(
                        data,
                        kind=kind,
                        kernel=cfg["kernel"],
                        p=cfg["p"],
                        vce=cfg["vce"],
                        rule=cfg["bw_rule"],
                        b_equals_h=cfg["b_equals_h"],
                    )
                    h, b = sel.h, sel.b
                spec = LocalFitSpec(h=h, kernel=cfg["kernel"], p=cfg["p"])
                res = robust_ci(
                    data, spec, b=b, method=cfg["vce"], level=cfg["level"], kind=kind
                )
                row[kind.value] = (
                    1.0, res.tau, res.tau_bc, res.ci_low, res.ci_high, res.h, res.b,
                )
            except RdcovError:
                row[kind.value] = (0.0,) + (np.nan,) * 6
        rows.append(row)
    return rows


@dataclass(frozen=True)
class MethodSummary:
    """Empirical performance of one estimator across replications."""

    n_ok: int
    n_failed: int
    mean_tau: float
    bias: float
    variance: float
    mse: float
    coverage: float
    mean_ci_length: float
    mean_h: float
    mean_b: float

    def to_dict(self) -> dict:
        return {
            "n_ok": self.n_ok,
            "n_failed": self.n_failed,
            "failure_rate": self.n_failed / max(self.n_ok + self.n_failed, 1),
            "mean_point_estimate": self.mean_tau,
            "bias": self.bias,
            "variance": self.variance,
            "mse": self.mse,
            "coverage": self.coverage,
            "mean_ci_length": self.mean_ci_length,
            "mean_h": self.mean_h,
            "mean_b": self.mean_b,
        }


@dataclass(frozen=True)
class StudyReport:
    """Aggregated Monte Carlo study results; deterministic given the seed."""

    dgp_name: str
    n: int
    reps: int
    level: float
    bw_rule: str
    seed: int
    true_tau: float
    methods: dict

    def to_dict(self) -> dict:
        return {
            "dgp": self.dgp_name,
            "n": self.n,
            "reps": self.reps,
            "level": self.level,
            "bw_rule": self.bw_rule,
            "seed": self.seed,
            "true_tau": self.true_tau,
            "methods": {k: v.to_dict() for k, v in self.methods.items()},
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    def to_text(self) -> str:
        header = (
            f"Monte Carlo study: dgp={self.dgp_name or 'custom'}  n={self.n}  "
            f"reps={self.reps}  bw={self.bw_rule}  true effect={self.true_tau:.6g}"
        )
        cols = ["method", "bias", "variance", "mse", "coverage", "ci length", "h", "fail"]
        lines = [header, "  ".join(f"{c:>12}" for c in cols)]
        for name, s in self.methods.items():
            lines.append(
                "  ".join(
                    [
                        f"{name:>12}",
                        f"{s.bias:>12.5g}",
                        f"{s.variance:>12.5g}",
                        f"{s.mse:>12.5g}",
                        f"{s.coverage:>12.4f}",
                        f"{s.mean_ci_length:>12.5g}",
                        f"{s.mean_h:>12.5g}",
                        f"{s.n_failed:>12d}",
                    ]
                )
            )
        return "\n".join(lines)


def run_study(
    dgp: DgpSpec,
    n: int,
    reps: int,
    methods: tuple = (EstimatorKind.STANDARD, EstimatorKind.COVADJ),
    bw_rule: str = "mse",
    h: float | None = None,
    b: float | None = None,
    kernel: Kernel = Kernel.TRIANGULAR,
    p: int = 1,
    vce: VarianceMethod | str = VarianceMethod.NN,
    level: float = 0.95,
    b_equals_h: bool = False,
    workers: int = 1,
) -> StudyReport:
    """Run a Monte Carlo study of point estimation and robust inference.

    Per method: empirical bias, variance, and MSE of the point estimates,
    empirical coverage and average length of the robust confidence
    intervals, and bandwidth summaries.  Per-replication estimator failures
    are counted and excluded.  Results are bit-identical for any ``workers``
    value because replications use counter-based streams and are reduced in
    replication order.
    """
    if reps < 1:
        raise ConfigError("reps must be >= 1")
    methods = tuple(EstimatorKind(m) for m in methods)
    for m in methods:
        if m not in (
            EstimatorKind.STANDARD, EstimatorKind.COVADJ, EstimatorKind.DEMEANED_COMMON,
        ):
            raise ConfigError(
                f"run_study supports kinds with robust inference; got {m.value!r}"
            )
    if bw_rule == "fixed" and h is None:
        raise ConfigError("bw_rule='fixed' requires an explicit h")
    if bw_rule not in ("fixed", "mse", "cer"):
        raise ConfigError(f"unknown bw_rule {bw_rule!r}")
    vce = VarianceMethod.parse(vce) if isinstance(vce, str) else vce
    cfg = {
        "bw_rule": bw_rule,
        "h": h,
        "b": b,
        "kernel": Kernel(kernel),
        "p": p,
        "vce": vce,
        "level": level,
        "b_equals_h": b_equals_h,
    }

    n_batches = max(1, min(reps, workers * 4))
    splits = np.array_split(np.arange(reps), n_batches)
    batches = [(dgp, n, [int(r) for r in s], methods, cfg) for s in splits if s.size]
    if workers <= 1:
        batch_rows = [_study_batch(batch) for batch in batches]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            batch_rows = list(pool.map(_study_batch, batches))
    rows = [row for batch in batch_rows for row in batch]

    summaries = {}
    for m in methods:
        table = np.array([row[m.value] for row in rows])
        ok = table[:, 0] == 1.0
        n_ok = int(ok.sum())
        n_failed = reps - n_ok
        if n_ok == 0:
            summaries[m.value] = MethodSummary(
                0, n_failed, np.nan, np.nan, np.nan, np.nan, np.nan, np.nan, np.nan, np.nan
            )
            continue
        tau = table[ok, 1]
        lo, hi = table[ok, 3], table[ok, 4]
        covered = (lo <= dgp.tau) & (dgp.tau <= hi)
        summaries[m.value] = MethodSummary(
            n_ok=n_ok,
            n_failed=n_failed,
            mean_tau=float(np.mean(tau)),
            bias=float(np.mean(tau) - dgp.tau),
            variance=float(np.var(tau, ddof=1)) if n_ok > 1 else 0.0,
            mse=float(np.mean((tau - dgp.tau) ** 2)),
            coverage=float(np.mean(covered)),
            mean_ci_length=float(np.mean(hi - lo)),
            mean_h=float(np.mean(table[ok, 5])),
            mean_b=float(np.mean(table[ok, 6])),
        )
    return StudyReport(
        dgp_name=dgp.name,
        n=n,
        reps=reps,
        level=level,
        bw_rule=bw_rule,
        seed=dgp.seed,
        true_tau=dgp.tau,
        methods=summaries,
    )


@dataclass(frozen=True)
class PlimRow:
    """One estimator's Monte Carlo mean against its theoretical limit."""

    kind: EstimatorKind
    n: int
    h: float
    mean: float
    mc_se: float
    limit: float
    z_score: float

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "n": self.n,
            "h": self.h,
            "mean": self.mean,
            "mc_se": self.mc_se,
            "limit": self.limit,
            "z_score": self.z_score,
        }


def plim_check(
    dgp: DgpSpec,
    kinds: tuple = tuple(EstimatorKind),
    n_grid: tuple = (2000, 10000, 50000),
    reps: int = 200,
    kernel: Kernel = Kernel.TRIANGULAR,
    p: int = 1,
    bandwidth_scale: float = 1.0,
) -> list:
    """Compare estimator means at h ~ n^(-1/5) against their probability limits.

    For each sample size on the grid, draws ``reps`` datasets, averages each
    requested estimator, and reports the distance to its closed-form limit
    in Monte Carlo standard errors.
    """
    kinds = tuple(EstimatorKind(k) for k in kinds)
    rows = []
    for n in n_grid:
        h = bandwidth_scale * n ** (-1.0 / 5.0)
        spec = LocalFitSpec(h=h, kernel=kernel, p=p)
        draws = {kind: np.empty(reps) for kind in kinds}
        for rep in range(reps):
            data = draw(dgp, n, rep)
            for kind in kinds:
                draws[kind][rep] = estimate(data, kind, spec).tau
        for kind in kinds:
            values = draws[kind]
            mean = float(np.mean(values))
            mc_se = float(np.std(values, ddof=1) / np.sqrt(reps))
            limit = dgp.lemma1_limit(kind)
            z = (mean - limit) / mc_se if mc_se > 0 else np.inf
            rows.append(
                PlimRow(kind=kind, n=n, h=h, mean=mean, mc_se=mc_se, limit=limit, z_score=z)
            )
    return rows


# ---------------------------------------------------------------------------
# Shipped DGP presets
# ---------------------------------------------------------------------------

def _load_presets() -> dict:
    text = resources.files("rdcov").joinpath("presets.json").read_text(encoding="utf-8")
    return json.loads(text)


def list_presets() -> list:
    return sorted(_load_presets()["models"].keys())


def get_preset(name: str) -> DgpSpec:
    """Load one of the shipped Monte Carlo model presets by name."""
    presets = _load_presets()["models"]
    if name not in presets:
        raise ConfigError(f"unknown DGP preset {name!r}; available: {sorted(presets)}")
    payload = dict(presets[name])
    payload.setdefault("name", name)
    return DgpSpec.from_dict(payload)


def load_dgp_config(path: str) -> DgpSpec:
    """Load a DGP from a JSON config file."""
    with open(path, encoding="utf-8") as handle:
        return DgpSpec.from_dict(json.load(handle))
