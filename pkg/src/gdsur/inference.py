"""Hypothesis tests: Wald on GLS fits, restricted projection, GRS, fixed-b HAR.

The fixed-b HAR reference distribution is simulated once per (kernel, b,
q, grid, sims, seed) key and cached on disk; every quantile derived from
it uses the repository-wide ceiling-order-statistic convention.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

from .dgp import Panel
from .errors import InsufficientSample, NotPositiveDefinite, SingularDesign, SingularRestriction
from .estimators import FitResult, kron_design, ols_fit
from .numerics import RngStream, dist_sf, empirical_quantile, require_finite, solve_spd

DEFAULT_CV_GRID = 1000
DEFAULT_CV_SIMS = 50_000
DEFAULT_CV_SEED = 20_240_601
CACHE_ENV_VAR = "GDSUR_CACHE_DIR"
CACHE_VERSION = 1


def default_bandwidth_fraction(t_len: int) -> float:
    """Default fixed-b fraction: bandwidth M = 1.3 sqrt(T), so b = M / T."""
    return min(1.0, 1.3 / np.sqrt(t_len))


@dataclass(frozen=True)
class LinearRestriction:
    """Linear null hypothesis R kappa = r with full row rank R."""

    r_mat: np.ndarray  # (q, m)
    r_vec: np.ndarray  # (q,)

    def __post_init__(self):
        r_mat = require_finite(self.r_mat, "r_mat")
        r_vec = require_finite(self.r_vec, "r_vec")
        if r_mat.ndim != 2 or r_vec.shape != (r_mat.shape[0],):
            raise ValueError("r_mat must be (q, m) with r_vec of length q")
        if np.linalg.matrix_rank(r_mat) < r_mat.shape[0]:
            raise ValueError("r_mat must have full row rank")

    @property
    def q(self) -> int:
        return self.r_mat.shape[0]


def alpha_zero_restriction(n: int, r: int) -> LinearRestriction:
    """The pricing-error null H0: alpha = 0 in the stacked system."""
    r_mat = np.hstack([np.eye(n), np.zeros((n, n * r))])
    return LinearRestriction(r_mat=r_mat, r_vec=np.zeros(n))


@dataclass(frozen=True)
class TestOutcome:
    """Statistic, reference law, p-value, and optional diagnostics."""

    statistic: float
    reference: dict
    p_value: float
    method: str
    aux: dict = field(default_factory=dict)


def wald(fit: FitResult, restr: LinearRestriction) -> TestOutcome:
    """Wald statistic t_eff (R k - r)' [R V R']^{-1} (R k - r), chi2(q) reference."""
    if fit.v_hat is None:
        raise ValueError(f"{fit.method} fit carries no coefficient covariance")
    stat = wald_statistic(fit.kappa_hat, fit.v_hat, fit.t_eff, restr)
    q = restr.q
    return TestOutcome(
        statistic=stat,
        reference={"kind": "chi2", "df": q},
        p_value=dist_sf("chi2", stat, q),
        method=f"wald-{fit.method.lower()}",
    )


def wald_statistic(kappa: np.ndarray, v_hat: np.ndarray, t_eff: int, restr: LinearRestriction) -> float:
    gap = restr.r_mat @ kappa - restr.r_vec
    rvr = restr.r_mat @ v_hat @ restr.r_mat.T
    try:
        w = solve_spd(rvr, gap)
    except NotPositiveDefinite as exc:
        raise SingularRestriction("R V R' is not positive definite") from exc
    return float(t_eff * gap @ w)


def restricted_estimate(fit: FitResult, restr: LinearRestriction) -> np.ndarray:
    """Projection of kappa_hat onto {R kappa = r} in the V-metric."""
    if fit.v_hat is None:
        raise ValueError(f"{fit.method} fit carries no coefficient covariance")
    gap = restr.r_mat @ fit.kappa_hat - restr.r_vec
    rvr = restr.r_mat @ fit.v_hat @ restr.r_mat.T
    try:
        adj = fit.v_hat @ restr.r_mat.T @ solve_spd(rvr, gap)
    except NotPositiveDefinite as exc:
        raise SingularRestriction("R V R' is not positive definite") from exc
    return fit.kappa_hat - adj


def grs_test(panel: Panel) -> TestOutcome:
    """Exact F-test that all intercepts are zero under i.i.d. Gaussian errors."""
    t_len, n = panel.y.shape
    k = panel.r
    if t_len <= n + k + 1:
        raise InsufficientSample(f"GRS requires T > N + k + 1 = {n + k + 1}")
    fit = ols_fit(panel)
    alpha = fit.alpha_hat
    resid = fit.residuals
    x_bar = panel.x.mean(axis=0)
    x_c = panel.x - x_bar
    s_x = x_c.T @ x_c / (t_len - 1)
    sigma = resid.T @ resid / (t_len - k - 1)
    quad_x = float(x_bar @ solve_spd(s_x, x_bar))
    quad_a = float(alpha @ solve_spd(sigma, alpha))
    stat = (t_len * (t_len - n - k)) / (n * (t_len - k - 1)) / (1.0 + quad_x) * quad_a
    return TestOutcome(
        statistic=stat,
        reference={"kind": "f", "df1": n, "df2": t_len - n - k},
        p_value=dist_sf("f", stat, (n, t_len - n - k)),
        method="grs",
    )


def qs_kernel(x: np.ndarray) -> np.ndarray:
    """Quadratic spectral kernel, k(0) = 1."""
    x = np.asarray(x, dtype=np.float64)
    out = np.ones_like(x)
    nz = x != 0.0
    z = 6.0 * np.pi * x[nz] / 5.0
    out[nz] = 25.0 / (12.0 * np.pi**2 * x[nz] ** 2) * (np.sin(z) / z - np.cos(z))
    return out


def long_run_variance_qs(scores: np.ndarray, bandwidth: float) -> np.ndarray:
    """QS-weighted long-run variance of score rows (T, P), all T-1 lags."""
    t_len = scores.shape[0]
    w = qs_kernel(np.arange(t_len) / bandwidth)
    kmat = scipy.linalg.toeplitz(w)
    omega = scores.T @ kmat @ scores / t_len
    return 0.5 * (omega + omega.T)


def har_fixed_b_test(
    panel: Panel,
    restr: LinearRestriction,
    b: float | None = None,
    reference_draws: np.ndarray | None = None,
    cv_grid: int = DEFAULT_CV_GRID,
    cv_sims: int = DEFAULT_CV_SIMS,
    cv_rng: RngStream | None = None,
) -> TestOutcome:
    """OLS-based Wald test with a QS long-run variance at bandwidth b*T.

    ``b`` defaults to the M = 1.3 sqrt(T) rule. The p-value comes from the
    simulated fixed-b limit law (shared cache); pass ``reference_draws``
    to reuse a preloaded table.
    """
    if b is None:
        b = default_bandwidth_fraction(panel.t)
    if not 0.0 < b <= 1.0:
        raise ValueError("b must lie in (0, 1]")
    fit = ols_fit(panel)
    t_len, n = panel.y.shape
    design = np.zeros((t_len, n, n + n * panel.r))
    design[:, :, :n] = np.eye(n)
    design[:, :, n:] = kron_design(panel.x, n)
    scores = np.einsum("tnp,tn->tp", design, fit.residuals)
    q_hat = np.einsum("tnp,tnq->pq", design, design) / t_len
    omega = long_run_variance_qs(scores, b * t_len)
    gap = restr.r_mat @ fit.kappa_hat - restr.r_vec
    try:
        qi_r = solve_spd(q_hat, restr.r_mat.T)  # Q^{-1} R'
    except NotPositiveDefinite as exc:
        raise SingularDesign("OLS second-moment matrix is singular") from exc
    sandwich = qi_r.T @ omega @ qi_r
    try:
        stat = float(t_len * gap @ solve_spd(sandwich, gap))
    except NotPositiveDefinite as exc:
        raise SingularRestriction("HAR sandwich is not positive definite") from exc
    if reference_draws is None:
        reference_draws = fixed_b_reference(b, restr.q, cv_grid, cv_sims, cv_rng)
    p_value = float(np.mean(reference_draws >= stat))
    return TestOutcome(
        statistic=stat,
        reference={"kind": "fixed_b", "b": b, "q": restr.q},
        p_value=p_value,
        method="har",
        aux={"bandwidth": b * t_len, "n_reference_draws": int(reference_draws.size)},
    )


def _cache_dir() -> Path:
    root = os.environ.get(CACHE_ENV_VAR)
    if root:
        return Path(root)
    return Path.home() / ".cache" / "gdsur"


_REFERENCE_MEMO: dict[tuple, np.ndarray] = {}


def fixed_b_reference(
    b: float,
    q: int,
    n_grid: int = DEFAULT_CV_GRID,
    n_sims: int = DEFAULT_CV_SIMS,
    rng: RngStream | None = None,
) -> np.ndarray:
    """Sorted draws from the fixed-b limit law of the QS Wald statistic.

    The limit is B_q(1)' P^{-1} B_q(1) with P the kernel-weighted double
    integral of Brownian-bridge increments; it is simulated on ``n_grid``
    points and memoized in-process and on disk (regenerable from the
    seed).
    """
    if q < 1:
        raise ValueError("q must be >= 1")
    if not 0.0 < b <= 1.0:
        raise ValueError("b must lie in (0, 1]")
    rng = rng if rng is not None else RngStream(DEFAULT_CV_SEED)
    key = ("qs", float(b), int(q), int(n_grid), int(n_sims), rng.seed, rng.stream_id)
    memo = _REFERENCE_MEMO.get(key)
    if memo is not None:
        return memo
    cache = _cache_dir()
    digest = hashlib.sha256(repr(key).encode()).hexdigest()[:24]
    path = cache / f"fixedb_v{CACHE_VERSION}_{digest}.npy"
    meta_path = path.with_suffix(".json")
    if path.exists():
        draws = np.load(path)
    else:
        draws = _simulate_fixed_b(b, q, n_grid, n_sims, rng.generator())
        cache.mkdir(parents=True, exist_ok=True)
        np.save(path, draws)
        meta = {
            "version": CACHE_VERSION,
            "kernel": "qs",
            "b": b,
            "q": q,
            "n_grid": n_grid,
            "n_sims": n_sims,
            "seed": rng.seed,
            "stream_id": list(rng.stream_id),
        }
        meta_path.write_text(json.dumps(meta, sort_keys=True))
    _REFERENCE_MEMO[key] = draws
    return draws


def _simulate_fixed_b(b: float, q: int, n_grid: int, n_sims: int, gen: np.random.Generator) -> np.ndarray:
    """Monte Carlo draws of the fixed-b limiting quadratic form."""
    scale = np.sqrt(1.0 / n_grid)
    kmat = qs_kernel(np.arange(n_grid) / (b * n_grid))
    kmat = scipy.linalg.toeplitz(kmat)
    draws = np.empty(n_sims)
    chunk = max(1, min(n_sims, int(2.0e7 / (n_grid * q))))
    done = 0
    while done < n_sims:
        size = min(chunk, n_sims - done)
        db = gen.standard_normal((n_grid, size * q)) * scale
        b1 = db.sum(axis=0)
        db -= b1 / n_grid
        kd = kmat @ db
        p_mats = np.einsum(
            "ncq,ncp->cqp", db.reshape(n_grid, size, q), kd.reshape(n_grid, size, q)
        )
        b1 = b1.reshape(size, q)
        sol = np.linalg.solve(p_mats, b1[..., None])[..., 0]
        draws[done : done + size] = np.einsum("cq,cq->c", b1, sol)
        done += size
    draws.sort()
    return draws


def fixed_b_critical_values(
    b: float,
    q: int,
    levels: tuple[float, ...] = (0.10, 0.05, 0.01),
    n_grid: int = DEFAULT_CV_GRID,
    n_sims: int = DEFAULT_CV_SIMS,
    rng: RngStream | None = None,
) -> dict[float, float]:
    """Upper critical values of the fixed-b law at the given levels."""
    draws = fixed_b_reference(b, q, n_grid, n_sims, rng)
    return {level: empirical_quantile(draws, 1.0 - level) for level in levels}
