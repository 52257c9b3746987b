"""System estimators for the common-regressor SUR model.

All estimators target kappa = (alpha', beta')' in

    y_t = alpha + (I_N (x) x_t') beta + u_t,

and return a uniform :class:`FitResult`. The feasible-GLS family shares
one filtering/weighting backbone; members differ only in how the error
dynamics are estimated:

* OLS ignores the dynamics entirely.
* FGLS-CO fits a VAR to OLS residuals, then quasi-differences.
* FGLS-D estimates the error VAR from an augmented (lag-extended)
  regression, then quasi-differences with those coefficients.
* GD additionally removes the feedback of lagged regressors on the
  disturbance, which keeps it consistent when that feedback is present.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dgp import Panel
from .errors import InsufficientSample, NotPositiveDefinite, SingularDesign
from .numerics import RngStream, chol_logdet, cholesky, solve_spd

METHOD_OLS = "OLS"
METHOD_FGLS_CO = "FGLS-CO"
METHOD_FGLS_D = "FGLS-D"
METHOD_GD = "GD"
METHOD_BC_GD = "BC-GD"


@dataclass(frozen=True)
class FitResult:
    """Common output of all system estimators.

    ``v_hat`` is the estimated asymptotic covariance of
    sqrt(t_eff) * (kappa_hat - kappa); it is absent for plain OLS.
    ``residuals`` are the residuals of the regression actually solved
    (innovation scale for the filtered estimators, u scale for OLS).
    """

    method: str
    kappa_hat: np.ndarray  # (N + N*r,)
    v_hat: np.ndarray | None
    sigma_uu_hat: np.ndarray  # (N, N)
    p_used: int
    t_eff: int
    residuals: np.ndarray  # (t_eff, N)

    @property
    def n(self) -> int:
        return self.sigma_uu_hat.shape[0]

    @property
    def alpha_hat(self) -> np.ndarray:
        return self.kappa_hat[: self.n]

    @property
    def beta_hat(self) -> np.ndarray:
        return self.kappa_hat[self.n :]


@dataclass(frozen=True)
class DurbinStage:
    """First-stage augmented regression output.

    ``psi_ux_hat`` is assembled through the plug-in identity
    psi_ux_hat[j] = lambda_hat[j] + psi_uu_hat[j] @ b_hat, which holds
    exactly by construction.
    """

    theta: np.ndarray  # (d, N), column i = equation-i coefficients
    gamma_hat: np.ndarray  # (N,)
    b_hat: np.ndarray  # (N, r), row i = beta_i'
    psi_uu_hat: np.ndarray  # (p, N, N)
    lambda_hat: np.ndarray  # (p, N, r)
    psi_ux_hat: np.ndarray  # (p, N, r)
    mu_x_hat: np.ndarray  # (r,)
    sigma_uu_hat: np.ndarray  # (N, N)
    residuals: np.ndarray  # (t_eff, N)
    p: int
    t_eff: int


def _check_sample(panel: Panel, p: int) -> None:
    if panel.t <= panel.r + 2 * p + 2:
        raise InsufficientSample(
            f"T={panel.t} too short for p={p} with r={panel.r} regressors"
        )


def _gram_solve(design: np.ndarray, resp: np.ndarray):
    """Least squares via normal equations; returns (coef, gram).

    ``design`` is (rows, d), ``resp`` is (rows,) or (rows, q). Raises
    SingularDesign when the Gram matrix fails its Cholesky factorization.
    """
    gram = design.T @ design
    try:
        coef = solve_spd(gram, design.T @ resp)
    except NotPositiveDefinite as exc:
        raise SingularDesign("design Gram matrix is singular") from exc
    return coef, gram


def kron_design(x: np.ndarray, n: int) -> np.ndarray:
    """Materialize X_t' = I_n (x) x_t' as a (T, n, n*r) array."""
    t_len, r = x.shape
    out = np.zeros((t_len, n, n * r))
    for i in range(n):
        out[:, i, i * r : (i + 1) * r] = x
    return out


def _stacked_gls(design: np.ndarray, resp: np.ndarray, sigma_uu: np.ndarray | None):
    """GLS on a per-period system design.

    ``design`` is (t_eff, N, P) holding Z_t' rows, ``resp`` is (t_eff, N).
    With ``sigma_uu`` given, rows are whitened by the inverse Cholesky
    factor so the normal equations carry weight sigma_uu^{-1}; otherwise
    the weight is the identity. Returns (kappa, v_hat, residuals).
    """
    t_eff, n, p_dim = design.shape
    if sigma_uu is not None:
        l_inv = np.linalg.inv(cholesky(sigma_uu))
        dw = np.einsum("ab,tbp->tap", l_inv, design)
        rw = resp @ l_inv.T
    else:
        dw, rw = design, resp
    kappa, gram = _gram_solve(dw.reshape(t_eff * n, p_dim), rw.reshape(t_eff * n))
    try:
        v_hat = t_eff * solve_spd(gram, np.eye(p_dim))
    except NotPositiveDefinite as exc:  # pragma: no cover - gram already factorized
        raise SingularDesign("GLS information matrix is singular") from exc
    residuals = resp - design @ kappa
    return kappa, v_hat, residuals


def ols_fit(panel: Panel) -> FitResult:
    """System OLS of the stacked regression."""
    _check_sample(panel, 0)
    t_len, n = panel.y.shape
    design = np.zeros((t_len, n, n + n * panel.r))
    design[:, :, :n] = np.eye(n)
    design[:, :, n:] = kron_design(panel.x, n)
    kappa, _, residuals = _stacked_gls(design, panel.y, None)
    sigma_uu = residuals.T @ residuals / t_len
    return FitResult(
        method=METHOD_OLS,
        kappa_hat=kappa,
        v_hat=None,
        sigma_uu_hat=sigma_uu,
        p_used=0,
        t_eff=t_len,
        residuals=residuals,
    )


def fit_var_ols(series: np.ndarray, p: int, intercept: bool = False):
    """VAR(p) by OLS on ``series`` (T, m); returns (psi (p, m, m), const, resid)."""
    t_len, m = series.shape
    if t_len - p <= p * m + int(intercept):
        raise InsufficientSample(f"T={t_len} too short for a VAR({p}) in {m} variables")
    cols = [np.ones((t_len - p, 1))] if intercept else []
    cols += [series[p - j : t_len - j] for j in range(1, p + 1)]
    design = np.hstack(cols)
    coef, _ = _gram_solve(design, series[p:])
    offset = 1 if intercept else 0
    const = coef[0] if intercept else np.zeros(m)
    psi = np.stack(
        [coef[offset + (j - 1) * m : offset + j * m].T for j in range(1, p + 1)]
    )
    resid = series[p:] - design @ coef
    return psi, const, resid


def durbin_stage(panel: Panel, p: int, start: int | None = None) -> DurbinStage:
    """Equation-by-equation augmented regression with p lags of (y, x).

    With common regressors the design [1, x_t, y_{t-1..p}, x_{t-1..p}] is
    shared across equations, so all N coefficient vectors come from one
    multi-response least-squares solve. ``start`` overrides the first
    effective index (0-based); lag selection uses it to compare candidate
    orders on a common sample.
    """
    _check_sample(panel, p)
    if p < 1:
        raise ValueError("p must be >= 1")
    start = p if start is None else start
    if start < p:
        raise ValueError("start must be >= p")
    t_len, n = panel.y.shape
    r = panel.r
    t_eff = t_len - start
    design = _durbin_design(panel.y, panel.x, p, start)
    if t_eff <= design.shape[1]:
        raise InsufficientSample("effective sample shorter than the augmented design")
    theta, _ = _gram_solve(design, panel.y[start:])
    residuals = panel.y[start:] - design @ theta
    gamma = theta[0]
    b_hat = theta[1 : 1 + r].T
    y_block = theta[1 + r : 1 + r + p * n]
    x_block = theta[1 + r + p * n :]
    psi_uu = np.stack([y_block[(j - 1) * n : j * n].T for j in range(1, p + 1)])
    lam = np.stack([x_block[(j - 1) * r : j * r].T for j in range(1, p + 1)])
    psi_ux = lam + psi_uu @ b_hat
    mu_x = panel.x[start:].mean(axis=0)
    sigma_uu = residuals.T @ residuals / t_eff
    return DurbinStage(
        theta=theta,
        gamma_hat=gamma,
        b_hat=b_hat,
        psi_uu_hat=psi_uu,
        lambda_hat=lam,
        psi_ux_hat=psi_ux,
        mu_x_hat=mu_x,
        sigma_uu_hat=sigma_uu,
        residuals=residuals,
        p=p,
        t_eff=t_eff,
    )


def _durbin_design(y: np.ndarray, x: np.ndarray, p: int, start: int) -> np.ndarray:
    t_len = y.shape[0]
    cols = [np.ones((t_len - start, 1)), x[start:]]
    cols += [y[start - j : t_len - j] for j in range(1, p + 1)]
    cols += [x[start - j : t_len - j] for j in range(1, p + 1)]
    return np.hstack(cols)


def _filtered_design(panel: Panel, psi_uu: np.ndarray, p: int):
    """Quasi-differenced system design shared by FGLS-CO/FGLS-D/GD.

    Returns (design (t_eff, N, N + N*r), y_filtered (t_eff, N)) with
    design rows Z_t' - sum_j psi_uu[j] Z_{t-j}'.
    """
    t_len, n = panel.y.shape
    e_full = kron_design(panel.x, n)
    f_block = np.eye(n) - psi_uu.sum(axis=0)
    x_part = e_full[p:].copy()
    yf = panel.y[p:].copy()
    for j in range(1, p + 1):
        x_part -= np.einsum("ab,tbk->tak", psi_uu[j - 1], e_full[p - j : t_len - j])
        yf -= panel.y[p - j : t_len - j] @ psi_uu[j - 1].T
    design = np.empty((t_len - p, n, n + e_full.shape[2]))
    design[:, :, :n] = f_block
    design[:, :, n:] = x_part
    return design, yf


def _filtered_gls(panel: Panel, psi_uu, sigma_uu, p: int, method: str, y_extra=None) -> FitResult:
    design, yf = _filtered_design(panel, psi_uu, p)
    if y_extra is not None:
        yf = yf - y_extra
    kappa, v_hat, residuals = _stacked_gls(design, yf, sigma_uu)
    return FitResult(
        method=method,
        kappa_hat=kappa,
        v_hat=v_hat,
        sigma_uu_hat=sigma_uu,
        p_used=p,
        t_eff=panel.t - p,
        residuals=residuals,
    )


def fgls_co_fit(panel: Panel, p: int, nuisance=None) -> FitResult:
    """Two-step feasible GLS with the error VAR fitted to OLS residuals.

    ``nuisance`` optionally forces (psi_uu, sigma_uu), used by degenerate
    -filter equivalence checks.
    """
    _check_sample(panel, p)
    if nuisance is None:
        base = ols_fit(panel)
        psi_uu, _, resid = fit_var_ols(base.residuals, p, intercept=False)
        sigma_uu = resid.T @ resid / resid.shape[0]
    else:
        psi_uu, sigma_uu = nuisance
    return _filtered_gls(panel, psi_uu, sigma_uu, p, METHOD_FGLS_CO)


def fglsd_fit(panel: Panel, p: int, stage: DurbinStage | None = None) -> FitResult:
    """Two-step feasible GLS with the error VAR from the augmented regression."""
    if stage is None:
        stage = durbin_stage(panel, p)
    return _filtered_gls(panel, stage.psi_uu_hat, stage.sigma_uu_hat, p, METHOD_FGLS_D)


def gd_fit(panel: Panel, p: int, stage: DurbinStage | None = None) -> FitResult:
    """Feasible GLS on the fully transformed system.

    Beyond the FGLS-D quasi-difference, the response also removes the
    estimated loading of lagged (demeaned) regressors on the disturbance,
    which restores consistency under two-way dynamic feedback.
    """
    if stage is None:
        stage = durbin_stage(panel, p)
    p = stage.p
    t_len = panel.t
    y_extra = np.zeros((t_len - p, panel.n))
    for j in range(1, p + 1):
        y_extra += (panel.x[p - j : t_len - j] - stage.mu_x_hat) @ stage.psi_ux_hat[j - 1].T
    return _filtered_gls(
        panel, stage.psi_uu_hat, stage.sigma_uu_hat, p, METHOD_GD, y_extra=y_extra
    )


def bic_lag_count(n: int, r: int, p: int) -> int:
    """Coefficient count of the p-lag augmented system regression."""
    return n * (1 + r) + p * (n * n + n * r)


def select_lag_bic(panel: Panel, p_max: int) -> int:
    """BIC lag order for the augmented regression.

    Candidates are compared on the common effective sample starting at
    p_max so the log-determinants are comparable; ties resolve to the
    smaller order.
    """
    if p_max < 1:
        raise ValueError("p_max must be >= 1")
    _check_sample(panel, p_max)
    t_len = panel.t
    bics = []
    for p in range(1, p_max + 1):
        stage = durbin_stage(panel, p, start=p_max)
        logdet = chol_logdet(cholesky(stage.sigma_uu_hat))
        bics.append(logdet + bic_lag_count(panel.n, panel.r, p) * np.log(t_len) / t_len)
    return smallest_argmin(bics) + 1


def smallest_argmin(values) -> int:
    """Index of the minimum; exact ties resolve to the smallest index."""
    values = np.asarray(values)
    return int(np.argmin(values))


def bc_gd_fit(panel: Panel, p: int, b_reps: int, rng: RngStream) -> FitResult:
    """GD with additive bootstrap bias correction of the coefficients.

    The corrected estimate is 2 kappa_hat - mean_b(kappa_hat*_b) over
    resamples from the sieve generator fitted at the unrestricted GD
    estimate; the covariance and residual blocks are inherited from the
    uncorrected fit.
    """
    from .bootstrap import bias_correct  # local import: bootstrap depends on this module

    if b_reps < 50:
        raise ValueError("b_reps must be >= 50")
    base = gd_fit(panel, p)
    kappa_bc = bias_correct(panel, p, b_reps, rng, base_fit=base)
    return FitResult(
        method=METHOD_BC_GD,
        kappa_hat=kappa_bc,
        v_hat=base.v_hat,
        sigma_uu_hat=base.sigma_uu_hat,
        p_used=base.p_used,
        t_eff=base.t_eff,
        residuals=base.residuals,
    )
