"""VAR-sieve resampling, the fast double bootstrap Wald test, and bias correction.

The sieve resamples the JOINT (x, u) system: under two-way dynamic
feedback the regressors carry information from lagged disturbances, and a
u-only sieve would destroy exactly the dependence the transformed-system
estimator exploits. Innovations are resampled i.i.d. as (eps_x, eps_u)
pairs, preserving their contemporaneous covariance, while the fitted VAR
absorbs all serial dependence.

Two execution paths produce the bootstrap distributions: a scalar
reference path (one resample at a time) and a batched path that carries
all outer replications through vectorized linear algebra. Both consume
identical innovation-index draws, so they agree up to floating-point
roundoff; the batched path is the default and falls back to the scalar
path if any replication in a batch degenerates.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .dgp import Panel, companion
from .errors import BootstrapDegenerate, NumericalError
from .estimators import FitResult, durbin_stage, fit_var_ols, gd_fit
from .inference import LinearRestriction, TestOutcome, restricted_estimate, wald_statistic
from .numerics import RngStream, empirical_quantile, spectral_radius

logger = logging.getLogger(__name__)

DEFAULT_BOOT_BURN_IN = 100
STABILITY_LIMIT = 0.999
STABILITY_TARGET = 0.99


@dataclass(frozen=True)
class NullGenerator:
    """Resampling law: generating coefficients plus fitted joint dynamics.

    The VAR is fitted to the demeaned state and pseudo-samples iterate the
    centered recursion, so the pseudo-disturbance has mean zero exactly at
    every t and the generating coefficients satisfy the imposed null
    without an intercept leak.
    """

    kappa_gen: np.ndarray  # (N + N*r,)
    psi: np.ndarray  # (p, m, m) joint VAR coefficients for the centered state
    pool: np.ndarray  # (n_pool, m) centered innovation pairs
    x_mean: np.ndarray  # (r,) sample mean restored to regenerated regressors
    p: int
    r: int
    n: int
    stabilized: bool

    @property
    def alpha_gen(self) -> np.ndarray:
        return self.kappa_gen[: self.n]

    @property
    def b_gen(self) -> np.ndarray:
        return self.kappa_gen[self.n :].reshape(self.n, self.r)


def _stabilize(psi: np.ndarray):
    """Shrink lag-polynomial roots so the companion radius is < 1.

    Scaling lag j by gamma**j multiplies every companion eigenvalue by
    gamma, so the adjusted radius equals the target exactly.
    """
    rho = spectral_radius(companion(psi))
    stabilized = False
    if rho >= STABILITY_LIMIT:
        gamma = STABILITY_TARGET / rho
        psi = np.stack([psi[j] * gamma ** (j + 1) for j in range(psi.shape[0])])
        stabilized = True
        logger.warning("sieve unstable (rho=%.4f); eigenvalues shrunk to %.2f", rho, STABILITY_TARGET)
    return psi, stabilized


def fit_null_generator(
    panel: Panel,
    p: int,
    restr: LinearRestriction | None = None,
    fit: FitResult | None = None,
) -> NullGenerator:
    """Fit the sieve generator, imposing the restriction when given.

    Disturbances are rebuilt from the generating coefficients (restricted
    when a null is imposed), the joint VAR(p) for the demeaned (x, u)
    state is fitted, and its centered innovations form the resampling
    pool.
    """
    if fit is None:
        fit = gd_fit(panel, p)
    if restr is not None:
        kappa_gen = restricted_estimate(fit, restr)
        # Snap residual floating-point drift so the generating coefficients
        # satisfy the null identically (exact for selector-type restrictions).
        gap = restr.r_mat @ kappa_gen - restr.r_vec
        kappa_gen = kappa_gen - np.linalg.pinv(restr.r_mat) @ gap
    else:
        kappa_gen = fit.kappa_hat
    n, r = panel.n, panel.r
    alpha = kappa_gen[:n]
    b_mat = kappa_gen[n:].reshape(n, r)
    u = panel.y - alpha - panel.x @ b_mat.T
    w = np.hstack([panel.x, u])
    w = w - w.mean(axis=0)
    psi, _, resid = fit_var_ols(w, p, intercept=False)
    psi, stabilized = _stabilize(psi)
    pool = resid - resid.mean(axis=0)
    return NullGenerator(
        kappa_gen=kappa_gen,
        psi=psi,
        pool=pool,
        x_mean=panel.x.mean(axis=0),
        p=p,
        r=r,
        n=n,
        stabilized=stabilized,
    )


def _iterate_sieve(psi: np.ndarray, eps: np.ndarray) -> np.ndarray:
    """Iterate the centered state w_t = sum_j psi_j w_{t-j} + eps_t from zero."""
    p, m, _ = psi.shape
    total = eps.shape[0]
    out = np.empty((total, m))
    lags = np.zeros((p, m))
    for t in range(total):
        z = eps[t].copy()
        for j in range(p):
            z += psi[j] @ lags[j]
        if p > 1:
            lags[1:] = lags[:-1]
        lags[0] = z
        out[t] = z
    return out


def _panel_from_state(gen: NullGenerator, w: np.ndarray) -> Panel:
    x = w[:, : gen.r] + gen.x_mean
    u = w[:, gen.r :]
    y = gen.alpha_gen + x @ gen.b_gen.T + u
    return Panel(y=y, x=x, u_true=u)


def sieve_resample(
    gen: NullGenerator,
    t_len: int,
    rng: RngStream,
    burn_in: int = DEFAULT_BOOT_BURN_IN,
) -> Panel:
    """Draw one pseudo-sample of length ``t_len`` from the generator."""
    g = rng.generator()
    idx = g.integers(0, gen.pool.shape[0], size=t_len + burn_in)
    w = _iterate_sieve(gen.psi, gen.pool[idx])[burn_in:]
    return _panel_from_state(gen, w)


# ---------------------------------------------------------------------------
# Batched engine: all outer replications move through stacked linear algebra.
# Shapes use a leading batch axis; index draws are shared with the scalar
# path so the two implementations see identical innovation sequences.
# ---------------------------------------------------------------------------


def _batch_sieve_shared(psi, eps):
    """Iterate the centered sieve for a batch with one shared coefficient set.

    psi (p, m, m), eps (B, total, m).
    """
    p, m, _ = psi.shape
    n_b, total, _ = eps.shape
    out = np.empty((n_b, total, m))
    lags = np.zeros((p, n_b, m))
    psi_t = psi.transpose(0, 2, 1)
    for t in range(total):
        z = eps[:, t].copy()
        for j in range(p):
            z += lags[j] @ psi_t[j]
        if p > 1:
            lags[1:] = lags[:-1]
        lags[0] = z
        out[:, t] = z
    return out


def _batch_sieve_per_b(psi, eps):
    """Iterate the centered sieve with per-replication coefficients.

    psi (B, p, m, m), eps (B, total, m).
    """
    n_b, p, m, _ = psi.shape
    total = eps.shape[1]
    out = np.empty((n_b, total, m))
    lags = np.zeros((p, n_b, m))
    for t in range(total):
        z = eps[:, t].copy()
        for j in range(p):
            z += np.einsum("bij,bj->bi", psi[:, j], lags[j])
        if p > 1:
            lags[1:] = lags[:-1]
        lags[0] = z
        out[:, t] = z
    return out


def _batch_solve_gram(design, resp):
    """Batched least squares via normal equations.

    design (B, rows, d), resp (B, rows, q) -> (coef (B, d, q), gram).
    """
    design_t = design.transpose(0, 2, 1)
    gram = design_t @ design
    rhs = design_t @ resp
    return np.linalg.solve(gram, rhs), gram


def _batch_durbin(y, x, p: int):
    """Batched augmented first-stage regression; mirrors durbin_stage."""
    n_b, t_len, n = y.shape
    r = x.shape[2]
    cols = [np.ones((n_b, t_len - p, 1)), x[:, p:]]
    cols += [y[:, p - j : t_len - j] for j in range(1, p + 1)]
    cols += [x[:, p - j : t_len - j] for j in range(1, p + 1)]
    design = np.concatenate(cols, axis=2)
    theta, _ = _batch_solve_gram(design, y[:, p:])
    resid = y[:, p:] - design @ theta
    t_eff = t_len - p
    b_hat = theta[:, 1 : 1 + r].transpose(0, 2, 1)
    psi_uu = np.stack(
        [theta[:, 1 + r + (j - 1) * n : 1 + r + j * n].transpose(0, 2, 1) for j in range(1, p + 1)],
        axis=1,
    )
    lam = np.stack(
        [
            theta[:, 1 + r + p * n + (j - 1) * r : 1 + r + p * n + j * r].transpose(0, 2, 1)
            for j in range(1, p + 1)
        ],
        axis=1,
    )
    psi_ux = lam + psi_uu @ b_hat[:, None]
    mu_x = x[:, p:].mean(axis=1)
    sigma_uu = resid.transpose(0, 2, 1) @ resid / t_eff
    return {
        "psi_uu": psi_uu,
        "psi_ux": psi_ux,
        "b_hat": b_hat,
        "mu_x": mu_x,
        "sigma_uu": sigma_uu,
    }


def _batch_gd(y, x, p: int, stage):
    """Batched transformed-system GLS; mirrors gd_fit.

    The transformed design Z_t' = [F, sum_j A_j (x) x_{t-j}'] (A_0 = I,
    A_j = -psi_uu_j) never gets materialized: its weighted normal
    equations decompose exactly into lag cross-moments of x and the
    transformed response, assembled through small contractions. This
    keeps the per-batch cost independent of the coefficient dimension's
    time expansion.
    """
    n_b, t_len, n = y.shape
    r = x.shape[2]
    psi_uu, psi_ux = stage["psi_uu"], stage["psi_ux"]
    mu_x, sigma_uu = stage["mu_x"], stage["sigma_uu"]
    t_eff = t_len - p
    k = n * r

    yt = y[:, p:].copy()
    for j in range(1, p + 1):
        yt -= y[:, p - j : t_len - j] @ psi_uu[:, j - 1].transpose(0, 2, 1)
        yt -= (x[:, p - j : t_len - j] - mu_x[:, None]) @ psi_ux[:, j - 1].transpose(0, 2, 1)

    xw = [x[:, p - j : t_len - j] for j in range(p + 1)]  # lag windows, j = 0..p
    moments = np.empty((n_b, p + 1, p + 1, r, r))
    for j in range(p + 1):
        xw_t = xw[j].transpose(0, 2, 1)
        for l in range(p + 1):
            moments[:, j, l] = xw_t @ xw[l]
    x_sums = np.stack([w.sum(axis=1) for w in xw], axis=1)  # (B, p+1, r)
    y_cross = np.stack([w.transpose(0, 2, 1) @ yt for w in xw], axis=1)  # (B, p+1, r, N)
    y_sum = yt.sum(axis=1)

    a_stack = np.empty((n_b, p + 1, n, n))
    a_stack[:, 0] = np.eye(n)
    a_stack[:, 1:] = -psi_uu
    f_block = np.eye(n) - psi_uu.sum(axis=1)
    weight = np.linalg.inv(sigma_uu)
    fw = f_block.transpose(0, 2, 1) @ weight  # F' W
    h_stack = a_stack.transpose(0, 1, 3, 2) @ weight[:, None]  # A_j' W
    fwa = fw[:, None] @ a_stack  # F' W A_j
    g_stack = np.einsum("bjce,blef->bjlcf", h_stack, a_stack)  # A_j' W A_l

    p_dim = n + k
    gram = np.empty((n_b, p_dim, p_dim))
    gram[:, :n, :n] = t_eff * (fw @ f_block)
    g12 = np.einsum("bjim,bja->bima", fwa, x_sums).reshape(n_b, n, k)
    gram[:, :n, n:] = g12
    gram[:, n:, :n] = g12.transpose(0, 2, 1)
    gram[:, n:, n:] = (
        np.einsum("bjlce,bjlad->bcaed", g_stack, moments).reshape(n_b, k, k)
    )
    rhs = np.empty((n_b, p_dim))
    rhs[:, :n] = (fw @ y_sum[..., None])[..., 0]
    rhs[:, n:] = np.einsum("bjce,bjae->bca", h_stack, y_cross).reshape(n_b, k)

    kappa = np.linalg.solve(gram, rhs[..., None])[..., 0]
    v_hat = t_eff * np.linalg.inv(gram)
    return kappa, v_hat, t_eff


def _batch_wald(kappa, v_hat, t_eff: int, restr: LinearRestriction):
    gap = kappa @ restr.r_mat.T - restr.r_vec
    vr = v_hat @ restr.r_mat.T
    rvr = restr.r_mat @ vr
    sol = np.linalg.solve(rvr, gap[..., None])[..., 0]
    return t_eff * np.sum(gap * sol, axis=1)


def _batch_restricted(kappa, v_hat, restr: LinearRestriction):
    gap = kappa @ restr.r_mat.T - restr.r_vec
    vr = v_hat @ restr.r_mat.T
    rvr = restr.r_mat @ vr
    sol = np.linalg.solve(rvr, gap[..., None])
    return kappa - (vr @ sol)[..., 0]


def _batch_var_fit(w, p: int):
    """Batched no-intercept VAR(p) on pre-centered series; mirrors fit_var_ols."""
    n_b, t_len, m = w.shape
    design = np.concatenate([w[:, p - j : t_len - j] for j in range(1, p + 1)], axis=2)
    coef, _ = _batch_solve_gram(design, w[:, p:])
    psi = np.stack(
        [coef[:, (j - 1) * m : j * m].transpose(0, 2, 1) for j in range(1, p + 1)],
        axis=1,
    )
    resid = w[:, p:] - design @ coef
    return psi, resid


def _batch_companion(psi):
    n_b, p, m, _ = psi.shape
    if p == 1:
        return psi[:, 0]
    comp = np.zeros((n_b, m * p, m * p))
    for j in range(p):
        comp[:, :m, j * m : (j + 1) * m] = psi[:, j]
    comp[:, m:, : m * (p - 1)] = np.eye(m * (p - 1))
    return comp


def _batch_stabilize(psi):
    rho = np.abs(np.linalg.eigvals(_batch_companion(psi))).max(axis=1)
    gamma = np.where(rho >= STABILITY_LIMIT, STABILITY_TARGET / np.maximum(rho, 1e-12), 1.0)
    n_stab = int(np.sum(gamma < 1.0))
    if n_stab:
        logger.debug("stabilized %d inner sieve generators", n_stab)
        powers = gamma[:, None] ** np.arange(1, psi.shape[1] + 1)[None]
        psi = psi * powers[:, :, None, None]
    return psi


def _batch_observe(alpha, b_mat, w, r: int, x_mean):
    """Map centered sieve states to panels: y = alpha + x B' + u (batched)."""
    u = w[:, :, r:]
    if alpha.ndim == 1:
        x = w[:, :, :r] + x_mean
        y = alpha + x @ b_mat.T + u
    else:
        x = w[:, :, :r] + x_mean[:, None]
        y = alpha[:, None] + x @ b_mat.transpose(0, 2, 1) + u
    return y, x, u


def _memory_chunk(b_total: int, t_len: int, n: int, r: int) -> int:
    p_dim = n + n * r
    per_b = t_len * n * p_dim * 8 * 3  # design + whitened copy + slack
    return max(4, min(b_total, int(2.5e8 / max(per_b, 1))))


def fdb_test(
    panel: Panel,
    restr: LinearRestriction,
    p: int,
    b1: int,
    rng: RngStream,
    burn_in: int = DEFAULT_BOOT_BURN_IN,
    use_batched: bool = True,
) -> TestOutcome:
    """Fast double bootstrap for the transformed-system Wald test.

    Outer pseudo-samples come from the restricted sieve; each contributes
    one unrestricted Wald statistic and, through a re-fitted restricted
    generator, a single inner statistic. The bootstrap p-value is then
    calibrated against the empirical quantile of the inner statistics.
    """
    if b1 < 99:
        raise ValueError("b1 must be >= 99 (recommend 399+)")
    stage = durbin_stage(panel, p)
    fit = gd_fit(panel, p, stage)
    w_obs = wald_statistic(fit.kappa_hat, fit.v_hat, fit.t_eff, restr)
    gen0 = fit_null_generator(panel, p, restr, fit=fit)
    t_len = panel.t
    total = t_len + burn_in
    outer_idx = rng.child(1).generator().integers(0, gen0.pool.shape[0], size=(b1, total))
    inner_idx = rng.child(2).generator().integers(0, t_len - p, size=(b1, total))

    w_star = w_inner = None
    if use_batched:
        try:
            w_star, w_inner = _fdb_batched(gen0, p, restr, outer_idx, inner_idx, burn_in)
            n_failed = 0
        except (np.linalg.LinAlgError, NumericalError):
            w_star = None
    if w_star is None:
        w_star, w_inner, n_failed = _fdb_scalar(gen0, p, restr, outer_idx, inner_idx, burn_in)
        if n_failed > 0.1 * b1:
            raise BootstrapDegenerate(f"{n_failed}/{b1} outer resamples failed estimation")

    n_ok = w_star.size
    p_star = float(np.mean(w_star >= w_obs))
    q_inner = empirical_quantile(w_inner, 1.0 - p_star)
    p_fdb = float(np.mean(w_star >= q_inner))
    return TestOutcome(
        statistic=w_obs,
        reference={"kind": "bootstrap", "b1": b1},
        p_value=p_fdb,
        method="fdb",
        aux={
            "p_star": p_star,
            "q_inner": q_inner,
            "p_plain": p_star,
            "n_outer": int(n_ok),
            "n_failed": int(n_failed),
            "w_star": w_star,
            "w_inner": w_inner,
        },
    )


def _fdb_batched(gen0, p, restr, outer_idx, inner_idx, burn_in):
    b1, total = outer_idx.shape
    t_len = total - burn_in
    chunk = _memory_chunk(b1, t_len, gen0.n, gen0.r)
    w_star = np.empty(b1)
    w_inner = np.empty(b1)
    for lo in range(0, b1, chunk):
        hi = min(lo + chunk, b1)
        sl = slice(lo, hi)
        w_state = _batch_sieve_shared(gen0.psi, gen0.pool[outer_idx[sl]])[:, burn_in:]
        y_s, x_s, _ = _batch_observe(gen0.alpha_gen, gen0.b_gen, w_state, gen0.r, gen0.x_mean)
        stage = _batch_durbin(y_s, x_s, p)
        kappa, v_hat, t_eff = _batch_gd(y_s, x_s, p, stage)
        w_star[sl] = _batch_wald(kappa, v_hat, t_eff, restr)
        kappa_r = _batch_restricted(kappa, v_hat, restr)

        alpha_r = kappa_r[:, : gen0.n]
        b_r = kappa_r[:, gen0.n :].reshape(-1, gen0.n, gen0.r)
        u_r = y_s - alpha_r[:, None] - x_s @ b_r.transpose(0, 2, 1)
        w2 = np.concatenate([x_s, u_r], axis=2)
        x_mean2 = x_s.mean(axis=1)
        w2 -= w2.mean(axis=1, keepdims=True)
        psi2, resid2 = _batch_var_fit(w2, p)
        psi2 = _batch_stabilize(psi2)
        pools2 = resid2 - resid2.mean(axis=1, keepdims=True)
        n_chunk = hi - lo
        eps2 = pools2[np.arange(n_chunk)[:, None], inner_idx[sl]]
        w_state2 = _batch_sieve_per_b(psi2, eps2)[:, burn_in:]
        y_i, x_i, _ = _batch_observe(alpha_r, b_r, w_state2, gen0.r, x_mean2)
        stage_i = _batch_durbin(y_i, x_i, p)
        kappa_i, v_i, t_eff_i = _batch_gd(y_i, x_i, p, stage_i)
        w_inner[sl] = _batch_wald(kappa_i, v_i, t_eff_i, restr)
    return w_star, w_inner


def _fdb_scalar(gen0, p, restr, outer_idx, inner_idx, burn_in):
    """Reference path: identical draws, one replication at a time."""
    b1, total = outer_idx.shape
    t_len = total - burn_in
    w_star, w_inner = [], []
    n_failed = 0
    for b in range(b1):
        try:
            w_state = _iterate_sieve(gen0.psi, gen0.pool[outer_idx[b]])[burn_in:]
            panel_b = _panel_from_state(gen0, w_state)
            fit_b = gd_fit(panel_b, p)
            w_star_b = wald_statistic(fit_b.kappa_hat, fit_b.v_hat, fit_b.t_eff, restr)
            gen_b = fit_null_generator(panel_b, p, restr, fit=fit_b)
            w_state2 = _iterate_sieve(gen_b.psi, gen_b.pool[inner_idx[b]])[burn_in:]
            panel_bb = _panel_from_state(gen_b, w_state2)
            fit_bb = gd_fit(panel_bb, p)
            w_inner_b = wald_statistic(fit_bb.kappa_hat, fit_bb.v_hat, fit_bb.t_eff, restr)
        except (np.linalg.LinAlgError, NumericalError):
            n_failed += 1
            continue
        w_star.append(w_star_b)
        w_inner.append(w_inner_b)
    return np.asarray(w_star), np.asarray(w_inner), n_failed


def bias_correct(
    panel: Panel,
    p: int,
    b_reps: int,
    rng: RngStream,
    base_fit: FitResult | None = None,
    burn_in: int = DEFAULT_BOOT_BURN_IN,
    use_batched: bool = True,
) -> np.ndarray:
    """Additive bootstrap bias correction 2 kappa_hat - mean(kappa_hat*).

    Resamples come from the sieve fitted at the unrestricted estimate.
    Failed resamples are replaced from a pre-drawn 3x index budget; the
    correction degenerates to an error when the budget is exhausted.
    """
    if base_fit is None:
        base_fit = gd_fit(panel, p)
    gen = fit_null_generator(panel, p, restr=None, fit=base_fit)
    t_len = panel.t
    total = t_len + burn_in
    budget = 3 * b_reps
    idx = rng.child(1).generator().integers(0, gen.pool.shape[0], size=(budget, total))

    kappa_sum = None
    if use_batched:
        try:
            kappa_star = _kappa_batched(gen, p, idx[:b_reps], burn_in)
            kappa_sum = kappa_star.sum(axis=0)
            n_ok = b_reps
        except (np.linalg.LinAlgError, NumericalError):
            kappa_sum = None
    if kappa_sum is None:
        kappa_sum = np.zeros_like(base_fit.kappa_hat)
        n_ok = 0
        for row in range(budget):
            if n_ok == b_reps:
                break
            try:
                w_state = _iterate_sieve(gen.psi, gen.pool[idx[row]])[burn_in:]
                fit_b = gd_fit(_panel_from_state(gen, w_state), p)
            except (np.linalg.LinAlgError, NumericalError):
                continue
            kappa_sum += fit_b.kappa_hat
            n_ok += 1
        if n_ok < b_reps:
            raise BootstrapDegenerate(
                f"only {n_ok}/{b_reps} bootstrap fits succeeded within the 3x budget"
            )
    return 2.0 * base_fit.kappa_hat - kappa_sum / n_ok


def _kappa_batched(gen, p, idx, burn_in):
    n_reps, total = idx.shape
    t_len = total - burn_in
    chunk = _memory_chunk(n_reps, t_len, gen.n, gen.r)
    out = np.empty((n_reps, gen.kappa_gen.size))
    for lo in range(0, n_reps, chunk):
        hi = min(lo + chunk, n_reps)
        w_state = _batch_sieve_shared(gen.psi, gen.pool[idx[lo:hi]])[:, burn_in:]
        y_s, x_s, _ = _batch_observe(gen.alpha_gen, gen.b_gen, w_state, gen.r, gen.x_mean)
        stage = _batch_durbin(y_s, x_s, p)
        kappa, _, _ = _batch_gd(y_s, x_s, p, stage)
        out[lo:hi] = kappa
    return out
