"""Monte Carlo harness: estimator accuracy and test size/power experiments.

Each replication is a pure function of (config, replication index), with
all randomness routed through per-replication sub-streams, so results are
bitwise reproducible on any worker count and the reduction is performed
in replication order. Failed replications are dropped and counted; a cell
is flagged invalid when more than 1% of its replications fail.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .bootstrap import fdb_test
from .dgp import (
    BASELINE_C,
    BASELINE_DELTA_UU,
    BASELINE_DELTA_XX,
    BASELINE_MU_X,
    BASELINE_RHO_BAR,
    DEFAULT_BURN_IN,
    SystemParams,
    build_block_var,
    simulate,
)
from .errors import NumericalError
from .estimators import (
    bc_gd_fit,
    durbin_stage,
    fgls_co_fit,
    fglsd_fit,
    gd_fit,
    ols_fit,
    select_lag_bic,
)
from .inference import (
    alpha_zero_restriction,
    default_bandwidth_fraction,
    fixed_b_reference,
    grs_test,
    har_fixed_b_test,
    wald,
)
from .numerics import RngStream, empirical_quantile

ESTIMATOR_NAMES = ("ols", "fgls-co", "fgls-d", "gd", "bc-gd")
TEST_NAMES = ("wald-gd", "wald-fgls-d", "wald-fgls-co", "grs", "har", "fdb", "calibration")
MAX_FAIL_SHARE = 0.01

# Reserved sub-stream ids under each replication stream.
_SUB_DGP = 0
_SUB_SIM = 1
_SUB_BOOT = 2
_SUB_CAL = 3


@dataclass(frozen=True)
class McConfig:
    """One experiment cell: a regime/dimension/sample-size combination."""

    mode: str  # accuracy | size | power
    regime: str
    n: int
    r: int
    t: int
    reps: int
    seed: int
    p: int | str = "bic"  # fixed order or "bic"
    p_max: int = 4
    levels: tuple[float, ...] = (0.10, 0.05, 0.01)
    alternative_alpha1: float = 0.2
    estimators: tuple[str, ...] = ("ols", "fgls-co", "fgls-d", "gd")
    tests: tuple[str, ...] = ("wald-gd", "wald-fgls-d", "wald-fgls-co", "grs", "har", "fdb")
    b1: int = 199
    b_bias: int = 100
    b_har: float | None = None  # None: M = 1.3 sqrt(T) rule
    burn_in: int = DEFAULT_BURN_IN
    c: tuple[float, float, float, float] = BASELINE_C
    rho_bar: float = BASELINE_RHO_BAR
    cross_rank: int = 1
    mu_x: float = BASELINE_MU_X
    delta_xx: float = BASELINE_DELTA_XX
    delta_uu: float = BASELINE_DELTA_UU
    redraw_factors: bool = True
    threads: int = 1

    def __post_init__(self):
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        if not all(0.0 < lv < 1.0 for lv in self.levels):
            raise ValueError("levels must lie in (0, 1)")
        unknown = set(self.estimators) - set(ESTIMATOR_NAMES)
        if unknown:
            raise ValueError(f"unknown estimators: {sorted(unknown)}")
        unknown = set(self.tests) - set(TEST_NAMES)
        if unknown:
            raise ValueError(f"unknown tests: {sorted(unknown)}")


@dataclass(frozen=True)
class McAccuracy:
    """Scalar bias / MSE per estimator, MSE = bias^2 + trace(Var) exactly."""

    bias: dict[str, float]
    mse: dict[str, float]
    n_ok: dict[str, int]
    n_failed: dict[str, int]
    invalid: dict[str, bool]


@dataclass(frozen=True)
class McRejection:
    """Empirical rejection frequencies per test and nominal level."""

    rates: dict[str, dict[float, float]]
    half_width: dict[str, dict[float, float]]
    n_ok: dict[str, int]
    n_failed: dict[str, int]
    invalid: dict[str, bool]
    p_values: dict[str, np.ndarray] = field(default_factory=dict, repr=False)


def _rep_stream(cfg: McConfig, rep: int) -> RngStream:
    return RngStream(cfg.seed).child(rep)


def _draw_panel(cfg: McConfig, rep: int, alpha1: float):
    stream = _rep_stream(cfg, rep)
    dgp_rng = stream.child(_SUB_DGP) if cfg.redraw_factors else RngStream(cfg.seed).child(_SUB_DGP)
    spec = build_block_var(
        cfg.regime,
        cfg.r,
        cfg.n,
        cfg.c,
        cfg.cross_rank,
        cfg.rho_bar,
        rng=dgp_rng,
        mu_x=cfg.mu_x,
        delta_xx=cfg.delta_xx,
        delta_uu=cfg.delta_uu,
    )
    alpha = np.zeros(cfg.n)
    alpha[0] = alpha1
    params = SystemParams(n=cfg.n, r=cfg.r, alpha=alpha, beta=np.ones(cfg.n * cfg.r))
    panel = simulate(spec, params, cfg.t, cfg.burn_in, rng=stream.child(_SUB_SIM))
    return panel, params, stream


def _pick_p(cfg: McConfig, panel) -> int:
    if cfg.p == "bic":
        return select_lag_bic(panel, cfg.p_max)
    return int(cfg.p)


def _accuracy_rep(cfg: McConfig, rep: int) -> dict[str, np.ndarray | None]:
    panel, _, stream = _draw_panel(cfg, rep, alpha1=0.0)
    out: dict[str, np.ndarray | None] = {}
    try:
        p = _pick_p(cfg, panel)
        stage = durbin_stage(panel, p)
    except NumericalError:
        return {name: None for name in cfg.estimators}
    for name in cfg.estimators:
        try:
            if name == "ols":
                fit = ols_fit(panel)
            elif name == "fgls-co":
                fit = fgls_co_fit(panel, p)
            elif name == "fgls-d":
                fit = fglsd_fit(panel, p, stage=stage)
            elif name == "gd":
                fit = gd_fit(panel, p, stage=stage)
            else:  # bc-gd
                fit = bc_gd_fit(panel, p, cfg.b_bias, stream.child(_SUB_BOOT))
            out[name] = fit.kappa_hat
        except NumericalError:
            out[name] = None
    return out


def _pvalue_rep(cfg: McConfig, rep: int, alpha1: float) -> dict[str, float | None]:
    needs_panel = any(name != "calibration" for name in cfg.tests)
    if not needs_panel:
        stream = _rep_stream(cfg, rep)
        pv = float(stream.child(_SUB_CAL).generator().uniform())
        return {name: pv for name in cfg.tests}
    panel, _, stream = _draw_panel(cfg, rep, alpha1=alpha1)
    restr = alpha_zero_restriction(cfg.n, cfg.r)
    out: dict[str, float | None] = {}
    try:
        p = _pick_p(cfg, panel)
        stage = durbin_stage(panel, p)
    except NumericalError:
        return {name: None for name in cfg.tests}
    for name in cfg.tests:
        try:
            if name == "wald-gd":
                pv = wald(gd_fit(panel, p, stage=stage), restr).p_value
            elif name == "wald-fgls-d":
                pv = wald(fglsd_fit(panel, p, stage=stage), restr).p_value
            elif name == "wald-fgls-co":
                pv = wald(fgls_co_fit(panel, p), restr).p_value
            elif name == "grs":
                pv = grs_test(panel).p_value
            elif name == "har":
                pv = har_fixed_b_test(panel, restr, b=cfg.b_har).p_value
            elif name == "fdb":
                pv = fdb_test(panel, restr, p, cfg.b1, stream.child(_SUB_BOOT)).p_value
            else:  # calibration: harness self-check with exact uniform p-values
                pv = float(stream.child(_SUB_CAL).generator().uniform())
            out[name] = pv
        except NumericalError:
            out[name] = None
    return out


def _limit_blas() -> None:
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = "1"


def _map_reps(cfg: McConfig, fn, args_list):
    """Run one task per replication, in order, optionally in processes."""
    if cfg.threads <= 1:
        return [fn(*args) for args in args_list]
    with ProcessPoolExecutor(max_workers=cfg.threads, initializer=_limit_blas) as pool:
        chunk = max(1, len(args_list) // (8 * cfg.threads))
        return list(pool.map(fn, *zip(*args_list), chunksize=chunk))


def run_accuracy(cfg: McConfig) -> McAccuracy:
    """Scalar bias and MSE of the estimator roster at the true kappa."""
    if cfg.mode != "accuracy":
        raise ValueError("config mode must be 'accuracy'")
    kappa0 = np.concatenate([np.zeros(cfg.n), np.ones(cfg.n * cfg.r)])
    rows = _map_reps(cfg, _accuracy_rep, [(cfg, rep) for rep in range(cfg.reps)])
    bias, mse, n_ok, n_failed, invalid = {}, {}, {}, {}, {}
    for name in cfg.estimators:
        total = np.zeros_like(kappa0)
        total_sq = 0.0
        ok = 0
        for row in rows:
            kap = row[name]
            if kap is None:
                continue
            total += kap
            total_sq += float(kap @ kap)
            ok += 1
        n_ok[name] = ok
        n_failed[name] = cfg.reps - ok
        invalid[name] = (cfg.reps - ok) > MAX_FAIL_SHARE * cfg.reps
        if ok == 0:
            bias[name] = float("nan")
            mse[name] = float("nan")
            continue
        mean = total / ok
        bias[name] = float(np.linalg.norm(mean - kappa0))
        trace_var = total_sq / ok - float(mean @ mean)
        mse[name] = bias[name] ** 2 + max(trace_var, 0.0)
    return McAccuracy(bias=bias, mse=mse, n_ok=n_ok, n_failed=n_failed, invalid=invalid)


def _collect_pvalues(cfg: McConfig, alpha1: float) -> dict[str, np.ndarray]:
    if "har" in cfg.tests:
        # Warm the on-disk reference table before any worker needs it.
        fixed_b_reference(cfg.b_har or default_bandwidth_fraction(cfg.t), cfg.n)
    rows = _map_reps(cfg, _pvalue_rep, [(cfg, rep, alpha1) for rep in range(cfg.reps)])
    out = {}
    for name in cfg.tests:
        out[name] = np.array([np.nan if row[name] is None else row[name] for row in rows])
    return out


def _rejection_from_pvalues(cfg: McConfig, pvals: dict[str, np.ndarray]) -> McRejection:
    rates: dict[str, dict[float, float]] = {}
    half: dict[str, dict[float, float]] = {}
    n_ok, n_failed, invalid = {}, {}, {}
    for name, pv in pvals.items():
        ok = pv[~np.isnan(pv)]
        n_ok[name] = int(ok.size)
        n_failed[name] = int(pv.size - ok.size)
        invalid[name] = n_failed[name] > MAX_FAIL_SHARE * cfg.reps
        rates[name] = {}
        half[name] = {}
        for level in cfg.levels:
            freq = float(np.mean(ok < level)) if ok.size else float("nan")
            rates[name][level] = freq
            half[name][level] = (
                1.96 * float(np.sqrt(freq * (1.0 - freq) / ok.size)) if ok.size else float("nan")
            )
    return McRejection(
        rates=rates, half_width=half, n_ok=n_ok, n_failed=n_failed, invalid=invalid, p_values=pvals
    )


def run_size(cfg: McConfig) -> McRejection:
    """Null rejection frequencies of the test roster (alpha = 0 world)."""
    if cfg.mode != "size":
        raise ValueError("config mode must be 'size'")
    return _rejection_from_pvalues(cfg, _collect_pvalues(cfg, alpha1=0.0))


def run_power(cfg: McConfig) -> McRejection:
    """Size-adjusted power under the alpha_1 shift alternative.

    The matching null experiment runs first with the same per-replication
    streams; each test's empirical critical p-value at each level is the
    level-quantile of its null p-values, and alternative-world p-values
    are rejected against those.
    """
    if cfg.mode != "power":
        raise ValueError("config mode must be 'power'")
    null_p = _collect_pvalues(cfg, alpha1=0.0)
    alt_p = _collect_pvalues(cfg, alpha1=cfg.alternative_alpha1)
    rates: dict[str, dict[float, float]] = {}
    half: dict[str, dict[float, float]] = {}
    n_ok, n_failed, invalid = {}, {}, {}
    for name in cfg.tests:
        ok_null = null_p[name][~np.isnan(null_p[name])]
        ok_alt = alt_p[name][~np.isnan(alt_p[name])]
        failed = int(alt_p[name].size - ok_alt.size) + int(null_p[name].size - ok_null.size)
        n_ok[name] = int(ok_alt.size)
        n_failed[name] = failed
        invalid[name] = failed > MAX_FAIL_SHARE * 2 * cfg.reps
        rates[name] = {}
        half[name] = {}
        for level in cfg.levels:
            if ok_null.size == 0 or ok_alt.size == 0:
                rates[name][level] = float("nan")
                half[name][level] = float("nan")
                continue
            p_crit = empirical_quantile(ok_null, level)
            freq = float(np.mean(ok_alt < p_crit))
            rates[name][level] = freq
            half[name][level] = 1.96 * float(np.sqrt(freq * (1.0 - freq) / ok_alt.size))
    return McRejection(
        rates=rates, half_width=half, n_ok=n_ok, n_failed=n_failed, invalid=invalid, p_values=alt_p
    )


def with_mode(cfg: McConfig, mode: str) -> McConfig:
    """Copy of the config with a different mode tag."""
    return replace(cfg, mode=mode)
