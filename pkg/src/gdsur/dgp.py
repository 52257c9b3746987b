"""Data-generating processes: block VAR construction, simulation, moments.

The joint state is z_t = (x_t - mu_x, u_t) with x_t the common regressor
vector (r components) and u_t the disturbance vector (N components). Three
nested exogeneity regimes are expressed as zero patterns on the VAR blocks:
``BD`` zeroes both cross blocks, ``GEXOG`` zeroes the u<-x block only, and
``EBD`` leaves all blocks free. Innovations are Gaussian with
block-diagonal covariance (the x/u innovation blocks are orthogonal by
construction in every regime).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidRank, InvalidTarget, UnstableSpec
from .numerics import RngStream, cholesky, require_finite, spectral_radius

REGIMES = ("BD", "GEXOG", "EBD")

BASELINE_C = (0.4, 0.7, 0.3, 0.5)
BASELINE_RHO_BAR = 0.91
BASELINE_MU_X = 0.3
BASELINE_DELTA_XX = 0.1
BASELINE_DELTA_UU = 0.5
DEFAULT_BURN_IN = 500


def _as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError("rng must be an RngStream or numpy Generator")


@dataclass(frozen=True)
class BlockVarSpec:
    """Joint VAR(p0) law for (x', u')' in block form.

    Arrays are indexed [lag, row, col]; lag j stores the coefficient on
    z_{t-j-1}.
    """

    p0: int
    psi_xx: np.ndarray  # (p0, r, r)
    psi_xu: np.ndarray  # (p0, r, N)
    psi_ux: np.ndarray  # (p0, N, r)
    psi_uu: np.ndarray  # (p0, N, N)
    sigma_xx: np.ndarray  # (r, r)
    sigma_uu: np.ndarray  # (N, N)
    mu_x: np.ndarray  # (r,)
    regime: str

    def __post_init__(self):
        if self.p0 < 1:
            raise ValueError("p0 must be >= 1")
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}")
        for name in ("psi_xx", "psi_xu", "psi_ux", "psi_uu", "sigma_xx", "sigma_uu", "mu_x"):
            require_finite(getattr(self, name), name)
        if self.regime in ("BD", "GEXOG") and np.any(self.psi_ux != 0.0):
            raise ValueError(f"{self.regime} requires psi_ux = 0")
        if self.regime == "BD" and np.any(self.psi_xu != 0.0):
            raise ValueError("BD requires psi_xu = 0")

    @property
    def r(self) -> int:
        return self.psi_xx.shape[1]

    @property
    def n(self) -> int:
        return self.psi_uu.shape[1]

    @property
    def m(self) -> int:
        return self.r + self.n

    def psi(self) -> np.ndarray:
        """Assembled (p0, m, m) coefficient stack."""
        p0, r, n = self.p0, self.r, self.n
        out = np.zeros((p0, r + n, r + n))
        out[:, :r, :r] = self.psi_xx
        out[:, :r, r:] = self.psi_xu
        out[:, r:, :r] = self.psi_ux
        out[:, r:, r:] = self.psi_uu
        return out

    def sigma(self) -> np.ndarray:
        """Block-diagonal innovation covariance (m, m)."""
        m, r = self.m, self.r
        out = np.zeros((m, m))
        out[:r, :r] = self.sigma_xx
        out[r:, r:] = self.sigma_uu
        return out

    def companion(self) -> np.ndarray:
        return companion(self.psi())

    def is_stable(self) -> bool:
        return spectral_radius(self.companion()) < 1.0


@dataclass(frozen=True)
class SystemParams:
    """Regression coefficients of the observation equation y_t = alpha + (I (x) x_t') beta + u_t."""

    n: int
    r: int
    alpha: np.ndarray  # (n,)
    beta: np.ndarray  # (n * r,)

    def __post_init__(self):
        alpha = require_finite(self.alpha, "alpha")
        beta = require_finite(self.beta, "beta")
        if alpha.shape != (self.n,):
            raise ValueError("alpha must have length n")
        if beta.shape != (self.n * self.r,):
            raise ValueError("beta must have length n * r")

    @property
    def b_mat(self) -> np.ndarray:
        """Slope matrix with row i = beta_i' (shape n x r)."""
        return np.asarray(self.beta, dtype=np.float64).reshape(self.n, self.r)

    @property
    def kappa(self) -> np.ndarray:
        """Stacked coefficient vector (alpha', beta')'."""
        return np.concatenate([np.asarray(self.alpha, float), np.asarray(self.beta, float)])


@dataclass(frozen=True)
class Panel:
    """Observed sample {y_t, x_t}, plus the simulated truth u_t when synthetic."""

    y: np.ndarray  # (T, N)
    x: np.ndarray  # (T, r)
    u_true: np.ndarray | None = field(default=None)

    def __post_init__(self):
        y = require_finite(self.y, "y")
        x = require_finite(self.x, "x")
        if y.ndim != 2 or x.ndim != 2 or y.shape[0] != x.shape[0]:
            raise ValueError("y and x must be 2-d with a common time dimension")
        if self.u_true is not None:
            u = require_finite(self.u_true, "u_true")
            if u.shape != y.shape:
                raise ValueError("u_true must match the shape of y")

    @property
    def t(self) -> int:
        return self.y.shape[0]

    @property
    def n(self) -> int:
        return self.y.shape[1]

    @property
    def r(self) -> int:
        return self.x.shape[1]


def companion(psi: np.ndarray) -> np.ndarray:
    """Companion matrix of a (p, m, m) coefficient stack."""
    p, m, _ = psi.shape
    if p == 1:
        return np.array(psi[0])
    c = np.zeros((m * p, m * p))
    for j in range(p):
        c[:m, j * m : (j + 1) * m] = psi[j]
    c[m:, : m * (p - 1)] = np.eye(m * (p - 1))
    return c


def random_spd(m: int, delta: float, rng) -> np.ndarray:
    """Random SPD matrix L L' from a unit-diagonal lower-triangular L.

    Off-diagonal entries of L are i.i.d. Uniform(-delta/sqrt(m),
    delta/sqrt(m)); the Gram product is SPD by construction with diagonal
    entries >= 1.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    if delta < 0:
        raise ValueError("delta must be >= 0")
    gen = _as_generator(rng)
    l_mat = np.eye(m)
    idx = np.tril_indices(m, k=-1)
    bound = delta / np.sqrt(m)
    l_mat[idx] = gen.uniform(-bound, bound, size=len(idx[0]))
    return l_mat @ l_mat.T


def build_block_var(
    regime: str,
    r: int,
    n: int,
    c: tuple[float, float, float, float] = BASELINE_C,
    cross_rank: int = 1,
    rho_bar: float = BASELINE_RHO_BAR,
    *,
    rng: RngStream | np.random.Generator,
    mu_x: float | np.ndarray = BASELINE_MU_X,
    delta_xx: float = BASELINE_DELTA_XX,
    delta_uu: float = BASELINE_DELTA_UU,
) -> BlockVarSpec:
    """Draw a VAR(1) block specification for the given exogeneity regime.

    The diagonal blocks are scaled random orthogonal matrices (spectral
    norms c_xx, c_uu); the cross blocks share singular directions through a
    common low-rank pair A B' / B A' (spectral norms c_xu, c_ux). If the
    assembled coefficient matrix has spectral radius above ``rho_bar``, all
    blocks are shrunk by a common factor so the radius equals the target;
    no upward scaling is ever applied.

    Orthogonal factors are taken directly from the Householder QR of an
    i.i.d. Gaussian matrix, without sign normalization. The factorization's
    data-dependent column signs leave the drawn directions sign-conditioned,
    so cross-block effects keep a common component across replications
    instead of averaging out; estimator bias under dynamic feedback is then
    visible in ensemble means at the documented magnitudes.
    """
    if regime not in REGIMES:
        raise ValueError(f"unknown regime {regime!r}")
    if r < 1 or n < 1:
        raise ValueError("r and n must be >= 1")
    cxx, cxu, cux, cuu = (float(v) for v in c)
    if min(cxx, cxu, cux, cuu) < 0:
        raise ValueError("c coefficients must be nonnegative")
    if not 1 <= cross_rank <= min(r, n):
        raise InvalidRank(f"cross_rank must lie in [1, min(r, n)] = [1, {min(r, n)}]")
    if not 0.0 < rho_bar < 1.0:
        raise InvalidTarget("rho_bar must lie in (0, 1)")
    gen = _as_generator(rng)

    psi_xx = cxx * _raw_orthogonal_columns(r, r, gen)
    psi_uu = cuu * _raw_orthogonal_columns(n, n, gen)
    a = _raw_orthogonal_columns(r, cross_rank, gen)
    b = _raw_orthogonal_columns(n, cross_rank, gen)
    psi_xu = cxu * (a @ b.T)
    psi_ux = cux * (b @ a.T)
    if regime in ("BD", "GEXOG"):
        psi_ux = np.zeros_like(psi_ux)
    if regime == "BD":
        psi_xu = np.zeros_like(psi_xu)

    psi = np.zeros((r + n, r + n))
    psi[:r, :r] = psi_xx
    psi[:r, r:] = psi_xu
    psi[r:, :r] = psi_ux
    psi[r:, r:] = psi_uu
    rho = spectral_radius(psi)
    if rho > rho_bar:
        gamma = rho_bar / rho
        psi_xx = gamma * psi_xx
        psi_xu = gamma * psi_xu
        psi_ux = gamma * psi_ux
        psi_uu = gamma * psi_uu

    sigma_xx = random_spd(r, delta_xx, gen)
    sigma_uu = random_spd(n, delta_uu, gen)
    mu = np.full(r, float(mu_x)) if np.isscalar(mu_x) else require_finite(mu_x, "mu_x")
    return BlockVarSpec(
        p0=1,
        psi_xx=psi_xx[None],
        psi_xu=psi_xu[None],
        psi_ux=psi_ux[None],
        psi_uu=psi_uu[None],
        sigma_xx=sigma_xx,
        sigma_uu=sigma_uu,
        mu_x=mu,
        regime=regime,
    )


def _raw_orthogonal_columns(rows: int, cols: int, gen: np.random.Generator) -> np.ndarray:
    # Raw Householder signs, deliberately not normalized (see build_block_var).
    q, _ = np.linalg.qr(gen.standard_normal((rows, cols)))
    return q


def simulate(
    spec: BlockVarSpec,
    params: SystemParams,
    t_len: int,
    burn_in: int = DEFAULT_BURN_IN,
    *,
    rng: RngStream | np.random.Generator,
) -> Panel:
    """Simulate a stationary panel from the block VAR specification.

    The state recursion starts at zero and the first ``burn_in`` points are
    discarded; x_t recovers its mean after the recursion and y_t follows
    the observation equation. The simulated disturbances are recorded on
    the panel for diagnostics.
    """
    if params.n != spec.n or params.r != spec.r:
        raise ValueError("params dimensions do not match spec")
    if burn_in < 0:
        raise ValueError("burn_in must be >= 0")
    rho = spectral_radius(spec.companion())
    if rho >= 1.0:
        raise UnstableSpec(f"companion spectral radius {rho:.6f} >= 1")
    gen = _as_generator(rng)
    zbar = _iterate_var(spec, t_len + burn_in, gen)[burn_in:]
    x = zbar[:, : spec.r] + spec.mu_x
    u = zbar[:, spec.r :]
    y = params.alpha + x @ params.b_mat.T + u
    return Panel(y=y, x=x, u_true=u)


def _iterate_var(spec: BlockVarSpec, total: int, gen: np.random.Generator) -> np.ndarray:
    """Iterate the centered state from z = 0 with Gaussian innovations."""
    m, r, p0 = spec.m, spec.r, spec.p0
    eps = np.empty((total, m))
    eps[:, :r] = gen.standard_normal((total, r)) @ cholesky(spec.sigma_xx).T
    eps[:, r:] = gen.standard_normal((total, spec.n)) @ cholesky(spec.sigma_uu).T
    psi = spec.psi()
    out = np.zeros((total, m))
    lags = np.zeros((p0, m))
    for t in range(total):
        z = eps[t].copy()
        for j in range(p0):
            z += psi[j] @ lags[j]
        if p0 > 1:
            lags[1:] = lags[:-1]
        lags[0] = z
        out[t] = z
    return out


def spec_to_config(spec: BlockVarSpec) -> str:
    """Serialize a block VAR specification to the flat key=value format.

    Matrices are row-major comma lists; one ``psi_<block>_<lag>`` line per
    lag. The output round-trips bitwise through :func:`spec_from_config`.
    """
    lines = [
        f"regime = {spec.regime}",
        f"p0 = {spec.p0}",
        f"r = {spec.r}",
        f"n = {spec.n}",
        "mu_x = " + ",".join(repr(float(v)) for v in spec.mu_x),
        "sigma_xx = " + _mat_csv(spec.sigma_xx),
        "sigma_uu = " + _mat_csv(spec.sigma_uu),
    ]
    for j in range(spec.p0):
        lines.append(f"psi_xx_{j + 1} = " + _mat_csv(spec.psi_xx[j]))
        lines.append(f"psi_xu_{j + 1} = " + _mat_csv(spec.psi_xu[j]))
        lines.append(f"psi_ux_{j + 1} = " + _mat_csv(spec.psi_ux[j]))
        lines.append(f"psi_uu_{j + 1} = " + _mat_csv(spec.psi_uu[j]))
    return "\n".join(lines) + "\n"


def _mat_csv(mat: np.ndarray) -> str:
    return ",".join(repr(float(v)) for v in np.asarray(mat).reshape(-1))


def spec_from_config(text: str) -> BlockVarSpec:
    """Parse a specification written by :func:`spec_to_config`."""
    fields = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        fields[key] = value

    p0 = int(fields["p0"])
    r = int(fields["r"])
    n = int(fields["n"])

    def mat(key, rows, cols):
        vals = np.array([float(v) for v in fields[key].split(",")])
        return vals.reshape(rows, cols)

    return BlockVarSpec(
        p0=p0,
        psi_xx=np.stack([mat(f"psi_xx_{j + 1}", r, r) for j in range(p0)]),
        psi_xu=np.stack([mat(f"psi_xu_{j + 1}", r, n) for j in range(p0)]),
        psi_ux=np.stack([mat(f"psi_ux_{j + 1}", n, r) for j in range(p0)]),
        psi_uu=np.stack([mat(f"psi_uu_{j + 1}", n, n) for j in range(p0)]),
        sigma_xx=mat("sigma_xx", r, r),
        sigma_uu=mat("sigma_uu", n, n),
        mu_x=np.array([float(v) for v in fields["mu_x"].split(",")]),
        regime=fields["regime"],
    )


def analytic_autocov(spec: BlockVarSpec, max_lag: int) -> list[np.ndarray]:
    """Autocovariances Gamma_z(0..max_lag) of the centered state.

    Gamma(0) solves the companion-form discrete Lyapunov equation by
    vectorization; higher lags follow the VAR(1) companion recursion.
    """
    comp = spec.companion()
    if spectral_radius(comp) >= 1.0:
        raise UnstableSpec("autocovariances undefined for an unstable specification")
    mp = comp.shape[0]
    m = spec.m
    sigma_c = np.zeros((mp, mp))
    sigma_c[:m, :m] = spec.sigma()
    lhs = np.eye(mp * mp) - np.kron(comp, comp)
    gamma0 = np.linalg.solve(lhs, sigma_c.reshape(-1)).reshape(mp, mp)
    gamma0 = 0.5 * (gamma0 + gamma0.T)
    out = [gamma0[:m, :m]]
    gamma_l = gamma0
    for _ in range(max_lag):
        gamma_l = comp @ gamma_l
        out.append(gamma_l[:m, :m])
    return out
