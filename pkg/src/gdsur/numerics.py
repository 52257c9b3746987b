"""Dense linear-algebra kernels, seedable RNG streams, and reference distributions.

Matrices are plain ``numpy.ndarray`` values with row-major iteration
semantics; every public operation validates that its inputs are finite.
Random streams are counter-based (Philox keyed through ``SeedSequence``)
so Monte Carlo replications are reproducible on any worker count.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.stats

from .errors import (
    EmptySample,
    InvalidParams,
    NoConvergence,
    NotPositiveDefinite,
)

SYMMETRY_RTOL = 1e-10


def require_finite(a: np.ndarray, name: str = "array") -> np.ndarray:
    """Return ``a`` as a float array, raising if any entry is NaN/Inf."""
    a = np.asarray(a, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    return a


@dataclass(frozen=True)
class RngStream:
    """Deterministic, splittable random stream keyed by (seed, stream_id).

    ``stream_id`` is a tuple path so nested resampling schemes (replication
    -> outer bootstrap -> inner draw) can derive statistically independent
    sub-streams without coordination. Identical (seed, stream_id) yields an
    identical draw sequence regardless of thread or process count.
    """

    seed: int
    stream_id: tuple[int, ...] = field(default=())

    def child(self, *ids: int) -> "RngStream":
        """Derive the sub-stream at path ``stream_id + ids``."""
        return RngStream(self.seed, self.stream_id + tuple(ids))

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of this stream."""
        seq = np.random.SeedSequence(self.seed, spawn_key=self.stream_id)
        return np.random.Generator(np.random.Philox(seq))


def cholesky(a: np.ndarray) -> np.ndarray:
    """Lower-triangular factor L with L L' = a for SPD ``a``.

    The input must be symmetric within ``1e-10 * ||a||`` (Frobenius) and is
    symmetrized before factorization to absorb accumulated floating error.

    Raises
    ------
    NotPositiveDefinite
        If a pivot is non-positive. Callers must not regularize silently.
    """
    a = require_finite(a, "a")
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("cholesky requires a square matrix")
    norm = np.linalg.norm(a)
    if np.linalg.norm(a - a.T) > SYMMETRY_RTOL * max(norm, 1.0):
        raise ValueError("matrix is not symmetric within tolerance")
    sym = 0.5 * (a + a.T)
    try:
        return np.linalg.cholesky(sym)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from exc


def chol_logdet(l_factor: np.ndarray) -> float:
    """log-determinant of the SPD matrix with Cholesky factor ``l_factor``."""
    return 2.0 * float(np.sum(np.log(np.diag(l_factor))))


def solve_spd(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve a x = b for SPD ``a`` via Cholesky factorization."""
    a = require_finite(a, "a")
    b = require_finite(b, "b")
    if b.shape[0] != a.shape[0]:
        raise ValueError("b.rows must equal a.rows")
    sym = 0.5 * (a + a.T)
    try:
        c = scipy.linalg.cho_factor(sym, lower=True, check_finite=False)
    except scipy.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from exc
    return scipy.linalg.cho_solve(c, b, check_finite=False)


def inv_spd(a: np.ndarray) -> np.ndarray:
    """Inverse of an SPD matrix; propagates NotPositiveDefinite."""
    return solve_spd(a, np.eye(a.shape[0]))


def random_orthogonal(m: int, rng: RngStream | np.random.Generator) -> np.ndarray:
    """Random orthogonal m x m matrix via QR of an i.i.d. Gaussian matrix.

    The sign convention forces a positive diagonal of the triangular factor
    so the draw is a deterministic function of the stream.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    while True:
        g = gen.standard_normal((m, m))
        q, r = np.linalg.qr(g)
        d = np.diag(r)
        if np.all(d != 0.0):
            return q * np.sign(d)
        # Gaussian matrices are full rank almost surely; redraw on the
        # measure-zero event.


_EIG_ITER_CAP = 10_000


def spectral_radius(a: np.ndarray) -> float:
    """Maximum eigenvalue modulus of a square matrix."""
    a = require_finite(a, "a")
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("spectral_radius requires a square matrix")
    if a.shape[0] == 0:
        return 0.0
    try:
        # LAPACK's QR iteration honours an internal sweep cap (~30n); treat
        # its failure as the iteration-cap signal of the contract.
        eig = np.linalg.eigvals(a)
    except np.linalg.LinAlgError as exc:
        raise NoConvergence(f"eigenvalue iteration failed within {_EIG_ITER_CAP} sweeps") from exc
    return float(np.max(np.abs(eig)))


def dist_sf(kind: str, x: float, params) -> float:
    """Upper-tail probability P(X > x) for the reference distributions.

    ``kind`` is one of ``chi2`` (params: df), ``f`` (params: (d1, d2)) or
    ``normal`` (params ignored). Accuracy follows the regularized
    incomplete gamma/beta implementations in SciPy (well inside 1e-10).
    """
    if not np.isfinite(x):
        raise ValueError("x must be finite")
    if kind == "chi2":
        df = float(np.atleast_1d(params)[0])
        if df < 1:
            raise InvalidParams("chi2 requires df >= 1")
        return float(scipy.stats.chi2.sf(x, df))
    if kind == "f":
        d1, d2 = (float(v) for v in np.atleast_1d(params)[:2])
        if d1 < 1 or d2 < 1:
            raise InvalidParams("f requires both df >= 1")
        return float(scipy.stats.f.sf(x, d1, d2))
    if kind == "normal":
        return float(scipy.stats.norm.sf(x))
    raise InvalidParams(f"unknown distribution kind: {kind!r}")


def empirical_quantile(v: np.ndarray, tau: float) -> float:
    """Order statistic at index ceil(tau * n), clamped to [1, n].

    This ceiling rule (no interpolation) is the repository-wide quantile
    convention; bootstrap calibration relies on it being uniform.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise EmptySample("empirical_quantile of an empty sample")
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    n = v.size
    k = int(np.ceil(tau * n))
    k = min(max(k, 1), n)
    return float(np.sort(v)[k - 1])
