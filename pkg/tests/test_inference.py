import numpy as np
import pytest

from gdsur.dgp import Panel
from gdsur.errors import InsufficientSample
from gdsur.estimators import FitResult, METHOD_GD, ols_fit
from gdsur.inference import (
    LinearRestriction,
    alpha_zero_restriction,
    default_bandwidth_fraction,
    fixed_b_critical_values,
    fixed_b_reference,
    grs_test,
    har_fixed_b_test,
    long_run_variance_qs,
    qs_kernel,
    restricted_estimate,
    wald,
)
from gdsur.numerics import RngStream, dist_sf


def synthetic_fit(kappa, v, t_eff=100):
    kappa = np.asarray(kappa, dtype=float)
    n = 1  # layout does not matter for the projection algebra
    return FitResult(
        method=METHOD_GD,
        kappa_hat=kappa,
        v_hat=np.asarray(v, dtype=float),
        sigma_uu_hat=np.eye(n),
        p_used=1,
        t_eff=t_eff,
        residuals=np.zeros((t_eff, n)),
    )


def random_fit(seed, m=6):
    gen = np.random.default_rng(seed)
    a = gen.standard_normal((m, m))
    return synthetic_fit(gen.standard_normal(m), a @ a.T + m * np.eye(m))


class TestWald:
    def test_zero_gap(self):
        fit = synthetic_fit([1.0, 2.0], np.eye(2))
        restr = LinearRestriction(np.array([[1.0, 0.0]]), np.array([1.0]))
        out = wald(fit, restr)
        assert out.statistic == 0.0
        assert out.p_value == 1.0

    def test_scalar_hand_value(self):
        # t_eff (k - r)^2 / v = 100 * 0.04 = 4.0; chi2(1) upper tail ~ 0.0455
        fit = synthetic_fit([0.2], [[1.0]], t_eff=100)
        restr = LinearRestriction(np.array([[1.0]]), np.array([0.0]))
        out = wald(fit, restr)
        assert out.statistic == pytest.approx(4.0, abs=1e-12)
        assert out.p_value == pytest.approx(dist_sf("chi2", 4.0, 1), abs=1e-12)
        assert out.p_value == pytest.approx(0.0455, abs=5e-4)

    def test_invariant_to_restriction_reparameterization(self):
        fit = random_fit(1)
        gen = np.random.default_rng(2)
        r_mat = gen.standard_normal((3, 6))
        r_vec = gen.standard_normal(3)
        a = gen.standard_normal((3, 3)) + 3 * np.eye(3)
        w1 = wald(fit, LinearRestriction(r_mat, r_vec)).statistic
        w2 = wald(fit, LinearRestriction(a @ r_mat, a @ r_vec)).statistic
        assert w1 == pytest.approx(w2, rel=1e-8)

    def test_requires_covariance(self, small_panel):
        with pytest.raises(ValueError):
            wald(ols_fit(small_panel), alpha_zero_restriction(5, 2))


class TestRestrictedEstimate:
    def test_already_satisfied(self):
        fit = synthetic_fit([1.0, 2.0], np.eye(2))
        restr = LinearRestriction(np.array([[1.0, 0.0]]), np.array([1.0]))
        np.testing.assert_allclose(restricted_estimate(fit, restr), fit.kappa_hat)

    def test_full_restriction_to_zero(self):
        fit = random_fit(3)
        restr = LinearRestriction(np.eye(6), np.zeros(6))
        np.testing.assert_allclose(restricted_estimate(fit, restr), np.zeros(6), atol=1e-10)

    def test_kkt_oracle_and_feasibility(self):
        for seed in range(20):
            fit = random_fit(seed)
            gen = np.random.default_rng(1000 + seed)
            restr = LinearRestriction(gen.standard_normal((2, 6)), gen.standard_normal(2))
            kappa_r = restricted_estimate(fit, restr)
            np.testing.assert_allclose(
                restr.r_mat @ kappa_r, restr.r_vec, atol=1e-12 * (1 + abs(restr.r_vec).max())
            )
            # KKT system for min (k - k_hat)' V^{-1} (k - k_hat) s.t. R k = r
            v_inv = np.linalg.inv(fit.v_hat)
            kkt = np.block(
                [[v_inv, restr.r_mat.T], [restr.r_mat, np.zeros((2, 2))]]
            )
            rhs = np.concatenate([v_inv @ fit.kappa_hat, restr.r_vec])
            oracle = np.linalg.solve(kkt, rhs)[:6]
            np.testing.assert_allclose(kappa_r, oracle, atol=1e-8)

    def test_idempotent(self):
        fit = random_fit(9)
        restr = LinearRestriction(np.random.default_rng(10).standard_normal((2, 6)), np.zeros(2))
        once = restricted_estimate(fit, restr)
        fit_again = synthetic_fit(once, fit.v_hat)
        twice = restricted_estimate(fit_again, restr)
        np.testing.assert_allclose(once, twice, atol=1e-10)


class TestGrs:
    def test_zero_intercepts_give_zero(self, small_panel):
        fit = ols_fit(small_panel)
        shifted = Panel(y=small_panel.y - fit.alpha_hat, x=small_panel.x)
        out = grs_test(shifted)
        assert out.statistic == pytest.approx(0.0, abs=1e-16)
        assert out.p_value == pytest.approx(1.0)

    def test_direct_formula_oracle(self):
        # N=2, k=1, T=10: every quantity recomputed with plain loops
        gen = RngStream(20).generator()
        x = gen.standard_normal((10, 1))
        y = gen.standard_normal((10, 2)) + 0.3
        out = grs_test(Panel(y=y, x=x))

        t_len, n, k = 10, 2, 1
        xm = np.column_stack([np.ones(t_len), x[:, 0]])
        alphas, resid = [], np.zeros((t_len, n))
        for i in range(n):
            coef = np.linalg.solve(xm.T @ xm, xm.T @ y[:, i])
            alphas.append(coef[0])
            resid[:, i] = y[:, i] - xm @ coef
        alpha = np.array(alphas)
        x_bar = x.mean(axis=0)
        s_x = ((x - x_bar).T @ (x - x_bar)) / (t_len - 1)
        sigma = resid.T @ resid / (t_len - k - 1)
        quad_x = float(x_bar @ np.linalg.solve(s_x, x_bar))
        quad_a = float(alpha @ np.linalg.solve(sigma, alpha))
        oracle = (t_len * (t_len - n - k)) / (n * (t_len - k - 1)) / (1 + quad_x) * quad_a
        assert out.statistic == pytest.approx(oracle, rel=1e-12)
        assert out.reference == {"kind": "f", "df1": 2, "df2": 7}

    def test_permutation_invariance(self, small_panel):
        base = grs_test(small_panel).statistic
        perm = np.random.default_rng(4).permutation(small_panel.n)
        shuffled = Panel(y=small_panel.y[:, perm], x=small_panel.x)
        assert grs_test(shuffled).statistic == pytest.approx(base, rel=1e-10)

    def test_insufficient_sample(self):
        with pytest.raises(InsufficientSample):
            grs_test(Panel(y=np.random.default_rng(0).standard_normal((7, 5)),
                           x=np.random.default_rng(1).standard_normal((7, 2))))


class TestQsKernel:
    def test_normalization_at_zero(self):
        assert qs_kernel(np.array([0.0]))[0] == 1.0

    def test_known_shape(self):
        vals = qs_kernel(np.linspace(0.0, 3.0, 50))
        assert np.all(vals <= 1.0)
        assert vals[1] > 0.99  # smooth at the origin

    def test_long_run_variance_symmetric_psd(self):
        gen = np.random.default_rng(5)
        v = gen.standard_normal((200, 4))
        omega = long_run_variance_qs(v, 20.0)
        assert np.allclose(omega, omega.T)
        eig = np.linalg.eigvalsh(omega)
        assert eig.min() > -1e-8 * np.abs(eig).max()


class TestHarFixedB:
    def test_small_b_matches_classical_wald(self):
        # white-noise scores: omega ~ sample covariance, statistic ~ classical
        gen = RngStream(30).generator()
        t_len = 2000
        x = gen.standard_normal((t_len, 1))
        y = 0.5 + x @ np.ones((1, 2)) + gen.standard_normal((t_len, 2))
        panel = Panel(y=y, x=x)
        restr = alpha_zero_restriction(2, 1)
        draws = fixed_b_reference(0.005, 2, n_grid=400, n_sims=4000, rng=RngStream(31))
        out = har_fixed_b_test(panel, restr, b=0.005, reference_draws=draws)

        fit = ols_fit(panel)
        design = np.zeros((t_len, 2, 4))
        design[:, :, :2] = np.eye(2)
        for i in range(2):
            design[:, i, 2 + i] = x[:, 0]
        scores = np.einsum("tnp,tn->tp", design, fit.residuals)
        q_hat = np.einsum("tnp,tnq->pq", design, design) / t_len
        omega0 = scores.T @ scores / t_len
        gap = restr.r_mat @ fit.kappa_hat
        sand = restr.r_mat @ np.linalg.solve(q_hat, np.linalg.solve(q_hat, omega0).T) @ restr.r_mat.T
        classical = t_len * gap @ np.linalg.solve(sand, gap)
        assert out.statistic == pytest.approx(classical, rel=0.10)

    def test_default_bandwidth_rule(self, small_panel):
        out = har_fixed_b_test(
            small_panel,
            alpha_zero_restriction(5, 2),
            reference_draws=np.linspace(0.0, 40.0, 100),
        )
        assert out.aux["bandwidth"] == pytest.approx(1.3 * np.sqrt(small_panel.t), rel=1e-12)
        assert default_bandwidth_fraction(small_panel.t) == pytest.approx(
            1.3 / np.sqrt(small_panel.t)
        )


class TestFixedBReference:
    def test_small_b_near_chi2(self):
        cvs = fixed_b_critical_values(
            0.005, 1, levels=(0.05,), n_grid=1000, n_sims=40_000, rng=RngStream(32)
        )
        assert cvs[0.05] == pytest.approx(3.841459, rel=0.03)

    def test_b_one_fattens_tail(self):
        cvs = fixed_b_critical_values(
            1.0, 1, levels=(0.05,), n_grid=400, n_sims=4000, rng=RngStream(33)
        )
        assert cvs[0.05] > 3.841459

    def test_deterministic_and_cached(self, tmp_path, monkeypatch):
        monkeypatch.setenv("GDSUR_CACHE_DIR", str(tmp_path))
        a = fixed_b_reference(0.2, 2, n_grid=100, n_sims=500, rng=RngStream(34))
        files = list(tmp_path.glob("fixedb_*.npy"))
        assert len(files) == 1
        b = fixed_b_reference(0.2, 2, n_grid=100, n_sims=500, rng=RngStream(34))
        assert np.array_equal(a, b)

    def test_monotone_in_sorted_order(self):
        draws = fixed_b_reference(0.2, 2, n_grid=100, n_sims=500, rng=RngStream(35))
        assert np.all(np.diff(draws) >= 0)
