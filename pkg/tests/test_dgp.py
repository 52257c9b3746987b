import numpy as np
import pytest

from gdsur.dgp import (
    BASELINE_C,
    BlockVarSpec,
    Panel,
    SystemParams,
    analytic_autocov,
    build_block_var,
    companion,
    random_spd,
    simulate,
)
from gdsur.errors import InvalidRank, InvalidTarget, UnstableSpec
from gdsur.numerics import RngStream, spectral_radius


def scalar_spec(psi=0.5, sigma=1.0, psi_uu=0.0):
    return BlockVarSpec(
        p0=1,
        psi_xx=np.array([[[psi]]]),
        psi_xu=np.zeros((1, 1, 1)),
        psi_ux=np.zeros((1, 1, 1)),
        psi_uu=np.array([[[psi_uu]]]),
        sigma_xx=np.array([[sigma]]),
        sigma_uu=np.eye(1),
        mu_x=np.zeros(1),
        regime="BD",
    )


class TestBuildBlockVar:
    def test_bd_zeroes_both_cross_blocks(self):
        spec = build_block_var("BD", 3, 4, rng=RngStream(0))
        assert np.all(spec.psi_xu == 0.0)
        assert np.all(spec.psi_ux == 0.0)

    def test_gexog_zeroes_ux_only(self):
        spec = build_block_var("GEXOG", 3, 4, rng=RngStream(0))
        assert np.all(spec.psi_ux == 0.0)
        assert np.any(spec.psi_xu != 0.0)

    def test_regime_zero_patterns_nest(self):
        # BD zero pattern contains GEXOG's, which contains EBD's (none)
        bd = build_block_var("BD", 2, 5, rng=RngStream(1))
        gexog = build_block_var("GEXOG", 2, 5, rng=RngStream(1))
        ebd = build_block_var("EBD", 2, 5, rng=RngStream(1))
        assert np.all(bd.psi_xu == 0) and np.all(bd.psi_ux == 0)
        assert np.all(gexog.psi_ux == 0)
        assert np.any(ebd.psi_ux != 0) and np.any(ebd.psi_xu != 0)

    def test_baseline_norms_and_radius(self):
        for seed in range(5):
            spec = build_block_var("EBD", 2, 5, BASELINE_C, 1, 0.91, rng=RngStream(seed))
            assert np.linalg.norm(spec.psi_xu[0], 2) <= 0.7 + 1e-12
            assert spectral_radius(spec.companion()) <= 0.91 + 1e-8

    def test_scalar_bd_no_scaling(self):
        spec = build_block_var("BD", 1, 1, (0.5, 0.7, 0.3, 0.5), 1, 0.91, rng=RngStream(2))
        assert spectral_radius(spec.companion()) == pytest.approx(0.5, abs=1e-12)

    def test_rank_validation(self):
        with pytest.raises(InvalidRank):
            build_block_var("EBD", 2, 5, BASELINE_C, 3, 0.91, rng=RngStream(0))

    def test_target_validation(self):
        with pytest.raises(InvalidTarget):
            build_block_var("EBD", 2, 5, BASELINE_C, 1, 1.2, rng=RngStream(0))

    def test_deterministic(self):
        a = build_block_var("EBD", 2, 5, rng=RngStream(7, (3,)))
        b = build_block_var("EBD", 2, 5, rng=RngStream(7, (3,)))
        assert np.array_equal(a.psi(), b.psi())
        assert np.array_equal(a.sigma_uu, b.sigma_uu)


class TestRandomSpd:
    def test_zero_delta_gives_identity(self):
        np.testing.assert_array_equal(random_spd(4, 0.0, RngStream(0)), np.eye(4))

    def test_positive_definite(self):
        sigma = random_spd(5, 0.5, RngStream(3))
        assert np.all(np.linalg.eigvalsh(sigma) > 0)

    def test_unit_or_larger_diagonal(self):
        sigma = random_spd(6, 0.9, RngStream(4))
        assert np.all(np.diag(sigma) >= 1.0)

    def test_interval_arithmetic_bound(self):
        # |Sigma_ij| <= sum_k ub_ik ub_jk with ub the entrywise bounds on L
        m, delta = 10, 0.5
        sigma = random_spd(m, delta, RngStream(5))
        ub = np.full((m, m), delta / np.sqrt(m))
        ub[np.triu_indices(m, 1)] = 0.0
        np.fill_diagonal(ub, 1.0)
        bound = ub @ ub.T
        assert np.all(np.abs(sigma) <= bound + 1e-12)


class TestSimulate:
    def test_white_noise_world(self):
        spec = BlockVarSpec(
            p0=1,
            psi_xx=np.zeros((1, 2, 2)),
            psi_xu=np.zeros((1, 2, 3)),
            psi_ux=np.zeros((1, 3, 2)),
            psi_uu=np.zeros((1, 3, 3)),
            sigma_xx=np.eye(2),
            sigma_uu=np.eye(3),
            mu_x=np.zeros(2),
            regime="EBD",
        )
        params = SystemParams(n=3, r=2, alpha=np.zeros(3), beta=np.zeros(6))
        t_len = 20_000
        panel = simulate(spec, params, t_len, 100, rng=RngStream(8))
        np.testing.assert_allclose(panel.y, panel.u_true)
        for i in range(3):
            ac1 = np.corrcoef(panel.y[1:, i], panel.y[:-1, i])[0, 1]
            assert abs(ac1) < 3.0 / np.sqrt(t_len)
        assert np.abs(panel.y.mean(axis=0)).max() < 4.0 / np.sqrt(t_len)

    def test_observation_equation(self):
        spec = build_block_var("GEXOG", 2, 3, rng=RngStream(9))
        alpha = np.array([0.1, -0.2, 0.3])
        beta = np.arange(1.0, 7.0)
        params = SystemParams(n=3, r=2, alpha=alpha, beta=beta)
        panel = simulate(spec, params, 50, 10, rng=RngStream(10))
        recon = alpha + panel.x @ beta.reshape(3, 2).T + panel.u_true
        np.testing.assert_allclose(panel.y, recon, atol=1e-12)

    def test_unstable_spec_rejected(self):
        spec = scalar_spec(psi=1.01)
        params = SystemParams(n=1, r=1, alpha=np.zeros(1), beta=np.ones(1))
        with pytest.raises(UnstableSpec):
            simulate(spec, params, 100, 10, rng=RngStream(0))

    def test_deterministic(self):
        spec = build_block_var("EBD", 2, 4, rng=RngStream(11))
        params = SystemParams(n=4, r=2, alpha=np.zeros(4), beta=np.ones(8))
        a = simulate(spec, params, 64, 32, rng=RngStream(12, (1,)))
        b = simulate(spec, params, 64, 32, rng=RngStream(12, (1,)))
        assert np.array_equal(a.y, b.y) and np.array_equal(a.x, b.x)


class TestAnalyticAutocov:
    def test_white_noise(self):
        spec = build_block_var("BD", 2, 3, (0.0, 0.0, 0.0, 0.0), 1, 0.91, rng=RngStream(13))
        gammas = analytic_autocov(spec, 2)
        np.testing.assert_allclose(gammas[0], spec.sigma(), atol=1e-12)
        np.testing.assert_allclose(gammas[1], 0.0, atol=1e-12)

    def test_scalar_geometric_series(self):
        gammas = analytic_autocov(scalar_spec(psi=0.5, sigma=1.0), 1)
        assert gammas[0][0, 0] == pytest.approx(4.0 / 3.0, rel=1e-12)
        assert gammas[1][0, 0] == pytest.approx(0.5 * 4.0 / 3.0, rel=1e-12)

    def test_matches_vma_sum_oracle(self):
        spec = build_block_var("EBD", 2, 3, rng=RngStream(14))
        psi = spec.psi()[0]
        sigma = spec.sigma()
        m = psi.shape[0]
        # truncated impulse-response sum: Gamma(l) = sum_j Xi_{l+j} Sigma Xi_j'
        xi = [np.eye(m)]
        for _ in range(200):
            xi.append(psi @ xi[-1])
        for lag in range(3):
            oracle = sum(xi[lag + j] @ sigma @ xi[j].T for j in range(200 - lag))
            np.testing.assert_allclose(analytic_autocov(spec, lag)[lag], oracle, atol=1e-8)

    def test_sample_autocov_matches(self):
        spec = build_block_var("EBD", 2, 3, rng=RngStream(15))
        params = SystemParams(n=3, r=2, alpha=np.zeros(3), beta=np.ones(6))
        t_len = 200_000
        panel = simulate(spec, params, t_len, 500, rng=RngStream(16))
        z = np.hstack([panel.x - spec.mu_x, panel.u_true])
        z = z - z.mean(axis=0)
        gammas = analytic_autocov(spec, 2)
        for lag in range(3):
            sample = z[lag:].T @ z[: t_len - lag] / (t_len - lag)
            rel = np.linalg.norm(sample - gammas[lag]) / np.linalg.norm(gammas[lag])
            assert rel < 0.05

    def test_unstable_raises(self):
        with pytest.raises(UnstableSpec):
            analytic_autocov(scalar_spec(psi=1.0), 1)


class TestCompanion:
    def test_var1_is_coefficient(self):
        psi = np.arange(4.0).reshape(1, 2, 2)
        np.testing.assert_array_equal(companion(psi), psi[0])

    def test_var2_layout(self):
        psi = np.stack([np.full((2, 2), 2.0), np.full((2, 2), 3.0)])
        comp = companion(psi)
        assert comp.shape == (4, 4)
        np.testing.assert_array_equal(comp[:2, :2], psi[0])
        np.testing.assert_array_equal(comp[:2, 2:], psi[1])
        np.testing.assert_array_equal(comp[2:, :2], np.eye(2))


class TestPanelValidation:
    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            Panel(y=np.zeros((10, 2)), x=np.zeros((9, 1)))

    def test_non_finite_rejected(self):
        y = np.zeros((10, 2))
        y[3, 1] = np.inf
        with pytest.raises(ValueError):
            Panel(y=y, x=np.zeros((10, 1)))

    def test_regime_pattern_enforced(self):
        with pytest.raises(ValueError):
            BlockVarSpec(
                p0=1,
                psi_xx=np.zeros((1, 1, 1)),
                psi_xu=np.ones((1, 1, 1)),
                psi_ux=np.zeros((1, 1, 1)),
                psi_uu=np.zeros((1, 1, 1)),
                sigma_xx=np.eye(1),
                sigma_uu=np.eye(1),
                mu_x=np.zeros(1),
                regime="BD",
            )


class TestSpecConfigRoundTrip:
    def test_bitwise_roundtrip(self):
        from gdsur.dgp import spec_from_config, spec_to_config

        spec = build_block_var("EBD", 2, 3, rng=RngStream(77))
        back = spec_from_config(spec_to_config(spec))
        assert back.regime == spec.regime and back.p0 == spec.p0
        for name in ("psi_xx", "psi_xu", "psi_ux", "psi_uu", "sigma_xx", "sigma_uu", "mu_x"):
            assert np.array_equal(getattr(back, name), getattr(spec, name)), name

    def test_rejects_malformed(self):
        from gdsur.dgp import spec_from_config

        with pytest.raises(ValueError):
            spec_from_config("p0: 1\n")
