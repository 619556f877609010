import numpy as np
import pytest

from irsrx import channel as ch
from irsrx.config import ConfigError, SystemConfig, default_irs_split, load_config, substream
from irsrx.tensor import khatri_rao, numerical_rank, unvec, vec

from conftest import rel_err


@pytest.fixture
def cfg():
    return SystemConfig()


@pytest.fixture
def realization(cfg):
    geo = ch.draw_geometry(cfg, substream(7, 0, 0))
    traj = ch.evolve_fading(cfg, substream(7, 0, 1))
    return geo, traj, ch.realize_channels(geo, traj, cfg)


class TestConfig:
    def test_defaults(self, cfg):
        assert (cfg.M, cfg.Q, cfg.N, cfg.L1, cfg.L2) == (2, 2, 32, 2, 2)
        assert (cfg.T0, cfg.Tp, cfg.Td, cfg.I, cfg.K) == (64, 16, 48, 2, 5)
        assert (cfg.delta, cfg.lam, cfg.snr_db) == (0.75, 0.75, 30.0)
        assert (cfg.N1, cfg.N2) == (8, 4)

    @pytest.mark.parametrize("n,split", [(16, (4, 4)), (32, (8, 4)), (64, (8, 8)), (12, (4, 3)), (7, (1, 7))])
    def test_irs_split(self, n, split):
        assert default_irs_split(n) == split

    @pytest.mark.parametrize(
        "changes",
        [dict(T0=63), dict(Tp=1), dict(K=0), dict(delta=1.5), dict(N1=3, N2=4), dict(M=1, K=1)],
    )
    def test_invalid(self, cfg, changes):
        with pytest.raises(ConfigError):
            cfg.replace(**changes)

    def test_replace_n_recomputes_split(self, cfg):
        c = cfg.replace(N=16, T0=32)
        assert (c.N1, c.N2) == (4, 4)

    def test_load_config(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("snr_db = 20\nlambda = 0.5  # fast aging\nK = 3\nnoiseless = true\n")
        c = load_config(p, seed=9)
        assert (c.snr_db, c.lam, c.K, c.noiseless, c.seed) == (20.0, 0.5, 3, True, 9)

    def test_load_config_unknown_key(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("bogus = 1\n")
        with pytest.raises(ConfigError):
            load_config(p)

    def test_substream_reproducible(self):
        a = substream(3, 1, 2).standard_normal(4)
        b = substream(3, 1, 2).standard_normal(4)
        c = substream(3, 2, 1).standard_normal(4)
        np.testing.assert_array_equal(a, b)
        assert not np.allclose(a, c)


class TestSteering:
    def test_zero_frequency(self):
        np.testing.assert_array_equal(ch.ula_steering(0.0, 4), np.ones(4))

    def test_pi(self):
        np.testing.assert_allclose(ch.ula_steering(np.pi, 2), [1, -1], atol=1e-15)

    def test_unit_modulus(self, rng):
        a = ch.ula_steering(rng.uniform(-np.pi, np.pi), 9)
        np.testing.assert_allclose(np.abs(a), 1)
        assert a[0] == 1

    def test_ura_zero(self):
        np.testing.assert_array_equal(ch.ura_steering(0.0, 0.0, 8, 4), np.ones(32))

    def test_ura_kron_rank_one(self, rng):
        mu, psi = rng.uniform(-np.pi, np.pi, 2)
        b = ch.ura_steering(mu, psi, 8, 4)
        np.testing.assert_allclose(b, np.kron(ch.ula_steering(mu, 8), ch.ula_steering(psi, 4)))
        assert b[0] == 1
        assert numerical_rank(unvec(b, 4, 8)) == 1


class TestGeometry:
    def test_angle_ranges(self, cfg):
        rng = substream(0, 0)
        geos = [ch.draw_geometry(cfg, rng) for _ in range(200)]
        bs = np.concatenate([g.phi_bs for g in geos])
        irs = np.concatenate([g.theta_irs_a for g in geos])
        assert bs.min() >= -np.pi and bs.max() <= np.pi and bs.max() > np.pi / 2
        assert irs.min() >= -np.pi / 2 and irs.max() <= np.pi / 2

    def test_steering_shapes(self, cfg, realization):
        _, _, c = realization
        assert c.A_rx.shape == (2, 2) and c.A_tx.shape == (2, 2)
        assert c.B_rx.shape == (32, 2) and c.B_tx.shape == (32, 2)
        for m in (c.A_rx, c.A_tx, c.B_rx, c.B_tx):
            np.testing.assert_array_equal(m[0], 1)


class TestFading:
    def test_delta_one_constant(self, cfg):
        traj = ch.evolve_fading(cfg.replace(delta=1.0, I=4), substream(0, 1))
        for i in range(4):
            np.testing.assert_array_equal(traj.alpha[i], traj.alpha0)

    def test_recursion_and_frame_chaining(self, cfg):
        traj = ch.evolve_fading(cfg, substream(0, 2))
        d, lam = cfg.delta, cfg.lam
        np.testing.assert_allclose(traj.alpha[0], d * traj.alpha0 + traj.zeta[0])
        np.testing.assert_allclose(traj.alpha[1], d * traj.alpha[0] + traj.zeta[1])
        np.testing.assert_allclose(traj.beta[0, 0], lam * traj.beta0 + traj.xi[0, 0])
        np.testing.assert_allclose(traj.beta[0, 3], lam * traj.beta[0, 2] + traj.xi[0, 3])
        # first block of frame 2 continues from the last block of frame 1
        np.testing.assert_allclose(traj.beta[1, 0], lam * traj.beta[0, -1] + traj.xi[1, 0])

    def test_delta_zero_uncorrelated(self, cfg):
        c = cfg.replace(delta=0.0, I=100_000, K=1, L1=1, L2=1)
        a = ch.evolve_fading(c, substream(0, 3)).alpha[:, 0]
        rho = np.vdot(a[:-1], a[1:]) / np.vdot(a, a)
        assert abs(rho) < 0.02

    def test_stationary_variance(self, cfg):
        c = cfg.replace(I=100_000, K=1, L1=1, L2=1)
        a = ch.evolve_fading(c, substream(0, 4)).alpha[:, 0]
        assert abs(np.mean(np.abs(a) ** 2) - 1) < 0.03


class TestRealization:
    def test_brute_force(self, cfg, realization):
        geo, traj, c = realization
        A_rx, A_tx, B_rx, B_tx = geo.steering(cfg)
        i, k = 1, 3
        G = np.zeros((cfg.M, cfg.N), dtype=complex)
        H = np.zeros((cfg.N, cfg.Q), dtype=complex)
        for m in range(cfg.M):
            for n in range(cfg.N):
                G[m, n] = sum(A_rx[m, l] * traj.alpha[i, l] * np.conj(B_tx[n, l]) for l in range(cfg.L1))
        for n in range(cfg.N):
            for q in range(cfg.Q):
                H[n, q] = sum(B_rx[n, l] * traj.beta[i, k, l] * np.conj(A_tx[q, l]) for l in range(cfg.L2))
        np.testing.assert_allclose(c.G[i], G, atol=1e-12)
        np.testing.assert_allclose(c.H[i, k], H, atol=1e-12)

    def test_single_path_outer_product(self, cfg):
        c1 = cfg.replace(L1=1, L2=1)
        geo = ch.draw_geometry(c1, substream(1, 0))
        traj = ch.evolve_fading(c1, substream(1, 1))
        traj.alpha[:] = 1.0
        r = ch.realize_channels(geo, traj, c1)
        np.testing.assert_allclose(r.G[0], np.outer(r.A_rx[:, 0], r.B_tx[:, 0].conj()))

    def test_shapes_and_ranks(self, cfg, realization):
        _, _, c = realization
        assert c.G.shape == (cfg.I, cfg.M, cfg.N)
        assert c.H.shape == (cfg.I, cfg.K + 1, cfg.N, cfg.Q)
        for i in range(cfg.I):
            assert numerical_rank(c.G[i]) <= cfg.L1
            for k in range(cfg.K + 1):
                assert numerical_rank(c.H[i, k]) <= cfg.L2

    def test_combined_structure(self, realization):
        _, _, c = realization
        # R_i = (A_tx^* kron A_rx) D(f_i) P_B
        R = np.kron(c.A_tx.conj(), c.A_rx) @ np.diag(c.F[0]) @ c.P_B
        np.testing.assert_allclose(c.combined(0), R, atol=1e-12)


class TestDesign:
    def test_default_full_rank(self, cfg):
        d = ch.design_training(cfg)
        assert d.kr.shape == (64, 64)
        assert numerical_rank(d.kr) == 64

    def test_unit_modulus_and_pilots(self, cfg):
        d = ch.design_training(cfg)
        np.testing.assert_allclose(np.abs(d.S), 1)
        np.testing.assert_allclose(d.Xp @ d.Xp.conj().T, cfg.Tp * np.eye(cfg.Q), atol=1e-12)

    def test_non_power_of_two(self, cfg):
        c = cfg.replace(N=12, T0=24, Tp=12, Td=52)
        d = ch.design_training(c)
        assert numerical_rank(d.kr) == 24
        np.testing.assert_allclose(d.Xp @ d.Xp.conj().T, 12 * np.eye(2), atol=1e-9)

    def test_read_only(self, cfg):
        d = ch.design_training(cfg)
        with pytest.raises(ValueError):
            d.S[0, 0] = 0

    def test_bpsk(self, cfg):
        bits, X = ch.draw_data(cfg, substream(0, 9))
        assert X.shape == (cfg.Q, cfg.Td)
        np.testing.assert_array_equal(X.real, np.where(bits == 0, 1.0, -1.0))


class TestSynthesis:
    def test_stage1_noiseless_identity(self, cfg, realization):
        _, _, c = realization
        d = ch.design_training(cfg)
        y = ch.synthesize_stage1(c, d, cfg, 0)
        assert y.shape == (cfg.M * cfg.T0,)
        omega = np.kron(d.kr.T, np.eye(cfg.M))
        assert rel_err(y, omega @ vec(c.combined(0))) < 1e-12

    def test_stage1_per_sample(self, cfg, realization):
        _, _, c = realization
        d = ch.design_training(cfg)
        Y = unvec(ch.synthesize_stage1(c, d, cfg, 1), cfg.M, cfg.T0)
        t = 5
        ref = c.G[1] @ np.diag(d.S[:, t]) @ c.H[1, 0] @ d.Z[:, t]
        np.testing.assert_allclose(Y[:, t], ref, atol=1e-12)

    def test_empirical_snr(self, cfg, realization):
        _, _, c = realization
        d = ch.design_training(cfg)
        clean = ch.synthesize_stage1(c, d, cfg, 0)
        rng = substream(0, 11)
        noise = np.concatenate([ch.synthesize_stage1(c, d, cfg, 0, rng) - clean for _ in range(1000)])
        snr = 10 * np.log10(np.mean(np.abs(clean) ** 2) / np.mean(np.abs(noise) ** 2))
        assert abs(snr - cfg.snr_db) < 0.2

    def test_stage2_model(self, cfg, realization):
        _, _, c = realization
        c1 = cfg.replace(K=1)
        d = ch.design_training(cfg)
        s = np.exp(1j * np.linspace(0, 3, cfg.N))
        _, Xd = ch.draw_data(cfg, substream(0, 12))
        Y = ch.synthesize_stage2(c, d, s, Xd, c1, 0)
        assert Y.shape == (1, cfg.M, cfg.Tp + cfg.Td)
        W = c.G[0] @ np.diag(s) @ c.H[0, 1]
        np.testing.assert_allclose(Y[0, :, :cfg.Tp], W @ d.Xp, atol=1e-12)
        np.testing.assert_allclose(Y[0, :, cfg.Tp:], W @ Xd, atol=1e-12)
