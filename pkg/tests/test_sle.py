import numpy as np
import pytest
from scipy import stats

from armlab import rng
from armlab.errors import DomainError
from armlab.loewner import HullMap, trace
from armlab.sle import (
    SleParams,
    martingale_boundary,
    martingale_boundary_path,
    martingale_interior,
    martingale_interior_path,
    sample_boundary_martingale,
    sample_force_point_endpoints,
    sample_interior_martingale,
    simulate_plain,
    simulate_with_force_points,
    special_rho_attract,
    special_rho_avoid,
)


class TestPlainDriving:
    def test_zero_kappa_is_zero_driving(self):
        d = simulate_plain(0.0, 0.01, 0.2, rng.stream(0, 0))
        assert np.all(d.values == 0.0)

    def test_determinism(self):
        a = simulate_plain(6.0, 1e-3, 0.1, rng.stream(42, 7))
        b = simulate_plain(6.0, 1e-3, 0.1, rng.stream(42, 7))
        assert np.array_equal(a.values, b.values)
        c = simulate_plain(6.0, 1e-3, 0.1, rng.stream(42, 8))
        assert not np.array_equal(a.values, c.values)

    def test_variance_scaling(self):
        kappa, T = 6.0, 1.0
        finals = []
        gen = rng.stream(3, 0)
        for _ in range(10_000):
            # draw increments directly: one batch per replica
            z = rng.normals(gen, 20)
            finals.append(np.sqrt(kappa * T / 20) * z.sum())
        var = np.var(finals)
        assert abs(var - kappa * T) / (kappa * T) < 0.05

    def test_variance_of_simulated_paths(self):
        kappa, dt, T = 5.0, 0.05, 1.0
        gen = rng.stream(9, 0)
        finals = [simulate_plain(kappa, dt, T, gen).values[-1]
                  for _ in range(4000)]
        var = np.var(finals)
        assert abs(var - kappa * T) / (kappa * T) < 0.05


class TestForcePoints:
    def test_validation(self):
        with pytest.raises(DomainError):
            SleParams(kappa=6.0, rho_left=-2.5, x_left=-1.0)
        with pytest.raises(DomainError):
            SleParams(kappa=6.0, rho_right=1.0, x_right=-0.5)
        with pytest.raises(DomainError):
            SleParams(kappa=6.0, rho_interior=1.0, z=1.0 - 1j)

    def test_zero_rho_reduces_to_plain(self):
        params = SleParams(kappa=6.0)
        run = simulate_with_force_points(params, 1e-3, 0.1, rng.stream(5, 1))
        plain = simulate_plain(6.0, 1e-3, 0.1, rng.stream(5, 1))
        assert np.array_equal(run.driving.values, plain.values)
        assert run.reason == "horizon"

    def test_attracting_rho_terminates_at_force_point(self):
        # rho_right <= kappa/2 - 4 pulls the curve into x_right; the hitting
        # time has a polynomial tail, so keep the force point close
        kappa = 6.0
        rho = special_rho_attract(kappa) - 0.5  # -1.5
        hits = 0
        n = 60
        for rep in range(n):
            params = SleParams(kappa=kappa, rho_right=rho, x_right=0.05)
            run = simulate_with_force_points(params, 5e-4, 4.0,
                                             rng.stream(100, rep))
            hits += run.reason == "collision-right"
        assert hits / n >= 0.95

    def test_avoiding_rho_never_collides(self):
        kappa = 6.0
        rho = special_rho_avoid(kappa) + 0.5  # 1.5
        ok = 0
        n = 200
        for rep in range(n):
            params = SleParams(kappa=kappa, rho_right=rho, x_right=0.2)
            run = simulate_with_force_points(params, 1e-3, 1.0,
                                             rng.stream(101, rep))
            ok += run.reason == "horizon"
        assert ok / n >= 0.99

    def test_force_points_follow_flow_ordering(self):
        params = SleParams(kappa=5.0, rho_left=1.0, rho_right=1.0,
                           x_left=-0.5, x_right=0.5)
        run = simulate_with_force_points(params, 1e-3, 0.2, rng.stream(6, 2))
        w = run.driving.values
        assert np.all(run.v_left <= w + 1e-12)
        assert np.all(run.v_right >= w - 1e-12)


class TestMartingaleObservables:
    def test_boundary_initial_value(self):
        # kappa=6, rho=2 both sides, x = -1, 1
        m0 = martingale_boundary(0.0, -1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 6.0)
        assert m0 == pytest.approx(2.0 ** (1.0 / 3.0), abs=1e-12)

    def test_boundary_rho_zero_is_one(self):
        d = simulate_plain(6.0, 1e-3, 0.05, rng.stream(8, 0))
        m = martingale_boundary_path(d, -1.0, 1.0, 0.0, 0.0, 6.0)
        np.testing.assert_allclose(m[~np.isnan(m)], 1.0, atol=1e-12)

    def test_interior_initial_values(self):
        assert martingale_interior(0.0, 1j, 1.0, 3.0, 6.0) == pytest.approx(1.0)
        # kappa=6, rho_I=2, z=2i
        m0 = martingale_interior(0.0, 2j, 1.0, 2.0, 6.0)
        expected = 2.0 ** (1.0 / 12.0) * 2.0 ** (1.0 / 3.0)
        assert m0 == pytest.approx(expected, abs=1e-12)

    def test_interior_rho_zero_is_one(self):
        d = simulate_plain(6.0, 1e-3, 0.05, rng.stream(8, 1))
        m = martingale_interior_path(d, 1j, 0.0, 6.0)
        np.testing.assert_allclose(m[~np.isnan(m)], 1.0, atol=1e-12)

    def test_boundary_drift_small_sample(self):
        m0, vals, frozen = sample_boundary_martingale(
            6.0, -1.0, -1.0, -1.0, 1.0, t=0.02, dt=1e-3, n_replicas=4000,
            seed=21)
        assert frozen.mean() < 0.3
        se = vals.std(ddof=1) / np.sqrt(len(vals))
        assert abs(vals.mean() - m0) < 3 * se + 1e-12

    def test_interior_drift_small_sample(self):
        m0, vals, frozen = sample_interior_martingale(
            16.0 / 3.0, 2.0, 1j, t=0.02, dt=1e-3, n_replicas=4000, seed=22)
        assert frozen.mean() < 0.3
        se = vals.std(ddof=1) / np.sqrt(len(vals))
        assert abs(vals.mean() - m0) < 3 * se + 1e-12


class TestGirsanovConsistency:
    def test_reweighted_mean_matches_force_point_law(self):
        """E[W_t M_t]/M_0 under plain SLE equals E[W_t] under the
        force-point law (weak Girsanov check)."""
        kappa, rho, t, dt = 6.0, 2.0, 0.05, 1e-3
        x_l, x_r = -1.0, 1.0
        n = 20_000
        gen = rng.stream(31, 0)
        from armlab.sle import _batch_plain_final_state

        w, r_states, _ = _batch_plain_final_state(
            kappa, dt, int(t / dt), n, gen,
            reals=[(x_l, "left"), (x_r, "right")], interiors=[])
        (yl, dl, al, _), (yr, dr, ar, _) = r_states
        valid = al & ar
        m = np.zeros(n)
        m[valid] = martingale_boundary(w[valid], yl[valid], dl[valid],
                                       yr[valid], dr[valid], rho, rho, kappa)
        m0 = martingale_boundary(0.0, x_l, 1.0, x_r, 1.0, rho, rho, kappa)
        weighted_mean = np.sum(w * m) / np.sum(m)
        weighted_se = np.std(w[valid] - weighted_mean) / np.sqrt(valid.sum())

        params = SleParams(kappa=kappa, rho_left=rho, rho_right=rho,
                           x_left=x_l, x_right=x_r)
        wf, alive = sample_force_point_endpoints(params, t, dt, n, seed=32)
        assert alive.mean() > 0.95
        direct_mean = wf[alive].mean()
        direct_se = wf[alive].std(ddof=1) / np.sqrt(alive.sum())
        tol = 3 * np.hypot(weighted_se, direct_se)
        assert abs(weighted_mean - direct_mean) < tol


class TestScalingInvariance:
    def test_trace_endpoint_distribution(self):
        """Capacity rescaling t -> 4t, W -> 2W leaves |eta| / sqrt(scale)
        distribution invariant (KS at 5%)."""
        kappa, dt, T, n = 6.0, 2e-3, 0.25, 150
        base, scaled = [], []
        for rep in range(n):
            d1 = simulate_plain(kappa, dt, T, rng.stream(77, rep))
            h1 = HullMap.from_driving(d1)
            _, p1 = trace(h1, np.array([len(h1.dts)]))
            base.append(abs(p1[0]))
            d2 = simulate_plain(kappa, 4 * dt, 4 * T, rng.stream(78, rep))
            h2 = HullMap.from_driving(d2)
            _, p2 = trace(h2, np.array([len(h2.dts)]))
            scaled.append(abs(p2[0]) / 2.0)
        ks = stats.ks_2samp(base, scaled)
        assert ks.pvalue > 0.05
