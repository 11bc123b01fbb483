import json
import math

import numpy as np
import pytest

from ivintegral.model import (
    Distribution,
    GFamily,
    ModelError,
    Scenario,
    SmoothFunctionSpec,
    check_condition5,
    draw_noise,
    draw_sample_set,
    mc_mean_outcome,
    oracle_theta_mc,
    scenario_quadratic,
    scenario_s1,
    true_theta,
)
from ivintegral.rng import substream

SPLINE = SmoothFunctionSpec(
    "tabulated-spline", scale=1.0, amplitude=2.0,
    knots=(-3, -1.5, 0, 1.5, 3), values=(-0.8, -0.5, 0.0, 0.5, 0.8),
)
KINDS = [
    SmoothFunctionSpec("tanh", 1.0, 1.0),
    SmoothFunctionSpec("tanh", 0.5, 3.0),
    SmoothFunctionSpec("logistic", 2.0, 1.5),
    SmoothFunctionSpec("gaussian-bump", 0.7, 2.0),
    SPLINE,
]


def degenerate_scenario(**kw):
    return scenario_s1(
        u1_dist=Distribution.point_mass(1.0), u2_dist=Distribution.point_mass(0.0), **kw
    )


class TestSmoothFunctionSpec:
    @pytest.mark.parametrize("h", KINDS, ids=lambda h: f"{h.kind}-{h.scale}")
    def test_bounded_by_amplitude(self, h):
        x = np.linspace(-40 * h.scale, 40 * h.scale, 200_001)
        assert np.max(np.abs(h(x))) <= h.amplitude

    @pytest.mark.parametrize("h", KINDS, ids=lambda h: f"{h.kind}-{h.scale}")
    def test_derivatives_match_central_differences(self, h):
        step = 1e-4 * h.scale
        # keep away from the spline's end knots, where h'' jumps to 0
        x = np.linspace(-2.9, 2.9, 301) * h.scale
        fd1 = (h(x + step) - h(x - step)) / (2 * step)
        fd2 = (h.d1(x + step) - h.d1(x - step)) / (2 * step)
        assert np.max(np.abs(fd1 - h.d1(x))) <= 1e-6 * np.max(np.abs(h.d1(x)))
        assert np.max(np.abs(fd2 - h.d2(x))) <= 1e-6 * np.max(np.abs(h.d2(x)))

    @pytest.mark.parametrize("h", [k for k in KINDS if k.kind != "logistic"], ids=lambda h: h.kind)
    def test_derivative_tails_decay(self, h):
        x = np.concatenate([np.linspace(10, 60, 501), -np.linspace(10, 60, 501)]) * h.scale
        assert np.max(np.abs(h.d1(x))) < 1e-6 * h.amplitude
        assert np.max(np.abs(h.d2(x))) < 1e-6 * h.amplitude

    def test_logistic_tail_decays_by_15_scales(self):
        # exp(-10) ~ 4.5e-5 is too slow for 10 scales; 15 scales suffices
        h = SmoothFunctionSpec("logistic", 2.0, 1.5)
        x = np.concatenate([np.linspace(15, 60, 101), -np.linspace(15, 60, 101)]) * h.scale
        assert np.max(np.abs(h.d1(x))) < 1e-6 * h.amplitude
        assert np.max(np.abs(h.d2(x))) < 1e-6 * h.amplitude

    def test_spline_rejects_overshoot(self):
        with pytest.raises(ModelError, match="overshoots"):
            SmoothFunctionSpec("tabulated-spline", knots=(0, 1, 2, 3), values=(0, 1, 1, 0))

    def test_unknown_kind(self):
        with pytest.raises(ModelError):
            SmoothFunctionSpec("sine")


class TestScenario:
    def test_missing_baseline(self):
        with pytest.raises(ModelError, match="baseline_z"):
            Scenario(z_levels=(1.0, 2.0))

    def test_duplicate_baseline(self):
        with pytest.raises(ModelError, match="exactly once"):
            Scenario(z_levels=(0.0, 0.0, 1.0))

    def test_shift_requires_small_c(self):
        with pytest.raises(ModelError, match=r"\|c\| < 1"):
            GFamily("shifted-invertible", c=1.0)

    def test_v_dimension(self):
        with pytest.raises(ModelError, match="V component"):
            Scenario(g_family=GFamily("quadratic-random-coef"))

    def test_json_round_trip(self):
        for sc in (scenario_s1(), scenario_quadratic(), scenario_s1(h=SPLINE, u1_v_coupling=0.3)):
            back = Scenario.from_json(sc.to_json())
            assert back == sc
            assert back.scenario_id == sc.scenario_id

    def test_json_missing_field(self):
        d = json.loads(scenario_s1().to_json())
        del d["u1_dist"]
        with pytest.raises(ModelError, match="u1_dist"):
            Scenario.from_dict(d)

    def test_shift_map_is_increasing(self):
        g = GFamily("shifted-invertible", c=0.9)
        t = np.linspace(-20, 20, 10001)
        assert np.all(np.diff(g.s(t)) > 0)

    def test_potential_outcome_slope(self, s1):
        draw = s1.potential_outcome(1.3, -0.4)
        x = np.linspace(-3, 3, 61)
        fd = (draw.y_of(x + 1e-4) - draw.y_of(x - 1e-4)) / 2e-4
        np.testing.assert_allclose(fd, draw.y1_of(x), rtol=1e-5, atol=1e-9)


class TestCoupling:
    def test_zero_coupling_marginals_and_independence(self, s1):
        u1, _, v = draw_noise(s1, 200_000, substream(1, "t"))
        assert abs(u1.mean() - 1.0) < 4 * 0.5 / math.sqrt(200_000)
        assert abs(np.corrcoef(u1, v[:, 0])[0, 1]) < 4 / math.sqrt(200_000)

    def test_copula_correlation(self):
        sc = scenario_s1(u1_v_coupling=0.9)
        u1, _, v = draw_noise(sc, 200_000, substream(1, "t"))
        # both margins are normal, so the copula correlation is the Pearson one
        assert abs(np.corrcoef(u1, v[:, 0])[0, 1] - 0.9) < 0.005
        assert abs(v[:, 0].std() - 1.0) < 0.01


class TestDrawSampleSet:
    def test_degenerate_noise_gives_h_exactly(self):
        ss = draw_sample_set(degenerate_scenario(), 1000, 3)
        for x, y in ss.groups.values():
            assert np.array_equal(y, np.tanh(x))

    def test_deterministic(self, s1):
        a = draw_sample_set(s1, 5000, 99)
        b = draw_sample_set(s1, 5000, 99)
        for z in a.levels:
            assert a.x(z).tobytes() == b.x(z).tobytes()
            assert a.y(z).tobytes() == b.y(z).tobytes()
        c = draw_sample_set(s1, 5000, 100)
        assert not np.array_equal(a.x(0.0), c.x(0.0))

    def test_shape_and_levels(self, s1):
        ss = draw_sample_set(s1, 123, 5)
        assert ss.levels == s1.z_levels
        assert all(len(x) == 123 for x, _ in ss.groups.values())
        ss.check_levels(s1)
        with pytest.raises(ValueError):
            ss.x(0.0)[0] = 1.0

    def test_levels_use_independent_streams(self, s1):
        ss = draw_sample_set(s1, 50_000, 8)
        r = np.corrcoef(ss.x(-1.0), ss.x(1.0))[0, 1]
        assert abs(r) < 4 / math.sqrt(50_000)

    def test_rejects_bad_n(self, s1):
        with pytest.raises(ModelError):
            draw_sample_set(s1, 0, 1)

    def test_group_mean_matches_direct_monte_carlo(self, s1):
        ss = draw_sample_set(s1, 100_000, 21)
        y = ss.y(0.0)
        se = y.std(ddof=1) / math.sqrt(len(y))
        mc, mc_se = mc_mean_outcome(s1, 0.0, 1_000_000, 777)
        assert abs(y.mean() - mc) <= 3 * math.hypot(se, mc_se)


class TestTheta:
    def test_true_theta_at_zero(self, s1):
        assert true_theta(s1, 0.0) == pytest.approx(1.0, abs=1e-15)

    def test_true_theta_at_one(self, s1):
        assert true_theta(s1, 1.0) == pytest.approx(1 - math.tanh(1) ** 2, rel=1e-14)
        assert true_theta(s1, 1.0) == pytest.approx(0.41997, abs=1e-5)

    def test_zero_effect(self):
        sc = scenario_s1(u1_dist=Distribution.point_mass(0.0))
        assert np.all(true_theta(sc, np.linspace(-5, 5, 11)) == 0)

    def test_tails_vanish(self, s1):
        assert abs(true_theta(s1, 30.0)) < 1e-20
        assert abs(true_theta(s1, -30.0)) < 1e-20

    def test_oracle_zero_effect(self):
        sc = scenario_s1(u1_dist=Distribution.point_mass(0.0))
        assert oracle_theta_mc(sc, 0.3, 1000, 1) == (0.0, 0.0)

    def test_oracle_at_zero(self, s1):
        est, se = oracle_theta_mc(s1, 0.0, 1_000_000, 4)
        assert abs(est - 1.0) <= 3 * se

    def test_oracle_at_one(self, s1):
        est, se = oracle_theta_mc(s1, 1.0, 1_000_000, 5)
        assert abs(est - (1 - math.tanh(1) ** 2)) <= 3 * se

    def test_oracle_agrees_on_grid(self, s1):
        for k, x in enumerate(np.linspace(-3, 3, 21)):
            est, se = oracle_theta_mc(s1, x, 100_000, 1000 + k)
            assert abs(est - true_theta(s1, x)) <= 3 * se, x

    def test_oracle_rejects_empty(self, s1):
        with pytest.raises(ModelError):
            oracle_theta_mc(s1, 0.0, 0, 1)


class TestCondition5:
    def test_independent_passes(self, s1):
        res = check_condition5(s1, 0.0, 1.0, 100_000, 2)
        assert abs(res.correlation) <= 3 * res.stderr
        assert res.degenerate is None

    def test_point_mass_slope_is_degenerate(self):
        res = check_condition5(degenerate_scenario(), 0.0, 1.0, 1000, 2)
        assert (res.correlation, res.degenerate) == (0.0, "degenerate-constant")

    def test_indicator_degenerate(self, s1):
        res = check_condition5(s1, 12.0, 1.0, 1000, 2)
        assert res.degenerate == "degenerate-indicator"

    def test_coupled_rejects(self):
        sc = scenario_s1(u1_v_coupling=0.9)
        res = check_condition5(sc, 0.0, 1.0, 100_000, 2)
        assert abs(res.correlation) > 5 * res.stderr

    def test_grid_of_independent_cells(self, s1):
        for i, x in enumerate(np.linspace(-2, 2, 5)):
            for j, z in enumerate((-2.0, -1.0, 0.0, 1.0, 2.0)):
                res = check_condition5(s1, x, z, 20_000, 100 * i + j)
                assert res.passes, (x, z, res)

    def test_unknown_level(self, s1):
        with pytest.raises(ModelError, match="levels"):
            check_condition5(s1, 0.0, 0.25, 100, 1)
