"""Radio model unit tests.

Expected values are frozen from hand evaluation of the published formulas
(see each test body), not from running the implementation.
"""
import math

import numpy as np
import pytest

from catm_sim import radio
from catm_sim.errors import ConfigError, InputError


@pytest.fixture(scope="module")
def model():
    return radio.BlerModel.from_file()


class TestPathLoss:
    def test_reference_distance(self):
        # 128.1 + 37.6*log10(1.0)
        assert radio.path_loss(1000.0) == pytest.approx(128.1, abs=1e-9)

    def test_hand_values(self):
        # 128.1 + 37.6*log10(0.5) = 128.1 - 11.3187...
        assert radio.path_loss(500.0) == pytest.approx(
            128.1 + 37.6 * math.log10(0.5), abs=1e-9)
        assert radio.path_loss(500.0) == pytest.approx(116.781, abs=1e-3)
        assert radio.path_loss(250.0) == pytest.approx(
            128.1 + 37.6 * math.log10(0.25), abs=1e-9)
        assert radio.path_loss(250.0) == pytest.approx(105.463, abs=1e-3)

    def test_min_distance_clamp(self):
        # anything below 35 m evaluates at 35 m
        ref = radio.path_loss(35.0)
        assert radio.path_loss(1.0) == ref
        assert radio.path_loss(34.999) == ref
        assert radio.path_loss(36.0) > ref

    def test_monotone_beyond_clamp(self):
        d = np.linspace(35.0, 5000.0, 200)
        pl = [radio.path_loss(x) for x in d]
        assert all(b > a for a, b in zip(pl, pl[1:]))

    def test_bad_inputs(self):
        for bad in (0.0, -5.0, float("nan"), float("inf")):
            with pytest.raises(InputError):
                radio.path_loss(bad)


class TestAntenna:
    def test_boresight(self):
        p = radio.AntennaPattern()
        assert radio.antenna_gain(p, 0.0, p.downtilt_deg) == pytest.approx(17.0)

    def test_vertical_limit(self):
        # straight up: vertical attenuation saturates at SLA = 20 dB
        p = radio.AntennaPattern()
        assert radio.antenna_gain(p, 0.0, 90.0) == pytest.approx(17.0 - 20.0)

    def test_half_beamwidth_is_3db(self):
        # 12*((5)/10)^2 = 3 dB at downtilt +/- half the 10 deg beamwidth
        p = radio.AntennaPattern()
        assert radio.antenna_gain(p, 0.0, p.downtilt_deg + 5.0) == pytest.approx(14.0)
        assert radio.antenna_gain(p, 0.0, p.downtilt_deg - 5.0) == pytest.approx(14.0)

    def test_floor(self):
        p = radio.AntennaPattern()
        floor = p.max_gain_db - (p.sla_db + p.am_db)
        assert radio.antenna_gain(p, 180.0, 90.0) == pytest.approx(floor)
        # total function over a wide angle grid, never below the floor
        for az in np.linspace(-180, 180, 37):
            for el in np.linspace(-90, 90, 19):
                g = radio.antenna_gain(p, az, el)
                assert floor - 1e-9 <= g <= p.max_gain_db + 1e-9

    def test_azimuth_wraps(self):
        p = radio.AntennaPattern()
        assert radio.antenna_gain(p, 350.0, p.downtilt_deg) == pytest.approx(
            radio.antenna_gain(p, -10.0, p.downtilt_deg))

    def test_bad_pattern(self):
        with pytest.raises(ConfigError):
            radio.AntennaPattern(vertical_beamwidth_deg=0.0)


class TestCouplingLoss:
    def test_composition_identity(self):
        ls = radio.LinkState(distance_m=500.0, path_loss_db=116.781,
                             shadow_db=4.2, body_loss_db=1.0,
                             antenna_gain_db=15.0, ue_antenna_gain_db=-3.0)
        assert ls.coupling_loss_db == pytest.approx(116.781 + 4.2 + 1.0 - 15.0 + 3.0)


class TestEffectiveSinr:
    def test_identity_at_one(self):
        assert radio.effective_sinr(-3.7, 1) == pytest.approx(-3.7)

    def test_hand_value(self):
        # 0 + 10log10(4) - 0.5*2 = 6.0206 - 1.0
        assert radio.effective_sinr(0.0, 4) == pytest.approx(5.0206, abs=1e-4)

    def test_monotone_in_repetitions(self):
        rng = np.random.default_rng(7)
        for sinr in rng.uniform(-30, 20, size=20):
            vals = [radio.effective_sinr(float(sinr), r)
                    for r in radio.REPETITION_LADDER]
            assert all(b > a for a, b in zip(vals, vals[1:]))

    def test_off_ladder_rejected(self):
        for r in (0, 3, 5, 12, 512):
            with pytest.raises(ConfigError):
                radio.effective_sinr(0.0, r)

    def test_combining_accepts_off_ladder_counts(self):
        # HARQ accumulation may hit e.g. 3 * 32 = 96 copies
        g = radio.combining_gain_db(96)
        assert g == pytest.approx(10 * math.log10(96) - 0.5 * math.log2(96))


class TestBlerModel:
    def test_midpoint(self, model):
        # at the reference TBS the threshold is the 50% point by construction
        t = model.threshold_db(5, model.ref_tbs_bits)
        assert model.bler(t, 5, model.ref_tbs_bits) == pytest.approx(0.5)

    def test_limits(self, model):
        assert model.bler(80.0, 0, 1000) < 1e-6
        assert model.bler(-80.0, 0, 1000) > 1 - 1e-6
        assert 0.0 < model.bler(200.0, 0, 1000) < 1.0

    def test_strictly_decreasing_in_sinr(self, model):
        # strict inequality wherever float64 can represent it; in the
        # saturated tails (bler within 1e-12 of 0 or 1) allow equality
        rng = np.random.default_rng(11)
        eps = 1e-12
        for _ in range(300):
            mcs = int(rng.integers(0, model.n_mcs))
            a, b = sorted(rng.uniform(-40, 40, size=2))
            if b - a < 1e-6:
                continue
            lo, hi = model.bler(b, mcs, 500), model.bler(a, mcs, 500)
            assert lo <= hi
            both_saturated = (lo > 1 - eps and hi > 1 - eps) or (lo < eps and hi < eps)
            if not both_saturated:
                assert lo < hi

    def test_nondecreasing_in_tbs(self, model):
        rng = np.random.default_rng(13)
        for _ in range(200):
            mcs = int(rng.integers(0, model.n_mcs))
            sinr = float(rng.uniform(-20, 30))
            t1, t2 = sorted(rng.integers(50, 4000, size=2))
            assert model.bler(sinr, mcs, int(t2)) >= model.bler(sinr, mcs, int(t1))

    def test_tbs_doubling_shifts_one_db(self, model):
        # configured sensitivity is 1 dB per doubling
        t1 = model.threshold_db(4, 500)
        t2 = model.threshold_db(4, 1000)
        assert t2 - t1 == pytest.approx(model.tbs_sensitivity)

    def test_bad_inputs(self, model):
        with pytest.raises(InputError):
            model.bler(0.0, -1, 1000)
        with pytest.raises(InputError):
            model.bler(0.0, model.n_mcs, 1000)
        with pytest.raises(InputError):
            model.bler(0.0, 0, 0)


class TestMclSearch:
    def test_residual_at_result_meets_target(self, model):
        mcl = radio.mcl_search(model, 4, 8, 320, 5, 20.0,
                               delay_budget_ms=200, max_attempts=6)
        assert mcl is not None
        noise = radio.noise_floor_dbm(1, 5.0)
        res = radio.residual_bler(model, 20.0 - mcl - noise, 8, 6, 5, 320)
        assert res <= 0.02 + 1e-6
        # 0.02 dB above the result the target must be missed (2x bisection tol)
        res_above = radio.residual_bler(model, 20.0 - (mcl + 0.02) - noise,
                                        8, 6, 5, 320)
        assert res_above > 0.02

    def test_nonincreasing_in_tbs(self, model):
        mcls = [radio.mcl_search(model, 4, 8, tbs, 5, 20.0, delay_budget_ms=200)
                for tbs in (200, 400, 800, 1600)]
        assert all(m is not None for m in mcls)
        assert all(a >= b for a, b in zip(mcls, mcls[1:]))

    def test_infeasible_budget_returns_none(self, model):
        # budget shorter than a single HARQ cycle -> zero attempts
        assert radio.mcl_search(model, 4, 8, 320, 5, 20.0,
                                delay_budget_ms=10) is None

    def test_zero_tbs_is_input_error(self, model):
        with pytest.raises(InputError):
            radio.mcl_search(model, 4, 8, 0, 5, 20.0)

    def test_off_ladder_rl_is_config_error(self, model):
        with pytest.raises(ConfigError):
            radio.mcl_search(model, 4, 12, 320, 5, 20.0)


class TestNoise:
    def test_one_prb(self):
        # -174 + 10log10(180e3) + 5 = -116.447
        assert radio.noise_floor_dbm(1, 5.0) == pytest.approx(-116.447, abs=1e-3)

    def test_six_prb_ue(self):
        assert radio.noise_floor_dbm(6, 9.0) == pytest.approx(
            -174 + 10 * math.log10(6 * 180e3) + 9.0)
