"""Scenario schema: defaults, strict validation, file loading, round-trips."""

import json

import pytest

from catm_sim.errors import ConfigError
from catm_sim.scenario import (Scenario, SchedulerSpec, TrafficGroupSpec,
                               UeSpec, dump_scenario, load_scenario,
                               scenario_from_dict, scenario_to_dict)


class TestDefaults:
    def test_empty_dict_gives_defaults(self):
        sc = scenario_from_dict({})
        assert sc.seed == 1
        assert sc.duration_ms == 10000
        assert sc.layout.isd_m == 500.0
        assert sc.layout.rings == 0
        assert sc.radio.bandwidth_prbs == 50
        assert sc.scheduler.ibler_target == 0.10
        assert sc.power.mode == "olpc"
        assert sc.legacy.mode == "reserved"
        assert sc.traffic == (TrafficGroupSpec(),)
        assert sc.n_ues == 1

    def test_n_ues_sums_groups(self):
        sc = scenario_from_dict({"traffic": [
            {"kind": "voip", "count": 10},
            {"kind": "bursty", "count": 40},
        ]})
        assert sc.n_ues == 50


class TestValidation:
    def test_unknown_top_level_key(self):
        with pytest.raises(ConfigError, match="unknown key 'scenario.steppp'"):
            scenario_from_dict({"steppp": 3})

    def test_unknown_nested_key_has_path(self):
        with pytest.raises(ConfigError,
                           match="unknown key 'scenario.scheduler.iblerr'"):
            scenario_from_dict({"scheduler": {"iblerr": 0.1}})

    def test_unknown_traffic_key_has_index(self):
        with pytest.raises(ConfigError,
                           match=r"unknown key 'scenario.traffic\[1\].sized'"):
            scenario_from_dict({"traffic": [{"kind": "voip"}, {"sized": 1}]})

    def test_type_strictness(self):
        with pytest.raises(ConfigError, match="scenario.seed"):
            scenario_from_dict({"seed": "one"})
        with pytest.raises(ConfigError, match="scenario.seed"):
            scenario_from_dict({"seed": True})
        with pytest.raises(ConfigError,
                           match="scenario.scheduler.full_duplex"):
            scenario_from_dict({"scheduler": {"full_duplex": 1}})

    def test_value_errors_carry_path(self):
        with pytest.raises(ConfigError, match="scenario.legacy"):
            scenario_from_dict({"legacy": {"dl_load": 1.5}})
        with pytest.raises(ConfigError, match="scenario.rach"):
            scenario_from_dict({"rach": {"detection_prob": 0.0}})

    def test_domain_checks(self):
        with pytest.raises(ConfigError):
            scenario_from_dict({"duration_ms": -1})
        with pytest.raises(ConfigError):
            scenario_from_dict({"traffic": []})
        with pytest.raises(ConfigError):
            scenario_from_dict({"traffic": [{"kind": "ftp"}]})
        with pytest.raises(ConfigError):
            scenario_from_dict({"scheduler": {"cqi_period_ms": 30}})
        with pytest.raises(ConfigError):
            scenario_from_dict({"power": {"mode": "fixed"}})

    def test_ce_override_must_be_power_of_two(self):
        with pytest.raises(ConfigError):
            UeSpec(rl_mpdcch=3)
        with pytest.raises(ConfigError):
            UeSpec(forced_rl_data=0)
        assert UeSpec(rl_mpdcch=4, rl_pucch=8).rl_mpdcch == 4

    def test_cqi_period_choices(self):
        for ok in (20, 40, 80, None):
            assert SchedulerSpec(cqi_period_ms=ok).cqi_period_ms == ok


class TestFiles:
    def test_yaml_roundtrip(self, tmp_path):
        sc = Scenario(name="rt", seed=9, duration_ms=1234,
                      traffic=(TrafficGroupSpec(kind="voip", count=2),))
        p = tmp_path / "s.yaml"
        dump_scenario(sc, p)
        assert load_scenario(p) == sc

    def test_json_is_valid_yaml(self, tmp_path):
        p = tmp_path / "s.json"
        p.write_text(json.dumps(
            {"name": "j", "seed": 4,
             "traffic": [{"kind": "bursty", "count": 2, "direction": "dl"}]}))
        sc = load_scenario(p)
        assert sc.seed == 4
        assert sc.traffic[0].direction == "dl"

    def test_empty_file_gives_defaults(self, tmp_path):
        p = tmp_path / "empty.yaml"
        p.write_text("")
        assert load_scenario(p) == Scenario()

    def test_echo_dict_reloads_identically(self):
        sc = Scenario(name="echo", seed=3,
                      traffic=(TrafficGroupSpec(count=5),
                               TrafficGroupSpec(kind="voip")))
        assert scenario_from_dict(scenario_to_dict(sc)) == sc
