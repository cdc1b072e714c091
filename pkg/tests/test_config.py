import pytest

from uabsim.config import SimConfig, desk_preset, parse_config_file
from uabsim.errors import ConfigError


def test_defaults_match_reference_parameters():
    c = SimConfig()
    assert c.num_agents == 3
    assert c.altitude_m == 100.0
    assert c.speed_mps == 20.0
    assert c.fov_deg == 40.0
    assert c.num_gues == 80
    assert c.timestep_s == 1.0
    assert c.fc_ghz == 30.0
    assert c.ptx_dbm == 14.0
    assert c.pn_dbm == -106.4
    assert c.gtx_db == 0.0
    assert c.grx_db == 38.0
    assert c.snr_th_db == -13.7
    assert c.episode_len == 80
    assert c.lambda_s == 10.0
    assert c.lambda_c == 1000.0
    assert c.num_train_episodes == 1000
    assert c.eval_period == 20
    assert c.update_period == 1
    assert (c.area_width_m, c.area_height_m) == (350.0, 170.0)


def test_d_th_defaults_to_twice_coverage_radius():
    c = SimConfig()
    assert c.d_th_m == pytest.approx(72.79404685324047, abs=1e-9)
    explicit = SimConfig(d_th_m=50.0)
    assert explicit.d_th_m == 50.0


@pytest.mark.parametrize("overrides", [
    {"num_agents": 0},
    {"window_len": 100},          # exceeds episode_len
    {"sat_threshold": 11},        # exceeds window_len
    {"d_th_m": 0.5},
    {"area_width_m": 30.0},       # not > 2 * v * dt
    {"lambda_s": -1.0},
    {"safety_mode": "magic"},
    {"los_mode": "sometimes"},
    {"fov_deg": 180.0},
    {"pn_dbm": 3.0},
    {"num_beams": 8},             # not a perfect square
    {"rng_seed": -1},
    {"buffer_capacity": 8, "batch_size": 64},
])
def test_invalid_configs_rejected(overrides):
    with pytest.raises(ConfigError):
        SimConfig(**overrides)


def test_text_roundtrip_and_hash(tmp_path):
    c = SimConfig(num_agents=4, safety_mode="flat_mask", hidden_sizes=(32, 16))
    path = tmp_path / "run.cfg"
    path.write_text(c.to_text())
    again = SimConfig.from_mapping(parse_config_file(path))
    assert again == c
    assert again.config_hash() == c.config_hash()
    assert c.config_hash() != SimConfig().config_hash()


def test_config_file_rejects_unknown_keys(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("num_agents = 3\nwarp_factor = 9\n")
    with pytest.raises(ConfigError, match="warp_factor"):
        SimConfig.from_file(path)


def test_config_file_parses_comments_and_types(tmp_path):
    path = tmp_path / "ok.cfg"
    path.write_text(
        "# demo\n"
        "num_agents = 2\n"
        "\n"
        "speed_mps = 10.5\n"
        "hidden_sizes = 8,4\n"
        "safety_mode = penalty\n")
    c = SimConfig.from_file(path)
    assert c.num_agents == 2
    assert c.speed_mps == 10.5
    assert c.hidden_sizes == (8, 4)
    assert c.safety_mode == "penalty"


def test_cli_style_overrides_win(tmp_path):
    path = tmp_path / "base.cfg"
    path.write_text("num_agents = 2\n")
    c = SimConfig.from_file(path, overrides={"num_agents": "4"})
    assert c.num_agents == 4


def test_desk_preset_scales_down():
    d = desk_preset()
    assert d.num_train_episodes == 100
    assert d.num_gues == 20
    assert (d.area_width_m, d.area_height_m) == (200.0, 120.0)
    assert d.eval_period == 10
