import dataclasses

import pytest

from dmmaction import (
    ALL,
    ConfigError,
    PipelineConfig,
    config_to_text,
    load_config,
    parse_config_text,
)


class TestDefaults:
    def test_default_angle_set(self):
        cfg = PipelineConfig()
        assert cfg.angles == (-45.0, -30.0, -15.0, 0.0, 15.0, 30.0, 45.0)

    def test_default_windows(self):
        cfg = PipelineConfig()
        assert cfg.depth_windows == (5, 10, ALL)
        assert cfg.rgb_windows == (10, 16, 25)

    def test_fc_units_follow_preset(self):
        assert PipelineConfig().fc_units_effective == 4096
        desk = dataclasses.replace(PipelineConfig(), network_preset="desk")
        assert desk.fc_units_effective == 64
        fixed = dataclasses.replace(PipelineConfig(), fc_units=128)
        assert fixed.fc_units_effective == 128


class TestValidation:
    def test_empty_poses_rejected(self):
        with pytest.raises(ConfigError):
            dataclasses.replace(PipelineConfig(), poses=())

    def test_unknown_plane_rejected(self):
        with pytest.raises(ConfigError):
            dataclasses.replace(PipelineConfig(), planes=("xy", "uv"))

    def test_angle_out_of_range_rejected(self):
        with pytest.raises(ConfigError):
            dataclasses.replace(PipelineConfig(), angles=(0.0, 200.0))

    def test_tiny_depth_window_rejected(self):
        with pytest.raises(ConfigError):
            dataclasses.replace(PipelineConfig(), depth_windows=(1,))

    def test_unknown_preset_rejected(self):
        with pytest.raises(ConfigError):
            dataclasses.replace(PipelineConfig(), network_preset="resnet")

    def test_unknown_score_mode_rejected(self):
        with pytest.raises(ConfigError):
            dataclasses.replace(PipelineConfig(), score_mode="votes")

    def test_unknown_flow_normalization_rejected(self):
        with pytest.raises(ConfigError):
            dataclasses.replace(PipelineConfig(), flow_normalization="zscore")

    def test_small_render_size_rejected(self):
        with pytest.raises(ConfigError):
            dataclasses.replace(PipelineConfig(), render_size=(4, 112))


class TestParsing:
    def test_empty_text_gives_defaults(self):
        assert parse_config_text("") == PipelineConfig()

    def test_comments_and_blanks_ignored(self):
        cfg = parse_config_text("# leading comment\n\nseed = 9  # trailing\n")
        assert cfg.seed == 9

    def test_unknown_key_names_line(self):
        with pytest.raises(ConfigError, match="line 2.*unknown config key"):
            parse_config_text("seed = 1\nseeed = 2\n")

    def test_missing_equals_rejected(self):
        with pytest.raises(ConfigError, match="line 1"):
            parse_config_text("just some words\n")

    def test_window_all_token(self):
        cfg = parse_config_text("depth_windows = [5, all]\n")
        assert cfg.depth_windows == (5, ALL)

    def test_list_fields(self):
        cfg = parse_config_text(
            "poses = [standing]\nangles = [-30, 0, 30]\nrender_size = [64, 48]\n"
        )
        assert cfg.poses == ("standing",)
        assert cfg.angles == (-30.0, 0.0, 30.0)
        assert cfg.render_size == (64, 48)

    def test_none_token(self):
        cfg = parse_config_text("fc_units = none\nout_dir = none\n")
        assert cfg.fc_units is None
        assert cfg.out_dir is None

    def test_boolean_values(self):
        cfg = parse_config_text("depth_as_rgb = true\nbypass_view_synthesis = false\n")
        assert cfg.depth_as_rgb is True
        assert cfg.bypass_view_synthesis is False

    def test_invalid_value_surfaces_as_config_error(self):
        with pytest.raises(ConfigError):
            parse_config_text("clip_len = 0\n")

    def test_base_overlay(self):
        base = dataclasses.replace(PipelineConfig(), seed=5, clip_len=8)
        cfg = parse_config_text("seed = 6\n", base=base)
        assert cfg.seed == 6
        assert cfg.clip_len == 8


class TestRoundTrip:
    def test_default_round_trip_exact(self):
        cfg = PipelineConfig()
        assert parse_config_text(config_to_text(cfg)) == cfg

    def test_modified_round_trip_exact(self):
        cfg = dataclasses.replace(
            PipelineConfig(),
            poses=("standing",),
            angles=(-30.0, 0.0, 30.0),
            depth_windows=(5, ALL),
            rgb_windows=(10, 16),
            clip_len=8,
            render_size=(32, 32),
            focal_px=200.0,
            network_preset="desk",
            fc_units=48,
            pca_target=12,
            score_mode="raw",
            depth_as_rgb=True,
            seed=1234,
            out_dir="runs/exp1",
        )
        assert parse_config_text(config_to_text(cfg)) == cfg

    def test_file_round_trip(self, tmp_path):
        cfg = dataclasses.replace(PipelineConfig(), seed=42, network_preset="desk")
        path = tmp_path / "cfg.txt"
        path.write_text(config_to_text(cfg))
        assert load_config(path) == cfg
