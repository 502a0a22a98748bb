import pytest

from diffuad.config import ConfigError, DESK_DEFAULTS, ExperimentConfig, parse_config_text


class TestParsing:
    def test_defaults_complete(self):
        cfg = ExperimentConfig()
        assert cfg.getint("schedule.T") == 1000
        assert cfg.getfloat("schedule.beta_start") == pytest.approx(1e-4)
        assert cfg.get("noise.kind") == "simplex"
        assert cfg.getints("model.level_channels") == [32, 64, 64]

    def test_file_round_trip(self, tmp_path):
        path = tmp_path / "exp.cfg"
        path.write_text("# comment\nschedule.T=500\n\nmodel.preset=ddpm\n")
        cfg = ExperimentConfig.from_file(path)
        assert cfg.getint("schedule.T") == 500
        assert cfg.get("model.preset") == "ddpm"
        # untouched keys fall back to the desk defaults
        assert cfg.get("noise.kind") == DESK_DEFAULTS["noise.kind"]

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown config key"):
            ExperimentConfig({"schedule.TT": "10"})

    def test_malformed_line_rejected(self):
        with pytest.raises(ConfigError):
            parse_config_text("justakey\n")

    def test_paper_scale_preset(self, tmp_path):
        path = tmp_path / "paper.cfg"
        path.write_text("scale=paper\n")
        cfg = ExperimentConfig.from_file(path)
        assert cfg.getints("model.level_channels") == [128, 256, 256]
        assert cfg.getint("model.cond_dim") == 128
        assert cfg.getfloat("train.lr") == pytest.approx(1e-5)
        assert cfg.getint("train.batch_size") == 32
        assert cfg.getint("train.epochs") == 1600
        assert cfg.getints("test.t_list") == [250, 500, 750]
        assert cfg.getint("pipeline.median_kernel") == 5
        assert cfg.getint("pipeline.erosion_iterations") == 3

    def test_contrast_levels_accepted(self):
        # the study's contrast grid must be representable
        for cl in (0.3, 0.7, 1.0, 1.5, 2.0):
            cfg = ExperimentConfig({"eval.contrast_level": str(cl)})
            assert cfg.getfloat("eval.contrast_level") == pytest.approx(cl)


class TestTypedGetters:
    def test_bool_parsing(self):
        cfg = ExperimentConfig({"train.augment": "false"})
        assert cfg.getbool("train.augment") is False
        cfg = ExperimentConfig({"train.augment": "1"})
        assert cfg.getbool("train.augment") is True
        with pytest.raises(ConfigError):
            ExperimentConfig({"train.augment": "maybe"}).getbool("train.augment")

    def test_missing_key(self):
        cfg = ExperimentConfig()
        with pytest.raises(ConfigError):
            cfg.get("no.such.key")


class TestEchoAndHash:
    def test_echo_contains_every_key(self, tmp_path):
        cfg = ExperimentConfig({"seed": "7"})
        path = tmp_path / "echo.txt"
        cfg.echo(path)
        echoed = parse_config_text(path.read_text())
        assert echoed == cfg.values
        assert set(echoed) == set(DESK_DEFAULTS)

    def test_echo_round_trips_to_same_hash(self, tmp_path):
        cfg = ExperimentConfig({"train.lr": "5e-4", "seed": "3"})
        path = tmp_path / "echo.txt"
        cfg.echo(path)
        again = ExperimentConfig.from_file(path)
        assert again.config_hash() == cfg.config_hash()
        assert again.values == cfg.values

    def test_hash_sensitive_to_values(self):
        a = ExperimentConfig({"seed": "1"})
        b = ExperimentConfig({"seed": "2"})
        assert a.config_hash() != b.config_hash()

    def test_copy_overrides(self):
        cfg = ExperimentConfig()
        out = cfg.copy(**{"model.preset": "ddpm"})
        assert out.get("model.preset") == "ddpm"
        assert cfg.get("model.preset") == "cddpm"


class TestStructuredViews:
    def test_phantom_spec_respects_anomaly_flag(self):
        cfg = ExperimentConfig()
        assert cfg.phantom_spec(1, anomalous=False).anomaly_count == 0
        assert cfg.phantom_spec(1, anomalous=True).anomaly_count == cfg.getint("data.anomaly_count")

    def test_schedule_and_noise_views(self):
        cfg = ExperimentConfig()
        s = cfg.schedule()
        assert s.T == 1000
        sp = cfg.simplex_params()
        assert sp.octaves == 6
        assert sp.persistence == pytest.approx(0.8)

    def test_postproc_view(self):
        cfg = ExperimentConfig({"pipeline.median_enabled": "false"})
        post = cfg.postproc_config()
        assert post.median_enabled is False
        assert post.cc_min_size == 7
