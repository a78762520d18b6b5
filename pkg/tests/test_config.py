import json
import tempfile
import unittest
from pathlib import Path

from pydantic import ValidationError

from waveplanes.config import ModelConfig, DEFAULT_K, RunConfig, RunConfigManager, SyntheticSceneSpec, TrainConfig
from waveplanes.errors import ConfigError

CONFIG_DIR = Path(__file__).resolve().parents[1] / "config"


class TestModelConfig(unittest.TestCase):
    def test_defaults(self) -> None:
        config = ModelConfig()
        self.assertEqual(config.k, DEFAULT_K)
        self.assertEqual(config.scales, (1, 2))
        self.assertEqual(config.fused_length, 128)

    def test_level_dependent_defaults(self) -> None:
        config = ModelConfig(levels=3, spatial_res=(32, 32), time_res=16)
        self.assertEqual(config.k, (1.0, 1.0, 1.0, 1.0))
        self.assertEqual(config.scales, (2, 3))

    def test_rounds_up_to_power_of_two(self) -> None:
        with self.assertLogs("waveplanes.config", level="WARNING"):
            config = ModelConfig(spatial_res=(48, 64), time_res=12)
        self.assertEqual(config.spatial_res, (64, 64))
        self.assertEqual(config.time_res, 16)

    def test_rejects_inconsistent_settings(self) -> None:
        invalid = [
            dict(k=(1.0, 0.5)),
            dict(k=(0.5, 0.4, 0.2)),
            dict(scales=(2, 1)),
            dict(scales=(3,)),
            dict(levels=3, spatial_res=(8, 8)),
            dict(family="sym99"),
            dict(fusion="sum"),
            dict(t_range=(1.0, 0.0)),
            dict(bbox=((0.0, 0.0, 0.0), (0.0, 1.0, 1.0))),
            dict(unknown_field=1),
        ]
        for overrides in invalid:
            with self.assertRaises(ValidationError, msg=str(overrides)):
                ModelConfig(**overrides)

    def test_static_mode_ignores_time_resolution(self) -> None:
        config = ModelConfig(spatial_res=(16, 16), time_res=2, static_mode=True)
        self.assertTrue(config.static_mode)

    def test_frozen(self) -> None:
        with self.assertRaises(ValidationError):
            ModelConfig().features = 3


class TestOtherSections(unittest.TestCase):
    def test_near_far(self) -> None:
        with self.assertRaises(ValidationError):
            TrainConfig(near=6.0, far=2.0)

    def test_blob_inside_bbox(self) -> None:
        with self.assertRaises(ValidationError):
            SyntheticSceneSpec(start=(2.0, 0.0, 0.0))

    def test_dnerf_needs_path(self) -> None:
        with self.assertRaises(ValidationError):
            RunConfig.model_validate({"data": {"kind": "dnerf"}})

    def test_render_settings_follow_train_and_data(self) -> None:
        config = RunConfig.model_validate({"train": {"near": 1.0, "far": 3.0, "samples_per_ray": 16}, "data": {"background": "black"}})
        settings = config.render_settings()
        self.assertEqual((settings.near, settings.far, settings.samples_per_ray), (1.0, 3.0, 16))
        self.assertEqual(settings.background_rgb, (0.0, 0.0, 0.0))


class TestRunConfigManager(unittest.TestCase):
    def test_bundled_configs_are_valid(self) -> None:
        for name in ("synthetic_blob.json", "static_blob.json"):
            config = RunConfigManager(str(CONFIG_DIR / name)).get_config()
            self.assertEqual(config.data.kind, "synthetic")
        static = RunConfigManager(str(CONFIG_DIR / "static_blob.json")).get_config()
        self.assertTrue(static.model.static_mode)
        self.assertTrue(static.data.synthetic.static)

    def test_defaults_without_file(self) -> None:
        self.assertEqual(RunConfigManager().get_config(), RunConfig())

    def test_missing_and_malformed_files(self) -> None:
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(ConfigError):
                RunConfigManager(str(Path(tmp) / "missing.json"))
            bad = Path(tmp) / "bad.json"
            bad.write_text("{")
            with self.assertRaises(ConfigError):
                RunConfigManager(str(bad))
            wrong = Path(tmp) / "wrong.json"
            wrong.write_text(json.dumps({"train": {"steps": 0}}))
            with self.assertRaises(ConfigError):
                RunConfigManager(str(wrong))

    def test_update_and_save(self) -> None:
        manager = RunConfigManager()
        config = manager.update_config({"train": {"seed": 9}, "model": {"fusion": "zam"}})
        self.assertEqual(config.train.seed, 9)
        self.assertEqual(config.model.fusion, "zam")
        self.assertEqual(config.train.lr, RunConfig().train.lr)
        with self.assertRaises(ConfigError):
            manager.update_config({"train": {"lr": -1.0}})

        with tempfile.TemporaryDirectory() as tmp:
            path = manager.save_resolved(Path(tmp))
            self.assertEqual(path.name, RunConfigManager.RESOLVED_NAME)
            reloaded = RunConfigManager(str(path)).get_config()
        self.assertEqual(reloaded, config)


if __name__ == "__main__":
    unittest.main()
