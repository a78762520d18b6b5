import json
import tempfile
import unittest
from pathlib import Path

import numpy as np

from waveplanes.config import SyntheticSceneSpec
from waveplanes.data import (
    PSNR_CAP,
    Dataset,
    EvalReport,
    FrameRecord,
    SyntheticScene,
    constant_baseline_psnr,
    evaluate_images,
    gen_synthetic,
    load_dnerf,
    masked_psnr,
    psnr,
    read_image,
    split_fg_bg,
    write_dnerf,
    write_image,
)
from waveplanes.errors import DatasetError, MetricError
from waveplanes.render import project_point

IDENTITY_POSE = np.eye(4).tolist()


def write_split(root: Path, split: str, images, times=None, angle: float = 0.6) -> None:
    frames = []
    for i, image in enumerate(images):
        write_image(root / split / f"r_{i:03d}.png", image)
        entry = {"file_path": f"./{split}/r_{i:03d}", "transform_matrix": IDENTITY_POSE}
        if times is not None:
            entry["time"] = times[i]
        frames.append(entry)
    with open(root / f"transforms_{split}.json", "w") as f:
        json.dump({"camera_angle_x": angle, "frames": frames}, f)


class TestMetrics(unittest.TestCase):
    def test_identical_images_hit_cap(self) -> None:
        image = np.random.default_rng(0).random((4, 4, 3))
        self.assertEqual(psnr(image, image), PSNR_CAP)

    def test_known_mse(self) -> None:
        self.assertAlmostEqual(psnr(np.zeros((4, 4, 3)), np.full((4, 4, 3), 0.1)), 20.0, places=9)

    def test_shape_mismatch(self) -> None:
        with self.assertRaises(MetricError):
            psnr(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))

    def test_masked_psnr(self) -> None:
        a = np.zeros((2, 2, 3))
        b = np.zeros((2, 2, 3))
        b[0, 0] = 0.1
        mask = np.array([[True, False], [False, False]])
        self.assertAlmostEqual(masked_psnr(a, b, mask), 20.0, places=9)
        self.assertEqual(masked_psnr(a, b, ~mask), PSNR_CAP)
        self.assertIsNone(masked_psnr(a, b, np.zeros((2, 2), dtype=bool)))

    def test_single_pixel_dilates_to_square(self) -> None:
        alpha = np.zeros((7, 7))
        alpha[3, 3] = 1.0
        foreground, background = split_fg_bg(alpha, dilation_radius=1)
        self.assertEqual(int(foreground.sum()), 9)
        self.assertTrue(np.all(foreground[2:5, 2:5]))
        self.assertFalse(np.any(foreground & background))
        self.assertTrue(np.all(foreground | background))

    def test_no_dilation_and_threshold(self) -> None:
        alpha = np.array([[0.5, 0.51], [0.2, 1.0]])
        foreground, _ = split_fg_bg(alpha, dilation_radius=0)
        np.testing.assert_array_equal(foreground, [[False, True], [False, True]])

    def test_evaluate_ground_truth_against_itself(self) -> None:
        rng = np.random.default_rng(1)
        targets = [rng.random((6, 6, 3)) for _ in range(2)]
        alphas = [np.zeros((6, 6)), np.ones((6, 6))]
        report = evaluate_images(targets, targets, alphas, times=[0.0, 1.0], dilation_radius=1)
        self.assertEqual(report.psnr_whole, PSNR_CAP)
        self.assertEqual(report.psnr_fg, PSNR_CAP)
        self.assertEqual(report.psnr_bg, PSNR_CAP)
        self.assertIsNone(report.frames[0].psnr_fg)
        self.assertIsNone(report.frames[1].psnr_bg)

    def test_report_json(self) -> None:
        report = EvalReport(split="val")
        self.assertIsNone(report.psnr_whole)
        with tempfile.TemporaryDirectory() as tmp:
            path = report.write_json(Path(tmp) / "out" / "report.json")
            with open(path) as f:
                payload = json.load(f)
        self.assertEqual(payload["split"], "val")
        self.assertEqual(payload["frames"], [])


class TestImages(unittest.TestCase):
    def test_rgba_round_trip(self) -> None:
        levels = np.arange(48, dtype=np.float64).reshape(4, 3, 4) / 255.0
        with tempfile.TemporaryDirectory() as tmp:
            path = write_image(Path(tmp) / "a" / "image.png", levels)
            np.testing.assert_array_equal(read_image(path), levels)

    def test_gray_becomes_rgb(self) -> None:
        with tempfile.TemporaryDirectory() as tmp:
            path = write_image(Path(tmp) / "gray.png", np.full((2, 3), 1.0))
            image = read_image(path)
        self.assertEqual(image.shape, (2, 3, 3))
        self.assertTrue(np.all(image == 1.0))

    def test_unreadable_image(self) -> None:
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "broken.png"
            path.write_bytes(b"not a png")
            with self.assertRaises(DatasetError):
                read_image(path)


class TestDnerfLoader(unittest.TestCase):
    def setUp(self) -> None:
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)

    def tearDown(self) -> None:
        self.tmp.cleanup()

    def test_minimal_dataset(self) -> None:
        image = np.zeros((4, 5, 4))
        image[..., 0] = 1.0
        image[0, 0, 3] = 1.0
        write_split(self.root, "train", [image, image], times=[0.0, 0.25])
        dataset = load_dnerf(self.root, splits=("train",))
        self.assertEqual((dataset.width, dataset.height), (5, 4))
        frames = dataset.split("train")
        self.assertEqual([f.time for f in frames], [0.0, 0.25])
        self.assertEqual(dataset.split("test"), [])
        # composited over white: opaque red at (0, 0), white elsewhere
        np.testing.assert_allclose(frames[0].rgb[0, 0], [1.0, 0.0, 0.0])
        np.testing.assert_allclose(frames[0].rgb[1, 1], [1.0, 1.0, 1.0])
        self.assertEqual(frames[0].alpha[0, 0], 1.0)
        self.assertEqual(len(dataset.ray_table("train")), 2 * 4 * 5)

    def test_black_background_and_missing_time(self) -> None:
        write_split(self.root, "train", [np.zeros((4, 4, 4))])
        dataset = load_dnerf(self.root, background="black", splits=("train",))
        frame = dataset.split("train")[0]
        self.assertEqual(frame.time, 0.0)
        self.assertTrue(np.all(frame.rgb == 0.0))

    def test_rgb_images_are_opaque(self) -> None:
        write_split(self.root, "train", [np.full((4, 4, 3), 0.2)])
        frame = load_dnerf(self.root, splits=("train",)).split("train")[0]
        self.assertTrue(np.all(frame.alpha == 1.0))

    def test_time_out_of_range(self) -> None:
        write_split(self.root, "train", [np.zeros((4, 4, 4))], times=[1.5])
        with self.assertRaises(DatasetError):
            load_dnerf(self.root, splits=("train",))

    def test_missing_transforms(self) -> None:
        write_split(self.root, "train", [np.zeros((4, 4, 4))])
        with self.assertRaises(DatasetError) as ctx:
            load_dnerf(self.root)
        self.assertIn("transforms_val.json", str(ctx.exception))

    def test_invalid_json(self) -> None:
        (self.root / "transforms_train.json").write_text("{not json")
        with self.assertRaises(DatasetError):
            load_dnerf(self.root, splits=("train",))

    def test_size_mismatch(self) -> None:
        write_split(self.root, "train", [np.zeros((4, 4, 4)), np.zeros((4, 6, 4))])
        with self.assertRaises(DatasetError):
            load_dnerf(self.root, splits=("train",))

    def test_empty_split_has_no_rays(self) -> None:
        write_split(self.root, "train", [np.zeros((4, 4, 4))])
        dataset = load_dnerf(self.root, splits=("train",))
        with self.assertRaises(DatasetError):
            dataset.ray_table("test")

    def test_frame_validation(self) -> None:
        with self.assertRaises(DatasetError):
            FrameRecord(image_path=Path("x"), pose=np.eye(3), time=0.0, split="train")
        with self.assertRaises(DatasetError):
            FrameRecord(image_path=Path("x"), pose=np.eye(4), time=0.0, split="holdout")

    def test_write_then_load_is_stable(self) -> None:
        spec = SyntheticSceneSpec(image_size=8, frame_count=2, test_frame_count=1, oracle_samples=32)
        synthetic = gen_synthetic(spec, workers=1).dataset
        first = load_dnerf(write_dnerf(synthetic, self.root / "a"))
        second = load_dnerf(write_dnerf(first, self.root / "b"))
        for split in ("train", "val", "test"):
            for a, b in zip(first.split(split), second.split(split)):
                np.testing.assert_array_equal(a.rgba, b.rgba)
                np.testing.assert_array_equal(a.pose, b.pose)
                self.assertEqual(a.time, b.time)
        self.assertEqual(first.camera_angle_x, second.camera_angle_x)


class TestSyntheticScene(unittest.TestCase):
    def test_empty_scene_is_background(self) -> None:
        spec = SyntheticSceneSpec(peak_density=0.0, image_size=6, oracle_samples=16)
        scene = SyntheticScene(spec, background="white")
        rgb, alpha = scene.render(scene.camera(scene.camera_pose(0.3)), 0.5)
        self.assertTrue(np.all(rgb == 1.0))
        self.assertTrue(np.all(alpha == 0.0))

    def test_alpha_peak_tracks_center(self) -> None:
        spec = SyntheticSceneSpec(radius=0.15, image_size=32, frame_count=4, test_frame_count=3, oracle_samples=128)
        scene = SyntheticScene(spec)
        for azimuth, t in scene.frame_schedule()["test"]:
            cam = scene.camera(scene.camera_pose(azimuth))
            _, alpha = scene.render(cam, t)
            row, col = np.unravel_index(int(np.argmax(alpha)), alpha.shape)
            expected_col, expected_row = project_point(cam, scene.center(t))
            self.assertLessEqual(abs(col + 0.5 - expected_col), 1.0, f"t={t}")
            self.assertLessEqual(abs(row + 0.5 - expected_row), 1.0, f"t={t}")

    def test_oracle_converges(self) -> None:
        spec = SyntheticSceneSpec(radius=0.3, peak_density=5.0, image_size=12)
        scene = SyntheticScene(spec)
        cam = scene.camera(scene.camera_pose(0.7))
        coarse, _ = scene.render(cam, 0.4, n_samples=256)
        fine, _ = scene.render(cam, 0.4, n_samples=512)
        self.assertLess(float(np.max(np.abs(coarse - fine))), 1e-3)

    def test_static_scene_does_not_move(self) -> None:
        scene = SyntheticScene(SyntheticSceneSpec(static=True))
        np.testing.assert_array_equal(scene.center(0.0), scene.center(1.0))
        self.assertTrue(all(t == 0.0 for _, t in scene.frame_schedule()["train"]))

    def test_schedule(self) -> None:
        scene = SyntheticScene(SyntheticSceneSpec(frame_count=5, test_frame_count=2))
        schedule = scene.frame_schedule()
        self.assertEqual([t for _, t in schedule["train"]], [0.0, 0.25, 0.5, 0.75, 1.0])
        self.assertEqual([t for _, t in schedule["test"]], [0.25, 0.75])
        self.assertEqual(schedule["val"], schedule["test"])

    def test_gradient_color(self) -> None:
        scene = SyntheticScene(SyntheticSceneSpec(color=(1.0, 0.0, 0.0), color_end=(0.0, 0.0, 1.0)))
        colors = scene.color(np.array([[-1.0, 0.0, 0.0], [0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]))
        np.testing.assert_allclose(colors, [[1.0, 0.0, 0.0], [0.5, 0.0, 0.5], [0.0, 0.0, 1.0]])

    def test_gen_synthetic(self) -> None:
        spec = SyntheticSceneSpec(image_size=8, frame_count=3, test_frame_count=2, oracle_samples=32)
        synthetic = gen_synthetic(spec, workers=2)
        dataset = synthetic.dataset
        self.assertIsInstance(dataset, Dataset)
        self.assertEqual(len(dataset.split("train")), 3)
        self.assertEqual(len(dataset.split("test")), 2)
        frame = dataset.split("train")[1]
        self.assertEqual(frame.rgb.shape, (8, 8, 3))
        rgb, alpha = synthetic.scene.render(synthetic.scene.camera(frame.pose), frame.time)
        np.testing.assert_array_equal(rgb, frame.rgb)
        np.testing.assert_array_equal(alpha, frame.alpha)


class TestConstantBaseline(unittest.TestCase):
    def test_matches_manual_computation(self) -> None:
        spec = SyntheticSceneSpec(image_size=8, frame_count=2, test_frame_count=2, oracle_samples=32)
        dataset = gen_synthetic(spec, workers=1).dataset
        targets = [f.rgb for f in dataset.split("test")]
        mean = np.concatenate([t.reshape(-1, 3) for t in targets]).mean(axis=0)
        expected = np.mean([psnr(np.broadcast_to(mean, t.shape), t) for t in targets])
        self.assertAlmostEqual(constant_baseline_psnr(dataset), expected, places=9)
        self.assertLess(constant_baseline_psnr(dataset), PSNR_CAP)

    def test_empty_split(self) -> None:
        dataset = Dataset(frames={}, width=4, height=4, camera_angle_x=0.6)
        with self.assertRaises(DatasetError):
            constant_baseline_psnr(dataset)


if __name__ == "__main__":
    unittest.main()
