import tempfile
import unittest
from pathlib import Path

import numpy as np

from waveplanes.config import ModelConfig
from waveplanes.data import read_image
from waveplanes.field import WaveletField, refresh_cache
from waveplanes.visualize import coefficient_mosaic, feature_plane_image, write_plane_previews
from waveplanes.wavelets import CoefficientPyramid, PyramidShape


class TestCoefficientMosaic(unittest.TestCase):
    def test_layout(self) -> None:
        pyr = CoefficientPyramid.zeros(PyramidShape(2, 8, 16, 2), dtype=np.float64)
        pyr.father[:, 0, 0] = 1.0
        # finest level: only the vertical subband carries a ramp
        pyr.mothers[1][:, 1] = np.arange(4 * 8, dtype=np.float64).reshape(4, 8)
        mosaic = coefficient_mosaic(pyr)

        self.assertEqual(mosaic.shape, (8, 16))
        self.assertEqual(mosaic.dtype, np.uint8)
        self.assertEqual(mosaic[0, 0], 255)
        self.assertEqual(mosaic[0, 1], 0)
        vertical = mosaic[:4, 8:16]
        self.assertEqual(vertical[0, 0], 0)
        self.assertEqual(vertical[-1, -1], 255)
        self.assertTrue(np.all(mosaic[4:8, :8] == 0))
        self.assertTrue(np.all(mosaic[4:8, 8:16] == 0))

    def test_constant_pyramid_is_black(self) -> None:
        pyr = CoefficientPyramid.zeros(PyramidShape(1, 8, 8, 1)).map(np.ones_like)
        self.assertTrue(np.all(coefficient_mosaic(pyr) == 0))


class TestFeaturePreviews(unittest.TestCase):
    def test_rgb_from_first_channels(self) -> None:
        grid = np.random.default_rng(0).normal(size=(5, 4, 6))
        image = feature_plane_image(grid)
        self.assertEqual(image.shape, (4, 6, 3))
        self.assertAlmostEqual(float(image[..., 0].min()), 0.0)
        self.assertAlmostEqual(float(image[..., 0].max()), 1.0)

    def test_gray_for_few_channels(self) -> None:
        image = feature_plane_image(np.random.default_rng(1).normal(size=(2, 4, 4)))
        np.testing.assert_array_equal(image[..., 0], image[..., 2])

    def test_write_previews(self) -> None:
        config = ModelConfig(features=4, levels=2, spatial_res=(8, 8), time_res=8)
        field = WaveletField.initialize(config, seed=0)
        with tempfile.TemporaryDirectory() as tmp:
            written = write_plane_previews(field, refresh_cache(field), tmp)
            self.assertEqual(len(written), 18)
            self.assertEqual(read_image(Path(tmp) / "xt_scale1.png").shape, (4, 4, 3))
            self.assertEqual(read_image(written["xy_coefficients"]).shape, (8, 8, 3))


if __name__ == "__main__":
    unittest.main()
