import unittest

import numpy as np

from waveplanes.config import ModelConfig
from waveplanes.field import TIME_PLANES, WaveletField
from waveplanes.regularizers import (
    reg_sst,
    reg_sst_grad,
    reg_time_smooth,
    reg_time_smooth_grad,
    reg_ts,
    reg_ts_grad,
    reg_tv,
    reg_tv_grad,
)


def naive_tv(grids):
    values = []
    for g in grids:
        channels, height, width = g.shape
        total = 0.0
        for c in range(channels):
            for i in range(height):
                for j in range(width):
                    if i + 1 < height:
                        total += (g[c, i + 1, j] - g[c, i, j]) ** 2
                    if j + 1 < width:
                        total += (g[c, i, j + 1] - g[c, i, j]) ** 2
        values.append(total / (height * width))
    return sum(values) / len(values)


def naive_second_difference(grids, along_rows: bool):
    values = []
    for g in grids:
        channels, height, width = g.shape
        total = 0.0
        for c in range(channels):
            for i in range(height):
                for j in range(width):
                    if along_rows and i + 2 < height:
                        total += (g[c, i, j] - 2 * g[c, i + 1, j] + g[c, i + 2, j]) ** 2
                    if not along_rows and j + 2 < width:
                        total += (g[c, i, j] - 2 * g[c, i, j + 1] + g[c, i, j + 2]) ** 2
        values.append(total / (height * width))
    return sum(values) / len(values)


def random_grids(rng, count: int = 3):
    height, width = rng.choice([4, 8], size=2)
    return [rng.normal(size=(2, height, width)) for _ in range(count)]


def numeric_grad(fn, grids, index, eps: float = 1e-6):
    grid, position = index
    plus = [g.copy() for g in grids]
    minus = [g.copy() for g in grids]
    plus[grid][position] += eps
    minus[grid][position] -= eps
    return (fn(plus) - fn(minus)) / (2 * eps)


class TestPlaneRegularizers(unittest.TestCase):
    def setUp(self) -> None:
        self.rng = np.random.default_rng(42)

    def test_tv_matches_oracle(self) -> None:
        for _ in range(50):
            grids = random_grids(self.rng)
            self.assertAlmostEqual(reg_tv(grids), naive_tv(grids), delta=1e-10)

    def test_sst_matches_oracle(self) -> None:
        for _ in range(50):
            grids = random_grids(self.rng)
            self.assertAlmostEqual(reg_sst(grids), naive_second_difference(grids, along_rows=False), delta=1e-10)

    def test_time_smooth_matches_oracle(self) -> None:
        for _ in range(50):
            grids = random_grids(self.rng)
            self.assertAlmostEqual(reg_time_smooth(grids), naive_second_difference(grids, along_rows=True), delta=1e-10)

    def test_constant_grids_are_free(self) -> None:
        grids = [np.full((2, 8, 8), 3.0)]
        self.assertEqual(reg_tv(grids), 0.0)
        self.assertEqual(reg_sst(grids), 0.0)
        self.assertEqual(reg_time_smooth(grids), 0.0)

    def test_tv_of_step_plane(self) -> None:
        grid = np.array([[[0.0, 0.0], [1.0, 1.0]]])
        self.assertEqual(reg_tv([grid]), 0.5)

    def test_linear_ramp_has_no_curvature(self) -> None:
        ramp = np.broadcast_to(np.arange(8.0), (2, 8, 8)).copy()
        self.assertAlmostEqual(reg_sst([ramp]), 0.0)
        self.assertGreater(reg_tv([ramp]), 0.0)

    def test_empty_grid_list(self) -> None:
        self.assertEqual(reg_tv([]), 0.0)
        self.assertEqual(reg_sst([]), 0.0)

    def test_gradients_match_finite_differences(self) -> None:
        grids = random_grids(self.rng, count=2)
        for value_fn, grad_fn in ((reg_tv, reg_tv_grad), (reg_sst, reg_sst_grad), (reg_time_smooth, reg_time_smooth_grad)):
            grads = grad_fn(grids)
            for _ in range(10):
                grid = int(self.rng.integers(len(grids)))
                position = tuple(int(self.rng.integers(n)) for n in grids[grid].shape)
                numeric = numeric_grad(value_fn, grids, (grid, position))
                self.assertAlmostEqual(grads[grid][position], numeric, places=6, msg=value_fn.__name__)


class TestCoefficientSparsity(unittest.TestCase):
    def setUp(self) -> None:
        self.config = ModelConfig(features=2, levels=2, spatial_res=(8, 8), time_res=8)

    def test_matches_oracle(self) -> None:
        rng = np.random.default_rng(9)
        for _ in range(50):
            field = WaveletField.zeros(self.config, dtype=np.float64).map_coefficients(
                lambda a: rng.normal(size=a.shape)
            )
            expected = 0.0
            for plane in TIME_PLANES:
                for _, array in field.planes[plane].arrays():
                    for value in array.ravel():
                        expected += abs(value)
            self.assertAlmostEqual(reg_ts(field), expected, delta=1e-10)

    def test_space_planes_do_not_count(self) -> None:
        field = WaveletField.initialize(self.config, seed=0)
        self.assertEqual(reg_ts(field), 0.0)

    def test_static_field(self) -> None:
        field = WaveletField.initialize(ModelConfig(features=2, levels=2, spatial_res=(8, 8), static_mode=True))
        self.assertEqual(reg_ts(field), 0.0)

    def test_subgradient_is_sign(self) -> None:
        grads = reg_ts_grad([np.array([-2.0, 0.0, 0.5])])
        np.testing.assert_array_equal(grads[0], [-1.0, 0.0, 1.0])


if __name__ == "__main__":
    unittest.main()
