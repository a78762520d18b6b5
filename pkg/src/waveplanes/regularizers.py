"""
Plane and coefficient regularizers with their gradients

- reg_tv: total variation over space-plane grids
- reg_sst: second difference along the spatial axis of space-time grids
- reg_time_smooth: second difference along the time axis of space-time grids
- reg_ts: L1 norm of all space-time wavelet coefficients

Plane regularizers take (B, H, W) grids, normalize each grid's sum by H*W and
average over grids; an empty grid list contributes 0. Space-time grids have
time along rows and space along columns.
"""

import logging
from typing import List, Sequence

import numpy as np

from .field import TIME_PLANES, WaveletField

logger = logging.getLogger(__name__)

SPACE_AXIS = 2
TIME_AXIS = 1


def _grid_tv(grid: np.ndarray) -> float:
    grid = grid.astype(np.float64)
    dv = grid[:, 1:, :] - grid[:, :-1, :]
    dh = grid[:, :, 1:] - grid[:, :, :-1]
    return float((np.sum(dv * dv) + np.sum(dh * dh)) / (grid.shape[1] * grid.shape[2]))


def _grid_tv_grad(grid: np.ndarray) -> np.ndarray:
    grid = grid.astype(np.float64)
    dv = grid[:, 1:, :] - grid[:, :-1, :]
    dh = grid[:, :, 1:] - grid[:, :, :-1]
    grad = np.zeros_like(grid)
    grad[:, 1:, :] += 2.0 * dv
    grad[:, :-1, :] -= 2.0 * dv
    grad[:, :, 1:] += 2.0 * dh
    grad[:, :, :-1] -= 2.0 * dh
    return grad / (grid.shape[1] * grid.shape[2])


def _second_difference(grid: np.ndarray, axis: int) -> np.ndarray:
    if grid.shape[axis] < 3:
        raise ValueError(f"Second difference needs axis length >= 3, got {grid.shape[axis]}")
    n = grid.shape[axis]

    def take(start: int, stop: int) -> np.ndarray:
        return np.take(grid, np.arange(start, stop), axis=axis)

    return take(0, n - 2) - 2.0 * take(1, n - 1) + take(2, n)


def _grid_smooth(grid: np.ndarray, axis: int) -> float:
    diff = _second_difference(grid.astype(np.float64), axis)
    return float(np.sum(diff * diff) / (grid.shape[1] * grid.shape[2]))


def _grid_smooth_grad(grid: np.ndarray, axis: int) -> np.ndarray:
    grid = grid.astype(np.float64)
    diff = _second_difference(grid, axis)
    n = grid.shape[axis]
    grad = np.zeros_like(grid)
    index = [slice(None)] * 3

    def region(start, stop):
        index[axis] = slice(start, stop)
        return tuple(index)

    grad[region(0, n - 2)] += 2.0 * diff
    grad[region(1, n - 1)] -= 4.0 * diff
    grad[region(2, n)] += 2.0 * diff
    return grad / (grid.shape[1] * grid.shape[2])


def _mean(values: List[float]) -> float:
    return float(np.mean(values)) if values else 0.0


def reg_tv(grids: Sequence[np.ndarray]) -> float:
    """Mean over grids of the per-grid squared-difference total variation"""
    return _mean([_grid_tv(g) for g in grids])


def reg_tv_grad(grids: Sequence[np.ndarray]) -> List[np.ndarray]:
    return [_grid_tv_grad(g) / len(grids) for g in grids]


def reg_sst(time_grids: Sequence[np.ndarray]) -> float:
    """Mean over space-time grids of the squared second difference along space"""
    return _mean([_grid_smooth(g, SPACE_AXIS) for g in time_grids])


def reg_sst_grad(time_grids: Sequence[np.ndarray]) -> List[np.ndarray]:
    return [_grid_smooth_grad(g, SPACE_AXIS) / len(time_grids) for g in time_grids]


def reg_time_smooth(time_grids: Sequence[np.ndarray]) -> float:
    """Mean over space-time grids of the squared second difference along time"""
    return _mean([_grid_smooth(g, TIME_AXIS) for g in time_grids])


def reg_time_smooth_grad(time_grids: Sequence[np.ndarray]) -> List[np.ndarray]:
    return [_grid_smooth_grad(g, TIME_AXIS) / len(time_grids) for g in time_grids]


def reg_ts(field: WaveletField) -> float:
    """Sum of |coefficient| over every space-time pyramid (father and all mothers)"""
    total = 0.0
    for plane in TIME_PLANES:
        pyr = field.planes.get(plane)
        if pyr is None:
            continue
        for _, array in pyr.arrays():
            total += float(np.sum(np.abs(array.astype(np.float64))))
    return total


def reg_ts_grad(arrays: Sequence[np.ndarray]) -> List[np.ndarray]:
    """Subgradient sign(v) of the L1 norm, per coefficient array"""
    return [np.sign(a.astype(np.float64)) for a in arrays]
