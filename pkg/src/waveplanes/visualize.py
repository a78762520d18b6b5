"""
Coefficient and feature-plane previews

The mosaic uses the classic in-place multi-level DWT layout: the father block in
the top-left corner, and for every level the vertical subband to its right, the
horizontal subband below it and the diagonal subband diagonally across. Each
subband is averaged over features and min-max normalized on its own.
"""

import logging
from pathlib import Path
from typing import Dict, Union

import numpy as np

from .data import write_image
from .field import FeaturePlaneCache, WaveletField, active_planes
from .wavelets import CoefficientPyramid

logger = logging.getLogger(__name__)

HORIZONTAL, VERTICAL, DIAGONAL = 0, 1, 2


def _normalize(block: np.ndarray) -> np.ndarray:
    block = block.astype(np.float64)
    low, high = float(block.min()), float(block.max())
    if high - low <= 0.0:
        return np.zeros_like(block)
    return (block - low) / (high - low)


def coefficient_mosaic(pyramid: CoefficientPyramid) -> np.ndarray:
    """
    Returns:
        (H, W) uint8 image, H x W being the pyramid's full-resolution target shape
    """
    shape = pyramid.shape
    canvas = np.zeros((shape.height, shape.width), dtype=np.float64)
    father_h, father_w = pyramid.father.shape[1:]
    canvas[:father_h, :father_w] = _normalize(pyramid.father.mean(axis=0))

    for mother in pyramid.mothers:
        h, w = mother.shape[2:]
        subbands = mother.mean(axis=0)
        canvas[:h, w:2 * w] = _normalize(subbands[VERTICAL])
        canvas[h:2 * h, :w] = _normalize(subbands[HORIZONTAL])
        canvas[h:2 * h, w:2 * w] = _normalize(subbands[DIAGONAL])

    return np.round(canvas * 255.0).astype(np.uint8)


def feature_plane_image(grid: np.ndarray) -> np.ndarray:
    """
    Float RGB preview of a (B, H, W) feature grid: the first three channels
    normalized independently, or the channel mean as gray for B < 3
    """
    if grid.shape[0] >= 3:
        return np.stack([_normalize(grid[c]) for c in range(3)], axis=-1)
    gray = _normalize(grid.mean(axis=0))
    return np.stack([gray] * 3, axis=-1)


def write_plane_previews(
    field: WaveletField,
    cache: FeaturePlaneCache,
    directory: Union[str, Path],
) -> Dict[str, Path]:
    """Write a coefficient mosaic per plane and a feature preview per (plane, scale)"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written: Dict[str, Path] = {}
    for plane in active_planes(field.config):
        mosaic = coefficient_mosaic(field.planes[plane])
        name = f"{plane.value}_coefficients"
        written[name] = write_image(directory / f"{name}.png", mosaic.astype(np.float64) / 255.0)
        for scale in field.config.scales:
            name = f"{plane.value}_scale{scale}"
            written[name] = write_image(directory / f"{name}.png", feature_plane_image(cache.grid(plane, scale)))
    logger.info(f"Wrote {len(written)} plane previews to {directory}")
    return written
