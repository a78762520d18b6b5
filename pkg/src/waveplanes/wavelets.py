"""
2-D Multi-Level Wavelet Transforms for Feature Grids

Forward and inverse discrete wavelet transforms over (B, H, W) feature grids,
plus the exact adjoint of the inverse transform used for gradient propagation.

Filter tables come from PyWavelets. Transforms use periodization: each level
is a pair of dense, cached per-length analysis/synthesis matrices, so the
inverse transform's adjoint is a plain transpose and power-of-two grids
reconstruct exactly.

Pyramid layout:
- father: (B, H/2^N, W/2^N) low-pass coefficients
- mothers[s-1] for s = 1..N: (B, 3, H/2^(N-s+1), W/2^(N-s+1)); s = 1 is the
  coarsest level, s = N the finest; axis 1 holds horizontal, vertical and
  diagonal subbands
"""

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterator, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import pywt

from .errors import DimensionError, LevelError

logger = logging.getLogger(__name__)

REQUIRED_FAMILIES = ("haar", "db2")
OPTIONAL_FAMILIES = ("db6", "coif2", "coif4", "bior1.3", "bior4.4")
SUPPORTED_FAMILIES = REQUIRED_FAMILIES + OPTIONAL_FAMILIES
SUBBANDS = ("horizontal", "vertical", "diagonal")


@dataclass(frozen=True)
class WaveletFamily:
    """Analysis/synthesis filter bank of one wavelet family (PyWavelets convolution convention)"""
    name: str
    analysis_low: Tuple[float, ...]
    analysis_high: Tuple[float, ...]
    synthesis_low: Tuple[float, ...]
    synthesis_high: Tuple[float, ...]

    @property
    def orthogonal(self) -> bool:
        """True when synthesis filters are the time-reversed analysis filters"""
        return (
            np.allclose(self.synthesis_low, self.analysis_low[::-1], atol=1e-12)
            and np.allclose(self.synthesis_high, self.analysis_high[::-1], atol=1e-12)
        )

    @property
    def filter_length(self) -> int:
        return len(self.analysis_low)


FamilyLike = Union[str, WaveletFamily]


@lru_cache(maxsize=None)
def get_family(name: str) -> WaveletFamily:
    """
    Look up a supported wavelet family

    Args:
        name: Family name, e.g. 'haar' or 'db2'

    Returns:
        WaveletFamily with full double-precision filter taps

    Raises:
        ValueError: If the family is not supported
    """
    if name not in SUPPORTED_FAMILIES:
        raise ValueError(f"Unsupported wavelet family '{name}', expected one of {SUPPORTED_FAMILIES}")

    wavelet = pywt.Wavelet(name)
    return WaveletFamily(
        name=name,
        analysis_low=tuple(float(v) for v in wavelet.dec_lo),
        analysis_high=tuple(float(v) for v in wavelet.dec_hi),
        synthesis_low=tuple(float(v) for v in wavelet.rec_lo),
        synthesis_high=tuple(float(v) for v in wavelet.rec_hi),
    )


def _family_name(family: FamilyLike) -> str:
    return family.name if isinstance(family, WaveletFamily) else get_family(family).name


def _periodized_bank(low: Sequence[float], high: Sequence[float], length: int) -> np.ndarray:
    # Row k of the low half correlates taps with x[(2k + n) mod length]; the high half likewise.
    half = length // 2
    bank = np.zeros((length, length), dtype=np.float64)
    rows = np.arange(half)
    for n, tap in enumerate(low):
        bank[rows, (2 * rows + n) % length] += tap
    for n, tap in enumerate(high):
        bank[half + rows, (2 * rows + n) % length] += tap
    return bank


@lru_cache(maxsize=None)
def analysis_matrix(name: str, length: int) -> np.ndarray:
    """One-level periodized analysis operator for a signal of `length` samples: [low; high] rows"""
    family = get_family(name)
    bank = _periodized_bank(family.analysis_low[::-1], family.analysis_high[::-1], length)
    bank.setflags(write=False)
    return bank


@lru_cache(maxsize=None)
def synthesis_matrix(name: str, length: int) -> np.ndarray:
    """One-level periodized synthesis operator; inverse of analysis_matrix for the same family"""
    family = get_family(name)
    bank = np.ascontiguousarray(_periodized_bank(family.synthesis_low, family.synthesis_high, length).T)
    bank.setflags(write=False)
    return bank


def is_power_of_two(value: int) -> bool:
    return value >= 1 and (value & (value - 1)) == 0


class PyramidShape(NamedTuple):
    """Shape of a coefficient pyramid: channels, reconstruction height/width, level count"""
    channels: int
    height: int
    width: int
    levels: int

    def level_shape(self, level: int) -> Tuple[int, int]:
        """Spatial shape of mother level `level` (1 = coarsest)"""
        factor = 2 ** (self.levels - level + 1)
        return self.height // factor, self.width // factor

    def father_shape(self) -> Tuple[int, int]:
        factor = 2 ** self.levels
        return self.height // factor, self.width // factor

    def output_shape(self, use_levels: int) -> Tuple[int, int, int]:
        """Shape of idwt2 output when reconstructing with mother levels 1..use_levels"""
        factor = 2 ** (self.levels - use_levels)
        return self.channels, self.height // factor, self.width // factor


@dataclass
class CoefficientPyramid:
    """Learnable wavelet representation of one feature plane"""
    father: np.ndarray
    mothers: Tuple[np.ndarray, ...]
    family: str = "haar"

    def __post_init__(self):
        self.mothers = tuple(self.mothers)
        if self.father.ndim != 3:
            raise DimensionError(f"Father coefficients must be (B, h, w), got {self.father.shape}")
        if not self.mothers:
            raise LevelError("Pyramid needs at least one mother level")

        channels, height, width = self.father.shape
        for level, mother in enumerate(self.mothers, start=1):
            expected = (channels, 3, height * 2 ** (level - 1), width * 2 ** (level - 1))
            if mother.shape != expected:
                raise DimensionError(f"Mother level {level} has shape {mother.shape}, expected {expected}")

        target_h, target_w = self.shape.height, self.shape.width
        if not (is_power_of_two(target_h) and is_power_of_two(target_w)):
            raise DimensionError(f"Target shape {target_h}x{target_w} is not a power of two")

    @property
    def levels(self) -> int:
        return len(self.mothers)

    @property
    def shape(self) -> PyramidShape:
        channels, height, width = self.father.shape
        factor = 2 ** self.levels
        return PyramidShape(channels, height * factor, width * factor, self.levels)

    @property
    def dtype(self) -> np.dtype:
        return self.father.dtype

    @property
    def size(self) -> int:
        return self.father.size + sum(m.size for m in self.mothers)

    def arrays(self) -> Iterator[Tuple[str, np.ndarray]]:
        """Yield ('father', array), ('mother1', array), ... in storage order"""
        yield "father", self.father
        for level, mother in enumerate(self.mothers, start=1):
            yield f"mother{level}", mother

    def map(self, fn) -> "CoefficientPyramid":
        return CoefficientPyramid(
            father=fn(self.father),
            mothers=tuple(fn(m) for m in self.mothers),
            family=self.family,
        )

    def copy(self) -> "CoefficientPyramid":
        return self.map(np.copy)

    def scaled(self, k: Sequence[float]) -> "CoefficientPyramid":
        """Multiply the father by k[0] and mother level j by k[j]"""
        if len(k) < self.levels + 1:
            raise LevelError(f"Scaling vector has {len(k)} entries, need {self.levels + 1}")
        return CoefficientPyramid(
            father=self.father * k[0],
            mothers=tuple(m * k[j] for j, m in enumerate(self.mothers, start=1)),
            family=self.family,
        )

    def flatten(self) -> np.ndarray:
        """Channel-major flat view: per channel, father then each level's H|V|D subbands"""
        channels = self.father.shape[0]
        parts = [self.father.reshape(channels, -1)] + [m.reshape(channels, -1) for m in self.mothers]
        return np.concatenate(parts, axis=1).ravel()

    @classmethod
    def from_flat(
        cls,
        values: np.ndarray,
        shape: PyramidShape,
        family: str = "haar",
    ) -> "CoefficientPyramid":
        """Inverse of flatten()"""
        values = np.asarray(values)
        expected = pyramid_size(shape)
        if values.size != expected:
            raise DimensionError(f"Flat coefficient vector has {values.size} values, expected {expected}")

        per_channel = values.reshape(shape.channels, -1)
        fh, fw = shape.father_shape()
        offset = fh * fw
        father = per_channel[:, :offset].reshape(shape.channels, fh, fw)
        mothers = []
        for level in range(1, shape.levels + 1):
            lh, lw = shape.level_shape(level)
            count = 3 * lh * lw
            mothers.append(per_channel[:, offset:offset + count].reshape(shape.channels, 3, lh, lw))
            offset += count
        return cls(father=father.copy(), mothers=tuple(m.copy() for m in mothers), family=family)

    @classmethod
    def zeros(cls, shape: PyramidShape, family: str = "haar", dtype=np.float32) -> "CoefficientPyramid":
        fh, fw = shape.father_shape()
        father = np.zeros((shape.channels, fh, fw), dtype=dtype)
        mothers = tuple(
            np.zeros((shape.channels, 3) + shape.level_shape(level), dtype=dtype)
            for level in range(1, shape.levels + 1)
        )
        return cls(father=father, mothers=mothers, family=family)


def pyramid_size(shape: PyramidShape) -> int:
    """Total coefficient count of a pyramid with the given shape"""
    fh, fw = shape.father_shape()
    total = fh * fw
    for level in range(1, shape.levels + 1):
        lh, lw = shape.level_shape(level)
        total += 3 * lh * lw
    return shape.channels * total


def check_grid_dims(height: int, width: int) -> None:
    if not (is_power_of_two(height) and is_power_of_two(width)):
        raise DimensionError(f"Grid dimensions must be powers of two, got {height}x{width}")


def check_levels(levels: int, height: int, width: int) -> None:
    if levels < 1 or 2 ** levels * 2 > min(height, width):
        raise LevelError(
            f"Decomposition level {levels} invalid for {height}x{width} grid "
            f"(need 1 <= N and 2^N * 2 <= {min(height, width)})"
        )


def _split_blocks(coeffs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    half_h, half_w = coeffs.shape[-2] // 2, coeffs.shape[-1] // 2
    approx = coeffs[:, :half_h, :half_w]
    detail = np.stack(
        [coeffs[:, half_h:, :half_w], coeffs[:, :half_h, half_w:], coeffs[:, half_h:, half_w:]],
        axis=1,
    )
    return approx, detail


def _merge_blocks(approx: np.ndarray, detail: np.ndarray) -> np.ndarray:
    channels, half_h, half_w = approx.shape
    coeffs = np.empty((channels, 2 * half_h, 2 * half_w), dtype=np.float64)
    coeffs[:, :half_h, :half_w] = approx
    coeffs[:, half_h:, :half_w] = detail[:, 0]
    coeffs[:, :half_h, half_w:] = detail[:, 1]
    coeffs[:, half_h:, half_w:] = detail[:, 2]
    return coeffs


def dwt2(grid: np.ndarray, levels: int, family: FamilyLike = "haar") -> CoefficientPyramid:
    """
    Multi-level 2-D forward transform of a (B, H, W) grid

    Args:
        grid: Real grid, channels transformed independently
        levels: Decomposition level N
        family: Wavelet family name or WaveletFamily

    Returns:
        CoefficientPyramid whose idwt2 reconstructs `grid`

    Raises:
        DimensionError: If the grid is not 3-D or its dimensions are not powers of two
        LevelError: If N is outside 1 <= N with 2^N * 2 <= min(H, W)
    """
    grid = np.asarray(grid)
    if grid.ndim != 3:
        raise DimensionError(f"Expected a (B, H, W) grid, got shape {grid.shape}")
    _, height, width = grid.shape
    check_grid_dims(height, width)
    check_levels(levels, height, width)

    name = _family_name(family)
    out_dtype = np.result_type(grid.dtype, np.float32)
    approx = grid.astype(np.float64)
    details: List[np.ndarray] = []
    for _ in range(levels):
        h, w = approx.shape[-2:]
        coeffs = analysis_matrix(name, h) @ approx @ analysis_matrix(name, w).T
        approx, detail = _split_blocks(coeffs)
        details.append(detail)

    return CoefficientPyramid(
        father=approx.astype(out_dtype),
        mothers=tuple(d.astype(out_dtype) for d in reversed(details)),
        family=name,
    )


def idwt2(pyr: CoefficientPyramid, use_levels: Optional[int] = None) -> np.ndarray:
    """
    Inverse transform using the father and mother levels 1..use_levels

    Args:
        pyr: Coefficient pyramid
        use_levels: Number of mother levels s to use (default: all N)

    Returns:
        Grid of shape (B, H/2^(N-s), W/2^(N-s)) in the pyramid's dtype

    Raises:
        LevelError: If s is outside 1..N
    """
    levels = pyr.levels
    s = levels if use_levels is None else use_levels
    if not 1 <= s <= levels:
        raise LevelError(f"use_levels={s} outside 1..{levels}")

    approx = pyr.father.astype(np.float64)
    for mother in pyr.mothers[:s]:
        coeffs = _merge_blocks(approx, mother)
        h, w = coeffs.shape[-2:]
        approx = synthesis_matrix(pyr.family, h) @ coeffs @ synthesis_matrix(pyr.family, w).T

    return approx.astype(pyr.dtype, copy=False)


def idwt2_vjp(
    cotangent: np.ndarray,
    pyr_shape: PyramidShape,
    use_levels: int,
    family: FamilyLike = "haar",
) -> CoefficientPyramid:
    """
    Transpose of the (linear) inverse transform applied to a cotangent grid

    Mother levels above `use_levels` do not influence the output and get zeros.

    Raises:
        LevelError: If use_levels is outside 1..N
        DimensionError: If the cotangent shape does not match idwt2's output
    """
    if not 1 <= use_levels <= pyr_shape.levels:
        raise LevelError(f"use_levels={use_levels} outside 1..{pyr_shape.levels}")
    cotangent = np.asarray(cotangent)
    expected = pyr_shape.output_shape(use_levels)
    if cotangent.shape != expected:
        raise DimensionError(f"Cotangent shape {cotangent.shape} does not match idwt2 output {expected}")

    name = _family_name(family)
    out_dtype = np.result_type(cotangent.dtype, np.float32)
    grad = cotangent.astype(np.float64)
    used: List[np.ndarray] = []
    for _ in range(use_levels):
        h, w = grad.shape[-2:]
        coeffs = synthesis_matrix(name, h).T @ grad @ synthesis_matrix(name, w)
        grad, detail = _split_blocks(coeffs)
        used.append(detail.astype(out_dtype))

    mothers = list(reversed(used))
    for level in range(use_levels + 1, pyr_shape.levels + 1):
        mothers.append(np.zeros((pyr_shape.channels, 3) + pyr_shape.level_shape(level), dtype=out_dtype))

    return CoefficientPyramid(father=grad.astype(out_dtype), mothers=tuple(mothers), family=name)
