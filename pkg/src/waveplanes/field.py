"""
WavePlanes Feature Field

Six (dynamic) or three (static) coefficient pyramids reconstructed into
multi-scale feature planes, sampled by projection + bilinear interpolation and
fused per scale with the HP, ZMM or ZAM scheme.

Conventions:
- A sample q = (x, y, z, t) is normalized by bbox/t_range to [0, 1]^4 and clamped
- Plane 'ab' reads (q[a], q[b]); the first coordinate indexes grid columns (W),
  the second grid rows (H); grids are sampled corner-aligned
- Space-time planes have shape (time_res, spatial_res[1]) at full resolution
- Fusion products run in a fixed order (space planes, then space-time planes)
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse

from .autodiff import GradientTape
from .config import ModelConfig
from .wavelets import CoefficientPyramid, PyramidShape, idwt2, idwt2_vjp

logger = logging.getLogger(__name__)


class PlaneId(str, Enum):
    XY = "xy"
    XZ = "xz"
    YZ = "yz"
    XT = "xt"
    YT = "yt"
    ZT = "zt"

    @property
    def axes(self) -> Tuple[int, int]:
        """Indices into (x, y, z, t) of the plane's two coordinates"""
        return "xyzt".index(self.value[0]), "xyzt".index(self.value[1])

    @property
    def is_space_time(self) -> bool:
        return "t" in self.value


SPACE_PLANES = (PlaneId.XY, PlaneId.XZ, PlaneId.YZ)
TIME_PLANES = (PlaneId.XT, PlaneId.YT, PlaneId.ZT)
ALL_PLANES = SPACE_PLANES + TIME_PLANES


def active_planes(config: ModelConfig) -> Tuple[PlaneId, ...]:
    return SPACE_PLANES if config.static_mode else ALL_PLANES


def plane_shape(config: ModelConfig, plane: PlaneId) -> Tuple[int, int]:
    """Full-resolution (H, W) of a plane"""
    if plane.is_space_time:
        return config.time_res, config.spatial_res[1]
    return tuple(config.spatial_res)


def pyramid_shape(config: ModelConfig, plane: PlaneId) -> PyramidShape:
    height, width = plane_shape(config, plane)
    return PyramidShape(config.features, height, width, config.levels)


def omega_key(plane: PlaneId, array_name: str) -> str:
    """Parameter name of one coefficient array, e.g. 'xt.mother2'"""
    return f"{plane.value}.{array_name}"


def plane_key(plane: PlaneId, scale: int) -> str:
    """Tape name of a reconstructed feature plane"""
    return f"plane:{plane.value}:{scale}"


@dataclass
class SamplePoint:
    x: float
    y: float
    z: float
    t: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.t], dtype=np.float64)


@dataclass
class FusedFeature:
    """Per-sample feature vector: per-scale fused B-vectors concatenated"""
    values: np.ndarray

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise ValueError("Fused feature contains non-finite values")

    def __len__(self) -> int:
        return len(self.values)


@dataclass
class WaveletField:
    """Learnable coefficient pyramids, one per active plane"""
    config: ModelConfig
    planes: Dict[PlaneId, CoefficientPyramid]
    version: int = 0

    def __post_init__(self):
        expected = set(active_planes(self.config))
        if set(self.planes) != expected:
            raise ValueError(f"Field planes {sorted(p.value for p in self.planes)} do not match mode")
        for plane, pyr in self.planes.items():
            if pyr.shape != pyramid_shape(self.config, plane):
                raise ValueError(f"Plane {plane.value} has shape {pyr.shape}, expected {pyramid_shape(self.config, plane)}")

    @classmethod
    def zeros(cls, config: ModelConfig, dtype=np.float32) -> "WaveletField":
        planes = {
            plane: CoefficientPyramid.zeros(pyramid_shape(config, plane), config.family, dtype)
            for plane in active_planes(config)
        }
        return cls(config=config, planes=planes)

    @classmethod
    def initialize(cls, config: ModelConfig, seed: int = 0, dtype=np.float32) -> "WaveletField":
        """
        Space planes uniform in [-init_range, init_range]; space-time planes exactly zero,
        so every space-time feature starts at 1 and the initial field is static
        """
        rng = np.random.default_rng(seed)
        field = cls.zeros(config, dtype)
        bound = config.init_range
        for plane in SPACE_PLANES:
            field.planes[plane] = field.planes[plane].map(
                lambda a: rng.uniform(-bound, bound, size=a.shape).astype(dtype)
            )
        return field

    def named_parameters(self) -> Iterator[Tuple[str, np.ndarray]]:
        """Yield (name, array) for every coefficient array in plane order"""
        for plane in active_planes(self.config):
            for array_name, array in self.planes[plane].arrays():
                yield omega_key(plane, array_name), array

    def parameter_names(self, planes: Optional[Sequence[PlaneId]] = None) -> List[str]:
        selected = active_planes(self.config) if planes is None else planes
        return [omega_key(p, name) for p in selected if p in self.planes for name, _ in self.planes[p].arrays()]

    @property
    def coefficient_count(self) -> int:
        return sum(pyr.size for pyr in self.planes.values())

    def mark_updated(self) -> None:
        self.version += 1

    def copy(self) -> "WaveletField":
        return WaveletField(
            config=self.config,
            planes={plane: pyr.copy() for plane, pyr in self.planes.items()},
            version=self.version,
        )

    def map_coefficients(
        self,
        fn: Callable[[np.ndarray], np.ndarray],
        planes: Optional[Sequence[PlaneId]] = None,
    ) -> "WaveletField":
        """Copy of the field with `fn` applied to every array of the selected planes"""
        selected = set(active_planes(self.config) if planes is None else planes)
        out = self.copy()
        for plane in selected & set(out.planes):
            out.planes[plane] = out.planes[plane].map(fn)
        return out


def zero_space_time(field: WaveletField) -> WaveletField:
    """Copy with all space-time coefficients zeroed, forcing every space-time feature to 1"""
    return field.map_coefficients(np.zeros_like, planes=TIME_PLANES)


def reconstruct_plane(
    omega: CoefficientPyramid,
    scale: int,
    is_space_time: bool,
    k: Sequence[float],
) -> np.ndarray:
    """
    Feature grid at one scale: idwt2(k * omega, scale), shifted by +1 for space-time planes

    Raises:
        LevelError: If scale is outside 1..N
    """
    grid = idwt2(omega.scaled(k), scale)
    if is_space_time:
        grid = grid + 1.0
    return grid


@dataclass(frozen=True)
class FeaturePlaneCache:
    """Immutable snapshot of reconstructed feature planes, keyed by (plane, scale)"""
    grids: Mapping[Tuple[PlaneId, int], np.ndarray]
    epoch: int = 0
    field_version: int = 0

    def grid(self, plane: PlaneId, scale: int) -> np.ndarray:
        return self.grids[(plane, scale)]

    def is_fresh(self, field: WaveletField) -> bool:
        return self.field_version == field.version

    def space_grids(self) -> List[np.ndarray]:
        return [grid for (plane, _), grid in self.grids.items() if not plane.is_space_time]

    def time_grids(self) -> List[np.ndarray]:
        return [grid for (plane, _), grid in self.grids.items() if plane.is_space_time]


def _plane_vjp(field: WaveletField, plane: PlaneId, scale: int):
    config = field.config
    shape = pyramid_shape(config, plane)
    levels = config.levels

    def vjp(cotangent: np.ndarray):
        grad = idwt2_vjp(cotangent, shape, scale, config.family)
        # Levels above `scale` do not reach this plane
        return (grad.father * config.k[0],) + tuple(
            grad.mothers[j - 1] * config.k[j] if j <= scale else None
            for j in range(1, levels + 1)
        )

    return vjp


def refresh_cache(
    field: WaveletField,
    epoch: int = 0,
    tape: Optional[GradientTape] = None,
) -> FeaturePlaneCache:
    """
    Reconstruct every active plane at every scale in S

    With a tape, each grid is recorded as a function of its plane's coefficient
    arrays so plane-level losses backpropagate to the coefficients.
    """
    config = field.config
    grids: Dict[Tuple[PlaneId, int], np.ndarray] = {}
    for plane in active_planes(config):
        omega = field.planes[plane]
        for scale in config.scales:
            grid = reconstruct_plane(omega, scale, plane.is_space_time, config.k)
            grid.setflags(write=False)
            grids[(plane, scale)] = grid
            if tape is not None:
                tape.record(
                    plane_key(plane, scale),
                    [omega_key(plane, name) for name, _ in omega.arrays()],
                    _plane_vjp(field, plane, scale),
                )
    logger.debug(f"Refreshed {len(grids)} feature planes (epoch {epoch}, version {field.version})")
    return FeaturePlaneCache(grids=grids, epoch=epoch, field_version=field.version)


def normalize_points(points: np.ndarray, times: np.ndarray, config: ModelConfig) -> np.ndarray:
    """
    Map world (x, y, z) and t into [0, 1]^4, clamping out-of-bounds samples

    Args:
        points: (M, 3) world positions
        times: (M,) times

    Returns:
        (M, 4) normalized coordinates
    """
    low = np.asarray(config.bbox[0], dtype=np.float64)
    high = np.asarray(config.bbox[1], dtype=np.float64)
    t0, t1 = config.t_range
    q = np.empty((points.shape[0], 4), dtype=np.float64)
    q[:, :3] = (points - low) / (high - low)
    q[:, 3] = (np.asarray(times, dtype=np.float64) - t0) / (t1 - t0)
    if config.static_mode:
        q[:, 3] = 0.0
    return np.clip(q, 0.0, 1.0)


def project(q, plane: PlaneId) -> Tuple[float, float]:
    """Select the plane's two coordinates of a normalized sample, in name order"""
    q = q.as_array() if isinstance(q, SamplePoint) else np.asarray(q)
    a, b = plane.axes
    return float(q[a]), float(q[b])


class BilinearSampler:
    """
    Corner-aligned bilinear lookups of M points into an H x W grid

    The blend weights form a sparse (M, H*W) matrix W: sampling is W @ grid and
    the sampling VJP is W^T @ cotangent.
    """

    def __init__(self, uv: np.ndarray, height: int, width: int):
        uv = np.atleast_2d(np.asarray(uv, dtype=np.float64))
        count = uv.shape[0]
        self.height = height
        self.width = width

        x = uv[:, 0] * (width - 1)
        y = uv[:, 1] * (height - 1)
        x0 = np.clip(np.floor(x).astype(np.int64), 0, max(width - 2, 0))
        y0 = np.clip(np.floor(y).astype(np.int64), 0, max(height - 2, 0))
        x1 = np.minimum(x0 + 1, width - 1)
        y1 = np.minimum(y0 + 1, height - 1)
        fx = x - x0
        fy = y - y0

        self._corners = np.stack([y0 * width + x0, y0 * width + x1, y1 * width + x0, y1 * width + x1])
        self._fx = fx[:, None]
        self._fy = fy[:, None]

        rows = np.repeat(np.arange(count), 4)
        weights = np.stack(
            [(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy], axis=1
        ).ravel()
        self.matrix = scipy.sparse.csr_matrix((weights, (rows, self._corners.T.ravel())), shape=(count, height * width))

    def sample(self, grid: np.ndarray) -> np.ndarray:
        """(B, H, W) grid -> (M, B) features; exact on constant grids"""
        flat = grid.reshape(grid.shape[0], -1).T
        c00, c01, c10, c11 = (flat[index] for index in self._corners)
        top = c00 + self._fx * (c01 - c00)
        bottom = c10 + self._fx * (c11 - c10)
        return top + self._fy * (bottom - top)

    def sample_vjp(self, cotangent: np.ndarray) -> np.ndarray:
        """(M, B) cotangent -> (B, H, W) grid cotangent"""
        grad = np.asarray(self.matrix.T @ cotangent)
        return grad.T.reshape(-1, self.height, self.width)


def sample_bilinear(grid: np.ndarray, uv: Sequence[float]) -> np.ndarray:
    """Blend the four grid nodes around uv, per channel; returns a length-B vector"""
    _, height, width = grid.shape
    return BilinearSampler(np.asarray(uv)[None, :], height, width).sample(grid)[0]


def _product(values: Sequence[np.ndarray]) -> np.ndarray:
    out = values[0]
    for value in values[1:]:
        out = out * value
    return out


def _exclusive_products(values: Sequence[np.ndarray]) -> List[np.ndarray]:
    """Product of all factors except the i-th, without division"""
    count = len(values)
    prefix = [np.ones_like(values[0])]
    for value in values[:-1]:
        prefix.append(prefix[-1] * value)
    suffix = [np.ones_like(values[0])] * count
    for i in range(count - 2, -1, -1):
        suffix[i] = suffix[i + 1] * values[i + 1]
    return [p * s for p, s in zip(prefix, suffix)]


FusionVjp = Callable[[np.ndarray], Tuple[np.ndarray, ...]]


def fuse_hp(feats: Sequence[np.ndarray]) -> np.ndarray:
    """Elementwise product over all given plane features"""
    return _product(feats)


def _zmm_parts(time_feats: Sequence[np.ndarray]):
    masks = [(f == 0).astype(f.dtype) for f in time_feats]
    shifted = [f + m for f, m in zip(time_feats, masks)]
    inverse_mask = np.abs(1.0 - _product(masks))
    return shifted, inverse_mask


def fuse_zmm(space_feats: Sequence[np.ndarray], time_feats: Sequence[np.ndarray]) -> np.ndarray:
    """
    Zero-agreement masked multiplication

    Zero space-time features are lifted to 1 unless all three agree on zero, in
    which case the space-time factor is 0.
    """
    shifted, inverse_mask = _zmm_parts(time_feats)
    return (inverse_mask * _product(shifted)) * _product(space_feats)


def fuse_zam(space_feats: Sequence[np.ndarray], time_feats: Sequence[np.ndarray]) -> np.ndarray:
    """Zero-agreement addition: mean of space-time features times the space product"""
    mean = (time_feats[0] + time_feats[1] + time_feats[2]) / 3.0
    return mean * _product(space_feats)


def fuse_with_vjp(
    fusion: str,
    space_feats: Sequence[np.ndarray],
    time_feats: Sequence[np.ndarray],
) -> Tuple[np.ndarray, FusionVjp]:
    """
    Fuse per-plane features and return the VJP over (space..., time...) features

    An empty `time_feats` selects the static tri-plane product regardless of `fusion`.
    ZMM masks are held constant under differentiation.
    """
    if not time_feats or fusion == "hp":
        feats = list(space_feats) + list(time_feats)
        out = _product(feats)

        def hp_vjp(g: np.ndarray):
            return tuple(g * e for e in _exclusive_products(feats))

        return out, hp_vjp

    space_prod = _product(space_feats)

    if fusion == "zmm":
        shifted, inverse_mask = _zmm_parts(time_feats)
        st_factor = inverse_mask * _product(shifted)
        out = st_factor * space_prod

        def zmm_vjp(g: np.ndarray):
            g_space = tuple(g * st_factor * e for e in _exclusive_products(space_feats))
            g_time = tuple(g * space_prod * inverse_mask * e for e in _exclusive_products(shifted))
            return g_space + g_time

        return out, zmm_vjp

    if fusion == "zam":
        mean = (time_feats[0] + time_feats[1] + time_feats[2]) / 3.0
        out = mean * space_prod

        def zam_vjp(g: np.ndarray):
            g_space = tuple(g * mean * e for e in _exclusive_products(space_feats))
            g_time = (g * space_prod / 3.0,) * len(time_feats)
            return g_space + g_time

        return out, zam_vjp

    raise ValueError(f"Unknown fusion scheme '{fusion}'")


def encode_points(
    config: ModelConfig,
    cache: FeaturePlaneCache,
    q: np.ndarray,
    tape: Optional[GradientTape] = None,
    prefix: str = "",
) -> np.ndarray:
    """
    Fused features for a batch of normalized samples

    Args:
        config: Model configuration
        cache: Fresh feature planes
        q: (M, 4) normalized samples
        tape: Optional tape; records sampling and fusion with output '<prefix>features'
        prefix: Namespace for tape entry names

    Returns:
        (M, B * |S|) features, scales concatenated in S order
    """
    planes = active_planes(config)
    per_scale = []
    scale_keys = []
    for scale in config.scales:
        feats = []
        feat_keys = []
        for plane in planes:
            grid = cache.grid(plane, scale)
            a, b = plane.axes
            sampler = BilinearSampler(q[:, [a, b]], grid.shape[1], grid.shape[2])
            feats.append(sampler.sample(grid))
            if tape is not None:
                key = f"{prefix}feat:{plane.value}:{scale}"
                tape.record(key, [plane_key(plane, scale)], lambda g, s=sampler: (s.sample_vjp(g),))
                feat_keys.append(key)

        space = [f for f, p in zip(feats, planes) if not p.is_space_time]
        time = [f for f, p in zip(feats, planes) if p.is_space_time]
        fused, vjp = fuse_with_vjp(config.fusion, space, time)
        per_scale.append(fused)
        if tape is not None:
            space_keys = [k for k, p in zip(feat_keys, planes) if not p.is_space_time]
            time_keys = [k for k, p in zip(feat_keys, planes) if p.is_space_time]
            fused_key = f"{prefix}fused:{scale}"
            tape.record(fused_key, space_keys + time_keys, vjp)
            scale_keys.append(fused_key)

    features = np.concatenate(per_scale, axis=1)
    if tape is not None:
        width = config.features
        tape.record(
            f"{prefix}features",
            scale_keys,
            lambda g: tuple(g[:, i * width:(i + 1) * width] for i in range(len(scale_keys))),
        )
    return features


def sample_field(field: WaveletField, cache: FeaturePlaneCache, q) -> FusedFeature:
    """
    Fused feature of one world-space sample

    Args:
        field: Wavelet field (supplies the configuration)
        cache: Feature planes refreshed from `field`
        q: SamplePoint or (x, y, z, t) in world coordinates
    """
    q = q.as_array() if isinstance(q, SamplePoint) else np.asarray(q, dtype=np.float64)
    normalized = normalize_points(q[None, :3], q[None, 3], field.config)
    return FusedFeature(values=encode_points(field.config, cache, normalized)[0])
