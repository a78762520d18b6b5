"""
Cameras, rays and volume rendering

Pinhole cameras in the OpenGL convention (camera looks down -z, +y up), with
stratified depth samples and front-to-back alpha compositing over a background.
`trace_rays` is the shared forward pass used by both training and rendering.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .autodiff import GradientTape
from .config import RenderSettings
from .decoder import ColorBasisDecoder
from .field import FeaturePlaneCache, WaveletField, encode_points, normalize_points, refresh_cache
from .parallel import ordered_map, resolve_workers

logger = logging.getLogger(__name__)

BACKGROUNDS = {"white": (1.0, 1.0, 1.0), "black": (0.0, 0.0, 0.0)}


def background_rgb(background) -> np.ndarray:
    if isinstance(background, str):
        if background not in BACKGROUNDS:
            raise ValueError(f"Unknown background '{background}'")
        return np.array(BACKGROUNDS[background], dtype=np.float64)
    return np.asarray(background, dtype=np.float64)


def look_at(eye: Sequence[float], target: Sequence[float] = (0.0, 0.0, 0.0), up: Sequence[float] = (0.0, 0.0, 1.0)) -> np.ndarray:
    """Camera-to-world pose at `eye` whose -z axis points at `target`"""
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, np.asarray(up, dtype=np.float64))
    norm = np.linalg.norm(right)
    if norm < 1e-8:
        raise ValueError("Camera up vector is parallel to the viewing direction")
    right /= norm
    true_up = np.cross(right, forward)
    pose = np.eye(4)
    pose[:3, 0] = right
    pose[:3, 1] = true_up
    pose[:3, 2] = -forward
    pose[:3, 3] = eye
    return pose


def focal_from_fov(width: int, camera_angle_x: float) -> float:
    return 0.5 * width / np.tan(0.5 * camera_angle_x)


@dataclass
class Camera:
    pose: np.ndarray
    focal: float
    width: int
    height: int
    background: str = "white"

    def __post_init__(self):
        self.pose = np.asarray(self.pose, dtype=np.float64)
        if self.pose.shape != (4, 4) or not np.all(np.isfinite(self.pose)):
            raise ValueError(f"Camera pose must be a finite 4x4 matrix, got shape {self.pose.shape}")
        rotation = self.pose[:3, :3]
        if not np.allclose(rotation.T @ rotation, np.eye(3), atol=1e-4):
            raise ValueError("Camera rotation block is not orthonormal")
        if self.width < 1 or self.height < 1 or self.focal <= 0:
            raise ValueError(f"Invalid camera intrinsics {self.width}x{self.height}, focal {self.focal}")

    @classmethod
    def from_fov(cls, pose: np.ndarray, camera_angle_x: float, width: int, height: int, background: str = "white") -> "Camera":
        return cls(pose=pose, focal=focal_from_fov(width, camera_angle_x), width=width, height=height, background=background)

    @property
    def background_rgb(self) -> np.ndarray:
        return background_rgb(self.background)

    def all_pixels(self) -> np.ndarray:
        """(H*W, 2) pixel (column, row) indices in row-major order"""
        rows, cols = np.meshgrid(np.arange(self.height), np.arange(self.width), indexing="ij")
        return np.stack([cols.ravel(), rows.ravel()], axis=1)


@dataclass
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    near: float
    far: float

    def __post_init__(self):
        if not self.near < self.far:
            raise ValueError(f"Ray near ({self.near}) must be < far ({self.far})")
        if abs(np.linalg.norm(self.direction) - 1.0) > 1e-6:
            raise ValueError("Ray direction is not unit length")


@dataclass
class Rays:
    """Batch of R rays"""
    origins: np.ndarray
    directions: np.ndarray
    near: np.ndarray
    far: np.ndarray

    def __len__(self) -> int:
        return self.origins.shape[0]

    def __getitem__(self, index) -> "Rays":
        return Rays(self.origins[index], self.directions[index], self.near[index], self.far[index])

    def ray(self, i: int) -> Ray:
        return Ray(self.origins[i], self.directions[i], float(self.near[i]), float(self.far[i]))

    @classmethod
    def from_rays(cls, rays: Sequence[Ray]) -> "Rays":
        return cls(
            origins=np.stack([r.origin for r in rays]).astype(np.float64),
            directions=np.stack([r.direction for r in rays]).astype(np.float64),
            near=np.array([r.near for r in rays], dtype=np.float64),
            far=np.array([r.far for r in rays], dtype=np.float64),
        )


@dataclass
class TrainBatch:
    """K training rays with their times and ground-truth colors"""
    origins: np.ndarray
    directions: np.ndarray
    times: np.ndarray
    targets: np.ndarray

    def __len__(self) -> int:
        return self.origins.shape[0]

    def rays(self, near: float, far: float) -> Rays:
        count = len(self)
        return Rays(self.origins, self.directions, np.full(count, float(near)), np.full(count, float(far)))


def generate_rays(cam: Camera, pixels: np.ndarray, near: float = 2.0, far: float = 6.0) -> Rays:
    """
    Rays through pixel centers

    Args:
        cam: Pinhole camera
        pixels: (K, 2) integer (column, row) pixel indices

    Raises:
        ValueError: If any pixel lies outside the image
    """
    pixels = np.atleast_2d(np.asarray(pixels))
    cols = pixels[:, 0].astype(np.float64)
    rows = pixels[:, 1].astype(np.float64)
    if np.any((cols < 0) | (cols >= cam.width) | (rows < 0) | (rows >= cam.height)):
        raise ValueError(f"Pixels outside the {cam.width}x{cam.height} image")

    local = np.stack(
        [
            (cols + 0.5 - 0.5 * cam.width) / cam.focal,
            -(rows + 0.5 - 0.5 * cam.height) / cam.focal,
            -np.ones_like(cols),
        ],
        axis=1,
    )
    directions = local @ cam.pose[:3, :3].T
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    origins = np.broadcast_to(cam.pose[:3, 3], directions.shape).copy()
    count = len(pixels)
    return Rays(origins, directions, np.full(count, float(near)), np.full(count, float(far)))


def project_point(cam: Camera, point: Sequence[float]) -> Tuple[float, float]:
    """Continuous (column, row) pixel coordinate of a world point; pixel centers sit at i + 0.5"""
    world_to_cam = np.linalg.inv(cam.pose)
    local = world_to_cam @ np.append(np.asarray(point, dtype=np.float64), 1.0)
    depth = -local[2]
    if depth <= 0:
        raise ValueError("Point lies behind the camera")
    col = local[0] / depth * cam.focal + 0.5 * cam.width
    row = -local[1] / depth * cam.focal + 0.5 * cam.height
    return float(col), float(row)


@dataclass
class RaySamples:
    """Depth-ordered samples of one ray"""
    positions: np.ndarray
    deltas: np.ndarray
    depths: np.ndarray
    colors: Optional[np.ndarray] = None
    sigmas: Optional[np.ndarray] = None


def stratify(rays: Rays, n: int, jitter: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Sample depths in n equal bins over [near, far] per ray

    Args:
        rays: R rays
        n: Samples per ray
        jitter: Optional (R, n) uniforms in [0, 1) placing each sample in its bin;
                None places samples at bin centers

    Returns:
        (depths (R, n), deltas (R, n)) with deltas the bin widths
    """
    if n < 1:
        raise ValueError(f"Need at least one sample per ray, got {n}")
    fractions = np.linspace(0.0, 1.0, n + 1)
    edges = rays.near[:, None] + (rays.far - rays.near)[:, None] * fractions[None, :]
    lower, upper = edges[:, :-1], edges[:, 1:]
    deltas = upper - lower
    if jitter is None:
        depths = 0.5 * (lower + upper)
    else:
        depths = lower + jitter * deltas
    return depths, deltas


def stratified_samples(ray: Ray, n: int, jitter_seed: Optional[int] = None) -> RaySamples:
    """Bin centers when `jitter_seed` is None, else one uniform draw inside each bin"""
    rays = Rays.from_rays([ray])
    jitter = None if jitter_seed is None else np.random.default_rng(jitter_seed).random((1, n))
    depths, deltas = stratify(rays, n, jitter)
    positions = ray.origin[None, :] + depths[0][:, None] * ray.direction[None, :]
    return RaySamples(positions=positions, deltas=deltas[0], depths=depths[0])


def composite(
    sigmas: np.ndarray,
    deltas: np.ndarray,
    colors: np.ndarray,
    background: Sequence[float],
):
    """
    Alpha-composite samples front to back

    Args:
        sigmas: (R, n) densities
        deltas: (R, n) interval widths
        colors: (R, n, 3) sample colors
        background: rgb composited with the residual transmittance

    Returns:
        (pixels (R, 3), weights (R, n), residual transmittance (R,), vjp) where vjp
        maps a pixel cotangent to (sigma cotangent, color cotangent)
    """
    bg = np.asarray(background, dtype=np.float64)
    tau = sigmas * deltas
    cumulative = np.cumsum(tau, axis=1)
    transmittance = np.exp(-(cumulative - tau))
    absorbed = -np.expm1(-tau)
    weights = transmittance * absorbed
    residual = np.exp(-cumulative[:, -1])
    pixels = np.einsum("rn,rnc->rc", weights, colors) + residual[:, None] * bg[None, :]

    def vjp(g: np.ndarray):
        g_colors = weights[..., None] * g[:, None, :]
        projected = np.einsum("rnc,rc->rn", colors, g)
        projected_bg = g @ bg
        weighted = weights * projected
        later = weighted.sum(axis=1, keepdims=True) - np.cumsum(weighted, axis=1)
        transmitted = np.exp(-cumulative)
        g_tau = transmitted * projected - later - (residual * projected_bg)[:, None]
        return g_tau * deltas, g_colors

    return pixels, weights, residual, vjp


def render_ray(samples: RaySamples, background: Sequence[float]) -> np.ndarray:
    """Composite one ray's decoded samples over `background`"""
    pixels, _, _, _ = composite(
        np.asarray(samples.sigmas, dtype=np.float64)[None, :],
        np.asarray(samples.deltas, dtype=np.float64)[None, :],
        np.asarray(samples.colors, dtype=np.float64)[None, :, :],
        background,
    )
    return pixels[0]


@dataclass
class RayTrace:
    pixels: np.ndarray
    alpha: np.ndarray
    weights: np.ndarray
    depths: np.ndarray


def trace_rays(
    config,
    cache: FeaturePlaneCache,
    decoder: ColorBasisDecoder,
    rays: Rays,
    times: np.ndarray,
    n_samples: int,
    background: Sequence[float],
    jitter: Optional[np.ndarray] = None,
    tape: Optional[GradientTape] = None,
    prefix: str = "",
) -> RayTrace:
    """
    Full forward pass for a batch of rays: sample, encode, decode, composite

    With a tape, records '<prefix>pixels' as a function of the cached planes and
    the decoder parameters.
    """
    count = len(rays)
    depths, deltas = stratify(rays, n_samples, jitter)
    points = rays.origins[:, None, :] + depths[..., None] * rays.directions[:, None, :]
    q = normalize_points(points.reshape(-1, 3), np.repeat(np.asarray(times, dtype=np.float64), n_samples), config)
    features = encode_points(config, cache, q, tape=tape, prefix=prefix)
    radiance = decoder.forward(features.reshape(count, n_samples, -1), rays.directions, tape=tape, prefix=prefix)
    pixels, weights, residual, vjp = composite(radiance[..., 3], deltas, radiance[..., :3], background)

    if tape is not None:
        def pixels_vjp(g: np.ndarray):
            g_sigma, g_colors = vjp(g)
            return (np.concatenate([g_colors, g_sigma[..., None]], axis=-1),)

        tape.record(f"{prefix}pixels", [f"{prefix}radiance"], pixels_vjp)

    return RayTrace(pixels=pixels, alpha=1.0 - residual, weights=weights, depths=depths)


def render_image(
    field: WaveletField,
    cache: Optional[FeaturePlaneCache],
    decoder: ColorBasisDecoder,
    cam: Camera,
    t: float,
    settings: Optional[RenderSettings] = None,
    workers: Optional[int] = None,
    rows_per_chunk: int = 8,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Render a full image at time t with bin-center samples

    Rows are traced in chunks on a worker pool and assembled in row order, so
    the result does not depend on the worker count.

    Returns:
        (image (H, W, 3), alpha (H, W))
    """
    settings = settings or RenderSettings()
    if cache is None or not cache.is_fresh(field):
        cache = refresh_cache(field)
    background = cam.background_rgb

    chunks: List[Tuple[int, int]] = [
        (start, min(start + rows_per_chunk, cam.height)) for start in range(0, cam.height, rows_per_chunk)
    ]

    def trace_chunk(bounds: Tuple[int, int]) -> RayTrace:
        start, stop = bounds
        rows, cols = np.meshgrid(np.arange(start, stop), np.arange(cam.width), indexing="ij")
        pixels = np.stack([cols.ravel(), rows.ravel()], axis=1)
        rays = generate_rays(cam, pixels, settings.near, settings.far)
        times = np.full(len(rays), float(t))
        return trace_rays(field.config, cache, decoder, rays, times, settings.samples_per_ray, background)

    traces = ordered_map(trace_chunk, chunks, resolve_workers(workers))
    image = np.concatenate([trace.pixels for trace in traces], axis=0).reshape(cam.height, cam.width, 3)
    alpha = np.concatenate([trace.alpha for trace in traces], axis=0).reshape(cam.height, cam.width)
    return image, alpha
