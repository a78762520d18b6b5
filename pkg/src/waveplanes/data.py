"""
Datasets, Synthetic Scenes and Evaluation Metrics

- D-NeRF style directories: transforms_{train,val,test}.json + PNG frames
- An analytic moving Gaussian blob rendered by dense ray marching (ground truth oracle)
- PSNR over whole images and over dilated foreground / background masks
"""

import json
import logging
from dataclasses import dataclass, field as dataclass_field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import cv2
import numpy as np

from .config import RenderSettings, SyntheticSceneSpec
from .decoder import ColorBasisDecoder
from .errors import DatasetError, MetricError
from .field import WaveletField, refresh_cache
from .parallel import ordered_map, resolve_workers
from .render import Camera, TrainBatch, background_rgb, composite, generate_rays, look_at, render_image, stratify

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
PSNR_CAP = 99.0
FOREGROUND_THRESHOLD = 0.5
DEFAULT_DILATION_RADIUS = 5


def read_image(path: Union[str, Path]) -> np.ndarray:
    """
    Read a PNG as float RGB or RGBA in [0, 1]

    Raises:
        DatasetError: If the file cannot be decoded
    """
    image = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if image is None:
        raise DatasetError(f"Cannot decode image {path}")
    scale = 65535.0 if image.dtype == np.uint16 else 255.0
    if image.ndim == 2:
        image = cv2.cvtColor(image, cv2.COLOR_GRAY2RGB)
    elif image.shape[2] == 4:
        image = cv2.cvtColor(image, cv2.COLOR_BGRA2RGBA)
    elif image.shape[2] == 3:
        image = cv2.cvtColor(image, cv2.COLOR_BGR2RGB)
    else:
        raise DatasetError(f"Unsupported channel count {image.shape[2]} in {path}")
    return image.astype(np.float64) / scale


def write_image(path: Union[str, Path], image: np.ndarray) -> Path:
    """Write a float image in [0, 1] (gray, RGB or RGBA) as 8-bit PNG"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pixels = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    if pixels.ndim == 3 and pixels.shape[2] == 4:
        pixels = cv2.cvtColor(pixels, cv2.COLOR_RGBA2BGRA)
    elif pixels.ndim == 3:
        pixels = cv2.cvtColor(pixels, cv2.COLOR_RGB2BGR)
    if not cv2.imwrite(str(path), pixels):
        raise OSError(f"Failed to write image {path}")
    return path


@dataclass
class FrameRecord:
    image_path: Path
    pose: np.ndarray
    time: float
    split: str
    rgb: Optional[np.ndarray] = None
    alpha: Optional[np.ndarray] = None
    rgba: Optional[np.ndarray] = None

    def __post_init__(self):
        self.pose = np.asarray(self.pose, dtype=np.float64)
        if self.pose.shape != (4, 4) or not np.all(np.isfinite(self.pose)):
            raise DatasetError(f"Frame {self.image_path}: transform_matrix must be a finite 4x4 matrix")
        if not np.isfinite(self.time) or not 0.0 <= self.time <= 1.0:
            raise DatasetError(f"Frame {self.image_path}: time {self.time} outside [0, 1]")
        if self.split not in SPLITS:
            raise DatasetError(f"Frame {self.image_path}: unknown split '{self.split}'")


@dataclass
class RayTable:
    """Every pixel ray of a split with its time and target color"""
    origins: np.ndarray
    directions: np.ndarray
    times: np.ndarray
    colors: np.ndarray

    def __len__(self) -> int:
        return self.origins.shape[0]

    def batch(self, index: np.ndarray) -> TrainBatch:
        return TrainBatch(
            origins=self.origins[index],
            directions=self.directions[index],
            times=self.times[index],
            targets=self.colors[index],
        )


@dataclass
class Dataset:
    frames: Dict[str, List[FrameRecord]]
    width: int
    height: int
    camera_angle_x: float
    background: str = "white"
    root: Optional[Path] = None

    @property
    def focal(self) -> float:
        return 0.5 * self.width / np.tan(0.5 * self.camera_angle_x)

    def split(self, name: str) -> List[FrameRecord]:
        return self.frames.get(name, [])

    def camera(self, frame: FrameRecord) -> Camera:
        return Camera(pose=frame.pose, focal=self.focal, width=self.width, height=self.height, background=self.background)

    def ray_table(self, split: str = "train") -> RayTable:
        """
        Raises:
            DatasetError: If the split has no frames
        """
        frames = self.split(split)
        if not frames:
            raise DatasetError(f"Dataset split '{split}' is empty")
        origins, directions, times, colors = [], [], [], []
        for frame in frames:
            cam = self.camera(frame)
            rays = generate_rays(cam, cam.all_pixels())
            origins.append(rays.origins)
            directions.append(rays.directions)
            times.append(np.full(len(rays), frame.time))
            colors.append(frame.rgb.reshape(-1, 3))
        return RayTable(
            origins=np.concatenate(origins),
            directions=np.concatenate(directions),
            times=np.concatenate(times),
            colors=np.concatenate(colors),
        )


def _resolve_image_path(root: Path, file_path: str) -> Path:
    path = root / file_path
    if not path.suffix:
        path = path.with_name(path.name + ".png")
    return path


def _load_frame(root: Path, entry: Dict, split: str, background: np.ndarray, json_path: Path) -> FrameRecord:
    try:
        image_path = _resolve_image_path(root, entry["file_path"])
        pose = np.asarray(entry["transform_matrix"], dtype=np.float64)
        t = float(entry.get("time", 0.0))
    except (KeyError, TypeError, ValueError) as e:
        raise DatasetError(f"Invalid frame entry in {json_path}: {e}") from e

    record = FrameRecord(image_path=image_path, pose=pose, time=t, split=split)
    image = read_image(image_path)
    if image.shape[2] == 4:
        rgba = image
        alpha = image[..., 3]
    else:
        rgba = np.concatenate([image, np.ones(image.shape[:2] + (1,))], axis=2)
        alpha = np.ones(image.shape[:2])
    record.rgba = rgba
    record.alpha = alpha
    record.rgb = rgba[..., :3] * alpha[..., None] + background[None, None, :] * (1.0 - alpha[..., None])
    return record


def load_dnerf(
    directory: Union[str, Path],
    background: str = "white",
    splits: Sequence[str] = SPLITS,
    workers: Optional[int] = None,
) -> Dataset:
    """
    Load a D-NeRF style dataset

    Frames keep JSON order. RGBA images are composited over `background`; alpha is
    kept for foreground/background evaluation.

    Raises:
        DatasetError: On missing or invalid JSON, undecodable images, bad times or
                      inconsistent image sizes (message includes the path)
    """
    root = Path(directory)
    bg = background_rgb(background)
    frames: Dict[str, List[FrameRecord]] = {}
    camera_angle_x = None
    size: Optional[Tuple[int, int]] = None

    for split in splits:
        json_path = root / f"transforms_{split}.json"
        try:
            with open(json_path, "r") as f:
                meta = json.load(f)
            angle = float(meta["camera_angle_x"])
            entries = list(meta["frames"])
        except FileNotFoundError as e:
            raise DatasetError(f"Missing transforms file {json_path}") from e
        except json.JSONDecodeError as e:
            raise DatasetError(f"Invalid JSON in {json_path}: {e}") from e
        except (KeyError, TypeError, ValueError) as e:
            raise DatasetError(f"Missing camera_angle_x or frames in {json_path}: {e}") from e

        if camera_angle_x is None:
            camera_angle_x = angle
        records = ordered_map(
            lambda entry: _load_frame(root, entry, split, bg, json_path),
            entries,
            resolve_workers(workers),
        )
        for record in records:
            shape = record.rgb.shape[:2]
            if size is None:
                size = shape
            elif shape != size:
                raise DatasetError(f"Image {record.image_path} is {shape[1]}x{shape[0]}, expected {size[1]}x{size[0]}")
        frames[split] = records
        logger.info(f"Loaded {len(records)} {split} frames from {json_path}")

    if size is None:
        raise DatasetError(f"No frames found in {root}")
    return Dataset(
        frames=frames,
        width=size[1],
        height=size[0],
        camera_angle_x=camera_angle_x,
        background=background,
        root=root,
    )


def _straight_rgba(frame: FrameRecord, background: np.ndarray) -> np.ndarray:
    if frame.rgba is not None:
        return frame.rgba
    alpha = frame.alpha[..., None]
    foreground = frame.rgb - background[None, None, :] * (1.0 - alpha)
    color = np.divide(foreground, alpha, out=np.zeros_like(foreground), where=alpha > 0)
    return np.concatenate([np.clip(color, 0.0, 1.0), alpha], axis=2)


def write_dnerf(dataset: Dataset, directory: Union[str, Path]) -> Path:
    """Write the dataset as a D-NeRF style directory (RGBA PNGs, extension-less file paths)"""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    bg = background_rgb(dataset.background)
    for split, frames in dataset.frames.items():
        entries = []
        for i, frame in enumerate(frames):
            relative = f"./{split}/r_{i:03d}"
            write_image(root / split / f"r_{i:03d}.png", _straight_rgba(frame, bg))
            entries.append({"file_path": relative, "transform_matrix": frame.pose.tolist(), "time": frame.time})
        with open(root / f"transforms_{split}.json", "w") as f:
            json.dump({"camera_angle_x": dataset.camera_angle_x, "frames": entries}, f, indent=2)
    logger.info(f"Dataset written to {root}")
    return root


class SyntheticScene:
    """
    Analytic dynamic scene: a Gaussian density blob moving linearly between two
    points, colored by a constant or an axis gradient
    """

    def __init__(self, spec: SyntheticSceneSpec, background: str = "white", near: float = 2.0, far: float = 6.0):
        self.spec = spec
        self.background = background
        self.near = near
        self.far = far
        self._start = np.asarray(spec.start, dtype=np.float64)
        self._end = np.asarray(spec.end, dtype=np.float64)

    def center(self, t: float) -> np.ndarray:
        if self.spec.static:
            return self._start.copy()
        return self._start + float(t) * (self._end - self._start)

    def density(self, points: np.ndarray, t: float) -> np.ndarray:
        offset = points - self.center(t)[None, :]
        squared = np.sum(offset * offset, axis=-1)
        return self.spec.peak_density * np.exp(-squared / (2.0 * self.spec.radius ** 2))

    def color(self, points: np.ndarray) -> np.ndarray:
        base = np.asarray(self.spec.color, dtype=np.float64)
        if self.spec.color_mode == "constant":
            return np.broadcast_to(base, points.shape).copy()
        axis = self.spec.gradient_axis
        low, high = self.spec.bbox[0][axis], self.spec.bbox[1][axis]
        weight = np.clip((points[:, axis] - low) / (high - low), 0.0, 1.0)[:, None]
        return (1.0 - weight) * base[None, :] + weight * np.asarray(self.spec.color_end)[None, :]

    def render(self, cam: Camera, t: float, n_samples: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
        """Ground-truth image and alpha at time t by dense bin-center ray marching"""
        n = n_samples or self.spec.oracle_samples
        rays = generate_rays(cam, cam.all_pixels(), self.near, self.far)
        depths, deltas = stratify(rays, n)
        points = (rays.origins[:, None, :] + depths[..., None] * rays.directions[:, None, :]).reshape(-1, 3)
        sigma = self.density(points, t).reshape(len(rays), n)
        colors = self.color(points).reshape(len(rays), n, 3)
        pixels, _, residual, _ = composite(sigma, deltas, colors, cam.background_rgb)
        return pixels.reshape(cam.height, cam.width, 3), (1.0 - residual).reshape(cam.height, cam.width)

    def camera_pose(self, azimuth: float) -> np.ndarray:
        elevation = np.radians(self.spec.camera_elevation_deg)
        eye = self.spec.camera_radius * np.array(
            [np.cos(elevation) * np.cos(azimuth), np.cos(elevation) * np.sin(azimuth), np.sin(elevation)]
        )
        return look_at(eye, (0.0, 0.0, 0.0), (0.0, 0.0, 1.0))

    def camera(self, pose: np.ndarray) -> Camera:
        size = self.spec.image_size
        return Camera.from_fov(pose, self.spec.camera_angle_x, size, size, self.background)

    def frame_schedule(self) -> Dict[str, List[Tuple[float, float]]]:
        """(azimuth, time) per frame and split; held-out views sit between training views"""
        spec = self.spec
        train = []
        for i in range(spec.frame_count):
            t = 0.0 if spec.static or spec.frame_count == 1 else i / (spec.frame_count - 1)
            train.append((2.0 * np.pi * i / spec.frame_count, t))
        test = []
        for j in range(spec.test_frame_count):
            t = 0.0 if spec.static else (j + 0.5) / spec.test_frame_count
            test.append((2.0 * np.pi * (j + 0.5) / spec.test_frame_count, t))
        return {"train": train, "val": list(test), "test": test}


@dataclass
class SyntheticDataset:
    scene: SyntheticScene
    dataset: Dataset


def gen_synthetic(
    spec: SyntheticSceneSpec,
    background: str = "white",
    near: float = 2.0,
    far: float = 6.0,
    workers: Optional[int] = None,
) -> SyntheticDataset:
    """Render every frame of the analytic scene with the dense oracle"""
    scene = SyntheticScene(spec, background, near, far)
    frames: Dict[str, List[FrameRecord]] = {}
    for split, schedule in scene.frame_schedule().items():

        def build(item: Tuple[int, Tuple[float, float]]) -> FrameRecord:
            i, (azimuth, t) = item
            pose = scene.camera_pose(azimuth)
            rgb, alpha = scene.render(scene.camera(pose), t)
            return FrameRecord(
                image_path=Path(f"./{split}/r_{i:03d}"), pose=pose, time=t, split=split, rgb=rgb, alpha=alpha
            )

        frames[split] = ordered_map(build, list(enumerate(schedule)), resolve_workers(workers))

    dataset = Dataset(
        frames=frames,
        width=spec.image_size,
        height=spec.image_size,
        camera_angle_x=spec.camera_angle_x,
        background=background,
    )
    logger.info(
        f"Synthetic scene: {len(frames['train'])} train / {len(frames['test'])} test frames "
        f"at {spec.image_size}x{spec.image_size}"
    )
    return SyntheticDataset(scene=scene, dataset=dataset)


def psnr(img_a: np.ndarray, img_b: np.ndarray) -> float:
    """
    Peak signal-to-noise ratio in dB for images in [0, 1]; zero error reports PSNR_CAP

    Raises:
        MetricError: If the shapes differ
    """
    a = np.asarray(img_a, dtype=np.float64)
    b = np.asarray(img_b, dtype=np.float64)
    if a.shape != b.shape:
        raise MetricError(f"PSNR shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def masked_psnr(img_a: np.ndarray, img_b: np.ndarray, mask: np.ndarray) -> Optional[float]:
    """PSNR over the pixels selected by `mask`; None for an empty mask"""
    if img_a.shape != img_b.shape:
        raise MetricError(f"PSNR shape mismatch: {img_a.shape} vs {img_b.shape}")
    if not np.any(mask):
        return None
    return psnr(np.asarray(img_a)[mask], np.asarray(img_b)[mask])


def split_fg_bg(
    alpha: np.ndarray,
    dilation_radius: int = DEFAULT_DILATION_RADIUS,
    threshold: float = FOREGROUND_THRESHOLD,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Foreground = (alpha > threshold) dilated by a (2r+1) x (2r+1) square; background = complement
    """
    binary = (np.asarray(alpha) > threshold).astype(np.uint8)
    if dilation_radius > 0:
        size = 2 * dilation_radius + 1
        kernel = cv2.getStructuringElement(cv2.MORPH_RECT, (size, size))
        binary = cv2.dilate(binary, kernel, iterations=1)
    foreground = binary > 0
    return foreground, ~foreground


@dataclass
class FrameScore:
    index: int
    time: float
    psnr: float
    psnr_fg: Optional[float]
    psnr_bg: Optional[float]

    def to_dict(self) -> Dict:
        return {"index": self.index, "time": self.time, "psnr": self.psnr, "psnr_fg": self.psnr_fg, "psnr_bg": self.psnr_bg}


def _mean_or_none(values: List[Optional[float]]) -> Optional[float]:
    present = [v for v in values if v is not None]
    return float(np.mean(present)) if present else None


@dataclass
class EvalReport:
    frames: List[FrameScore] = dataclass_field(default_factory=list)
    split: str = "test"
    dilation_radius: int = DEFAULT_DILATION_RADIUS

    @property
    def psnr_whole(self) -> Optional[float]:
        return _mean_or_none([f.psnr for f in self.frames])

    @property
    def psnr_fg(self) -> Optional[float]:
        return _mean_or_none([f.psnr_fg for f in self.frames])

    @property
    def psnr_bg(self) -> Optional[float]:
        return _mean_or_none([f.psnr_bg for f in self.frames])

    def to_dict(self) -> Dict:
        return {
            "split": self.split,
            "dilation_radius": self.dilation_radius,
            "psnr_whole": self.psnr_whole,
            "psnr_fg": self.psnr_fg,
            "psnr_bg": self.psnr_bg,
            "frames": [f.to_dict() for f in self.frames],
        }

    def write_json(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)
        return path


def evaluate_images(
    predictions: Sequence[np.ndarray],
    targets: Sequence[np.ndarray],
    alphas: Sequence[np.ndarray],
    times: Optional[Sequence[float]] = None,
    dilation_radius: int = DEFAULT_DILATION_RADIUS,
    split: str = "test",
) -> EvalReport:
    """Whole, foreground and background PSNR per frame using ground-truth alphas"""
    report = EvalReport(split=split, dilation_radius=dilation_radius)
    for i, (prediction, target, alpha) in enumerate(zip(predictions, targets, alphas)):
        foreground, background = split_fg_bg(alpha, dilation_radius)
        report.frames.append(
            FrameScore(
                index=i,
                time=float(times[i]) if times is not None else 0.0,
                psnr=psnr(prediction, target),
                psnr_fg=masked_psnr(prediction, target, foreground),
                psnr_bg=masked_psnr(prediction, target, background),
            )
        )
    return report


def evaluate(
    field: WaveletField,
    decoder: ColorBasisDecoder,
    dataset: Dataset,
    settings: Optional[RenderSettings] = None,
    split: str = "test",
    dilation_radius: int = DEFAULT_DILATION_RADIUS,
    workers: Optional[int] = None,
) -> EvalReport:
    """
    Render every frame of `split` and score it against the ground truth

    Raises:
        DatasetError: If the split is empty
    """
    frames = dataset.split(split)
    if not frames:
        raise DatasetError(f"Dataset split '{split}' is empty")
    settings = settings or RenderSettings(background=dataset.background)
    cache = refresh_cache(field)

    def render_frame(frame: FrameRecord) -> np.ndarray:
        image, _ = render_image(field, cache, decoder, dataset.camera(frame), frame.time, settings, workers=1)
        return image

    predictions = ordered_map(render_frame, frames, resolve_workers(workers))
    report = evaluate_images(
        predictions,
        [f.rgb for f in frames],
        [f.alpha for f in frames],
        [f.time for f in frames],
        dilation_radius,
        split,
    )
    logger.info(f"Evaluated {len(frames)} {split} frames: PSNR {report.psnr_whole:.2f} dB")
    return report


def constant_baseline_psnr(dataset: Dataset, split: str = "test") -> float:
    """Mean PSNR of the single best constant color (per-channel mean) over the split"""
    frames = dataset.split(split)
    if not frames:
        raise DatasetError(f"Dataset split '{split}' is empty")
    targets = np.stack([f.rgb for f in frames])
    constant = targets.reshape(-1, 3).mean(axis=0)
    return float(np.mean([psnr(np.broadcast_to(constant, t.shape), t) for t in targets]))
