"""
Loss, gradients and training loop

One training step:
1. Refresh the feature-plane cache on a gradient tape (planes linked to coefficients)
2. Trace ray chunks on the worker pool, each on its own tape, and backpropagate
   the chunk's photometric loss to the cached planes and decoder parameters
3. Sum chunk gradients in chunk order, add regularizer gradients on the main tape
   and pull everything back to the wavelet coefficients
4. Adam update with warmup + cosine learning rate
"""

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field as dataclass_field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np
import psutil
from prometheus_client import CollectorRegistry, Counter, Gauge, write_to_textfile

from .autodiff import GradientTape
from .codec import save_checkpoint
from .config import RegWeights, RenderSettings, RunConfig, TrainConfig
from .data import Dataset, psnr, write_image
from .decoder import ColorBasisDecoder
from .errors import DivergenceError
from .field import (
    FeaturePlaneCache,
    SPACE_PLANES,
    TIME_PLANES,
    WaveletField,
    active_planes,
    plane_key,
    refresh_cache,
)
from .parallel import ordered_map, resolve_workers
from .regularizers import (
    reg_sst,
    reg_sst_grad,
    reg_time_smooth,
    reg_time_smooth_grad,
    reg_ts,
    reg_ts_grad,
    reg_tv,
    reg_tv_grad,
)
from .render import TrainBatch, background_rgb, render_image, trace_rays

logger = logging.getLogger(__name__)


@dataclass
class LossBreakdown:
    """Photometric loss, raw regularizer values and the weighted total"""
    mse: float
    tv: float = 0.0
    sst: float = 0.0
    ts: float = 0.0
    time_smooth: float = 0.0
    total: float = 0.0

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


def learning_rate(step: int, base_lr: float, warmup_steps: int, total_steps: int) -> float:
    """
    Linear warmup to base_lr over `warmup_steps`, then cosine annealing to 0 at `total_steps`

    Step 0 uses the step-1 warmup value so the first update is never zero.
    """
    if warmup_steps > 0 and step < warmup_steps:
        return base_lr * max(step, 1) / warmup_steps
    progress = (step - warmup_steps) / max(1, total_steps - warmup_steps)
    progress = min(max(progress, 0.0), 1.0)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class OptimState:
    """Adam moments per parameter name plus the learning-rate schedule"""
    base_lr: float = 0.01
    warmup_steps: int = 512
    total_steps: int = 2000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    first_moments: Dict[str, np.ndarray] = dataclass_field(default_factory=dict)
    second_moments: Dict[str, np.ndarray] = dataclass_field(default_factory=dict)

    @classmethod
    def from_config(cls, train: TrainConfig) -> "OptimState":
        return cls(base_lr=train.lr, warmup_steps=train.warmup_steps, total_steps=train.steps)

    @property
    def lr(self) -> float:
        return learning_rate(self.step, self.base_lr, self.warmup_steps, self.total_steps)

    def apply(self, params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray]) -> float:
        """
        One bias-corrected Adam update, in place on `params`

        Returns:
            float: Learning rate used
        """
        lr = self.lr
        t = self.step + 1
        correction1 = 1.0 - self.beta1 ** t
        correction2 = 1.0 - self.beta2 ** t
        for name, param in params.items():
            grad = grads.get(name)
            if grad is None:
                continue
            m = self.first_moments.setdefault(name, np.zeros(param.shape, dtype=np.float64))
            v = self.second_moments.setdefault(name, np.zeros(param.shape, dtype=np.float64))
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            update = lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)
            param -= update.astype(param.dtype)
        self.step += 1
        return lr


def loss(
    predictions: np.ndarray,
    targets: np.ndarray,
    field: WaveletField,
    cache: FeaturePlaneCache,
    weights: RegWeights,
) -> LossBreakdown:
    """
    Ray-color MSE plus weighted regularizers

    Raises:
        ValueError: If prediction and target shapes differ
    """
    if predictions.shape != targets.shape:
        raise ValueError(f"Prediction shape {predictions.shape} != target shape {targets.shape}")
    diff = predictions.astype(np.float64) - targets.astype(np.float64)
    mse = float(np.sum(diff * diff) / diff.size)

    time_grids = cache.time_grids()
    parts = LossBreakdown(
        mse=mse,
        tv=reg_tv(cache.space_grids()),
        sst=reg_sst(time_grids),
        ts=reg_ts(field),
        time_smooth=reg_time_smooth(time_grids),
    )
    parts.total = (
        mse
        + weights.tv * parts.tv
        + weights.sst * parts.sst
        + weights.ts * parts.ts
        + weights.time_smooth * parts.time_smooth
    )
    return parts


@dataclass
class GradientResult:
    loss: LossBreakdown
    grads: Dict[str, np.ndarray]
    predictions: np.ndarray
    cache: FeaturePlaneCache


def _record_plane_regularizer(tape: GradientTape, name: str, cache: FeaturePlaneCache, keys, grad_fn) -> None:
    grids = [cache.grid(plane, scale) for plane, scale in keys]

    def vjp(g):
        return tuple(g * grad for grad in grad_fn(grids))

    tape.record(name, [plane_key(plane, scale) for plane, scale in keys], vjp)


def compute_gradients(
    field: WaveletField,
    decoder: ColorBasisDecoder,
    batch: TrainBatch,
    settings: RenderSettings,
    weights: RegWeights,
    jitter: Optional[np.ndarray] = None,
    workers: int = 1,
) -> GradientResult:
    """
    Loss and gradients for every coefficient array and decoder parameter

    Args:
        jitter: Optional (K, samples_per_ray) uniforms for stratified sampling;
                None samples bin centers
        workers: Ray chunks traced in parallel; gradients are summed in chunk order
    """
    config = field.config
    tape = GradientTape()
    cache = refresh_cache(field, tape=tape)
    count = len(batch)
    background = background_rgb(settings.background)
    rays = batch.rays(settings.near, settings.far)
    planes = active_planes(config)
    plane_names = [plane_key(p, s) for p in planes for s in config.scales]
    decoder_names = decoder.parameter_names()
    scale = 2.0 / (count * 3)

    def run_chunk(index: np.ndarray) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
        chunk_tape = GradientTape()
        trace = trace_rays(
            config,
            cache,
            decoder,
            rays[index],
            batch.times[index],
            settings.samples_per_ray,
            background,
            jitter=None if jitter is None else jitter[index],
            tape=chunk_tape,
        )
        residual = trace.pixels - batch.targets[index]
        chunk_tape.record("chunk_loss", ["pixels"], lambda g: (g * scale * residual,))
        return trace.pixels, chunk_tape.gradient({"chunk_loss": 1.0}, sources=plane_names + decoder_names)

    chunks = np.array_split(np.arange(count), max(1, min(workers, count)))
    results = ordered_map(run_chunk, chunks, workers)

    seeds: Dict[str, np.ndarray] = {}
    for _, grads in results:
        for name, grad in grads.items():
            seeds[name] = grad if name not in seeds else seeds[name] + grad
    decoder_grads = {name: seeds.pop(name) for name in decoder_names if name in seeds}

    space_keys = [(p, s) for p in planes if p in SPACE_PLANES for s in config.scales]
    time_keys = [(p, s) for p in planes if p in TIME_PLANES for s in config.scales]
    if weights.tv > 0 and space_keys:
        _record_plane_regularizer(tape, "reg:tv", cache, space_keys, reg_tv_grad)
        seeds["reg:tv"] = weights.tv
    if weights.sst > 0 and time_keys:
        _record_plane_regularizer(tape, "reg:sst", cache, time_keys, reg_sst_grad)
        seeds["reg:sst"] = weights.sst
    if weights.time_smooth > 0 and time_keys:
        _record_plane_regularizer(tape, "reg:time_smooth", cache, time_keys, reg_time_smooth_grad)
        seeds["reg:time_smooth"] = weights.time_smooth
    time_names = field.parameter_names(TIME_PLANES)
    if weights.ts > 0 and time_names:
        arrays = [array for plane in TIME_PLANES if plane in field.planes for _, array in field.planes[plane].arrays()]
        tape.record("reg:ts", time_names, lambda g: tuple(g * s for s in reg_ts_grad(arrays)))
        seeds["reg:ts"] = weights.ts

    omega_grads = tape.gradient(seeds, sources=field.parameter_names())
    grads: Dict[str, np.ndarray] = {}
    for name, param in field.named_parameters():
        grads[name] = omega_grads.get(name, np.zeros(param.shape, dtype=np.float64))
    grads.update(decoder_grads)

    predictions = np.concatenate([pixels for pixels, _ in results], axis=0)
    parts = loss(predictions, batch.targets, field, cache, weights)
    return GradientResult(loss=parts, grads=grads, predictions=predictions, cache=cache)


def _divergence_snapshot(field, decoder, state, parts, grads) -> Dict:
    non_finite = sorted(name for name, grad in grads.items() if not np.all(np.isfinite(grad)))
    return {
        "step": state.step,
        "lr": state.lr,
        "loss": parts.to_dict(),
        "non_finite_grads": non_finite,
        "max_abs_coefficient": max(float(np.max(np.abs(a))) for _, a in field.named_parameters()),
        "max_abs_decoder": max(float(np.max(np.abs(a))) for _, a in decoder.named_parameters()),
    }


def train_step(
    field: WaveletField,
    decoder: ColorBasisDecoder,
    batch: TrainBatch,
    state: OptimState,
    settings: RenderSettings,
    weights: RegWeights,
    jitter: Optional[np.ndarray] = None,
    workers: int = 1,
) -> LossBreakdown:
    """
    One optimization step, updating field and decoder in place

    Raises:
        DivergenceError: If the loss or any gradient is non-finite; parameters are left untouched
    """
    result = compute_gradients(field, decoder, batch, settings, weights, jitter=jitter, workers=workers)
    finite = math.isfinite(result.loss.total) and all(np.all(np.isfinite(g)) for g in result.grads.values())
    if not finite:
        snapshot = _divergence_snapshot(field, decoder, state, result.loss, result.grads)
        raise DivergenceError(f"Non-finite loss or gradient at step {state.step}", snapshot=snapshot)

    params: Dict[str, np.ndarray] = dict(field.named_parameters())
    params.update(decoder.named_parameters())
    state.apply(params, result.grads)
    field.mark_updated()
    return result.loss


@dataclass
class TrainingStats:
    """Statistics for training progress tracking"""
    steps_completed: int = 0
    last_loss: float = 0.0
    last_mse: float = 0.0
    best_mse: float = float("inf")
    last_lr: float = 0.0
    total_step_time_ms: float = 0.0
    avg_step_time_ms: float = 0.0
    last_val_psnr: Optional[float] = None
    peak_rss_mb: float = 0.0

    def update(self, parts: LossBreakdown, lr: float, step_time_ms: float) -> None:
        self.steps_completed += 1
        self.last_loss = parts.total
        self.last_mse = parts.mse
        self.best_mse = min(self.best_mse, parts.mse)
        self.last_lr = lr
        self.total_step_time_ms += step_time_ms
        self.avg_step_time_ms = self.total_step_time_ms / self.steps_completed

    def to_dict(self) -> Dict:
        return {
            "steps_completed": self.steps_completed,
            "last_loss": self.last_loss,
            "last_mse": self.last_mse,
            "best_mse": self.best_mse,
            "last_lr": self.last_lr,
            "avg_step_time_ms": round(self.avg_step_time_ms, 2),
            "last_val_psnr": self.last_val_psnr,
            "peak_rss_mb": round(self.peak_rss_mb, 1),
        }


LOG_COLUMNS = ["step", "lr", "mse", "tv", "sst", "ts", "time_smooth", "total"]


class Trainer:
    """
    Trains a wavelet field and decoder on a dataset

    Artifacts in the output directory (when given): CSV step log, validation
    renders, Prometheus metrics textfile and the final dense checkpoint.
    """

    LOG_NAME = "train_log.csv"
    CHECKPOINT_NAME = "model.wvck"
    METRICS_NAME = "metrics.prom"

    def __init__(
        self,
        run_config: RunConfig,
        dataset: Dataset,
        output_dir: Optional[Path] = None,
        workers: Optional[int] = None,
    ):
        self.run_config = run_config
        self.train_config = run_config.train
        self.dataset = dataset
        self.output_dir = Path(output_dir) if output_dir else None
        self.workers = resolve_workers(workers if workers is not None else self.train_config.workers)

        model = run_config.model
        self.field = WaveletField.initialize(model, seed=self.train_config.seed)
        self.decoder = ColorBasisDecoder.initialize(
            model.fused_length,
            layers=model.decoder_layers,
            width=model.decoder_width,
            seed=self.train_config.seed + 1,
        )
        self.state = OptimState.from_config(self.train_config)
        self.settings = run_config.render_settings()
        self.table = dataset.ray_table("train")
        self.stats = TrainingStats()
        self.history: List[LossBreakdown] = []

        self.registry = CollectorRegistry()
        self._loss_gauge = Gauge("waveplanes_train_loss", "Total training loss", registry=self.registry)
        self._mse_gauge = Gauge("waveplanes_train_mse", "Photometric MSE", registry=self.registry)
        self._lr_gauge = Gauge("waveplanes_learning_rate", "Current learning rate", registry=self.registry)
        self._psnr_gauge = Gauge("waveplanes_train_psnr", "Validation PSNR (dB)", registry=self.registry)
        self._steps = Counter("waveplanes_train_steps", "Completed optimization steps", registry=self.registry)

        logger.info(
            f"Trainer ready: {self.field.coefficient_count} coefficients, {len(self.table)} training rays, "
            f"{self.workers} workers"
        )

    def sample_batch(self, step: int) -> Tuple[TrainBatch, np.ndarray]:
        """Rays and sampling jitter for `step`, seeded by (seed, step)"""
        rng = np.random.default_rng([self.train_config.seed, step])
        size = self.train_config.batch_size
        index = rng.choice(len(self.table), size=size, replace=size > len(self.table))
        jitter = rng.random((size, self.train_config.samples_per_ray))
        return self.table.batch(index), jitter

    def step(self) -> LossBreakdown:
        step = self.state.step
        batch, jitter = self.sample_batch(step)
        lr = self.state.lr
        start = time.perf_counter()
        parts = train_step(
            self.field,
            self.decoder,
            batch,
            self.state,
            self.settings,
            self.train_config.reg,
            jitter=jitter,
            workers=self.workers,
        )
        self.stats.update(parts, lr, (time.perf_counter() - start) * 1000.0)
        self.history.append(parts)
        self._loss_gauge.set(parts.total)
        self._mse_gauge.set(parts.mse)
        self._lr_gauge.set(lr)
        self._steps.inc()
        return parts

    def run(self, steps: Optional[int] = None) -> TrainingStats:
        """Train until `steps` (default: configured steps) have completed"""
        total = steps if steps is not None else self.train_config.steps
        log_writer = None
        log_file = None
        if self.output_dir is not None:
            self.output_dir.mkdir(parents=True, exist_ok=True)
            log_file = open(self.output_dir / self.LOG_NAME, "w", newline="")
            log_writer = csv.writer(log_file)
            log_writer.writerow(LOG_COLUMNS)

        try:
            while self.state.step < total:
                step = self.state.step
                lr = self.state.lr
                parts = self.step()
                if log_writer is not None:
                    log_writer.writerow(
                        [step, f"{lr:.8g}"]
                        + [f"{v:.8g}" for v in (parts.mse, parts.tv, parts.sst, parts.ts, parts.time_smooth, parts.total)]
                    )
                done = step + 1
                if done % self.train_config.log_every == 0 or done == 1:
                    logger.info(
                        f"Step {done}/{total}: loss={parts.total:.6f} mse={parts.mse:.6f} lr={lr:.2e} "
                        f"({self.stats.avg_step_time_ms:.1f} ms/step)"
                    )
                if self.output_dir is not None and (done % self.train_config.val_every == 0 or done == total):
                    self.validate(done)
        finally:
            if log_file is not None:
                log_file.close()

        self.stats.peak_rss_mb = psutil.Process().memory_info().rss / (1024 * 1024)
        logger.info(f"Training finished: {self.stats.to_dict()}")
        if self.output_dir is not None:
            self.save(self.output_dir / self.CHECKPOINT_NAME)
            self._write_metrics()
        return self.stats

    def validate(self, step: int) -> Optional[float]:
        """Render the first held-out frame, save it as PNG and record its PSNR"""
        frames = self.dataset.split("val") or self.dataset.split("test")
        if not frames:
            return None
        frame = frames[0]
        image, _ = render_image(
            self.field,
            None,
            self.decoder,
            self.dataset.camera(frame),
            frame.time,
            self.settings,
            workers=self.workers,
        )
        value = psnr(image, frame.rgb)
        self.stats.last_val_psnr = value
        self._psnr_gauge.set(value)
        if self.output_dir is not None:
            write_image(self.output_dir / f"val_{step:06d}.png", image)
            self._write_metrics()
        logger.info(f"Validation at step {step}: PSNR {value:.2f} dB")
        return value

    def save(self, path: Path) -> Path:
        save_checkpoint(path, self.field, self.decoder, self.settings)
        logger.info(f"Checkpoint written to {path}")
        return path

    def _write_metrics(self) -> None:
        write_to_textfile(str(self.output_dir / self.METRICS_NAME), self.registry)
