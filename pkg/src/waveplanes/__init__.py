"""
WavePlanes - Compact Dynamic Radiance Fields on Wavelet Feature Planes

Represents a time-varying scene as six 2-D feature planes (three spatial, three
space-time), each stored as a multi-level wavelet coefficient pyramid. Sparse
thresholded coefficients compress into small model files.

Key Features:
- Periodized multi-level DWT/IDWT with exact adjoints (haar, db2, ...)
- Hadamard, zero-agreement masked multiplication and addition feature fusion
- Color-basis decoder with stratified ray marching and alpha compositing
- Tape-based reverse-mode gradients with Adam and warmup + cosine schedule
- Hard-threshold sparse codec with raw/gzip/bzip2/lzma backends
- D-NeRF loader, analytic moving-blob scenes and foreground/background PSNR

Architecture:
- wavelets: filter banks, coefficient pyramids, transforms
- field: planes, reconstruction cache, projection, sampling, fusion
- decoder / render: radiance decoder, cameras, rays, compositing
- optim / regularizers / autodiff: loss, gradients, training loop
- codec: thresholding, sparse maps, containers, checkpoints
- data: datasets, synthetic scenes, metrics, evaluation
- cli: command-line entry points

Version: 1.0.0
"""

__version__ = "1.0.0"

# Module exports
from .codec import compress_model, decompress_model, load_model, save_checkpoint
from .config import ModelConfig, RunConfig, RunConfigManager
from .data import evaluate, gen_synthetic, load_dnerf, psnr
from .decoder import ColorBasisDecoder
from .errors import WavePlanesError
from .field import WaveletField, refresh_cache, sample_field
from .optim import Trainer, train_step
from .render import Camera, render_image
from .wavelets import CoefficientPyramid, dwt2, idwt2

__all__ = [
    "Camera",
    "CoefficientPyramid",
    "ColorBasisDecoder",
    "ModelConfig",
    "RunConfig",
    "RunConfigManager",
    "Trainer",
    "WavePlanesError",
    "WaveletField",
    "compress_model",
    "decompress_model",
    "dwt2",
    "evaluate",
    "gen_synthetic",
    "idwt2",
    "load_dnerf",
    "load_model",
    "psnr",
    "refresh_cache",
    "render_image",
    "sample_field",
    "save_checkpoint",
    "train_step",
]
