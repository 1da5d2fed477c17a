"""BM3D denoising toolkit with per-image prediction of the hard-threshold
multiplier: reference denoiser, grid-sweep labeling, a small regression CNN,
and an evaluation harness."""

from .imagecore import (
    MetricTriple,
    NoiseSpec,
    PgmError,
    add_awgn,
    load_image,
    metric_triple,
    mse,
    psnr,
    save_image,
    ssim,
)
from .bm3d import Bm3dProfile, denoise
from .sweep import LambdaGrid, SweepResult, generate_dataset, sweep_lambdas
from .cnn import CnnModel, TrainConfig, load_model, predict, save_model, train, xavier_init

__version__ = "0.1.0"

__all__ = [
    "MetricTriple",
    "NoiseSpec",
    "PgmError",
    "add_awgn",
    "load_image",
    "metric_triple",
    "mse",
    "psnr",
    "save_image",
    "ssim",
    "Bm3dProfile",
    "denoise",
    "LambdaGrid",
    "SweepResult",
    "generate_dataset",
    "sweep_lambdas",
    "CnnModel",
    "TrainConfig",
    "load_model",
    "predict",
    "save_model",
    "train",
    "xavier_init",
    "__version__",
]
