"""Sinogram denoising with a conditional GAN, plus projector, OSEM and metrics."""

from ._core import (
    ConfigError,
    DimensionError,
    FormatError,
    GanModel,
    IoError,
    StageError,
    TrainConfig,
    TrainingDiverged,
    add_poisson_noise,
    back_project,
    default_config,
    evaluate,
    forward_project,
    gen_data,
    mape,
    mse,
    osem,
    psnr,
    psnr_from_mse,
    random_phantom,
    read_image,
    read_sinogram,
    reproduce,
    shepp_logan,
    ssim,
    write_image,
    write_sinogram,
)

__version__ = "0.1.0"
