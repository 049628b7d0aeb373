"""ASL perfusion kinetics, reference fitting, image metrics and the full pipeline."""

from ._core import (
    AslperfError,
    ConfigError,
    Protocol,
    default_config,
    fit_voxel,
    psnr,
    read_nifti,
    run_all,
    signal_at,
    signal_curve,
    ssim,
    validate_config,
    write_nifti,
)

__all__ = [
    "AslperfError",
    "ConfigError",
    "Protocol",
    "default_config",
    "fit_voxel",
    "psnr",
    "read_nifti",
    "run_all",
    "signal_at",
    "signal_curve",
    "ssim",
    "validate_config",
    "write_nifti",
]
