"""Hybrid convolution/Swin unrolled network for multi-coil MRI reconstruction."""

from .config import RunConfig, load_config, preset
from .metrics import nmse, psnr, ssim, ssim_loss
from .mri import adjoint_model, fft2c, forward_model, ifft2c, make_mask
from .unrolled import HumusNet

__all__ = [
    "HumusNet",
    "RunConfig",
    "adjoint_model",
    "fft2c",
    "forward_model",
    "ifft2c",
    "load_config",
    "make_mask",
    "nmse",
    "preset",
    "psnr",
    "ssim",
    "ssim_loss",
]
__version__ = "0.1.0"
