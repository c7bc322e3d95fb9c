"""Trainable unrolled split-Bregman de-aliasing network for parallel MRI.

Library layout:

- numerics: complex multi-coil stacks, centered unitary FFTs, masking
- sampling: the four undersampling mask generators + PMRIMASK file format
- simdata: phantom / coil-sensitivity simulation + PMRD dataset format
- network: the unrolled network, forward and hand-derived backward + PMNW format
- training: MSE loss, SGD loop, checkpointing, validation
- metrics: NMSE / PSNR / SSIM on RSS-combined images
- gradcheck: finite-difference verification of every parameter gradient
- cli: command-line front end (see `pmrinet --help`)
"""

__version__ = "0.1.0"

from .numerics import (
    apply_mask,
    fft2_centered,
    ifft2_centered,
    rss_combine,
    zero_filled,
)

__all__ = [
    "apply_mask",
    "fft2_centered",
    "ifft2_centered",
    "rss_combine",
    "zero_filled",
    "__version__",
]
