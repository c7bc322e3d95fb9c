"""Complex multi-coil array helpers and centered orthonormal Fourier transforms.

All multi-coil quantities are complex ndarrays of shape (J, H, W): coil,
row, column. K-space arrays use the centered convention with the DC
component at index (H//2, W//2). Transforms are unitary (norm="ortho"),
so Parseval holds exactly and the masked normal operator stays diagonal
with 0/1 entries in k-space.
"""

import numpy as np


def validate_stack(data: np.ndarray, name: str = "stack") -> np.ndarray:
    """Check the (J, H, W) complex-stack contract and return the array.

    Raises ValueError on wrong rank, empty/degenerate axes, or non-finite
    entries.
    """
    arr = np.asarray(data)
    if arr.ndim != 3:
        raise ValueError(f"{name}: expected 3 axes (coil, row, col), got shape {arr.shape}")
    j, h, w = arr.shape
    if j < 1 or h < 2 or w < 2:
        raise ValueError(f"{name}: invalid shape {arr.shape}; need J >= 1, H >= 2, W >= 2")
    if not np.iscomplexobj(arr):
        arr = arr.astype(np.complex128)
    if not np.all(np.isfinite(arr.real)) or not np.all(np.isfinite(arr.imag)):
        raise ValueError(f"{name}: contains non-finite entries")
    return arr


def fft2_centered(img: np.ndarray) -> np.ndarray:
    """Unitary 2D FFT per coil, image domain -> centered k-space.

    Input and output have shape (J, H, W); the DC coefficient lands at
    (H//2, W//2) for both even and odd sizes.
    """
    img = validate_stack(img, "image stack")
    shifted = np.fft.ifftshift(img, axes=(-2, -1))
    ksp = np.fft.fft2(shifted, axes=(-2, -1), norm="ortho")
    return np.fft.fftshift(ksp, axes=(-2, -1))


def ifft2_centered(ksp: np.ndarray) -> np.ndarray:
    """Unitary 2D inverse FFT per coil, centered k-space -> image domain.

    Exact inverse of fft2_centered up to double-precision rounding.
    """
    ksp = validate_stack(ksp, "k-space stack")
    shifted = np.fft.ifftshift(ksp, axes=(-2, -1))
    img = np.fft.ifft2(shifted, axes=(-2, -1), norm="ortho")
    return np.fft.fftshift(img, axes=(-2, -1))


def rss_combine(img: np.ndarray) -> np.ndarray:
    """Root-sum-of-squares coil combination, (J, H, W) -> real (H, W)."""
    img = validate_stack(img, "image stack")
    return np.sqrt(np.sum(np.abs(img) ** 2, axis=0))


def apply_mask(ksp: np.ndarray, mask_bits: np.ndarray) -> np.ndarray:
    """Zero out unsampled k-space locations; the same mask hits every coil.

    mask_bits is an (H, W) 0/1 array. Idempotent and self-adjoint.
    """
    ksp = validate_stack(ksp, "k-space stack")
    bits = np.asarray(mask_bits)
    if bits.shape != ksp.shape[1:]:
        raise ValueError(
            f"mask shape {bits.shape} does not match k-space spatial shape {ksp.shape[1:]}"
        )
    return ksp * bits[None, :, :]


def zero_filled(ksp: np.ndarray, mask_bits: np.ndarray) -> np.ndarray:
    """Zero-filled reconstruction: inverse transform of the masked k-space."""
    return ifft2_centered(apply_mask(ksp, mask_bits))
