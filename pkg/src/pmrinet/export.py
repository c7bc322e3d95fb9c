"""8-bit grayscale image export for reconstructions and error maps.

Magnitude images are min-max normalized per image; error maps show
|est - ref| divided by one shared scale (the peak reference magnitude
across the exported set) and multiplied by an amplification factor, so
error levels stay comparable between images. PGM output is binary P5;
PNG output is single-channel 8-bit.
"""

from pathlib import Path

import numpy as np
from PIL import Image

from .formats import FileFormatError

DEFAULT_AMPLIFY = 5.0


def to_gray8(image: np.ndarray) -> np.ndarray:
    """Min-max normalize a real 2D image to uint8 [0, 255].

    A constant image maps to all zeros.
    """
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2D image, got shape {arr.shape}")
    lo = float(arr.min())
    hi = float(arr.max())
    if hi <= lo:
        return np.zeros(arr.shape, dtype=np.uint8)
    scaled = (arr - lo) / (hi - lo) * 255.0
    return np.rint(scaled).astype(np.uint8)


def error_map_gray8(est: np.ndarray, ref: np.ndarray, scale: float,
                    amplify: float = DEFAULT_AMPLIFY) -> np.ndarray:
    """Amplified absolute-difference image on a fixed scale.

    Pixel value is clip(amplify * |est - ref| / scale) * 255; `scale`
    must be shared across a set of exports for the maps to be
    comparable.
    """
    if est.shape != ref.shape:
        raise ValueError(f"shape mismatch: estimate {est.shape}, "
                         f"reference {ref.shape}")
    if scale <= 0.0:
        raise ValueError(f"error-map scale must be positive, got {scale}")
    err = np.abs(np.asarray(est, float) - np.asarray(ref, float))
    frac = np.clip(err * (amplify / scale), 0.0, 1.0)
    return np.rint(frac * 255.0).astype(np.uint8)


def write_pgm(image: np.ndarray, path) -> None:
    """Write a uint8 image as binary PGM (magic P5, maxval 255)."""
    arr = np.ascontiguousarray(image, dtype=np.uint8)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2D image, got shape {arr.shape}")
    h, w = arr.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(arr.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a binary P5 PGM written by write_pgm."""
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic != b"P5":
            raise FileFormatError(f"{path}: not a binary PGM (magic {magic!r})")
        dims = f.readline().split()
        maxval = int(f.readline())
        if len(dims) != 2 or maxval != 255:
            raise FileFormatError(f"{path}: unsupported PGM header")
        w, h = int(dims[0]), int(dims[1])
        payload = f.read(w * h)
    if len(payload) != w * h:
        raise FileFormatError(f"{path}: truncated PGM payload")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w)


def write_png(image: np.ndarray, path) -> None:
    """Write a uint8 image as single-channel grayscale PNG."""
    arr = np.ascontiguousarray(image, dtype=np.uint8)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2D image, got shape {arr.shape}")
    Image.fromarray(arr, mode="L").save(path)


_WRITERS = {"png": (write_png, ".png"), "pgm": (write_pgm, ".pgm")}


def export_images(estimates, references, directory, fmt: str = "png",
                  amplify: float = DEFAULT_AMPLIFY,
                  include_reference: bool = False) -> list:
    """Write magnitude and error-map images for paired real 2D images.

    Produces est_###/err_### (and optionally ref_###) files in
    `directory` and returns the written paths. The error-map scale is
    the peak reference magnitude over the whole set.
    """
    if len(estimates) != len(references):
        raise ValueError(f"count mismatch: {len(estimates)} estimates, "
                         f"{len(references)} references")
    if not estimates:
        raise ValueError("nothing to export")
    if fmt not in _WRITERS:
        raise ValueError(f"unknown image format {fmt!r}; choose png or pgm")
    writer, suffix = _WRITERS[fmt]
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    scale = max(float(np.max(np.abs(r))) for r in references)
    if scale <= 0.0:
        raise ValueError("all reference images are zero")
    written = []
    for i, (est, ref) in enumerate(zip(estimates, references)):
        pairs = [(directory / f"est_{i:03d}{suffix}", to_gray8(est)),
                 (directory / f"err_{i:03d}{suffix}",
                  error_map_gray8(est, ref, scale, amplify))]
        if include_reference:
            pairs.append((directory / f"ref_{i:03d}{suffix}", to_gray8(ref)))
        for path, img in pairs:
            writer(img, path)
            written.append(path)
    return written
