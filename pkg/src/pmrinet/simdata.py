"""Synthetic multi-coil data generation and the PMRD dataset container.

In-vivo multi-coil data is replaced by Shepp-Logan phantom variants seen
through synthetic coil sensitivities. A record pairs the ground-truth
coil images X_j = s_j * phantom with their fully sampled k-space F X and
the undersampled acquisition Y = M F X (+ optional complex white noise
at the sampled locations).

Sensitivities are normalized so sum_j |s_j|^2 = 1 at every pixel, which
makes the root-sum-of-squares combination of the coil images reproduce
the phantom exactly; the phantom itself lives in [0, 1], so image values
stay inside the nonlinearity's calibrated [-1, 1] knot range.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import formats
from .numerics import apply_mask, fft2_centered
from .sampling import SamplingMask

DATASET_MAGIC = b"PMRD"
DATASET_VERSION = 1

# Modified Shepp-Logan ellipses: (value, a, b, x0, y0, phi_deg) with
# semi-axes a (x) and b (y) on the [-1, 1] square, rotation counterclockwise.
SHEPP_LOGAN_ELLIPSES = (
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.8740, 0.0, -0.0184, 0.0),
    (-0.2, 0.1100, 0.3100, 0.22, 0.0, -18.0),
    (-0.2, 0.1600, 0.4100, -0.22, 0.0, 18.0),
    (0.1, 0.2100, 0.2500, 0.0, 0.35, 0.0),
    (0.1, 0.0460, 0.0460, 0.0, 0.1, 0.0),
    (0.1, 0.0460, 0.0460, 0.0, -0.1, 0.0),
    (0.1, 0.0460, 0.0230, -0.08, -0.605, 0.0),
    (0.1, 0.0230, 0.0230, 0.0, -0.606, 0.0),
    (0.1, 0.0230, 0.0460, 0.06, -0.605, 0.0),
)


@dataclass
class CoilSensitivitySet:
    """Complex coil sensitivity maps plus the geometry that built them."""

    maps: np.ndarray  # (J, H, W) complex, sum_j |s_j|^2 = 1 pointwise
    angles: np.ndarray  # (J,) coil-center angles in radians
    sigma: float  # Gaussian magnitude scale in pixels


@dataclass
class SampleRecord:
    """One simulated acquisition: truth, full k-space, undersampled k-space."""

    coil_images: np.ndarray
    full_kspace: np.ndarray
    undersampled_kspace: np.ndarray
    mask_id: int = 0


def shepp_logan(height: int, width: int, variant_seed: int = 0) -> np.ndarray:
    """Shepp-Logan phantom on [-1, 1]^2, intensities clipped to [0, 1].

    variant_seed = 0 gives the canonical 10-ellipse phantom. Any other
    seed jitters each ellipse by up to 5%: centers by +-0.05, semi-axes
    by a factor in [0.95, 1.05], angles by +-9 degrees. Deterministic
    per seed.
    """
    if height < 16 or width < 16:
        raise ValueError(f"phantom size must be at least 16, got {height}x{width}")
    ellipses = SHEPP_LOGAN_ELLIPSES
    if variant_seed != 0:
        rng = np.random.default_rng(variant_seed % (1 << 64))
        jittered = []
        for value, a, b, x0, y0, phi in ellipses:
            x0 = x0 + rng.uniform(-0.05, 0.05)
            y0 = y0 + rng.uniform(-0.05, 0.05)
            a = a * (1.0 + rng.uniform(-0.05, 0.05))
            b = b * (1.0 + rng.uniform(-0.05, 0.05))
            phi = phi + rng.uniform(-9.0, 9.0)
            jittered.append((value, a, b, x0, y0, phi))
        ellipses = jittered
    ys = np.linspace(-1.0, 1.0, height)[:, None]
    xs = np.linspace(-1.0, 1.0, width)[None, :]
    img = np.zeros((height, width))
    for value, a, b, x0, y0, phi in ellipses:
        rad = math.radians(phi)
        dx = xs - x0
        dy = ys - y0
        u = (dx * math.cos(rad) + dy * math.sin(rad)) / a
        v = (-dx * math.sin(rad) + dy * math.cos(rad)) / b
        img[u * u + v * v <= 1.0] += value
    return np.clip(img, 0.0, 1.0)


def _coil_centers(coils: int, height: int, width: int):
    """Pixel coordinates of the coil centers on the placement circle."""
    angles = 2.0 * math.pi * np.arange(coils) / coils
    radius = 0.55 * min(height, width) / 2.0
    cy, cx = (height - 1) / 2.0, (width - 1) / 2.0
    return angles, cy + radius * np.sin(angles), cx + radius * np.cos(angles)


def synth_sensitivities(coils: int, height: int, width: int,
                        sigma: float | None = None) -> CoilSensitivitySet:
    """Smooth complex coil maps with pointwise sum |s_j|^2 = 1.

    Coil j sits at angle 2*pi*j/coils on a circle of radius
    0.55*min(height, width)/2 around the image center. Its magnitude is
    a Gaussian of scale `sigma` pixels about the coil center and its
    phase ramps linearly along the center-to-coil direction with slope
    1/(2*sigma) radians per pixel, then the set is normalized by the
    root sum of squares.
    """
    if coils < 1:
        raise ValueError(f"need at least one coil, got {coils}")
    if sigma is None:
        sigma = 0.375 * min(height, width)
    angles, coil_ys, coil_xs = _coil_centers(coils, height, width)
    cy, cx = (height - 1) / 2.0, (width - 1) / 2.0
    ys = np.arange(height)[:, None] - cy
    xs = np.arange(width)[None, :] - cx
    slope = 1.0 / (2.0 * sigma)
    maps = np.empty((coils, height, width), dtype=np.complex128)
    for j in range(coils):
        dy = ys - (coil_ys[j] - cy)
        dx = xs - (coil_xs[j] - cx)
        magnitude = np.exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma))
        phase = slope * (ys * math.sin(angles[j]) + xs * math.cos(angles[j]))
        maps[j] = magnitude * np.exp(1j * phase)
    sos = np.sqrt(np.sum(np.abs(maps) ** 2, axis=0))
    maps /= sos[None, :, :]
    return CoilSensitivitySet(maps, angles, float(sigma))


def make_sample(phantom: np.ndarray, sens: CoilSensitivitySet,
                mask: SamplingMask, noise_std: float = 0.0, seed: int = 0,
                mask_id: int = 0) -> SampleRecord:
    """Simulate one acquisition of `phantom` through `sens` under `mask`.

    Noise, when requested, is complex white Gaussian with standard
    deviation noise_std per real component, added at the sampled
    k-space locations only.
    """
    if phantom.shape != sens.maps.shape[1:]:
        raise ValueError(
            f"phantom shape {phantom.shape} does not match coil maps "
            f"{sens.maps.shape[1:]}")
    if mask.bits.shape != phantom.shape:
        raise ValueError(
            f"mask shape {mask.bits.shape} does not match phantom {phantom.shape}")
    coil_images = sens.maps * phantom[None, :, :]
    full_kspace = fft2_centered(coil_images)
    undersampled = apply_mask(full_kspace, mask.bits)
    if noise_std > 0.0:
        rng = np.random.default_rng(seed % (1 << 64))
        noise = rng.normal(0.0, noise_std, undersampled.shape) \
            + 1j * rng.normal(0.0, noise_std, undersampled.shape)
        undersampled = undersampled + noise * mask.bits[None, :, :]
    return SampleRecord(coil_images, full_kspace, undersampled, int(mask_id))


def simulate_dataset(count: int, coils: int, height: int, width: int,
                     mask: SamplingMask, noise_std: float = 0.0,
                     seed: int = 0, sigma: float | None = None):
    """`count` records of jittered phantom variants through one coil array.

    Record i uses phantom variant (seed << 20) + i + 1, so different
    seeds give disjoint phantom populations and no record is canonical.
    """
    if count < 1:
        raise ValueError(f"record count must be positive, got {count}")
    sens = synth_sensitivities(coils, height, width, sigma)
    records = []
    for i in range(count):
        variant = ((seed % (1 << 40)) << 20) + i + 1
        phantom = shepp_logan(height, width, variant)
        records.append(make_sample(phantom, sens, mask, noise_std,
                                   seed=2 * variant + 1, mask_id=0))
    return records


def write_dataset(records, path) -> None:
    """Write records to the binary little-endian PMRD container.

    Arrays are stored as complex64; a record that was generated in
    double precision therefore comes back as its complex64 cast.
    """
    if not records:
        raise ValueError("cannot write an empty dataset")
    shape = records[0].coil_images.shape
    for i, rec in enumerate(records):
        for field in ("coil_images", "full_kspace", "undersampled_kspace"):
            if getattr(rec, field).shape != shape:
                raise ValueError(f"record {i} field {field} shape mismatch")
    coils, height, width = shape
    with open(path, "wb") as f:
        f.write(DATASET_MAGIC)
        formats.write_u32(f, DATASET_VERSION)
        formats.write_u32(f, len(records))
        formats.write_u32(f, coils)
        formats.write_u32(f, height)
        formats.write_u32(f, width)
        for rec in records:
            formats.write_c64_array(f, rec.coil_images)
            formats.write_c64_array(f, rec.full_kspace)
            formats.write_c64_array(f, rec.undersampled_kspace)
            formats.write_u32(f, rec.mask_id)


def read_dataset(path):
    """Read a PMRD container back into a list of SampleRecords."""
    with open(path, "rb") as f:
        formats.expect_magic(f, DATASET_MAGIC, str(path))
        formats.expect_version(f, DATASET_VERSION, str(path))
        count = formats.read_u32(f, "record count")
        coils = formats.read_u32(f, "coil count")
        height = formats.read_u32(f, "height")
        width = formats.read_u32(f, "width")
        shape = (coils, height, width)
        records = []
        for i in range(count):
            what = f"record {i}"
            coil_images = formats.read_c64_array(f, shape, what + " coil images")
            full = formats.read_c64_array(f, shape, what + " full k-space")
            under = formats.read_c64_array(f, shape, what + " undersampled k-space")
            mask_id = formats.read_u32(f, what + " mask id")
            records.append(SampleRecord(coil_images, full, under, mask_id))
    return records
