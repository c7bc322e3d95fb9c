"""Undersampling mask generation for Cartesian k-space.

Masks are binary (H, W) grids over (ky, kx) with 1 marking an acquired
location. The acceleration factor R is the target ratio of total to
acquired samples; every pattern holds the achieved sampling fraction f
to |f - 1/R| <= 0.15/R. The density-controlled patterns meet the bound
by construction or calibration; radial masks calibrate their spoke
count against the rasterized fraction (a fixed analytic count would
overshoot, because spokes share many pixels near the center).

Each generator forces a fully sampled autocalibration (ACS) region at
the k-space center: `acs` center columns for the 1D patterns, an
acs x acs center block for 2D Poisson. Radial spokes all cross the
center, so the radial generator takes no ACS argument.

All generators are pure functions of their arguments; `seed` feeds a
dedicated numpy Generator where randomness is involved.
"""

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .formats import (
    BadMagicError,
    FileFormatError,
    TruncatedFileError,
    VersionMismatchError,
)

PATTERNS = ("uniform1d", "random1d", "poisson2d", "radial2d")

# Patterns whose ACS region is a block of full phase-encode columns.
COLUMN_PATTERNS = ("uniform1d", "random1d")

# Angle increment used to derive the radial start angle from the seed.
GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))

MASK_MAGIC = "PMRIMASK"
MASK_VERSION = "v1"


@dataclass
class SamplingMask:
    """A binary k-space sampling pattern plus its generation parameters."""

    bits: np.ndarray  # uint8, shape (H, W), values in {0, 1}
    pattern: str
    target_acceleration: float
    acs: int
    seed: int

    @property
    def shape(self):
        return self.bits.shape


@dataclass
class MaskStats:
    fraction: float
    achieved_r: float
    acs_intact: bool


def _check_args(height: int, width: int, accel: float, acs: int) -> None:
    if height < 1 or width < 1:
        raise ValueError(f"mask shape must be positive, got {height}x{width}")
    if accel < 1:
        raise ValueError(f"acceleration factor must be >= 1, got {accel}")
    if not 0 <= acs <= width:
        raise ValueError(f"acs={acs} outside [0, {width}]")


def _acs_span(size: int, acs: int) -> slice:
    start = (size - acs) // 2
    return slice(start, start + acs)


def _acs_region(mask: SamplingMask):
    height, width = mask.bits.shape
    cols = _acs_span(width, mask.acs)
    if mask.pattern in COLUMN_PATTERNS:
        return (slice(None), cols)
    return (_acs_span(height, mask.acs), cols)


def gen_uniform_1d(height, width, accel, acs, seed=0) -> SamplingMask:
    """Every accel-th phase-encode column plus the ACS center block.

    Columns sit at round(center + k*accel), anchored at the k-space
    center so non-integer factors stay symmetric. `seed` is accepted for
    interface uniformity and never used.
    """
    _check_args(height, width, accel, acs)
    center = width // 2
    ks = np.arange(-int(center / accel) - 1, int((width - center) / accel) + 2)
    cols = np.rint(center + ks * accel).astype(int)
    cols = cols[(cols >= 0) & (cols < width)]
    bits = np.zeros((height, width), dtype=np.uint8)
    bits[:, cols] = 1
    bits[:, _acs_span(width, acs)] = 1
    return SamplingMask(bits, "uniform1d", float(accel), int(acs), int(seed))


def gen_random_1d(height, width, accel, acs, seed, density_power=3.0) -> SamplingMask:
    """Variable-density random column selection.

    Exactly ceil(width/accel) columns are sampled: the ACS center block
    plus draws without replacement from the remaining columns, weighted
    by (1 - d)^density_power with d the normalized distance from the
    center column. Reproducible per (height, width, accel, acs, seed).
    """
    _check_args(height, width, accel, acs)
    total = math.ceil(width / accel)
    extra = total - acs
    if extra < 0:
        raise ValueError(
            f"column budget ceil({width}/{accel}) = {total} cannot cover acs={acs}")
    acs_cols = _acs_span(width, acs)
    candidates = np.setdiff1d(
        np.arange(width), np.arange(acs_cols.start, acs_cols.stop))
    bits = np.zeros((height, width), dtype=np.uint8)
    bits[:, acs_cols] = 1
    if extra > 0:
        center = (width - 1) / 2.0
        # Distance normalized by (max distance + 1) keeps every weight
        # strictly positive, so any budget up to all columns is feasible.
        dist = np.abs(candidates - center) / (center + 1.0)
        weights = (1.0 - dist) ** density_power
        rng = np.random.default_rng(seed % (1 << 64))
        chosen = rng.choice(candidates, size=extra, replace=False,
                            p=weights / weights.sum())
        bits[:, chosen] = 1
    return SamplingMask(bits, "random1d", float(accel), int(acs), int(seed))


def _poisson_radius_grid(height, width, scale) -> np.ndarray:
    """Minimum-distance radius per grid point: `scale` at the k-space
    center growing linearly to 3*scale at the farthest corner."""
    cy, cx = height // 2, width // 2
    ys = np.arange(height)[:, None] - cy
    xs = np.arange(width)[None, :] - cx
    dist = np.hypot(ys, xs)
    far = max(dist[0, 0], dist[0, -1], dist[-1, 0], dist[-1, -1])
    return scale * (1.0 + 2.0 * dist / far)


def _throw_darts(height, width, scale, rng) -> np.ndarray:
    """Dart-throwing pass over the integer grid in random order.

    A candidate is kept when every already-kept point q satisfies
    dist(candidate, q) >= min(r(candidate), r(q)) with r from
    _poisson_radius_grid. Returns the kept points as a uint8 grid.
    """
    radius = _poisson_radius_grid(height, width, scale)
    kept = np.zeros((height, width), dtype=bool)
    order = rng.permutation(height * width)
    ys, xs = np.divmod(order, width)
    for y, x in zip(ys, xs):
        r_c = radius[y, x]
        w = int(math.ceil(r_c))
        y0, y1 = max(0, y - w), min(height, y + w + 1)
        x0, x1 = max(0, x - w), min(width, x + w + 1)
        window = kept[y0:y1, x0:x1]
        if window.any():
            ny, nx = np.nonzero(window)
            ny = ny + y0
            nx = nx + x0
            d2 = (ny - y) ** 2 + (nx - x) ** 2
            r_min = np.minimum(r_c, radius[ny, nx])
            if np.any(d2 < r_min * r_min):
                continue
        kept[y, x] = True
    return kept.astype(np.uint8)


def _calibrate_poisson(height, width, accel, acs, seed, max_bisect):
    """Bisection on the disc radius scale; returns (bits, scale).

    Fraction decreases as the scale grows, so lo/hi bracket the scale
    from the too-dense and too-sparse sides. Each trial rethrows darts
    with its own seeded generator, keeping the whole procedure a pure
    function of the arguments.
    """
    target = 1.0 / accel
    tolerance = 0.15 / accel
    acs_rows = _acs_span(height, acs)
    acs_cols = _acs_span(width, acs)
    lo = hi = None
    scale = 0.55 * math.sqrt(accel)
    fraction = 1.0
    for trial in range(max_bisect):
        rng = np.random.default_rng((seed % (1 << 64), trial))
        bits = _throw_darts(height, width, scale, rng)
        bits[acs_rows, acs_cols] = 1
        fraction = float(bits.mean())
        if abs(fraction - target) <= tolerance:
            return bits, scale
        if fraction > target:
            lo = scale
        else:
            hi = scale
        if hi is None:
            scale = lo * 2.0
        elif lo is None:
            scale = hi / 2.0
        else:
            scale = 0.5 * (lo + hi)
    raise RuntimeError(
        f"poisson calibration failed after {max_bisect} trials: achieved "
        f"fraction {fraction:.4f}, target {target:.4f} +- {tolerance:.4f}")


def gen_poisson_2d(height, width, accel, acs, seed, max_bisect=50) -> SamplingMask:
    """Variable-density Poisson-disc mask calibrated to the target rate.

    The disc radius scale is calibrated by bisection until the overall
    sampling fraction (ACS block included) lands within 0.15/accel of
    1/accel; the ACS center block is forced after dart throwing.
    """
    _check_args(height, width, accel, acs)
    if acs > min(height, width):
        raise ValueError(f"acs={acs} exceeds min side {min(height, width)}")
    if accel == 1:
        # Disc radius zero: every location kept.
        bits = np.ones((height, width), dtype=np.uint8)
        return SamplingMask(bits, "poisson2d", 1.0, int(acs), int(seed))
    bits, _ = _calibrate_poisson(height, width, accel, acs, seed, max_bisect)
    return SamplingMask(bits, "poisson2d", float(accel), int(acs), int(seed))


def _rasterize_spokes(height, width, spokes, theta0) -> np.ndarray:
    """Rasterize `spokes` equally-angled lines through the k-space center.

    Each spoke is walked in half-pixel steps from the center in both
    directions, rounding to the nearest grid point (duplicates
    collapse). Returns the sampled locations as a uint8 grid.
    """
    cy, cx = height // 2, width // 2
    half_steps = int(math.ceil(2.0 * math.hypot(height, width)))
    steps = 0.5 * np.arange(-half_steps, half_steps + 1)
    bits = np.zeros((height, width), dtype=np.uint8)
    for i in range(spokes):
        theta = theta0 + i * math.pi / spokes
        ys = np.rint(cy + steps * math.sin(theta)).astype(int)
        xs = np.rint(cx + steps * math.cos(theta)).astype(int)
        keep = (ys >= 0) & (ys < height) & (xs >= 0) & (xs < width)
        bits[ys[keep], xs[keep]] = 1
    return bits


@lru_cache(maxsize=None)
def radial_spoke_count(height, width, accel) -> int:
    """Spoke count whose rasterized fraction best approximates 1/accel.

    The analytic estimate round(height*pi/(2*accel)) counts spokes by
    peripheral arc spacing and ignores pixel sharing near the center,
    which inflates the fraction by well over the tolerance. Instead the
    count is calibrated against the actual rasterization: the fraction
    grows with the spoke count, so an exponential bracket plus bisection
    finds the crossing of 1/accel, and a local scan settles rounding
    wobble from the angle set changing with the count. Calibration runs
    at a fixed zero offset, keeping the count independent of the seed.
    Clamped below at one spoke, the sparsest radial mask there is.
    """
    estimate = int(round(height * math.pi / (2.0 * accel)))
    if estimate < 1:
        raise ValueError(
            f"acceleration {accel} too high for height {height}: spoke count 0")
    target = 1.0 / accel

    def fraction(count):
        return float(_rasterize_spokes(height, width, count, 0.0).mean())

    hi = max(1, estimate)
    cap = 8 * (height + width)
    while fraction(hi) < target and hi < cap:
        hi = min(2 * hi, cap)
    if fraction(hi) < target - 0.15 * target:
        raise RuntimeError(
            f"radial calibration failed: {hi} spokes reach fraction "
            f"{fraction(hi):.4f}, target {target:.4f}")
    lo = 1
    while lo < hi:
        mid = (lo + hi) // 2
        if fraction(mid) >= target:
            hi = mid
        else:
            lo = mid + 1
    candidates = range(max(1, lo - 2), lo + 3)
    return min(candidates, key=lambda count: abs(fraction(count) - target))


def gen_radial_2d(height, width, accel, seed) -> SamplingMask:
    """Equally-angled spokes rasterized through the k-space center.

    The spoke count comes from radial_spoke_count, so the sampled
    fraction tracks 1/accel; the common angular offset advances by the
    golden angle per seed without changing the count.
    """
    _check_args(height, width, accel, 0)
    spokes = radial_spoke_count(height, width, accel)
    theta0 = (seed * GOLDEN_ANGLE) % math.pi
    bits = _rasterize_spokes(height, width, spokes, theta0)
    return SamplingMask(bits, "radial2d", float(accel), 0, int(seed))


def mask_stats(mask: SamplingMask) -> MaskStats:
    """Sampling fraction, realized acceleration, and ACS integrity."""
    ones = int(mask.bits.sum())
    if ones == 0:
        raise ValueError("mask has no sampled locations")
    height, width = mask.bits.shape
    fraction = ones / (height * width)
    intact = bool(np.all(mask.bits[_acs_region(mask)] == 1))
    return MaskStats(fraction, 1.0 / fraction, intact)


def save_mask(mask: SamplingMask, path) -> None:
    """Write the ASCII PMRIMASK container (bit-exact roundtrip)."""
    height, width = mask.bits.shape
    header = (f"{MASK_MAGIC} {MASK_VERSION} {height} {width} {mask.pattern} "
              f"{mask.target_acceleration!r} {mask.acs} {mask.seed}\n")
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        for row in np.asarray(mask.bits, dtype=np.uint8):
            f.write((row + ord("0")).tobytes())
            f.write(b"\n")


def load_mask(path) -> SamplingMask:
    """Read a PMRIMASK file written by save_mask."""
    with open(path, "rb") as f:
        fields = f.readline().decode("ascii", errors="replace").split()
        if not fields or fields[0] != MASK_MAGIC:
            raise BadMagicError(f"{path}: not a PMRIMASK file")
        if len(fields) < 2 or fields[1] != MASK_VERSION:
            raise VersionMismatchError(f"{path}: unsupported mask version")
        if len(fields) != 8:
            raise FileFormatError(f"{path}: malformed header ({len(fields)} fields)")
        pattern = fields[4]
        if pattern not in PATTERNS:
            raise FileFormatError(f"{path}: unknown pattern {pattern!r}")
        try:
            height, width = int(fields[2]), int(fields[3])
            accel = float(fields[5])
            acs, seed = int(fields[6]), int(fields[7])
        except ValueError as exc:
            raise FileFormatError(f"{path}: malformed header numbers") from exc
        bits = np.empty((height, width), dtype=np.uint8)
        for i in range(height):
            row = f.readline()
            if len(row) < width + 1:
                raise TruncatedFileError(f"{path}: mask row {i} incomplete")
            values = np.frombuffer(row[:width], dtype=np.uint8) - ord("0")
            if np.any(values > 1):
                raise FileFormatError(f"{path}: row {i} has characters outside 0/1")
            bits[i] = values
    return SamplingMask(bits, pattern, accel, acs, seed)
