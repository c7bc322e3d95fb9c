"""Unrolled split-Bregman de-aliasing network with hand-written gradients.

One outer stage expands to six layers: a closed-form k-space
data-consistency solve (recon), a bank of 3x3x3 circular convolutions
over (coil, y, x) (conv1), a learned piecewise-linear pointwise
nonlinearity, a feature-fusing convolution bank (conv2), an affine
combination (addition), and a Lagrange-multiplier update (multi). The
stage structure is

    x   = recon(y, mask, v, b, rho)
    repeat k times:
        v = mu1 * v + mu2 * (x + b) - conv2(plf(conv1(v)))
    b   = b + eta * (x - v)

started from the zero-filled reconstruction, with one extra recon after
the last stage so the returned image is data-consistent under the final
stage's rho. Every learnable parameter (rho, mu1, mu2, conv kernels and
biases, plf values, eta) is real and untied across stages and substages;
the plf knot locations are fixed and shared.

The backward pass is exact reverse-mode differentiation. Complex arrays
are treated as pairs of independent real variables; a gradient array g
packs dL/dRe + 1j * dL/dIm, so for any complex-linear map T the input
gradient is T-adjoint applied to g, and gradients of real parameters are
sums of Re(conj(g) * d(output)/d(parameter)).
"""

from dataclasses import dataclass, field

import numpy as np

from . import formats
from .numerics import fft2_centered, ifft2_centered, validate_stack, zero_filled

PARAMS_MAGIC = b"PMNW"
PARAMS_VERSION = 1

# Offset grid of the 3x3x3 kernels in C order: kernel entry [dc+1, dy+1, dx+1]
# multiplies the input sample at (coil+dc, y+dy, x+dx), circular on all axes.
_OFFSETS = [(dc, dy, dx)
            for dc in (-1, 0, 1) for dy in (-1, 0, 1) for dx in (-1, 0, 1)]


@dataclass
class FilterBank:
    """L real 3x3x3 kernels over (coil, y, x) offsets, plus L biases."""

    kernels: np.ndarray  # (L, 3, 3, 3) float64
    bias: np.ndarray  # (L,) float64

    @property
    def filters(self) -> int:
        return self.kernels.shape[0]


@dataclass
class PiecewiseLinear:
    """Pointwise map interpolating fixed knots to learned values.

    Inside [knots[0], knots[-1]] the map is linear interpolation; beyond
    either end it continues with the end segment's slope. With
    values == knots the map is the identity.
    """

    knots: np.ndarray  # (N_c,) strictly increasing, fixed
    values: np.ndarray  # (N_c,) learned


@dataclass
class SubstageParameters:
    mu1: float
    mu2: float
    conv1: FilterBank
    plf: PiecewiseLinear
    conv2: FilterBank


@dataclass
class StageParameters:
    rho: float
    eta: float
    substages: list


@dataclass
class ModelParameters:
    stages: list

    @property
    def stage_count(self) -> int:
        return len(self.stages)

    @property
    def substage_count(self) -> int:
        return len(self.stages[0].substages)

    @property
    def filters(self) -> int:
        return self.stages[0].substages[0].conv1.filters

    @property
    def knot_count(self) -> int:
        return len(self.stages[0].substages[0].plf.knots)


@dataclass
class ModelConfig:
    stages: int = 13
    substages: int = 1
    filters: int = 9
    knot_count: int = 63
    knot_min: float = -1.0
    knot_max: float = 1.0
    rho: float = 0.2
    alpha_r: float = 0.3
    eta: float = 1.8
    lambda_init: float = 0.01


# ---------------------------------------------------------------------------
# Convolution primitives. Cross-correlation form: the kernel entry at
# offset d multiplies the input shifted by +d; the adjoint is therefore
# cross-correlation with the kernel flipped along all three axes.

def _rolled_variants(stack: np.ndarray) -> np.ndarray:
    """(27, J, H, W) tensor: variant m holds stack[pos + offset_m].

    Circular on every axis (np.roll), so coil counts below 3 wrap the
    same way the naive modular-index convolution does.
    """
    out = np.empty((27,) + stack.shape, dtype=stack.dtype)
    for ic, dc in enumerate((-1, 0, 1)):
        vc = np.roll(stack, -dc, axis=0)
        for iy, dy in enumerate((-1, 0, 1)):
            vy = np.roll(vc, -dy, axis=1)
            for ix, dx in enumerate((-1, 0, 1)):
                out[ic * 9 + iy * 3 + ix] = np.roll(vy, -dx, axis=2)
    return out


def _roll_sum(weighted: np.ndarray, sign: int) -> np.ndarray:
    """Sum_m roll(weighted[m], sign * offset_m) for a (27, J, H, W) input."""
    total = np.zeros(weighted.shape[1:], dtype=weighted.dtype)
    for m, (dc, dy, dx) in enumerate(_OFFSETS):
        total += np.roll(weighted[m], (sign * dc, sign * dy, sign * dx),
                         axis=(0, 1, 2))
    return total


def conv3_forward(stack: np.ndarray, bank: FilterBank) -> np.ndarray:
    """Feature extraction: L circular 3x3x3 correlations of one stack.

    Real kernels act on the real and imaginary parts independently; each
    bias is added to both parts. Output shape (L, J, H, W).
    """
    stack = validate_stack(stack, "conv input")
    rolled = _rolled_variants(stack)
    flat = bank.kernels.reshape(bank.filters, 27) @ rolled.reshape(27, -1)
    features = flat.reshape((bank.filters,) + stack.shape)
    features += bank.bias[:, None, None, None] * (1.0 + 1.0j)
    return features


def conv3_forward_backward(g_features: np.ndarray, bank: FilterBank,
                           stack: np.ndarray, wrong_adjoint: bool = False):
    """Gradients of conv3_forward at input `stack`.

    Returns (g_stack, g_kernels, g_bias). `wrong_adjoint` is fault
    injection for the gradient checker: it rolls the input gradient the
    wrong way (equivalent to forgetting to flip the kernel) and must
    make the finite-difference check fail.
    """
    filters = bank.filters
    rolled = _rolled_variants(stack)
    g_flat = g_features.reshape(filters, -1)
    g_kernels = np.real(np.conj(g_flat) @ rolled.reshape(27, -1).T)
    g_kernels = g_kernels.reshape(filters, 3, 3, 3)
    g_bias = np.sum(g_features.real + g_features.imag, axis=(1, 2, 3))
    weighted = (bank.kernels.reshape(filters, 27).T @ g_flat)
    weighted = weighted.reshape((27,) + g_features.shape[1:])
    g_stack = _roll_sum(weighted, -1 if wrong_adjoint else 1)
    return g_stack, g_kernels, g_bias


def conv3_fuse(features: np.ndarray, bank: FilterBank) -> np.ndarray:
    """Feature fusion: per-filter correlation of feature l with kernel l,
    summed over l, plus the summed bias on both parts."""
    if features.shape[0] != bank.filters:
        raise ValueError(f"feature count {features.shape[0]} does not match "
                         f"bank with {bank.filters} filters")
    weighted = bank.kernels.reshape(bank.filters, 27).T @ features.reshape(
        bank.filters, -1)
    fused = _roll_sum(weighted.reshape((27,) + features.shape[1:]), -1)
    return fused + bank.bias.sum() * (1.0 + 1.0j)


def conv3_fuse_backward(g_fused: np.ndarray, bank: FilterBank,
                        features: np.ndarray):
    """Gradients of conv3_fuse: returns (g_features, g_kernels, g_bias)."""
    filters = bank.filters
    # rolled_rev[m] = g_fused shifted by -offset_m: _rolled_variants builds
    # the +offset variants and negation reverses the C-ordered offset list.
    rolled_rev = _rolled_variants(g_fused)[::-1]
    flat_rev = rolled_rev.reshape(27, -1)
    g_features = (bank.kernels.reshape(filters, 27) @ flat_rev).reshape(
        features.shape)
    g_kernels = np.real(features.reshape(filters, -1) @ np.conj(flat_rev).T)
    g_kernels = g_kernels.reshape(filters, 3, 3, 3)
    g_bias = np.full(filters, np.sum(g_fused.real + g_fused.imag))
    return g_features, g_kernels, g_bias


# ---------------------------------------------------------------------------
# Piecewise-linear nonlinearity, applied elementwise to both parts.

def _plf_part_forward(part: np.ndarray, plf: PiecewiseLinear):
    knots, values = plf.knots, plf.values
    idx = np.searchsorted(knots, part, side="right") - 1
    idx = np.clip(idx, 0, len(knots) - 2).astype(np.int32)
    left = knots[idx]
    width = knots[idx + 1] - left
    weight = (part - left) / width
    # Barycentric form: bit-exact at both segment endpoints (weight 0 or 1),
    # so values == knots reproduces knot inputs bit-for-bit.
    out = values[idx] * (1.0 - weight) + values[idx + 1] * weight
    return out, idx, weight


def plf_forward(features: np.ndarray, plf: PiecewiseLinear):
    """Apply the piecewise-linear map to real and imaginary parts.

    Values left of the first knot or right of the last continue the end
    segments linearly (the interpolation weight simply leaves [0, 1]).
    Returns (output, cache) with the segment indices and weights the
    backward pass needs.
    """
    out_re, idx_re, w_re = _plf_part_forward(features.real, plf)
    out_im, idx_im, w_im = _plf_part_forward(features.imag, plf)
    return out_re + 1j * out_im, (idx_re, w_re, idx_im, w_im)


def plf_backward(g_out: np.ndarray, plf: PiecewiseLinear, cache):
    """Gradients of plf_forward: returns (g_features, g_values)."""
    knots, values = plf.knots, plf.values
    segment_slopes = (values[1:] - values[:-1]) / (knots[1:] - knots[:-1])
    idx_re, w_re, idx_im, w_im = cache
    g_features = (segment_slopes[idx_re] * g_out.real
                  + 1j * (segment_slopes[idx_im] * g_out.imag))
    n = len(knots)
    g_values = np.zeros(n)
    for idx, weight, g_part in ((idx_re, w_re, g_out.real),
                                (idx_im, w_im, g_out.imag)):
        flat_idx = idx.ravel()
        g_values += np.bincount(flat_idx, ((1.0 - weight) * g_part).ravel(),
                                minlength=n)
        g_values += np.bincount(flat_idx + 1, (weight * g_part).ravel(),
                                minlength=n)
    return g_features, g_values


# ---------------------------------------------------------------------------
# Recon, addition, and multiplier layers.

def recon_layer(y: np.ndarray, mask_bits: np.ndarray, v: np.ndarray,
                b: np.ndarray, rho: float):
    """Closed-form k-space data-consistency solve.

    Minimizes 0.5 * ||M F x - y||^2 + (rho / 2) * ||x - (v - b)||^2
    elementwise in k-space: with g = F(v - b), the solution satisfies
    F(x) = g + m * (y - g) / (m + rho), which keeps F(x) bit-identical
    to g wherever the mask is zero. Returns (x, cache).
    """
    if rho <= 0:
        raise ValueError(f"rho must be positive, got {rho}")
    g = fft2_centered(v - b)
    denom = mask_bits[None, :, :] + rho
    x_hat = g + mask_bits[None, :, :] * (y - g) / denom
    return ifft2_centered(x_hat), (g, denom)


def recon_backward(g_x: np.ndarray, y: np.ndarray, mask_bits: np.ndarray,
                   rho: float, cache):
    """Gradients of recon_layer: returns (g_v, g_b, g_rho)."""
    g, denom = cache
    g_hat = fft2_centered(g_x)
    # d x_hat / d rho = -m (y - g) / denom^2, elementwise quotient rule.
    d_rho = -mask_bits[None, :, :] * (y - g) / (denom * denom)
    g_rho = float(np.sum(np.real(np.conj(g_hat) * d_rho)))
    g_g = (rho / denom) * g_hat
    g_anchor = ifft2_centered(g_g)
    return g_anchor, -g_anchor, g_rho


def addition_layer(v_prev, x, b, c2, mu1, mu2):
    """v_new = mu1 * v_prev + mu2 * (x + b) - c2."""
    return mu1 * v_prev + mu2 * (x + b) - c2


def multiplier_layer(b_prev, x, v, eta):
    """b_new = b_prev + eta * (x - v)."""
    return b_prev + eta * (x - v)


def _real_inner(g: np.ndarray, other: np.ndarray) -> float:
    """Gradient of a real scalar factor: sum Re(conj(g) * other)."""
    return float(np.sum(np.real(np.conj(g) * other)))


# ---------------------------------------------------------------------------
# Full model.

@dataclass
class SubstageTape:
    v_in: np.ndarray
    plf_cache: tuple
    h: np.ndarray


@dataclass
class StageTape:
    recon_cache: tuple
    x: np.ndarray
    b_in: np.ndarray
    v_out: np.ndarray
    substages: list = field(default_factory=list)


@dataclass
class ForwardTape:
    y: np.ndarray
    mask_bits: np.ndarray
    stages: list
    final_recon_cache: tuple
    x_out: np.ndarray


@dataclass
class SubstageGradients:
    mu1: float
    mu2: float
    conv1_kernels: np.ndarray
    conv1_bias: np.ndarray
    plf_values: np.ndarray
    conv2_kernels: np.ndarray
    conv2_bias: np.ndarray


@dataclass
class StageGradients:
    rho: float
    eta: float
    substages: list


@dataclass
class ModelGradients:
    stages: list


def model_forward(y: np.ndarray, mask_bits: np.ndarray,
                  params: ModelParameters):
    """Run the unrolled network; returns (x_out, tape).

    y is the undersampled k-space stack; v starts at the zero-filled
    reconstruction and b at zero.
    """
    y = np.asarray(validate_stack(y, "k-space input"), dtype=np.complex128)
    if mask_bits.shape != y.shape[1:]:
        raise ValueError(f"mask shape {mask_bits.shape} does not match "
                         f"k-space {y.shape}")
    mask = np.asarray(mask_bits, dtype=np.float64)
    v = zero_filled(y, mask_bits)
    b = np.zeros_like(v)
    stage_tapes = []
    for stage in params.stages:
        x, recon_cache = recon_layer(y, mask, v, b, stage.rho)
        tape = StageTape(recon_cache=recon_cache, x=x, b_in=b, v_out=None)
        for sub in stage.substages:
            c1 = conv3_forward(v, sub.conv1)
            h, plf_cache = plf_forward(c1, sub.plf)
            c2 = conv3_fuse(h, sub.conv2)
            v_new = addition_layer(v, x, b, c2, sub.mu1, sub.mu2)
            tape.substages.append(SubstageTape(v_in=v, plf_cache=plf_cache, h=h))
            v = v_new
        b = multiplier_layer(b, x, v, stage.eta)
        tape.v_out = v
        stage_tapes.append(tape)
    last_rho = params.stages[-1].rho
    x_out, final_cache = recon_layer(y, mask, v, b, last_rho)
    return x_out, ForwardTape(y=y, mask_bits=mask, stages=stage_tapes,
                              final_recon_cache=final_cache, x_out=x_out)


def model_backward(tape: ForwardTape, g_out: np.ndarray,
                   params: ModelParameters,
                   wrong_conv1_adjoint: bool = False) -> ModelGradients:
    """Exact reverse-mode gradients of every learnable parameter.

    `wrong_conv1_adjoint` injects a deliberate adjoint bug into the
    conv1 input gradient so the finite-difference checker can prove it
    would catch one.
    """
    if len(tape.stages) != len(params.stages):
        raise ValueError(f"tape has {len(tape.stages)} stages, parameters "
                         f"have {len(params.stages)}")
    y, mask = tape.y, tape.mask_bits
    last_stage = params.stages[-1]
    stage_grads = [None] * len(params.stages)

    # Final recon consumed (v, b) after the last stage with the last rho.
    g_v, g_b, g_rho_final = recon_backward(
        g_out, y, mask, last_stage.rho, tape.final_recon_cache)
    g_b = g_b.copy()

    for s_idx in range(len(params.stages) - 1, -1, -1):
        stage = params.stages[s_idx]
        s_tape = tape.stages[s_idx]
        if len(s_tape.substages) != len(stage.substages):
            raise ValueError(f"stage {s_idx}: tape/parameter substage "
                             f"count mismatch")
        # Multiplier layer: b_out = b_in + eta * (x - v_out). Incoming
        # g_b is the gradient at b_out; v_out and x pick up eta terms and
        # b_in inherits g_b unchanged.
        g_eta = _real_inner(g_b, s_tape.x - s_tape.v_out)
        g_x = stage.eta * g_b
        g_v = g_v - stage.eta * g_b
        sub_grads = [None] * len(stage.substages)
        for k_idx in range(len(stage.substages) - 1, -1, -1):
            sub = stage.substages[k_idx]
            k_tape = s_tape.substages[k_idx]
            # Addition layer: v_new = mu1 v_in + mu2 (x + b_in) - c2 with
            # g_v holding the gradient at v_new.
            g_mu1 = _real_inner(g_v, k_tape.v_in)
            g_mu2 = _real_inner(g_v, s_tape.x + s_tape.b_in)
            g_x = g_x + sub.mu2 * g_v
            g_b = g_b + sub.mu2 * g_v
            g_c2 = -g_v
            g_h, g_w2, g_b2 = conv3_fuse_backward(g_c2, sub.conv2, k_tape.h)
            g_c1, g_q = plf_backward(g_h, sub.plf, k_tape.plf_cache)
            g_v_conv, g_w1, g_b1 = conv3_forward_backward(
                g_c1, sub.conv1, k_tape.v_in,
                wrong_adjoint=wrong_conv1_adjoint)
            g_v = sub.mu1 * g_v + g_v_conv
            sub_grads[k_idx] = SubstageGradients(
                mu1=g_mu1, mu2=g_mu2, conv1_kernels=g_w1, conv1_bias=g_b1,
                plf_values=g_q, conv2_kernels=g_w2, conv2_bias=g_b2)
        # Stage recon consumed (v, b) from before this stage.
        g_v_in, g_b_in, g_rho = recon_backward(
            g_x, y, mask, stage.rho, s_tape.recon_cache)
        if s_idx == len(params.stages) - 1:
            g_rho += g_rho_final
        g_v = g_v + g_v_in
        g_b = g_b + g_b_in
        stage_grads[s_idx] = StageGradients(rho=g_rho, eta=g_eta,
                                            substages=sub_grads)
    return ModelGradients(stages=stage_grads)


# ---------------------------------------------------------------------------
# Initialization and parameter serialization.

def dct_filters_3x3() -> np.ndarray:
    """The eight non-constant 3x3 DCT-II basis filters, C-ordered by
    frequency pair (0,1), (0,2), (1,0), ... (2,2)."""
    def basis(u):
        scale = np.sqrt(1.0 / 3.0) if u == 0 else np.sqrt(2.0 / 3.0)
        return scale * np.cos(np.pi * u * (2.0 * np.arange(3) + 1.0) / 6.0)

    filters = []
    for u in range(3):
        for v in range(3):
            if u == 0 and v == 0:
                continue
            filters.append(np.outer(basis(u), basis(v)))
    return np.stack(filters)


def _init_bank(filters: int) -> FilterBank:
    """Spatial DCT filters in the center coil slice, coil-difference
    filter last. With fewer than nine filters the DCT list truncates."""
    kernels = np.zeros((filters, 3, 3, 3))
    dct = dct_filters_3x3()
    for l in range(min(filters - 1, 8)):
        kernels[l, 1, :, :] = dct[l]
    kernels[filters - 1, 0, 1, 1] = -1.0
    kernels[filters - 1, 1, 1, 1] = 1.0
    return FilterBank(kernels=kernels, bias=np.zeros(filters))


def init_params(config: ModelConfig = None) -> ModelParameters:
    """Reference initialization, replicated across all stages.

    conv2 starts as the flipped (adjoint) copy of conv1 scaled by
    alpha_r * lambda_init, so the initial network is a near-identity
    perturbation of a chain of recon layers.
    """
    config = config or ModelConfig()
    if config.stages < 1 or config.substages < 1 or config.filters < 1:
        raise ValueError("stages, substages, and filters must be positive")
    if config.knot_count < 2:
        raise ValueError(f"need at least 2 knots, got {config.knot_count}")
    if config.knot_min >= config.knot_max:
        raise ValueError("knot range is empty")
    if config.rho <= 0:
        raise ValueError(f"rho must be positive, got {config.rho}")
    knots = np.linspace(config.knot_min, config.knot_max, config.knot_count)
    mu2 = config.alpha_r * config.rho
    stages = []
    for _ in range(config.stages):
        substages = []
        for _ in range(config.substages):
            conv1 = _init_bank(config.filters)
            scale = config.alpha_r * config.lambda_init
            conv2 = FilterBank(
                kernels=scale * conv1.kernels[:, ::-1, ::-1, ::-1].copy(),
                bias=np.zeros(config.filters))
            substages.append(SubstageParameters(
                mu1=1.0 - mu2, mu2=mu2, conv1=conv1,
                plf=PiecewiseLinear(knots=knots.copy(), values=knots.copy()),
                conv2=conv2))
        stages.append(StageParameters(rho=config.rho, eta=config.eta,
                                      substages=substages))
    return ModelParameters(stages=stages)


def save_params(params: ModelParameters, path) -> None:
    """Write the PMNW container: all parameters as little-endian float64."""
    with open(path, "wb") as f:
        f.write(PARAMS_MAGIC)
        formats.write_u32(f, PARAMS_VERSION)
        formats.write_u32(f, params.stage_count)
        formats.write_u32(f, params.substage_count)
        formats.write_u32(f, params.filters)
        formats.write_u32(f, params.knot_count)
        formats.write_f64_array(f, params.stages[0].substages[0].plf.knots)
        for stage in params.stages:
            formats.write_f64_array(f, [stage.rho])
            for sub in stage.substages:
                formats.write_f64_array(f, [sub.mu1, sub.mu2])
                formats.write_f64_array(f, sub.conv1.kernels)
                formats.write_f64_array(f, sub.conv1.bias)
                formats.write_f64_array(f, sub.plf.values)
                formats.write_f64_array(f, sub.conv2.kernels)
                formats.write_f64_array(f, sub.conv2.bias)
            formats.write_f64_array(f, [stage.eta])


def load_params(path, expect_filters: int = None) -> ModelParameters:
    """Read a PMNW container written by save_params."""
    with open(path, "rb") as f:
        formats.expect_magic(f, PARAMS_MAGIC, str(path))
        formats.expect_version(f, PARAMS_VERSION, str(path))
        n_stages = formats.read_u32(f, "stage count")
        n_sub = formats.read_u32(f, "substage count")
        filters = formats.read_u32(f, "filter count")
        n_knots = formats.read_u32(f, "knot count")
        if min(n_stages, n_sub, filters) < 1 or n_knots < 2:
            raise formats.FileFormatError(
                f"{path}: invalid header counts n={n_stages} k={n_sub} "
                f"L={filters} N_c={n_knots}")
        if expect_filters is not None and filters != expect_filters:
            raise formats.FileFormatError(
                f"{path}: filter count L={filters} in file, expected "
                f"{expect_filters}")
        knots = formats.read_f64_array(f, (n_knots,), "knots")
        stages = []
        for s in range(n_stages):
            what = f"stage {s}"
            rho = float(formats.read_f64_array(f, (1,), what + " rho")[0])
            substages = []
            for k in range(n_sub):
                sub_what = f"{what} substage {k}"
                mus = formats.read_f64_array(f, (2,), sub_what + " mu")
                w1 = formats.read_f64_array(f, (filters, 3, 3, 3),
                                            sub_what + " conv1 kernels")
                b1 = formats.read_f64_array(f, (filters,), sub_what + " conv1 bias")
                q = formats.read_f64_array(f, (n_knots,), sub_what + " plf values")
                w2 = formats.read_f64_array(f, (filters, 3, 3, 3),
                                            sub_what + " conv2 kernels")
                b2 = formats.read_f64_array(f, (filters,), sub_what + " conv2 bias")
                substages.append(SubstageParameters(
                    mu1=float(mus[0]), mu2=float(mus[1]),
                    conv1=FilterBank(w1, b1),
                    plf=PiecewiseLinear(knots=knots.copy(), values=q),
                    conv2=FilterBank(w2, b2)))
            eta = float(formats.read_f64_array(f, (1,), what + " eta")[0])
            stages.append(StageParameters(rho=rho, eta=eta, substages=substages))
    return ModelParameters(stages=stages)
