"""Finite-difference validation of the hand-written backward pass.

Builds a small randomized instance (perturbed parameters, random masked
k-space, random target), computes analytic gradients of the quadratic
loss 0.5 * sum |X - X_ref|^2 once, then sweeps every learnable
coordinate with central differences and scores

    error = |analytic - numeric| / max(|analytic|, |numeric|, 1e-3)

which reads as a relative error for gradients of usable size and as an
absolute error (scaled by 1e3) for near-zero ones. The suite passes
when every coordinate scores below the threshold.

The fault-injection path flips the conv1 adjoint roll direction inside
the backward pass. Note that in a one-stage, one-substage model the
corrupted input gradient only reaches the fixed zero-filled start, so
the fault is invisible there by construction; the injected check needs
at least two stages or two substages to propagate into parameter
gradients.
"""

import copy
from dataclasses import dataclass, field

import numpy as np

from .network import ModelConfig, init_params, model_backward, model_forward

DEFAULT_THRESHOLD = 1e-5
DEFAULT_STEP = 1e-5

# Sweep order mirrors the per-stage parameter layout.
PARAMETER_CLASSES = ("rho", "mu1", "mu2", "w1", "b1", "q", "w2", "b2", "eta")


@dataclass
class CheckRow:
    """One coordinate's analytic/numeric comparison."""

    param_class: str
    location: str
    analytic: float
    numeric: float
    error: float


@dataclass
class GradientCheckReport:
    step: float
    threshold: float
    rows: list = field(default_factory=list)

    @property
    def max_error(self) -> float:
        return max(row.error for row in self.rows)

    @property
    def passed(self) -> bool:
        return self.max_error < self.threshold

    def worst_by_class(self) -> dict:
        worst = {}
        for row in self.rows:
            cur = worst.get(row.param_class)
            if cur is None or row.error > cur.error:
                worst[row.param_class] = row
        return worst

    def worst_row(self) -> CheckRow:
        return max(self.rows, key=lambda row: row.error)


@dataclass
class CheckInstance:
    """The frozen problem a check runs on."""

    params: object
    y: np.ndarray
    mask_bits: np.ndarray
    x_ref: np.ndarray


def build_instance(stages: int = 1, substages: int = 1, filters: int = 2,
                   coils: int = 2, height: int = 8, width: int = 8,
                   knot_count: int = 5, seed: int = 0) -> CheckInstance:
    """Randomized small instance with generic (non-symmetric) gradients.

    Parameters start from the reference initialization and are jittered
    so no gradient vanishes for structural reasons (e.g. mu1 + mu2 = 1
    makes some directions locally flat at the exact init).
    """
    rng = np.random.default_rng(seed)
    params = init_params(ModelConfig(stages=stages, substages=substages,
                                     filters=filters, knot_count=knot_count))
    for stage in params.stages:
        stage.rho += rng.uniform(0.0, 0.2)
        stage.eta += rng.uniform(-0.4, 0.4)
        for sub in stage.substages:
            sub.mu1 += rng.uniform(-0.05, 0.05)
            sub.mu2 += rng.uniform(-0.05, 0.05)
            sub.conv1.kernels += rng.normal(0.0, 0.05, sub.conv1.kernels.shape)
            sub.conv1.bias += rng.normal(0.0, 0.02, sub.conv1.bias.shape)
            sub.plf.values += rng.normal(0.0, 0.05, sub.plf.values.shape)
            sub.conv2.kernels += rng.normal(0.0, 0.05, sub.conv2.kernels.shape)
            sub.conv2.bias += rng.normal(0.0, 0.02, sub.conv2.bias.shape)
    bits = (rng.random((height, width)) < 0.5).astype(np.uint8)
    bits[height // 2, width // 2] = 1
    bits[0, 0] = 0
    shape = (coils, height, width)
    y = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) \
        * bits[None, :, :]
    x_ref = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    return CheckInstance(params=params, y=y, mask_bits=bits, x_ref=x_ref)


def _loss(instance: CheckInstance, params) -> float:
    x, _ = model_forward(instance.y, instance.mask_bits, params)
    return 0.5 * float(np.sum(np.abs(x - instance.x_ref) ** 2))


def _central_difference(instance: CheckInstance, getter, setter,
                        step: float) -> float:
    params = copy.deepcopy(instance.params)
    base = getter(params)
    setter(params, base + step)
    up = _loss(instance, params)
    setter(params, base - step)
    down = _loss(instance, params)
    setter(params, base)
    return (up - down) / (2.0 * step)


def _coordinates(params):
    """Yield (class, location, grad getter, param getter, param setter)
    for every learnable coordinate in sweep order."""
    for s, stage in enumerate(params.stages):
        yield ("rho", f"stage {s} rho",
               lambda g, s=s: g.stages[s].rho,
               lambda p, s=s: p.stages[s].rho,
               lambda p, val, s=s: setattr(p.stages[s], "rho", val))
        for k, sub in enumerate(stage.substages):
            loc = f"stage {s} substage {k}"
            yield ("mu1", f"{loc} mu1",
                   lambda g, s=s, k=k: g.stages[s].substages[k].mu1,
                   lambda p, s=s, k=k: p.stages[s].substages[k].mu1,
                   lambda p, val, s=s, k=k: setattr(
                       p.stages[s].substages[k], "mu1", val))
            yield ("mu2", f"{loc} mu2",
                   lambda g, s=s, k=k: g.stages[s].substages[k].mu2,
                   lambda p, s=s, k=k: p.stages[s].substages[k].mu2,
                   lambda p, val, s=s, k=k: setattr(
                       p.stages[s].substages[k], "mu2", val))
            for idx in np.ndindex(sub.conv1.kernels.shape):
                yield ("w1", f"{loc} w1{list(idx)}",
                       lambda g, s=s, k=k, idx=idx:
                           g.stages[s].substages[k].conv1_kernels[idx],
                       lambda p, s=s, k=k, idx=idx:
                           p.stages[s].substages[k].conv1.kernels[idx],
                       lambda p, val, s=s, k=k, idx=idx:
                           p.stages[s].substages[k].conv1.kernels.__setitem__(
                               idx, val))
            for i in range(sub.conv1.bias.shape[0]):
                yield ("b1", f"{loc} b1[{i}]",
                       lambda g, s=s, k=k, i=i:
                           g.stages[s].substages[k].conv1_bias[i],
                       lambda p, s=s, k=k, i=i:
                           p.stages[s].substages[k].conv1.bias[i],
                       lambda p, val, s=s, k=k, i=i:
                           p.stages[s].substages[k].conv1.bias.__setitem__(
                               i, val))
            for i in range(len(sub.plf.values)):
                yield ("q", f"{loc} q[{i}]",
                       lambda g, s=s, k=k, i=i:
                           g.stages[s].substages[k].plf_values[i],
                       lambda p, s=s, k=k, i=i:
                           p.stages[s].substages[k].plf.values[i],
                       lambda p, val, s=s, k=k, i=i:
                           p.stages[s].substages[k].plf.values.__setitem__(
                               i, val))
            for idx in np.ndindex(sub.conv2.kernels.shape):
                yield ("w2", f"{loc} w2{list(idx)}",
                       lambda g, s=s, k=k, idx=idx:
                           g.stages[s].substages[k].conv2_kernels[idx],
                       lambda p, s=s, k=k, idx=idx:
                           p.stages[s].substages[k].conv2.kernels[idx],
                       lambda p, val, s=s, k=k, idx=idx:
                           p.stages[s].substages[k].conv2.kernels.__setitem__(
                               idx, val))
            for i in range(sub.conv2.bias.shape[0]):
                yield ("b2", f"{loc} b2[{i}]",
                       lambda g, s=s, k=k, i=i:
                           g.stages[s].substages[k].conv2_bias[i],
                       lambda p, s=s, k=k, i=i:
                           p.stages[s].substages[k].conv2.bias[i],
                       lambda p, val, s=s, k=k, i=i:
                           p.stages[s].substages[k].conv2.bias.__setitem__(
                               i, val))
        yield ("eta", f"stage {s} eta",
               lambda g, s=s: g.stages[s].eta,
               lambda p, s=s: p.stages[s].eta,
               lambda p, val, s=s: setattr(p.stages[s], "eta", val))


def run_check(instance: CheckInstance, step: float = DEFAULT_STEP,
              threshold: float = DEFAULT_THRESHOLD,
              wrong_conv1_adjoint: bool = False) -> GradientCheckReport:
    """Sweep every coordinate of the instance with central differences."""
    x, tape = model_forward(instance.y, instance.mask_bits, instance.params)
    grads = model_backward(tape, x - instance.x_ref, instance.params,
                           wrong_conv1_adjoint=wrong_conv1_adjoint)
    report = GradientCheckReport(step=step, threshold=threshold)
    for cls, loc, g_get, p_get, p_set in _coordinates(instance.params):
        analytic = float(g_get(grads))
        numeric = _central_difference(instance, p_get, p_set, step)
        error = abs(analytic - numeric) / max(abs(analytic), abs(numeric),
                                              1e-3)
        report.rows.append(CheckRow(param_class=cls, location=loc,
                                    analytic=analytic, numeric=numeric,
                                    error=error))
    return report


def format_report(report: GradientCheckReport) -> str:
    """Per-class worst-error table plus a verdict line."""
    lines = [f"{'class':8s} {'worst error':>12s} {'analytic':>14s} "
             f"{'numeric':>14s}  location"]
    worst = report.worst_by_class()
    for cls in PARAMETER_CLASSES:
        if cls not in worst:
            continue
        row = worst[cls]
        lines.append(f"{cls:8s} {row.error:12.3e} {row.analytic:14.6e} "
                     f"{row.numeric:14.6e}  {row.location}")
    verdict = "PASS" if report.passed else "FAIL"
    top = report.worst_row()
    lines.append(f"{verdict}: max error {report.max_error:.3e} at "
                 f"{top.param_class} {top.location} "
                 f"(threshold {report.threshold:.1e}, step {report.step:.1e}, "
                 f"{len(report.rows)} coordinates)")
    return "\n".join(lines)
