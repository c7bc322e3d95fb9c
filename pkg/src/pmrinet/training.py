"""Loss, SGD training loop, checkpointing, and validation.

Training follows the published recipe: per-sample gradient steps
(batch size fixed at 1), learning rate 0.01, 400 epochs, with the
record order reshuffled every epoch from a dedicated seed. The shuffle
generator is keyed by (seed, epoch) so a run resumed from a checkpoint
at epoch E replays exactly the same sample orders as the uninterrupted
run. Plain SGD is the default; momentum is available but off.

Divergence policy: a non-finite loss or gradient raises
TrainingDivergedError naming the offending quantity instead of letting
the parameters silently blow up; checkpoints already on disk are left
in place for recovery.
"""

import csv
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import metrics
from .network import (
    ModelGradients,
    StageGradients,
    SubstageGradients,
    model_backward,
    model_forward,
    save_params,
)
from .numerics import zero_filled

TRAIN_LOG_HEADER = ("epoch", "train_loss", "val_nmse", "val_psnr",
                    "val_ssim", "seconds")


class TrainingDivergedError(RuntimeError):
    """Loss or gradient left the finite range; training aborted."""


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    epochs: int = 400
    batch_size: int = 1
    shuffle_seed: int = 0
    checkpoint_every: int = 0  # epochs between checkpoints; 0 disables
    rho_floor: float = 1e-6
    momentum: float = 0.0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError(f"learning rate must be >= 0, "
                             f"got {self.learning_rate}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size != 1:
            raise ValueError(f"batch size is fixed at 1, "
                             f"got {self.batch_size}")
        if self.rho_floor <= 0:
            raise ValueError(f"rho floor must be positive, "
                             f"got {self.rho_floor}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), "
                             f"got {self.momentum}")


@dataclass
class TrainLogEntry:
    epoch: int
    train_loss: float
    val_nmse: float
    val_psnr: float
    val_ssim: float
    seconds: float


def write_train_log(entries, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(TRAIN_LOG_HEADER)
        for e in entries:
            writer.writerow([e.epoch, repr(e.train_loss), repr(e.val_nmse),
                             repr(e.val_psnr), repr(e.val_ssim),
                             repr(e.seconds)])


def read_train_log(path):
    entries = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = tuple(next(reader))
        if header != TRAIN_LOG_HEADER:
            raise ValueError(f"{path}: unexpected train log header {header}")
        for row in reader:
            entries.append(TrainLogEntry(int(row[0]), *map(float, row[1:])))
    return entries


# ---------------------------------------------------------------------------
# Loss and optimizer step.

def mse_loss(x_out: np.ndarray, x_ref: np.ndarray):
    """Squared error normalized by the reference energy.

    Returns (loss, dL/dX_out) with L = sum |X_out - X_ref|^2 over real
    and imaginary parts divided by 2 sum |X_ref|^2, so the gradient is
    (X_out - X_ref) / sum |X_ref|^2. Normalizing by the reference
    energy rather than the pixel count makes the gradient magnitude,
    and therefore a given learning rate, independent of the image
    amplitude and resolution.
    """
    if x_out.shape != x_ref.shape:
        raise ValueError(f"shape mismatch: output {x_out.shape}, "
                         f"reference {x_ref.shape}")
    energy = float(np.sum(x_ref.real ** 2 + x_ref.imag ** 2))
    if energy == 0.0:
        raise ValueError("reference stack is identically zero")
    diff = x_out - x_ref
    loss = float(np.sum(diff.real ** 2 + diff.imag ** 2)) / (2.0 * energy)
    return loss, diff / energy


def make_velocity(params) -> ModelGradients:
    """Zeroed momentum buffers shaped like the parameter gradients."""
    stages = []
    for stage in params.stages:
        subs = []
        for sub in stage.substages:
            subs.append(SubstageGradients(
                mu1=0.0, mu2=0.0,
                conv1_kernels=np.zeros_like(sub.conv1.kernels),
                conv1_bias=np.zeros_like(sub.conv1.bias),
                plf_values=np.zeros_like(sub.plf.values),
                conv2_kernels=np.zeros_like(sub.conv2.kernels),
                conv2_bias=np.zeros_like(sub.conv2.bias)))
        stages.append(StageGradients(rho=0.0, eta=0.0, substages=subs))
    return ModelGradients(stages=stages)


def _check_finite(grads: ModelGradients) -> None:
    for s, stage in enumerate(grads.stages):
        where = f"stage {s}"
        if not math.isfinite(stage.rho):
            raise TrainingDivergedError(f"non-finite gradient for {where} rho")
        if not math.isfinite(stage.eta):
            raise TrainingDivergedError(f"non-finite gradient for {where} eta")
        for k, sub in enumerate(stage.substages):
            loc = f"{where} substage {k}"
            scalars = (("mu1", sub.mu1), ("mu2", sub.mu2))
            for name, value in scalars:
                if not math.isfinite(value):
                    raise TrainingDivergedError(
                        f"non-finite gradient for {loc} {name}")
            arrays = (("conv1 kernels", sub.conv1_kernels),
                      ("conv1 bias", sub.conv1_bias),
                      ("plf values", sub.plf_values),
                      ("conv2 kernels", sub.conv2_kernels),
                      ("conv2 bias", sub.conv2_bias))
            for name, arr in arrays:
                if not np.all(np.isfinite(arr)):
                    raise TrainingDivergedError(
                        f"non-finite gradient for {loc} {name}")


def sgd_step(params, grads: ModelGradients, lr: float,
             rho_floor: float = 1e-6, momentum: float = 0.0,
             velocity: ModelGradients = None):
    """In-place step theta -= lr * g for every learnable parameter.

    rho is clamped to rho_floor afterwards so the recon layer stays
    well posed. All gradients are validated finite before any field is
    touched, so a diverged step never half-applies.
    """
    _check_finite(grads)
    if momentum > 0.0 and velocity is None:
        raise ValueError("momentum requires a velocity buffer")

    def effective(g_value, holder, name):
        if momentum <= 0.0:
            return g_value
        new = momentum * getattr(holder, name) + g_value
        setattr(holder, name, new)
        return new

    for s, stage in enumerate(params.stages):
        g_stage = grads.stages[s]
        v_stage = velocity.stages[s] if velocity is not None else None
        stage.rho = max(stage.rho - lr * effective(g_stage.rho, v_stage,
                                                   "rho"),
                        rho_floor)
        stage.eta = stage.eta - lr * effective(g_stage.eta, v_stage, "eta")
        for k, sub in enumerate(stage.substages):
            g_sub = g_stage.substages[k]
            v_sub = v_stage.substages[k] if v_stage is not None else None
            sub.mu1 = sub.mu1 - lr * effective(g_sub.mu1, v_sub, "mu1")
            sub.mu2 = sub.mu2 - lr * effective(g_sub.mu2, v_sub, "mu2")
            if momentum > 0.0:
                for name in ("conv1_kernels", "conv1_bias", "plf_values",
                             "conv2_kernels", "conv2_bias"):
                    buf = getattr(v_sub, name)
                    buf *= momentum
                    buf += getattr(g_sub, name)
                sub.conv1.kernels -= lr * v_sub.conv1_kernels
                sub.conv1.bias -= lr * v_sub.conv1_bias
                sub.plf.values -= lr * v_sub.plf_values
                sub.conv2.kernels -= lr * v_sub.conv2_kernels
                sub.conv2.bias -= lr * v_sub.conv2_bias
            else:
                sub.conv1.kernels -= lr * g_sub.conv1_kernels
                sub.conv1.bias -= lr * g_sub.conv1_bias
                sub.plf.values -= lr * g_sub.plf_values
                sub.conv2.kernels -= lr * g_sub.conv2_kernels
                sub.conv2.bias -= lr * g_sub.conv2_bias
    return params


# ---------------------------------------------------------------------------
# Reconstruction and validation helpers.

def reconstruct_stack(y: np.ndarray, mask_bits: np.ndarray, params=None):
    """Network reconstruction, or the zero-filled baseline when params
    is None."""
    if params is None:
        return zero_filled(y, mask_bits)
    x, _ = model_forward(y, mask_bits, params)
    return x


def evaluate_stacks(estimates, references):
    """Per-pair metric reports for matched lists of coil stacks."""
    if len(estimates) != len(references):
        raise ValueError(f"{len(estimates)} estimates vs "
                         f"{len(references)} references")
    return [metrics.evaluate_pair(est, ref)
            for est, ref in zip(estimates, references)]


def validate(params, records, mask_bits) -> metrics.MetricSummary:
    """Metric summary of the model (or zero-filled baseline) over records."""
    if not records:
        raise ValueError("no records to validate on")
    estimates = [reconstruct_stack(r.undersampled_kspace, mask_bits, params)
                 for r in records]
    references = [r.coil_images for r in records]
    return metrics.summarize(evaluate_stacks(estimates, references))


# ---------------------------------------------------------------------------
# Training loop.

def checkpoint_path(directory, epoch: int) -> Path:
    return Path(directory) / f"checkpoint_epoch{epoch:04d}.pmnw"


def train(records, mask_bits, params, config: TrainConfig,
          val_records=None, checkpoint_dir=None, start_epoch: int = 0,
          on_epoch=None):
    """Run SGD over records; returns (params, train log entries).

    `params` is mutated in place and also returned. Deterministic given
    (records, params, config) apart from the wall-time column. The
    optional on_epoch callback receives each TrainLogEntry as it is
    produced.
    """
    if not records:
        raise ValueError("training dataset is empty")
    if start_epoch < 0 or start_epoch >= config.epochs:
        raise ValueError(f"start epoch {start_epoch} outside "
                         f"[0, {config.epochs})")
    velocity = make_velocity(params) if config.momentum > 0.0 else None
    if checkpoint_dir is not None:
        Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
    log = []
    for epoch in range(start_epoch, config.epochs):
        started = time.perf_counter()
        rng = np.random.default_rng((config.shuffle_seed, epoch))
        losses = []
        for index in rng.permutation(len(records)):
            record = records[index]
            try:
                x, tape = model_forward(record.undersampled_kspace,
                                        mask_bits, params)
            except ValueError as exc:
                # Parameters that blew up make the forward pass reject
                # its own intermediates; report that as divergence. Bad
                # input data (non-finite y) stays a plain ValueError.
                if "non-finite" not in str(exc) or "k-space input" in str(exc):
                    raise
                raise TrainingDivergedError(
                    f"non-finite forward pass at epoch {epoch}, "
                    f"record {index}; last checkpoint retained") from exc
            loss, g_out = mse_loss(x, record.coil_images)
            if not math.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss {loss} at epoch {epoch}, "
                    f"record {index}; last checkpoint retained")
            grads = model_backward(tape, g_out, params)
            sgd_step(params, grads, config.learning_rate, config.rho_floor,
                     config.momentum, velocity)
            losses.append(loss)
        entry = TrainLogEntry(
            epoch=epoch,
            train_loss=float(np.mean(losses)),
            val_nmse=math.nan, val_psnr=math.nan, val_ssim=math.nan,
            seconds=0.0)
        if val_records:
            summary = validate(params, val_records, mask_bits)
            entry.val_nmse = summary.nmse_mean
            entry.val_psnr = summary.psnr_mean
            entry.val_ssim = summary.ssim_mean
        entry.seconds = time.perf_counter() - started
        log.append(entry)
        if on_epoch is not None:
            on_epoch(entry)
        if checkpoint_dir is not None and config.checkpoint_every > 0 \
                and (epoch + 1) % config.checkpoint_every == 0:
            save_params(params, checkpoint_path(checkpoint_dir, epoch + 1))
    return params, log
