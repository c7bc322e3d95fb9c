import copy
import math

import numpy as np
import pytest

from pmrinet.gradcheck import build_instance
from pmrinet.network import (
    ModelConfig,
    init_params,
    load_params,
    model_backward,
    model_forward,
)
from pmrinet.sampling import SamplingMask, gen_uniform_1d
from pmrinet.simdata import simulate_dataset
from pmrinet.training import (
    TrainConfig,
    TrainingDivergedError,
    TrainLogEntry,
    checkpoint_path,
    evaluate_stacks,
    make_velocity,
    mse_loss,
    read_train_log,
    reconstruct_stack,
    sgd_step,
    train,
    validate,
    write_train_log,
)


def all_parameter_arrays(params):
    """Flat list of (scalar or array) views over every learnable field."""
    out = []
    for stage in params.stages:
        out.append(stage.rho)
        out.append(stage.eta)
        for sub in stage.substages:
            out.extend([sub.mu1, sub.mu2, sub.conv1.kernels, sub.conv1.bias,
                        sub.plf.values, sub.conv2.kernels, sub.conv2.bias])
    return out


def assert_params_identical(a, b):
    for x, y in zip(all_parameter_arrays(a), all_parameter_arrays(b)):
        if isinstance(x, np.ndarray):
            assert np.array_equal(x, y)
        else:
            assert x == y


def tiny_dataset(count=3, coils=2, size=32, accel=3, acs=4, seed=0):
    mask = gen_uniform_1d(size, size, accel, acs)
    return simulate_dataset(count, coils, size, size, mask, seed=seed), mask


class TestTrainConfig:
    def test_reference_defaults(self):
        config = TrainConfig()
        assert config.learning_rate == 0.01
        assert config.epochs == 400
        assert config.batch_size == 1

    def test_zero_learning_rate_allowed(self):
        assert TrainConfig(learning_rate=0.0).learning_rate == 0.0

    @pytest.mark.parametrize("bad", [
        dict(learning_rate=-0.01), dict(epochs=0), dict(batch_size=2),
        dict(batch_size=0), dict(rho_floor=0.0), dict(momentum=1.0),
        dict(momentum=-0.1),
    ])
    def test_invalid_config_rejected(self, bad):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


class TestMseLoss:
    def test_identical_stacks_give_zero(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((2, 4, 4)) + 1j * rng.standard_normal((2, 4, 4))
        loss, grad = mse_loss(x, x.copy())
        assert loss == 0.0
        assert np.all(grad == 0.0)

    def test_single_pixel_case(self):
        out = np.full((1, 1, 1), 3.0 + 0.0j)
        ref = np.full((1, 1, 1), 1.0 + 0.0j)
        loss, grad = mse_loss(out, ref)
        assert loss == 2.0
        assert grad[0, 0, 0] == 2.0 + 0.0j

    def test_matches_elementwise_recomputation(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((2, 5, 5)) + 1j * rng.standard_normal((2, 5, 5))
        ref = rng.standard_normal((2, 5, 5)) + 1j * rng.standard_normal((2, 5, 5))
        loss, grad = mse_loss(x, ref)
        acc = 0.0
        energy = 0.0
        for c in range(2):
            for i in range(5):
                for j in range(5):
                    d = x[c, i, j] - ref[c, i, j]
                    acc += d.real ** 2 + d.imag ** 2
                    energy += abs(ref[c, i, j]) ** 2
        assert abs(loss - acc / (2 * energy)) < 1e-12
        assert np.max(np.abs(grad - (x - ref) / energy)) < 1e-15

    def test_gradient_is_loss_derivative(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((2, 4, 4)) + 1j * rng.standard_normal((2, 4, 4))
        ref = rng.standard_normal((2, 4, 4)) + 1j * rng.standard_normal((2, 4, 4))
        _, grad = mse_loss(x, ref)
        step = 1e-6
        bumped = x.copy()
        bumped[1, 2, 3] += step
        plus, _ = mse_loss(bumped, ref)
        bumped[1, 2, 3] -= 2 * step
        minus, _ = mse_loss(bumped, ref)
        assert abs((plus - minus) / (2 * step) - grad[1, 2, 3].real) < 1e-9

    def test_zero_reference_rejected(self):
        with pytest.raises(ValueError):
            mse_loss(np.ones((1, 4, 4), complex), np.zeros((1, 4, 4), complex))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            mse_loss(np.zeros((1, 4, 4), complex), np.ones((1, 5, 4), complex))


class TestSgdStep:
    def zero_grads(self, params):
        return make_velocity(params)  # same structure, all zeros

    def test_zero_learning_rate_is_bitwise_noop(self):
        params = init_params(ModelConfig(stages=2, filters=3, knot_count=5))
        before = copy.deepcopy(params)
        grads = self.zero_grads(params)
        grads.stages[0].rho = 123.4
        grads.stages[1].substages[0].conv1_kernels += 5.0
        sgd_step(params, grads, 0.0)
        assert_params_identical(params, before)

    def test_scalar_update_arithmetic(self):
        params = init_params(ModelConfig(stages=1, filters=2, knot_count=5))
        params.stages[0].rho = 1.0
        grads = self.zero_grads(params)
        grads.stages[0].rho = 0.5
        sgd_step(params, grads, 0.01)
        assert params.stages[0].rho == pytest.approx(0.995, abs=1e-15)

    def test_rho_clamped_at_floor(self):
        params = init_params(ModelConfig(stages=1, filters=2, knot_count=5))
        grads = self.zero_grads(params)
        grads.stages[0].rho = 1000.0
        sgd_step(params, grads, 0.01)
        assert params.stages[0].rho == 1e-6

    def test_nonfinite_gradient_rejected_without_partial_update(self):
        params = init_params(ModelConfig(stages=2, filters=2, knot_count=5))
        before = copy.deepcopy(params)
        grads = self.zero_grads(params)
        grads.stages[0].rho = 1.0  # would change rho if applied
        grads.stages[1].substages[0].conv2_kernels[0, 0, 0, 0] = np.nan
        with pytest.raises(TrainingDivergedError, match="stage 1.*conv2"):
            sgd_step(params, grads, 0.01)
        assert_params_identical(params, before)

    def test_momentum_accumulates_velocity(self):
        params = init_params(ModelConfig(stages=1, filters=2, knot_count=5))
        rho0 = params.stages[0].rho
        grads = self.zero_grads(params)
        grads.stages[0].rho = 0.1
        velocity = make_velocity(params)
        sgd_step(params, grads, 0.01, momentum=0.9, velocity=velocity)
        sgd_step(params, grads, 0.01, momentum=0.9, velocity=velocity)
        # v1 = g, v2 = 0.9 g + g, total step = lr * (1 + 1.9) * g
        assert params.stages[0].rho == pytest.approx(rho0 - 0.01 * 2.9 * 0.1,
                                                     abs=1e-15)
        assert velocity.stages[0].rho == pytest.approx(0.19, abs=1e-15)

    def test_momentum_requires_velocity_buffer(self):
        params = init_params(ModelConfig(stages=1, filters=2, knot_count=5))
        with pytest.raises(ValueError):
            sgd_step(params, self.zero_grads(params), 0.01, momentum=0.9)


class TestDescentProperty:
    def test_single_step_never_increases_loss_at_small_lr(self):
        records, mask = tiny_dataset(count=1, seed=5)
        record = records[0]
        for seed in range(20):
            instance = build_instance(stages=1, substages=1, filters=3,
                                      coils=2, height=32, width=32,
                                      knot_count=7, seed=seed)
            params = instance.params
            x, tape = model_forward(record.undersampled_kspace, mask.bits,
                                    params)
            loss0, g_out = mse_loss(x, record.coil_images)
            grads = model_backward(tape, g_out, params)
            sgd_step(params, grads, 1e-4)
            x1, _ = model_forward(record.undersampled_kspace, mask.bits,
                                  params)
            loss1, _ = mse_loss(x1, record.coil_images)
            assert loss1 <= loss0 + 1e-12, f"init {seed}"


class TestTrainLoop:
    def small_config(self, **kw):
        base = dict(epochs=2, shuffle_seed=7)
        base.update(kw)
        return TrainConfig(**base)

    def test_empty_dataset_rejected(self):
        params = init_params(ModelConfig(stages=1, filters=2, knot_count=5))
        with pytest.raises(ValueError):
            train([], np.ones((8, 8)), params, TrainConfig(epochs=1))

    def test_zero_lr_single_epoch_keeps_init_bitwise(self):
        records, mask = tiny_dataset(count=1)
        params = init_params(ModelConfig(stages=1, filters=3, knot_count=7))
        before = copy.deepcopy(params)
        trained, log = train(records, mask.bits, params,
                             self.small_config(epochs=1, learning_rate=0.0))
        assert_params_identical(trained, before)
        assert len(log) == 1 and log[0].epoch == 0

    def test_loss_descends_over_five_epochs(self):
        mask = gen_uniform_1d(64, 64, 3, 7)
        records = simulate_dataset(10, 4, 64, 64, mask, seed=2)
        params = init_params(ModelConfig(stages=2))
        _, log = train(records, mask.bits, params,
                       self.small_config(epochs=5))
        assert log[-1].train_loss < log[0].train_loss

    def test_identical_seeds_reproduce_log_and_params(self):
        records, mask = tiny_dataset(count=3)
        runs = []
        for _ in range(2):
            params = init_params(ModelConfig(stages=1, filters=3,
                                             knot_count=7))
            runs.append(train(records, mask.bits, params,
                              self.small_config(), val_records=records[:1]))
        (params_a, log_a), (params_b, log_b) = runs
        assert_params_identical(params_a, params_b)
        for a, b in zip(log_a, log_b):
            assert (a.epoch, a.train_loss, a.val_nmse, a.val_psnr,
                    a.val_ssim) == (b.epoch, b.train_loss, b.val_nmse,
                                    b.val_psnr, b.val_ssim)

    def test_checkpoints_written_and_bit_exact(self, tmp_path):
        records, mask = tiny_dataset(count=2)
        params = init_params(ModelConfig(stages=1, filters=3, knot_count=7))
        trained, _ = train(records, mask.bits, params,
                           self.small_config(epochs=4, checkpoint_every=2),
                           checkpoint_dir=tmp_path)
        assert checkpoint_path(tmp_path, 2).exists()
        final = checkpoint_path(tmp_path, 4)
        assert final.exists()
        assert_params_identical(load_params(final), trained)

    def test_resume_from_checkpoint_matches_uninterrupted_run(self, tmp_path):
        records, mask = tiny_dataset(count=3)
        config = self.small_config(epochs=4, checkpoint_every=2)

        params = init_params(ModelConfig(stages=1, filters=3, knot_count=7))
        full, full_log = train(records, mask.bits, params, config,
                               checkpoint_dir=tmp_path / "full")
        resumed = load_params(checkpoint_path(tmp_path / "full", 2))
        resumed, tail_log = train(records, mask.bits, resumed, config,
                                  start_epoch=2)
        assert_params_identical(full, resumed)
        assert [e.epoch for e in tail_log] == [2, 3]
        for a, b in zip(full_log[2:], tail_log):
            assert a.train_loss == b.train_loss

    def test_nonfinite_loss_aborts_and_keeps_checkpoint(self, tmp_path):
        records, mask = tiny_dataset(count=1)
        params = init_params(ModelConfig(stages=1, filters=3, knot_count=7))
        config = self.small_config(epochs=2, checkpoint_every=1)
        train(records, mask.bits, params,
              self.small_config(epochs=1, checkpoint_every=1),
              checkpoint_dir=tmp_path)
        kept = checkpoint_path(tmp_path, 1)
        assert kept.exists()
        # Finite but huge kernels: stacks stay representable, |x|^2 overflows.
        params.stages[0].substages[0].conv1.kernels[:] = 1e160
        with pytest.raises(TrainingDivergedError, match="non-finite loss"):
            with np.errstate(over="ignore"):
                train(records, mask.bits, params, config, start_epoch=1,
                      checkpoint_dir=tmp_path)
        assert kept.exists()

    def test_bad_start_epoch_rejected(self):
        records, mask = tiny_dataset(count=1)
        params = init_params(ModelConfig(stages=1, filters=2, knot_count=5))
        with pytest.raises(ValueError):
            train(records, mask.bits, params, self.small_config(),
                  start_epoch=2)


class TestValidation:
    def test_fully_sampled_zero_kernel_model_is_near_perfect(self):
        mask = SamplingMask(bits=np.ones((32, 32), dtype=np.uint8),
                            pattern="uniform1d", target_acceleration=1.0,
                            acs=0, seed=0)
        records = simulate_dataset(2, 2, 32, 32, mask, seed=3)
        params = init_params(ModelConfig(stages=1, filters=2, knot_count=5))
        for sub in (s for st in params.stages for s in st.substages):
            sub.conv1.kernels[:] = 0.0
            sub.conv2.kernels[:] = 0.0
        summary = validate(params, records, mask.bits)
        assert summary.nmse_mean < 1e-20
        assert summary.psnr_mean == 100.0
        assert summary.ssim_mean > 1.0 - 1e-12

    def test_zero_estimate_scores_nmse_one(self):
        records, _ = tiny_dataset(count=2)
        refs = [r.coil_images for r in records]
        zeros = [np.zeros_like(r) for r in refs]
        reports = evaluate_stacks(zeros, refs)
        assert all(r.nmse == 1.0 for r in reports)

    def test_zero_filled_baseline_used_when_params_absent(self):
        records, mask = tiny_dataset(count=1)
        y = records[0].undersampled_kspace
        baseline = reconstruct_stack(y, mask.bits, None)
        ksp = np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(
            baseline, axes=(-2, -1)), norm="ortho"), axes=(-2, -1))
        assert np.max(np.abs(ksp - y * mask.bits[None])) < 1e-12

    def test_mismatched_counts_rejected(self):
        with pytest.raises(ValueError):
            evaluate_stacks([np.zeros((1, 16, 16), complex)], [])

    def test_empty_validation_set_rejected(self):
        with pytest.raises(ValueError):
            validate(None, [], np.ones((8, 8)))


class TestTrainLogFile:
    def entries(self):
        return [
            TrainLogEntry(0, 0.125, 0.3, 21.5, 0.77, 1.25),
            TrainLogEntry(1, 0.1, math.nan, math.nan, math.nan, 1.5),
        ]

    def test_roundtrip_preserves_values(self, tmp_path):
        path = tmp_path / "log.csv"
        write_train_log(self.entries(), path)
        back = read_train_log(path)
        assert len(back) == 2
        assert back[0] == self.entries()[0]
        assert back[1].epoch == 1 and math.isnan(back[1].val_nmse)

    def test_header_written_exactly(self, tmp_path):
        path = tmp_path / "log.csv"
        write_train_log([], path)
        assert path.read_text().splitlines()[0] == \
            "epoch,train_loss,val_nmse,val_psnr,val_ssim,seconds"

    def test_wrong_header_rejected(self, tmp_path):
        path = tmp_path / "log.csv"
        path.write_text("epoch,loss\n0,1.0\n")
        with pytest.raises(ValueError):
            read_train_log(path)
