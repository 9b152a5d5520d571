"""Gradient correctness, Adam behavior, losses, and checkpoint round-trips."""

import numpy as np
import pytest

from patchkit.autodiff import (
    Adam,
    AdamState,
    BatchNorm1d,
    Conv1d,
    ConvTranspose1d,
    Dense,
    Dropout,
    GELU,
    LeakyReLU,
    ReLU,
    Sequential,
    Tensor,
    adam_step,
    backward,
    beta_nll,
    kld_gauss,
    load_checkpoint,
    masked_mse,
    mse,
    ops,
    reparam_sample,
    save_checkpoint,
)

from gradcheck import finite_difference_check


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


class TestBackward:
    def test_square_sum(self):
        w = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        backward(ops.sum_(w * w))
        np.testing.assert_allclose(w.grad, [2.0, 4.0, 6.0])

    def test_constant_loss_leaves_grad_unset_or_zero(self):
        w = Tensor([1.0, 2.0], requires_grad=True)
        loss = ops.sum_(Tensor([5.0]))
        backward(loss)
        assert w.grad is None or np.all(w.grad == 0.0)

    def test_non_scalar_loss_rejected(self):
        w = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ValueError, match="scalar"):
            backward(w * w)

    def test_masked_mse_through_dense_net_matches_fd(self, rng):
        layers = Sequential(
            [Dense(6, 8, rng), ReLU(), Dense(8, 8, rng), ReLU(), Dense(8, 5, rng)]
        )
        x = Tensor(rng.standard_normal((4, 6)))
        target = rng.standard_normal((4, 5))
        mask = (rng.random((4, 5)) > 0.4).astype(float)
        params = list(layers.parameters().values())
        finite_difference_check(
            lambda: masked_mse(layers(x), target, mask), params, rng
        )

    def test_diamond_graph_accumulates(self):
        w = Tensor([2.0], requires_grad=True)
        y = w * w  # reused twice below
        backward(ops.sum_(y + y))
        np.testing.assert_allclose(w.grad, [8.0])


class TestLayerGradients:
    """Every layer passes central finite differences at 1e-4 relative error."""

    def test_dense(self, rng):
        layer = Dense(7, 4, rng)
        x = Tensor(rng.standard_normal((3, 7)), requires_grad=True)
        tensors = [x] + list(layer.parameters().values())
        for trial in range(5):
            finite_difference_check(lambda: ops.sum_(layer(x) ** 2.0), tensors, rng)
            x.data = rng.standard_normal((3, 7))

    def test_conv1d(self, rng):
        layer = Conv1d(3, 4, 5, 2, rng, padding=2)
        x = Tensor(rng.standard_normal((2, 3, 21)), requires_grad=True)
        tensors = [x] + list(layer.parameters().values())
        for trial in range(5):
            finite_difference_check(lambda: ops.sum_(layer(x) ** 2.0), tensors, rng)
            x.data = rng.standard_normal((2, 3, 21))

    def test_conv1d_stride1_full_padding(self, rng):
        layer = Conv1d(2, 3, 4, 1, rng, padding=3)
        x = Tensor(rng.standard_normal((2, 2, 9)), requires_grad=True)
        tensors = [x] + list(layer.parameters().values())
        finite_difference_check(lambda: ops.sum_(layer(x) ** 2.0), tensors, rng)

    def test_conv_transpose1d(self, rng):
        layer = ConvTranspose1d(4, 3, 5, 2, rng, padding=2, output_padding=1)
        x = Tensor(rng.standard_normal((2, 4, 9)), requires_grad=True)
        tensors = [x] + list(layer.parameters().values())
        for trial in range(5):
            finite_difference_check(lambda: ops.sum_(layer(x) ** 2.0), tensors, rng)
            x.data = rng.standard_normal((2, 4, 9))

    def test_conv_transpose1d_no_output_padding(self, rng):
        layer = ConvTranspose1d(3, 2, 7, 2, rng, padding=3)
        x = Tensor(rng.standard_normal((1, 3, 8)), requires_grad=True)
        tensors = [x] + list(layer.parameters().values())
        finite_difference_check(lambda: ops.sum_(layer(x) ** 2.0), tensors, rng)

    @pytest.mark.parametrize("activation", [ReLU(), LeakyReLU(0.1), GELU()])
    def test_activations(self, rng, activation):
        # keep inputs away from the ReLU kink where the derivative jumps
        x = Tensor(rng.standard_normal((4, 9)) + 0.2, requires_grad=True)
        x.data[np.abs(x.data) < 1e-2] = 0.5
        for trial in range(5):
            finite_difference_check(lambda: ops.sum_(activation(x) ** 2.0), [x], rng)
            fresh = rng.standard_normal((4, 9))
            fresh[np.abs(fresh) < 1e-2] = 0.5
            x.data = fresh

    def test_batchnorm_training_mode(self, rng):
        layer = BatchNorm1d(3)
        x = Tensor(rng.standard_normal((5, 3, 6)), requires_grad=True)
        weights = Tensor(rng.standard_normal((5, 3, 6)))
        tensors = [x] + list(layer.parameters().values())

        def build():
            layer.running_mean[:] = 0.0  # keep running-stat updates out of the loss
            layer.running_var[:] = 1.0
            return ops.sum_((layer(x) * weights) ** 2.0)

        for trial in range(5):
            finite_difference_check(build, tensors, rng)
            x.data = rng.standard_normal((5, 3, 6))

    def test_batchnorm_eval_uses_running_stats(self, rng):
        layer = BatchNorm1d(2)
        layer.running_mean[:] = [1.0, -1.0]
        layer.running_var[:] = [4.0, 0.25]
        layer.eval()
        x = Tensor(rng.standard_normal((3, 2, 4)))
        out = layer(x).data
        expected = (x.data - layer.running_mean[None, :, None]) / np.sqrt(
            layer.running_var[None, :, None] + layer.eps
        )
        np.testing.assert_allclose(out, expected, atol=1e-12)
        np.testing.assert_allclose(layer(x).data, out)  # deterministic

    def test_dropout_eval_is_identity(self, rng):
        layer = Dropout(0.5)
        layer.eval()
        x = Tensor(rng.standard_normal((4, 6)))
        np.testing.assert_array_equal(layer(x).data, x.data)

    def test_dropout_training_needs_rng_and_scales(self, rng):
        layer = Dropout(0.5)
        x = Tensor(np.ones((1000, 10)))
        with pytest.raises(ValueError, match="rng"):
            layer(x)
        out = layer(x, rng).data
        assert set(np.unique(out)) == {0.0, 2.0}
        assert abs(out.mean() - 1.0) < 0.05

    def test_concat_and_narrow(self, rng):
        a = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        b = Tensor(rng.standard_normal((3, 2)), requires_grad=True)
        finite_difference_check(
            lambda: ops.sum_(ops.concat([a, b], axis=1) ** 2.0), [a, b], rng
        )
        finite_difference_check(
            lambda: ops.sum_(ops.narrow(a, 1, 1, 2) ** 2.0), [a], rng
        )


class TestLossGradients:
    def test_kld_gauss_fd(self, rng):
        mu = Tensor(rng.standard_normal((4, 6)), requires_grad=True)
        logvar = Tensor(rng.standard_normal((4, 6)) * 0.3, requires_grad=True)
        for trial in range(5):
            finite_difference_check(lambda: kld_gauss(mu, logvar), [mu, logvar], rng)
            mu.data = rng.standard_normal((4, 6))

    def test_beta_nll_fd(self, rng):
        """Mean path: FD of the full loss. Variance path: FD of the
        weight-frozen objective, which is the gradient the loss promises
        (the var^beta factor is detached)."""
        mu = Tensor(rng.standard_normal((3, 5)), requires_grad=True)
        logvar = Tensor(rng.standard_normal((3, 5)) * 0.2, requires_grad=True)
        target = rng.standard_normal((3, 5))
        beta = 0.5
        for trial in range(5):
            finite_difference_check(
                lambda: beta_nll(mu, ops.exp(logvar), target, beta), [mu], rng
            )
            weight = np.exp(logvar.data) ** beta

            def frozen_weight():
                var = ops.exp(logvar)
                diff = Tensor(target) - mu
                inner = ops.log(var) * 0.5 + diff * diff / (var * 2.0)
                return ops.mean(Tensor(weight) * inner)

            finite_difference_check(frozen_weight, [logvar], rng)
            # the real loss produces exactly the frozen-weight gradient
            logvar.zero_grad()
            backward(beta_nll(mu, ops.exp(logvar), target, beta))
            g_real = logvar.grad.copy()
            logvar.zero_grad()
            backward(frozen_weight())
            np.testing.assert_allclose(g_real, logvar.grad, rtol=1e-12)
            logvar.zero_grad()
            mu.zero_grad()
            mu.data = rng.standard_normal((3, 5))
            logvar.data = rng.standard_normal((3, 5)) * 0.2

    def test_reparam_gradient_flows(self, rng):
        mu = Tensor(rng.standard_normal((2, 4)), requires_grad=True)
        logvar = Tensor(rng.standard_normal((2, 4)) * 0.1, requires_grad=True)
        finite_difference_check(
            lambda: ops.sum_(reparam_sample(mu, logvar, 7) ** 2.0), [mu, logvar], rng
        )


class TestLossValues:
    def test_kld_zero_at_prior(self):
        assert kld_gauss(Tensor(np.zeros(8)), Tensor(np.zeros(8))).item() == 0.0

    def test_kld_unit_mean(self):
        assert kld_gauss(Tensor([1.0]), Tensor([0.0])).item() == pytest.approx(0.5)

    def test_kld_formula_value(self):
        # 0.5 * (4 - 1 - ln 4) for mu=0, var=4
        expected = 0.5 * (4.0 - 1.0 - np.log(4.0))
        got = kld_gauss(Tensor([0.0]), Tensor([np.log(4.0)])).item()
        assert got == pytest.approx(expected, abs=1e-12)
        assert got == pytest.approx(0.8069, abs=5e-5)

    def test_kld_nonnegative_property(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            mu = Tensor(rng.standard_normal((2, 8)) * 3)
            logvar = Tensor(rng.standard_normal((2, 8)) * 2)
            assert kld_gauss(mu, logvar).item() >= 0.0

    def test_kld_shape_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            kld_gauss(Tensor(np.zeros(3)), Tensor(np.zeros(4)))

    def test_beta_nll_zero_when_exact_unit_var(self):
        target = np.array([1.0, -2.0, 0.5])
        for beta in (0.0, 0.5, 1.0):
            value = beta_nll(Tensor(target), Tensor(np.ones(3)), target, beta).item()
            assert value == pytest.approx(0.0, abs=1e-15)

    def test_beta_nll_residual_half(self):
        assert beta_nll(Tensor([0.0]), Tensor([1.0]), [1.0], 0.5).item() == pytest.approx(0.5)

    def test_beta_nll_worked_example(self):
        # var 4, residual 2, beta 0.5: 2 * (ln(4)/2 + 4/8)
        value = beta_nll(Tensor([0.0]), Tensor([4.0]), [2.0], 0.5).item()
        assert value == pytest.approx(2.0 * (0.5 * np.log(4.0) + 0.5), abs=1e-12)
        assert value == pytest.approx(2.3863, abs=5e-5)

    def test_beta_nll_rejects_nonpositive_variance(self):
        with pytest.raises(ValueError, match="positive"):
            beta_nll(Tensor([0.0]), Tensor([0.0]), [1.0], 0.5)

    def test_beta_nll_variance_weight_carries_no_gradient(self):
        var = Tensor([4.0], requires_grad=True)
        mu = Tensor([0.0])
        loss = beta_nll(mu, var, [0.0], 1.0)
        backward(loss)
        # with the weight detached, d/dvar [var^1 * (log(var)/2)] = 1/2 at residual 0
        np.testing.assert_allclose(var.grad, [0.5], atol=1e-12)

    def test_masked_mse_ignores_masked_out(self, rng):
        pred = Tensor(rng.standard_normal((3, 6)))
        target = rng.standard_normal((3, 6))
        mask = np.zeros((3, 6))
        mask[:, :2] = 1.0
        base = masked_mse(pred, target, mask).item()
        target2 = target.copy()
        target2[:, 2:] += 100.0
        assert masked_mse(pred, target2, mask).item() == pytest.approx(base)

    def test_masked_mse_all_zero_mask_rejected(self):
        with pytest.raises(ValueError, match="mask"):
            masked_mse(Tensor(np.ones((2, 2))), np.ones((2, 2)), np.zeros((2, 2)))


class TestReparamSample:
    def test_deterministic_under_seed(self):
        mu, logvar = Tensor(np.zeros(16)), Tensor(np.zeros(16))
        a = reparam_sample(mu, logvar, 99).data
        b = reparam_sample(mu, logvar, 99).data
        np.testing.assert_array_equal(a, b)

    def test_variance_floor_limit(self):
        mu = Tensor(np.full(8, 3.0))
        logvar = Tensor(np.full(8, -60.0))
        out = reparam_sample(mu, logvar, 0).data
        np.testing.assert_allclose(out, mu.data, atol=1e-10)

    def test_sample_mean_matches_mu(self):
        mu = Tensor(np.full(4, 1.5))
        logvar = Tensor(np.zeros(4))
        rng = np.random.default_rng(42)
        draws = np.stack([reparam_sample(mu, logvar, rng).data for _ in range(10_000)])
        # 3 sigma of the Monte Carlo mean estimate
        np.testing.assert_allclose(draws.mean(axis=0), 1.5, atol=3.0 / 100.0)


class TestAdam:
    def test_first_step_size(self):
        w = Tensor([0.0], requires_grad=True)
        w.grad = np.array([1.0])
        state = AdamState(lr=0.1)
        adam_step(state, {"w": w})
        assert w.data[0] == pytest.approx(-0.1, rel=1e-6)

    def test_zero_gradient_fresh_state_fixed_point(self):
        w = Tensor([3.0], requires_grad=True)
        w.grad = np.zeros(1)
        state = AdamState(lr=0.1)
        for _ in range(5):
            adam_step(state, {"w": w})
        assert w.data[0] == 3.0

    def test_missing_gradient_names_parameter(self):
        w = Tensor([1.0], requires_grad=True)
        with pytest.raises(ValueError, match="'w'"):
            adam_step(AdamState(), {"w": w})

    def test_quadratic_bowl_converges(self):
        w = Tensor([5.0], requires_grad=True)
        opt = Adam({"w": w}, lr=0.1)
        for _ in range(500):
            backward(ops.sum_(w * w))
            opt.step()
            opt.zero_grad()
        assert abs(w.data[0]) < 1e-2

    def test_step_count_increases(self):
        w = Tensor([1.0], requires_grad=True)
        opt = Adam({"w": w})
        for expected in (1, 2, 3):
            w.grad = np.array([0.5])
            opt.step()
            assert opt.state.step_count == expected


class TestDeterminism:
    def test_forward_deterministic_under_seed(self, rng):
        layer = Sequential(
            [Conv1d(1, 4, 5, 2, rng), ReLU(), Conv1d(4, 2, 5, 2, rng), GELU()]
        )
        x = Tensor(rng.standard_normal((2, 1, 32)))
        np.testing.assert_array_equal(layer(x).data, layer(x).data)

    def test_dropout_deterministic_per_seed(self):
        layer = Dropout(0.3)
        x = Tensor(np.ones((4, 8)))
        a = layer(x, np.random.default_rng(5)).data
        b = layer(x, np.random.default_rng(5)).data
        np.testing.assert_array_equal(a, b)


class TestCheckpoint:
    def test_bit_exact_round_trip(self, tmp_path, rng):
        arrays = {
            "enc.weight": rng.standard_normal((4, 3, 5)),
            "enc.bias": rng.standard_normal(4),
            "scalar": np.array([np.pi]),
        }
        meta = {"epoch": 17, "seed": 3, "config_hash": "abc123", "note": 0.1 + 0.2}
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, arrays, meta)
        loaded, loaded_meta = load_checkpoint(path)
        assert loaded_meta == meta
        for name, arr in arrays.items():
            assert loaded[name].dtype == np.float64
            np.testing.assert_array_equal(loaded[name], arr)

    def test_second_save_is_byte_identical(self, tmp_path, rng):
        arrays = {"w": rng.standard_normal((3, 3))}
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(p1, arrays, {"epoch": 1})
        loaded, meta = load_checkpoint(p1)
        save_checkpoint(p2, loaded, meta)
        assert p1.read_bytes() == p2.read_bytes()

    def test_rejects_wrong_magic(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"NOTACKPT" + b"\x00" * 16)
        with pytest.raises(ValueError, match="not a checkpoint"):
            load_checkpoint(path)

    def test_module_state_round_trip(self, tmp_path, rng):
        layer = BatchNorm1d(3)
        layer.running_mean[:] = [1.0, 2.0, 3.0]
        save_checkpoint(tmp_path / "bn.ckpt", layer.state_arrays(), {})
        arrays, _ = load_checkpoint(tmp_path / "bn.ckpt")
        fresh = BatchNorm1d(3)
        fresh.load_state_arrays(arrays)
        np.testing.assert_array_equal(fresh.running_mean, layer.running_mean)
